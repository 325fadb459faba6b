"""Property suites behind the ``verify`` subcommand and the acceptance gate.

Each suite returns a :class:`SuiteResult`; sizes are parameters so the CLI
can run quick desk versions while the acceptance tests run the full sizes.
A ``tol_scale`` below 1 tightens every tolerance proportionally.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .dynamics import LatticeState, step_strang
from .lattice_poly import (
    HamPoly,
    NormFrame,
    build_initial_hamiltonian,
    poisson_bracket,
    triple_norm,
)
from .normal_form import (
    lie_derivative,
    remainder_decomposition,
    run_normal_form,
    solve_homological,
)
from .oracles import composed_flow, evaluate_batch
from .resonance import draw_potential, screen_potential


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str


def _rand_multiindex(rng, lo, hi, max_sites=3, max_exp=2):
    k = int(rng.integers(1, max_sites + 1))
    sites = sorted(rng.choice(np.arange(lo, hi + 1), size=k, replace=False).tolist())
    entries = []
    for j in sites:
        a = int(rng.integers(0, max_exp + 1))
        b = int(rng.integers(0, max_exp + 1))
        if a == 0 and b == 0:
            a = 1
        entries.append((j, a, b))
    from .lattice_poly import MultiIndex

    return MultiIndex(entries)


def _rand_poly(rng, window, n_terms, support=None, with_grad=True):
    from .lattice_poly import Coefficient

    lo, hi = support if support is not None else window
    terms = {}
    for _ in range(n_terms):
        n = _rand_multiindex(rng, lo, hi)
        grad = {}
        if with_grad and rng.random() < 0.6:
            for j in rng.choice(np.arange(window[0], window[1] + 1), size=2,
                                replace=False):
                grad[int(j)] = complex(rng.normal(), rng.normal())
        c = Coefficient(complex(rng.normal(), rng.normal()), grad)
        terms[n] = terms.get(n, Coefficient(0.0)) + c
    return HamPoly(terms, window)


def _rand_states(rng, window, count):
    lo, hi = window
    q = rng.normal(size=(count, hi - lo + 1)) + 1j * rng.normal(
        size=(count, hi - lo + 1)
    )
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _oracle_eval(P, q, lo):
    total = 0j
    for n, c in P.terms.items():
        mono = 1.0 + 0j
        for j, a, b in n.entries:
            z = q[j - lo]
            mono *= z**a * z.conjugate() ** b
        total += c.value * mono
    return total


def _analytic_bracket_eval(H, G, q):
    """i sum_k (dH/dq_k dG/dqbar_k - dH/dqbar_k dG/dq_k), per-monomial derivatives."""
    lo, hi = H.window

    def dq(P, k):
        tot = 0j
        for n, c in P.terms.items():
            em = n.exponent_map()
            if k not in em or em[k][0] == 0:
                continue
            mono = 1.0 + 0j
            for j, a, b in n.entries:
                z = q[j - lo]
                zb = z.conjugate()
                mono *= a * z ** (a - 1) * zb**b if j == k else z**a * zb**b
            tot += c.value * mono
        return tot

    def dqb(P, k):
        tot = 0j
        for n, c in P.terms.items():
            em = n.exponent_map()
            if k not in em or em[k][1] == 0:
                continue
            mono = 1.0 + 0j
            for j, a, b in n.entries:
                z = q[j - lo]
                zb = z.conjugate()
                mono *= z**a * b * zb ** (b - 1) if j == k else z**a * zb**b
            tot += c.value * mono
        return tot

    total = 0j
    for k in range(lo, hi + 1):
        total += dq(H, k) * dqb(G, k) - dqb(H, k) * dq(G, k)
    return 1j * total


def bracket_oracle_suite(
    pairs=200,
    states_per_pair=3,
    seed=101,
    tol_scale=1.0,
    bracket_fn=poisson_bracket,
):
    """Symbolic bracket vs analytic-derivative oracle; antisymmetry exact."""
    rng = np.random.default_rng(seed)
    window = (-6, 5)
    tol = 1e-6 * tol_scale
    worst = 0.0
    for _ in range(pairs):
        H = _rand_poly(rng, window, 8, with_grad=False)
        G = _rand_poly(rng, window, 8, with_grad=False)
        HG = bracket_fn(H, G)
        GH = bracket_fn(G, H)
        if set(HG.terms) != set(GH.terms):
            return SuiteResult("bracket-oracle", False, "antisymmetry key mismatch")
        for n, c in HG:
            if c.value != -GH.terms[n].value:
                return SuiteResult(
                    "bracket-oracle", False, f"antisymmetry not exact at {n}"
                )
        lo = window[0]
        for _ in range(states_per_pair):
            q = _rand_states(rng, window, 1)[0]
            got = _oracle_eval(HG, q, lo)
            want = _analytic_bracket_eval(H, G, q)
            scale = max(abs(want), 1e-9)
            worst = max(worst, abs(got - want) / scale)
            if abs(got - want) > tol * scale:
                return SuiteResult(
                    "bracket-oracle", False,
                    f"oracle mismatch {abs(got - want):.2e} (rel {abs(got-want)/scale:.2e})",
                )
    return SuiteResult("bracket-oracle", True, f"worst rel err {worst:.2e}")


def bracket_inequality_suite(pairs=200, seed=102, tol_scale=1.0):
    """Bracket norm inequality with barrier-supported first argument."""
    rng = np.random.default_rng(seed)
    frame = NormFrame(j0=5, N=4, r=3.0, alpha=0.009, epsilon=1e-3, sigma=0.5)
    window = (-10, 10)
    slack = 1 + 1e-12 * tol_scale
    worst = 0.0
    for _ in range(pairs):
        H = _rand_poly(rng, window, 6, support=(2, 8))
        G = _rand_poly(rng, window, 6)
        lhs = triple_norm(poisson_bracket(H, G), frame, frame.r - frame.sigma)
        rhs = (
            triple_norm(H, frame, frame.r)
            * triple_norm(G, frame, frame.r)
            / frame.sigma
        )
        if rhs > 0:
            worst = max(worst, lhs / rhs)
        if lhs > rhs * slack:
            return SuiteResult(
                "bracket-inequality", False, f"violation: lhs {lhs:.3e} > rhs {rhs:.3e}"
            )
    return SuiteResult("bracket-inequality", True, f"worst lhs/rhs {worst:.3f}")


def _rand_nonresonant_gauge_poly(rng, window, n_terms, scale=1e-3):
    """Random gauge-invariant, non-resonant right-hand side for the solver."""
    from .lattice_poly import Coefficient, MultiIndex

    lo, hi = window
    terms = {}
    tries = 0
    while len(terms) < n_terms and tries < 50 * n_terms:
        tries += 1
        k = int(rng.integers(2, 4))
        sites = sorted(
            rng.choice(np.arange(lo, hi + 1), size=k, replace=False).tolist()
        )
        entries = []
        budget = 0
        for j in sites:
            a = int(rng.integers(0, 3))
            b = int(rng.integers(0, 3))
            if a == 0 and b == 0:
                a = 1
            entries.append([j, a, b])
            budget += a - b
        # rebalance to zero gauge sum
        for e in entries:
            while budget > 0:
                e[2] += 1
                budget -= 1
            while budget < 0:
                e[1] += 1
                budget += 1
        n = MultiIndex(tuple((j, a, b) for j, a, b in entries))
        if n.is_resonant():
            continue
        grad = {}
        if rng.random() < 0.5:
            grad[int(rng.integers(lo, hi + 1))] = scale * complex(
                rng.normal(), rng.normal()
            )
        terms[n] = Coefficient(scale * complex(rng.normal(), rng.normal()), grad)
    return HamPoly(terms, window)


def homological_suite(n_potentials=100, seed=103, tol_scale=1.0):
    """Inverse identity and the coefficient-wise small-divisor bound."""
    from .errors import ResonantDivisor

    rng = np.random.default_rng(seed)
    frame = NormFrame(j0=0, N=16, r=3.0, alpha=0.009, epsilon=1e-3)
    window = (-6, 5)
    tol = 1e-12 * tol_scale
    solved = 0
    worst = 0.0
    trial = 0
    while solved < n_potentials:
        trial += 1
        if trial > 20 * n_potentials:
            return SuiteResult(
                "homological", False, f"only {solved} screened potentials found"
            )
        v = draw_potential(seed, trial, window)
        R = _rand_nonresonant_gauge_poly(rng, window, 6)
        try:
            F = solve_homological(v, R, frame)
        except ResonantDivisor:
            continue
        solved += 1
        back = lie_derivative(v, F)
        for n, c in R:
            err = abs(back.terms[n].value - c.value)
            scale = max(abs(c.value), 1e-30)
            worst = max(worst, err / scale)
            if err > tol * scale:
                return SuiteResult(
                    "homological", False, f"inverse error {err / scale:.2e} at {n}"
                )
            d_eff = max(n.spread, 1)
            bound = (
                abs(c.value)
                * frame.epsilon**-frame.alpha
                * frame.N
                * d_eff**2
                * n.degree ** (n.spread + 1)
            )
            if abs(F.terms[n].value) > bound * (1 + 1e-12):
                return SuiteResult(
                    "homological", False, f"small-divisor bound violated at {n}"
                )
    return SuiteResult(
        "homological", True, f"{solved} potentials, worst rel err {worst:.2e}"
    )


def integrator_suite(seed=104, drift_steps=20000, tol_scale=1.0):
    """l2 drift, dense-propagator limit, dt-halving order, gauge covariance."""
    rng = np.random.default_rng(seed)
    checks = []

    # drift
    window = (-32, 32)
    v = draw_potential(7, 0, window)
    amps = rng.normal(size=65) + 1j * rng.normal(size=65)
    state = LatticeState(amps / np.linalg.norm(amps), window)
    total0 = state.total_mass()
    worst = 0.0
    for k in range(drift_steps):
        state = step_strang(state, v.values, 5e-3, 5e-3, 1e-2)
        if (k + 1) % (drift_steps // 10) == 0:
            worst = max(worst, abs(state.total_mass() - total0) / total0)
    checks.append(("l2-drift", worst <= 1e-12 * tol_scale, f"{worst:.2e}"))

    # linear limit vs dense propagator
    window = (-8, 7)
    v = draw_potential(8, 0, window)
    s0 = LatticeState(_rand_states(rng, window, 1)[0].astype(complex), window)
    dt, t_end, eps1 = 1e-3, 10.0, 0.05
    s = s0.copy()
    for _ in range(int(round(t_end / dt))):
        s = step_strang(s, v.values, eps1, 0.0, dt)
    Hm = np.diag(v.values).astype(complex)
    for i in range(15):
        Hm[i, i + 1] += eps1
        Hm[i + 1, i] += eps1
    expect = expm(-1j * Hm * t_end) @ s0.amps
    err = float(np.max(np.abs(s.amps - expect)))
    checks.append(("linear-limit", err <= 1e-6 * tol_scale, f"{err:.2e}"))

    # second order
    window = (-8, 8)
    v = draw_potential(9, 0, window)
    base = LatticeState(_rand_states(rng, window, 1)[0].astype(complex), window)

    def prop(dtx):
        s = base.copy()
        for _ in range(int(round(1.0 / dtx))):
            s = step_strang(s, v.values, 0.05, 0.05, dtx)
        return s.amps

    ref = prop(0.05 / 16)
    ratio = float(
        np.max(np.abs(prop(0.05) - ref)) / np.max(np.abs(prop(0.025) - ref))
    )
    checks.append(("dt-halving", 3.5 <= ratio <= 4.5, f"ratio {ratio:.2f}"))

    # quarter-turn gauge covariance, bit exact
    s1 = LatticeState(_rand_states(rng, window, 1)[0].astype(complex), window)
    s2 = LatticeState(1j * s1.amps, window)
    gauge_ok = True
    for _ in range(50):
        s1 = step_strang(s1, v.values, 0.05, 0.2, 0.01)
        s2 = step_strang(s2, v.values, 0.05, 0.2, 0.01)
        if not np.array_equal(np.abs(s1.amps) ** 2, np.abs(s2.amps) ** 2):
            gauge_ok = False
            break
    checks.append(("gauge-covariance", gauge_ok, "bit-exact" if gauge_ok else "differs"))

    # reversibility
    fwd = step_strang(s1, v.values, 0.08, 0.08, 0.02)
    back = step_strang(fwd, v.values, 0.08, 0.08, -0.02)
    rev = float(np.max(np.abs(back.amps - s1.amps)))
    checks.append(("reversibility", rev <= 1e-12 * tol_scale, f"{rev:.2e}"))

    passed = all(ok for _, ok, _ in checks)
    detail = "; ".join(f"{n}: {d}" for n, ok, d in checks)
    return SuiteResult("integrator", passed, detail)


def conjugation_suite(
    seed=105,
    eps1=9.5e-4,
    eps2=5e-5,
    N=16,
    r=3.0,
    alpha=0.009,
    M=2,
    window=(-5, 4),
    n_states=8,
    tol_scale=1.0,
):
    """H1 along the composed generator flows equals the transformed H."""
    frame = NormFrame(j0=0, N=N, r=r, alpha=alpha, epsilon=eps1 + eps2)
    v = None
    for idx in range(300):
        cand = draw_potential(seed, idx, window)
        if screen_potential(cand, M, frame).passed:
            v = cand
            break
    if v is None:
        return SuiteResult("conjugation", False, "no screened potential found")
    H1 = build_initial_hamiltonian(eps1, eps2, v, window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_normal_form(H1, v, M, frame)
    rng = np.random.default_rng(seed + 1)
    states = _rand_states(rng, window, n_states)
    flowed = composed_flow([st.F for st in res.steps], states)
    lhs = evaluate_batch(H1, flowed)
    rhs = evaluate_batch(res.H_final, states)
    err = float(np.max(np.abs(lhs - rhs)))
    budget = res.tail_l1 + 1e-8 * tol_scale
    ok = err <= budget
    # the generator flows preserve the l2 circle
    circle = float(np.max(np.abs(np.linalg.norm(flowed, axis=1) - 1.0)))
    ok = ok and circle <= 1e-9 * tol_scale
    return SuiteResult(
        "conjugation", ok, f"err {err:.2e} vs budget {budget:.2e}; circle {circle:.2e}"
    )


def cancellation_suite(seed=106, eps1=9.5e-4, eps2=5e-5, M=2):
    """Far-field terms of the final remainder satisfy the tail identity.

    The barrier sits off centre (j0=6, N=9) on a wider window so the
    decomposition's far-field classes are non-empty.
    """
    frame = NormFrame(j0=6, N=9, r=3.0, alpha=0.009, epsilon=eps1 + eps2)
    window = (-12, 12)
    v = None
    for idx in range(300):
        cand = draw_potential(seed, idx, window)
        if screen_potential(cand, M, frame).passed:
            v = cand
            break
    if v is None:
        return SuiteResult("r3-cancellation", False, "no screened potential")
    H1 = build_initial_hamiltonian(eps1, eps2, v, window)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_normal_form(H1, v, M, frame)
    from .normal_form import split_for_step

    _, _, R = split_for_step(res.H_final, res.v_final)
    try:
        R1, R2, R3 = remainder_decomposition(R, frame, M)
    except Exception as exc:  # BarrierLeak
        return SuiteResult("r3-cancellation", False, str(exc))
    bad = [n for n in R3.terms if n.tail_gauge_sum(frame.j0) != 0]
    total = len(R1) + len(R2) + len(R3)
    return SuiteResult(
        "r3-cancellation",
        not bad and total == len(R),
        f"R1/R2/R3 sizes {len(R1)}/{len(R2)}/{len(R3)}",
    )


def run_all(quick=True, tol_scale=1.0, bracket_fn=poisson_bracket, seed=100):
    """The verify gate: every suite at desk scale."""
    suites = [
        bracket_oracle_suite(
            pairs=120 if quick else 1000,
            states_per_pair=3 if quick else 10,
            seed=seed + 1,
            tol_scale=tol_scale,
            bracket_fn=bracket_fn,
        ),
        bracket_inequality_suite(pairs=150 if quick else 1000, seed=seed + 2,
                     tol_scale=tol_scale),
        homological_suite(n_potentials=60 if quick else 500, seed=seed + 3,
                          tol_scale=tol_scale),
        integrator_suite(seed=seed + 4, drift_steps=20000 if quick else 10**6,
                         tol_scale=tol_scale),
        conjugation_suite(seed=seed + 5, M=2 if quick else 3,
                          n_states=6 if quick else 100, tol_scale=tol_scale),
        cancellation_suite(seed=seed + 6),
    ]
    return suites
