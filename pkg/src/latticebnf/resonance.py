"""Nonresonance thresholds, admissible k-vector sets, and measure estimates.

The quantitative nonresonance condition bounds every small divisor

    | sum_j k_j v_j |  >=  eps^alpha / (N * Deff(k)^2 * |k|^(spread(k)+1)),

with ``Deff(k) = max(spread(k), 1)``; the k-vectors that can occur at step s
are enumerated combinatorially, potentials are screened against them, and a
seeded Monte Carlo over potential realizations estimates the measure of the
resonant set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ZeroVector

# ---------------------------------------------------------------------------
# potentials and their RNG streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Potential:
    """Frequencies v_j on a finite window.

    ``values`` is a float array indexed by ``site - window[0]``.  ``seed``
    records the (master_seed, realization) pair that generated the values,
    or None for hand-built potentials.
    """

    values: np.ndarray
    window: tuple
    seed: tuple = None

    def __post_init__(self):
        lo, hi = self.window
        if len(self.values) != hi - lo + 1:
            raise ValueError("values length does not match window")

    def __getitem__(self, site):
        lo, hi = self.window
        if not lo <= site <= hi:
            raise KeyError(f"site {site} outside window {self.window}")
        return float(self.values[site - lo])

    def site_items(self):
        lo = self.window[0]
        return [(lo + i, float(x)) for i, x in enumerate(self.values)]

    def with_updates(self, updates):
        """New potential with ``updates`` (site -> value) applied."""
        vals = self.values.copy()
        lo = self.window[0]
        for j, x in updates.items():
            vals[j - lo] = x
        return Potential(vals, self.window, self.seed)

    def max_abs_difference(self, other):
        return float(np.max(np.abs(self.values - other.values), initial=0.0))


def potential_values(master_seed, index, window):
    """Uniform [0,1) frequencies for one realization.

    Streams are keyed by (master_seed, realization index) through a
    counter-based Philox generator; the draw at offset i within the stream
    belongs to site window[0] + i.  Realizations are therefore independent
    of evaluation order and of any thread partitioning.
    """
    lo, hi = window
    key = np.array(
        [np.uint64(master_seed & 0xFFFFFFFFFFFFFFFF), np.uint64(index)],
        dtype=np.uint64,
    )
    gen = np.random.Generator(np.random.Philox(key=key))
    return gen.random(hi - lo + 1)


def draw_potential(master_seed, index, window):
    return Potential(potential_values(master_seed, index, window), tuple(window),
                     (int(master_seed), int(index)))


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------


def _kvec_stats(k):
    sites = [j for j, _ in k]
    mass = sum(abs(c) for _, c in k)
    spread = max(sites) - min(sites) if len(sites) > 1 else 0
    return spread, mass


def nonresonance_threshold(k, frame):
    """Lower bound required of |sum k_j v_j| for the difference vector ``k``.

    ``k`` is a tuple of (site, integer) pairs with no zero entries.  The
    spread factor is floored at 1 so single-site vectors (which cannot occur
    for gauge-invariant Hamiltonians) still get a finite threshold.
    """
    k = tuple(k)
    if not k or all(c == 0 for _, c in k):
        raise ZeroVector("threshold undefined for the zero vector")
    spread, mass = _kvec_stats(k)
    d_eff = max(spread, 1)
    return frame.epsilon**frame.alpha / (
        frame.N * d_eff**2 * mass ** (spread + 1)
    )


def canonical_sign(k):
    """Representative of {k, -k}: first entry positive."""
    k = tuple(sorted(k))
    if k[0][1] < 0:
        k = tuple((j, -c) for j, c in k)
    return k


# ---------------------------------------------------------------------------
# admissible k-vectors per step
# ---------------------------------------------------------------------------


def _schedule_halfwidth(N, s):
    # N_s = N - 20(s-1), clamped at ceil(N/2) so desk-scale N stays usable;
    # for N >= 1600 the clamp never engages.
    return max(N - 20 * (s - 1), (N + 1) // 2)


def _barrier_sites(j0, half_width, window):
    lo, hi = window
    sites = set()
    for c in (j0, -j0):
        for j in range(max(lo, c - half_width), min(hi, c + half_width) + 1):
            sites.add(j)
    return sites


def _admissible(k_sites, k_vals, weight_cap, barrier, window):
    """Does some multi-index with difference k fit the step budget?

    Minimal witness: n_j = max(k_j,0), n'_j = max(-k_j,0), optionally padded
    with one resonant action at a barrier site to gain the intersection.
    """
    mass = sum(abs(c) for c in k_vals)
    spread = k_sites[-1] - k_sites[0] if len(k_sites) > 1 else 0
    if any(j in barrier for j in k_sites):
        return spread + mass <= weight_cap
    budget = weight_cap - mass - 2
    if budget < spread:
        return False
    for p in barrier:
        padded = max(k_sites[-1], p) - min(k_sites[0], p)
        if padded <= budget:
            return True
    return False


def _barrier_distance(j, j0, half_width):
    return min(
        max(abs(j - j0) - half_width, 0),
        max(abs(j + j0) - half_width, 0),
    )


def enumerate_multiindices(frame, s, window):
    """All sign-deduplicated difference vectors that step ``s`` can produce.

    Every nonzero, gauge-invariant k = n - n' arising from a non-resonant n
    with supp(n) meeting A(j0, N_{s+1}) and spread(n) + degree(n) <= s + 2.
    """
    if s < 1:
        raise ValueError("step index must be >= 1")
    weight_cap = s + 2
    n_next = _schedule_halfwidth(frame.N, s + 1)
    barrier = _barrier_sites(frame.j0, n_next, window)
    if not barrier:
        return []
    lo, hi = window
    candidates = {
        j
        for j in range(lo, hi + 1)
        if _barrier_distance(j, frame.j0, n_next) <= weight_cap
    }
    out = set()

    def assign(sites, pos, remaining_budget, acc_vals, acc_sum):
        if pos == len(sites):
            if acc_sum == 0:
                if _admissible(sites, acc_vals, weight_cap, barrier, window):
                    out.add(canonical_sign(tuple(zip(sites, acc_vals))))
            return
        slots_left = len(sites) - pos - 1
        cmax = remaining_budget - slots_left
        for c in range(-cmax, cmax + 1):
            if c == 0:
                continue
            if abs(acc_sum + c) > remaining_budget - abs(c):
                continue  # the rest cannot cancel the running sum
            assign(sites, pos + 1, remaining_budget - abs(c), acc_vals + [c], acc_sum + c)

    for d in range(1, weight_cap - 1):
        mass_budget = weight_cap - d
        for b in sorted(candidates):
            if b + d > hi or (b + d) not in candidates:
                continue
            inner = list(range(b + 1, b + d))
            for subset in _subsets(inner):
                sites = [b, *subset, b + d]
                if len(sites) > mass_budget:
                    continue
                assign(sites, 0, mass_budget, [], 0)
    return sorted(out)


def _subsets(items):
    n = len(items)
    for mask in range(1 << n):
        yield [items[i] for i in range(n) if mask >> i & 1]


# ---------------------------------------------------------------------------
# screening
# ---------------------------------------------------------------------------


@dataclass
class CheckResult:
    passed: bool
    witness: tuple = None
    witness_margin: float = None  # |divisor| / threshold of the witness
    min_ratio: float = math.inf  # smallest |divisor| / threshold over all ks


def check_nonresonant(v, ks, frame, threshold_scale=1.0):
    """Check |sum k_j v_j| >= threshold(k) for every k; first failure wins.

    ``threshold_scale`` tightens (>1) or loosens (<1) every threshold.
    """
    result = CheckResult(passed=True)
    for k in ks:
        div = sum(c * v[j] for j, c in k)
        thr = nonresonance_threshold(k, frame) * threshold_scale
        ratio = abs(div) / thr if thr > 0 else math.inf
        if ratio < result.min_ratio:
            result.min_ratio = ratio
        if abs(div) < thr and result.passed:
            result.passed = False
            result.witness = k
            result.witness_margin = ratio
    return result


@dataclass
class ScreenReport:
    passed: bool
    failed_step: int = None
    witness: tuple = None
    per_step: list = field(default_factory=list)
    max_modulation: list = field(default_factory=list)  # max_j |v_s - v_1| per step
    min_ratio: float = math.inf


def screen_potential(
    v1,
    M,
    frame,
    run_nf=False,
    *,
    eps1=None,
    eps2=None,
    w_cap=None,
    strict=False,
    threshold_scale=1.0,
):
    """Screen a potential against the step-wise nonresonance sets.

    With ``run_nf`` the normal form is advanced one step at a time and each
    modulated v_s is checked against the step-s set before the step that
    uses it, mirroring the inductive screening of the measure estimate.
    Without it only v_1 against the step-1 set is checked.
    """
    report = ScreenReport(passed=True)
    ks1 = enumerate_multiindices(frame, 1, v1.window)
    res = check_nonresonant(v1, ks1, frame, threshold_scale)
    report.per_step.append(res)
    report.min_ratio = min(report.min_ratio, res.min_ratio)
    report.max_modulation.append(0.0)
    if not res.passed:
        report.passed = False
        report.failed_step = 1
        report.witness = res.witness
        return report
    if not run_nf or M < 2:
        return report

    from . import normal_form as nf
    from .lattice_poly import build_initial_hamiltonian

    if eps1 is None or eps2 is None:
        raise ValueError("run_nf screening needs eps1 and eps2")
    schedule = nf.Schedule.from_frame(frame)
    H = build_initial_hamiltonian(eps1, eps2, v1, v1.window)
    v = v1
    for s in range(1, M):
        step = nf.normal_form_step(
            H, v, s, frame, schedule, w_cap=w_cap, strict=strict
        )
        H, v = step.H_next, step.v_next
        ks = enumerate_multiindices(frame, s + 1, v.window)
        res = check_nonresonant(v, ks, frame, threshold_scale)
        report.per_step.append(res)
        report.min_ratio = min(report.min_ratio, res.min_ratio)
        report.max_modulation.append(v.max_abs_difference(v1))
        if not res.passed:
            report.passed = False
            report.failed_step = s + 1
            report.witness = res.witness
            return report
    return report


# ---------------------------------------------------------------------------
# Monte Carlo measure estimate
# ---------------------------------------------------------------------------


@dataclass
class ResonanceReport:
    epsilon: float
    alpha: float
    N: int
    samples: int
    resonant_fraction: float
    ci95: tuple
    worst_margin: float
    per_step_fractions: list
    max_modulation: list  # from the normal-form probe, per step s=2..M
    probe_samples: int
    screening_mode: str
    master_seed: int

    def to_json_dict(self):
        return {
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "N": self.N,
            "samples": self.samples,
            "resonant_fraction": self.resonant_fraction,
            "ci95": list(self.ci95),
            "worst_margin": self.worst_margin,
            "per_step_fractions": self.per_step_fractions,
            "max_modulation": self.max_modulation,
            "probe_samples": self.probe_samples,
            "screening_mode": self.screening_mode,
            "master_seed": self.master_seed,
        }


def _binomial_ci95(p, n):
    if n == 0:
        return (0.0, 1.0)
    half = 1.959963984540054 * math.sqrt(max(p * (1 - p), 0.0) / n)
    return (max(0.0, p - half), min(1.0, p + half))


def _set_matrix(ks, window):
    lo, hi = window
    K = np.zeros((len(ks), hi - lo + 1))
    thr = np.zeros(len(ks))
    return K, thr


def estimate_resonant_measure(
    frame,
    M,
    samples,
    master_seed,
    window,
    *,
    eps1=None,
    eps2=None,
    run_nf=False,
    nf_probe=4,
    w_cap=None,
    threshold_scale=1.0,
):
    """Empirical measure of the resonant set over i.i.d. potentials.

    Default ("initial") mode checks each drawn v_1 against every step set;
    the step-wise frequency modulation (order eps^2, far below the
    thresholds) is probed separately by running the full normal form on
    ``nf_probe`` passing samples and reporting max_j |v_s - v_1|.  Passing
    ``run_nf`` screens every sample inductively instead.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    lo, hi = window
    nsites = hi - lo + 1

    step_ks = [enumerate_multiindices(frame, s, window) for s in range(1, M + 1)]
    mats = []
    for ks in step_ks:
        K, thr = _set_matrix(ks, window)
        for i, k in enumerate(ks):
            for j, c in k:
                K[i, j - lo] = c
            thr[i] = nonresonance_threshold(k, frame) * threshold_scale
        mats.append((K, thr))

    if run_nf:
        return _estimate_inductive(
            frame, M, samples, master_seed, window, step_ks,
            eps1=eps1, eps2=eps2, w_cap=w_cap, threshold_scale=threshold_scale,
        )

    V = np.empty((samples, nsites))
    for i in range(samples):
        V[i] = potential_values(master_seed, i, window)

    fail_any = np.zeros(samples, dtype=bool)
    per_step = []
    min_ratio = np.full(samples, np.inf)
    for K, thr in mats:
        if len(thr) == 0:
            per_step.append(0.0)
            continue
        D = np.abs(V @ K.T)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(thr[None, :] > 0, D / thr[None, :], np.inf)
        fail_s = np.any(ratios < 1.0, axis=1)
        per_step.append(float(np.mean(fail_s)))
        fail_any |= fail_s
        min_ratio = np.minimum(min_ratio, ratios.min(axis=1))

    frac = float(np.mean(fail_any))
    passing = ~fail_any
    worst = float(min_ratio[passing].min()) if passing.any() else math.inf

    max_mod = []
    probe_used = 0
    if nf_probe > 0 and eps1 is not None and eps2 is not None and M >= 2 \
            and (eps1 + eps2) > 0:
        probe_idx = np.nonzero(passing)[0][:nf_probe]
        agg = [0.0] * M
        for idx in probe_idx:
            v = draw_potential(master_seed, int(idx), window)
            rep = screen_potential(
                v, M, frame, run_nf=True, eps1=eps1, eps2=eps2, w_cap=w_cap,
                threshold_scale=threshold_scale,
            )
            for s, w in enumerate(rep.max_modulation):
                agg[s] = max(agg[s], w)
            probe_used += 1
        max_mod = agg

    return ResonanceReport(
        epsilon=frame.epsilon,
        alpha=frame.alpha,
        N=frame.N,
        samples=samples,
        resonant_fraction=frac,
        ci95=_binomial_ci95(frac, samples),
        worst_margin=worst,
        per_step_fractions=per_step,
        max_modulation=max_mod,
        probe_samples=probe_used,
        screening_mode="initial",
        master_seed=int(master_seed),
    )


def _estimate_inductive(frame, M, samples, master_seed, window, step_ks,
                        *, eps1, eps2, w_cap, threshold_scale=1.0):
    if eps1 is None or eps2 is None:
        raise ValueError("inductive screening needs eps1 and eps2")
    fails = 0
    per_step_fail = [0] * M
    worst = math.inf
    max_mod = [0.0] * M
    for i in range(samples):
        v = draw_potential(master_seed, i, window)
        rep = screen_potential(
            v, M, frame, run_nf=True, eps1=eps1, eps2=eps2, w_cap=w_cap,
            threshold_scale=threshold_scale,
        )
        if rep.passed:
            worst = min(worst, rep.min_ratio)
            for s, w in enumerate(rep.max_modulation):
                max_mod[s] = max(max_mod[s], w)
        else:
            fails += 1
            per_step_fail[rep.failed_step - 1] += 1
    frac = fails / samples
    return ResonanceReport(
        epsilon=frame.epsilon,
        alpha=frame.alpha,
        N=frame.N,
        samples=samples,
        resonant_fraction=frac,
        ci95=_binomial_ci95(frac, samples),
        worst_margin=worst,
        per_step_fractions=[f / samples for f in per_step_fail],
        max_modulation=max_mod,
        probe_samples=samples - fails,
        screening_mode="inductive",
        master_seed=int(master_seed),
    )
