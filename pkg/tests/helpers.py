"""Shared test utilities: random polynomial generators and independent oracles.

The oracles here deliberately avoid the code paths they check: bracket
values are recomputed from per-monomial analytic derivatives, gradients via
finite differences in the potential, flows via generic ODE integration.
"""

import numpy as np

from latticebnf.lattice_poly import Coefficient, HamPoly, MultiIndex


def random_multiindex(rng, window, max_sites=3, max_exp=2, gauge_invariant=False):
    lo, hi = window
    k = int(rng.integers(1, max_sites + 1))
    sites = sorted(rng.choice(np.arange(lo, hi + 1), size=k, replace=False).tolist())
    while True:
        entries = []
        for j in sites:
            a = int(rng.integers(0, max_exp + 1))
            b = int(rng.integers(0, max_exp + 1))
            if a == 0 and b == 0:
                a = 1
            entries.append((j, a, b))
        idx = MultiIndex(entries)
        if not gauge_invariant or idx.gauge_sum() == 0:
            return idx
        # rebalance: bump the conjugate exponent somewhere to zero the gauge sum
        g = idx.gauge_sum()
        entries = [list(e) for e in entries]
        for e in entries:
            while g > 0:
                e[2] += 1
                g -= 1
            while g < 0:
                e[1] += 1
                g += 1
        return MultiIndex(tuple((j, a, b) for j, a, b in entries))


def random_coefficient(rng, with_grad=True, window=None, scale=1.0):
    val = scale * complex(rng.normal(), rng.normal())
    grad = {}
    if with_grad and window is not None and rng.random() < 0.7:
        lo, hi = window
        for j in rng.choice(np.arange(lo, hi + 1), size=2, replace=False):
            grad[int(j)] = scale * complex(rng.normal(), rng.normal())
    return Coefficient(val, grad)


def random_poly(
    rng,
    window,
    n_terms=8,
    max_sites=3,
    max_exp=2,
    real=True,
    gauge_invariant=False,
    with_grad=True,
    support=None,
    scale=1.0,
):
    """Random HamPoly; ``real=True`` closes it under conjugation."""
    terms = {}
    sub = support if support is not None else window
    for _ in range(n_terms):
        n = random_multiindex(rng, sub, max_sites, max_exp, gauge_invariant)
        c = random_coefficient(rng, with_grad, window, scale)
        terms[n] = terms.get(n, Coefficient(0.0)) + c
    if real:
        closed = {}
        for n, c in terms.items():
            half = c.scaled(0.5)
            closed[n] = closed.get(n, Coefficient(0.0)) + half
            nd = n.conjugate()
            closed[nd] = closed.get(nd, Coefficient(0.0)) + half.conjugated()
        terms = closed
    return HamPoly(terms, window)


def random_state(rng, window, normalize=True):
    lo, hi = window
    q = rng.normal(size=hi - lo + 1) + 1j * rng.normal(size=hi - lo + 1)
    if normalize:
        q = q / np.linalg.norm(q)
    return q


def eval_dq(H, q, k):
    """Analytic d/dq_k of H at q, summed monomial by monomial."""
    lo = H.window[0]
    total = 0j
    for n, c in H.terms.items():
        emap = n.exponent_map()
        if k not in emap or emap[k][0] == 0:
            continue
        mono = 1.0 + 0j
        for j, a, b in n.entries:
            z = q[j - lo]
            zb = z.conjugate()
            if j == k:
                mono *= a * z ** (a - 1) * zb**b
            else:
                mono *= z**a * zb**b
        total += c.value * mono
    return total


def eval_dqbar(H, q, k):
    lo = H.window[0]
    total = 0j
    for n, c in H.terms.items():
        emap = n.exponent_map()
        if k not in emap or emap[k][1] == 0:
            continue
        mono = 1.0 + 0j
        for j, a, b in n.entries:
            z = q[j - lo]
            zb = z.conjugate()
            if j == k:
                mono *= z**a * b * zb ** (b - 1)
            else:
                mono *= z**a * zb**b
        total += c.value * mono
    return total


def oracle_bracket_value(H, G, q):
    """i * sum_k (dH/dq_k dG/dqbar_k - dH/dqbar_k dG/dq_k) at q.

    Independent of :func:`latticebnf.lattice_poly.poisson_bracket`: only
    per-monomial analytic derivatives are used.
    """
    lo, hi = H.window
    total = 0j
    for k in range(lo, hi + 1):
        total += eval_dq(H, q, k) * eval_dqbar(G, q, k)
        total -= eval_dqbar(H, q, k) * eval_dq(G, q, k)
    return 1j * total


def fd_bracket_value(H, G, q, h=1e-6):
    """Same bracket via central finite differences in (q, qbar) treated independently."""
    lo, hi = H.window
    qb = q.conjugate()

    def dq(P, k):
        qp = q.copy()
        qm = q.copy()
        qp[k - lo] += h
        qm[k - lo] -= h
        return (P.evaluate(qp, qb) - P.evaluate(qm, qb)) / (2 * h)

    def dqb(P, k):
        qbp = qb.copy()
        qbm = qb.copy()
        qbp[k - lo] += h
        qbm[k - lo] -= h
        return (P.evaluate(q, qbp) - P.evaluate(q, qbm)) / (2 * h)

    total = 0j
    for k in range(lo, hi + 1):
        total += dq(H, k) * dqb(G, k) - dqb(H, k) * dq(G, k)
    return 1j * total
