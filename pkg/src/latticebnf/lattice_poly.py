"""Sparse algebra of lattice Hamiltonians.

A Hamiltonian is stored as a sparse sum of monomials

    c(n) * prod_j q_j^{n_j} qbar_j^{n'_j}

where ``n`` maps lattice sites to pairs of non-negative exponents.  Each
coefficient carries, besides its complex value, a sparse derivative with
respect to the onsite frequencies ``v_j`` (forward accumulation), so that
the weighted norm and its Lipschitz companion can be evaluated exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidRadius, InvalidWindow, WindowMismatch

# Coefficients whose value and every gradient entry fall below this floor are
# dropped.  Underflow guard only: aggressive pruning would perturb the norm
# inequalities that the test suite checks.
PRUNE_FLOOR = 1e-300


class MultiIndex:
    """Exponent pattern of one monomial.

    ``entries`` is a tuple of ``(site, n, n')`` triples in ascending site
    order; pairs ``(0, 0)`` are never stored.  Instances are immutable,
    hashable and totally ordered (site-lexicographic, then exponents),
    which fixes a canonical iteration order everywhere.
    """

    __slots__ = ("entries", "degree", "spread", "_hash", "_emap")

    def __init__(self, entries):
        ents = tuple(sorted((int(j), int(a), int(b)) for j, a, b in entries))
        for j, a, b in ents:
            if a < 0 or b < 0:
                raise ValueError(f"negative exponent at site {j}")
            if a == 0 and b == 0:
                raise ValueError(f"empty exponent pair stored at site {j}")
        self.entries = ents
        self.degree = sum(a + b for _, a, b in ents)
        self.spread = ents[-1][0] - ents[0][0] if len(ents) > 1 else 0
        self._hash = hash(ents)
        self._emap = None

    @classmethod
    def _trusted(cls, ents, degree, spread):
        """Fast path for pre-sorted, pre-validated entries (bracket inner loop)."""
        self = cls.__new__(cls)
        self.entries = ents
        self.degree = degree
        self.spread = spread
        self._hash = hash(ents)
        self._emap = None
        return self

    @classmethod
    def from_dict(cls, d):
        return cls((j, a, b) for j, (a, b) in d.items() if (a, b) != (0, 0))

    # -- structure ---------------------------------------------------------

    @property
    def support(self):
        return tuple(j for j, _, _ in self.entries)

    def exponent_map(self):
        """site -> (n_j, n'_j) lookup, built lazily and cached."""
        if self._emap is None:
            self._emap = {j: (a, b) for j, a, b in self.entries}
        return self._emap

    def conjugate(self):
        return MultiIndex((j, b, a) for j, a, b in self.entries)

    def is_resonant(self):
        return all(a == b for _, a, b in self.entries)

    def gauge_sum(self):
        return sum(a - b for _, a, b in self.entries)

    def kvector(self):
        """Integer difference vector n - n' as ((site, k_j), ...), zeros dropped."""
        return tuple((j, a - b) for j, a, b in self.entries if a != b)

    def tail_gauge_sum(self, j0):
        """Signed exponent sum restricted to |j| > j0."""
        return sum(a - b for j, a, b in self.entries if abs(j) > j0)

    # -- dunder ------------------------------------------------------------

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return isinstance(other, MultiIndex) and self.entries == other.entries

    def __lt__(self, other):
        return self.entries < other.entries

    def __le__(self, other):
        return self.entries <= other.entries

    def __repr__(self):
        body = " ".join(f"{j}:({a},{b})" for j, a, b in self.entries)
        return f"MultiIndex[{body}]"


class Coefficient:
    """Complex coefficient plus its sparse derivative w.r.t. the potential."""

    __slots__ = ("value", "grad", "_gl1")

    def __init__(self, value, grad=None):
        self.value = complex(value)
        self.grad = dict(grad) if grad else {}
        self._gl1 = None

    def magnitude(self):
        m = abs(self.value)
        if self.grad:
            m = max(m, max(abs(g) for g in self.grad.values()))
        return m

    def grad_l1(self):
        if self._gl1 is None:
            self._gl1 = sum(abs(g) for g in self.grad.values()) if self.grad else 0.0
        return self._gl1

    def scaled(self, factor):
        return Coefficient(
            self.value * factor, {j: g * factor for j, g in self.grad.items()}
        )

    def conjugated(self):
        return Coefficient(
            self.value.conjugate(), {j: g.conjugate() for j, g in self.grad.items()}
        )

    def __add__(self, other):
        grad = dict(self.grad)
        for j, g in other.grad.items():
            grad[j] = grad.get(j, 0j) + g
        return Coefficient(self.value + other.value, grad)

    def __repr__(self):
        return f"Coefficient({self.value!r}, grad={self.grad!r})"


def _product_coefficient(ca, cb, factor):
    """factor * ca * cb with the product rule on gradients.

    The value product is formed as ``ca.value * cb.value`` so that swapping
    the arguments yields the bit-identical result (IEEE multiplication is
    commutative), which the exact-antisymmetry guarantee of the Poisson
    bracket relies on.
    """
    vv = ca.value * cb.value
    grad = {}
    for j, g in ca.grad.items():
        grad[j] = g * cb.value
    for j, g in cb.grad.items():
        grad[j] = grad.get(j, 0j) + ca.value * g
    return Coefficient(factor * vv, {j: factor * g for j, g in grad.items()})


@dataclass(frozen=True)
class NormFrame:
    """Parameter bundle shared by norms, thresholds and the iteration schedule.

    Parameters
    ----------
    j0 : int
        Barrier centre (the barrier is mirrored at -j0).
    N : int
        Barrier half-width in sites.
    r : float
        Weight base of the norm, > 2.
    sigma : float, optional
        Analyticity loss per step; defaults to r / (2N).
    alpha : float
        Nonresonance exponent, 0 < alpha < 1/100.
    epsilon : float
        Total coupling eps1 + eps2 (enters thresholds as epsilon**alpha).
    """

    j0: int
    N: int
    r: float
    alpha: float
    epsilon: float
    sigma: float = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.r <= 2:
            raise ValueError("r must be > 2")
        if self.sigma is None:
            object.__setattr__(self, "sigma", self.r / (2 * self.N))
        if not 0 < self.sigma < self.r / 2:
            raise ValueError("sigma must lie in (0, r/2)")
        if not 0 < self.alpha < 0.01:
            raise ValueError("alpha must lie in (0, 1/100)")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    def barrier_halfwidth(self):
        return self.N


def in_barrier(site, j0, half_width):
    """True when ``site`` lies in A(j0, half_width) = [j0-h, j0+h] U [-j0-h, -j0+h]."""
    return abs(site - j0) <= half_width or abs(site + j0) <= half_width


def support_meets_barrier(index, j0, half_width):
    if half_width < 0:
        return False
    return any(in_barrier(j, j0, half_width) for j in index.support)


class HamPoly:
    """Sparse real Hamiltonian polynomial on a finite site window.

    Terms are stored in canonical (ascending multi-index) order; all
    operations are pure and return new instances, so values can be shared
    freely between threads.
    """

    __slots__ = ("terms", "window")

    def __init__(self, terms=None, window=None, _canonical=False):
        if window is None:
            raise InvalidWindow("window is required")
        lo, hi = int(window[0]), int(window[1])
        if lo > hi:
            raise InvalidWindow(f"empty window ({lo}, {hi})")
        self.window = (lo, hi)
        if terms is None:
            self.terms = {}
        elif _canonical:
            self.terms = terms
        else:
            pruned = {
                n: c for n, c in terms.items() if c.magnitude() >= PRUNE_FLOOR
            }
            self.terms = {n: pruned[n] for n in sorted(pruned)}

    # -- basic queries -----------------------------------------------------

    def __len__(self):
        return len(self.terms)

    def __iter__(self):
        return iter(self.terms.items())

    def is_zero(self):
        return not self.terms

    def coefficient(self, index):
        c = self.terms.get(index)
        return c if c is not None else Coefficient(0.0)

    def max_weight(self):
        return max((n.spread + n.degree for n in self.terms), default=0)

    # -- arithmetic --------------------------------------------------------

    def _require_same_window(self, other):
        if self.window != other.window:
            raise WindowMismatch(f"{self.window} vs {other.window}")

    def __add__(self, other):
        self._require_same_window(other)
        terms = dict(self.terms)
        for n, c in other.terms.items():
            prev = terms.get(n)
            terms[n] = c if prev is None else prev + c
        return HamPoly(terms, self.window)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def scaled(self, factor):
        return HamPoly(
            {n: c.scaled(factor) for n, c in self.terms.items()},
            self.window,
            _canonical=abs(factor) >= PRUNE_FLOOR or not self.terms,
        )

    def conjugated(self):
        return HamPoly(
            {n.conjugate(): c.conjugated() for n, c in self.terms.items()},
            self.window,
        )

    def filtered(self, predicate):
        """Sub-polynomial of the terms whose multi-index satisfies ``predicate``."""
        kept = {n: c for n, c in self.terms.items() if predicate(n)}
        return HamPoly(kept, self.window, _canonical=True)

    def reality_defect(self):
        """Largest |c(n) - conj(c(n^dagger))| over stored terms (0 for real polynomials)."""
        worst = 0.0
        for n, c in self.terms.items():
            cc = self.terms.get(n.conjugate())
            other = cc.value.conjugate() if cc is not None else 0j
            worst = max(worst, abs(c.value - other))
        return worst

    def is_gauge_invariant(self):
        return all(n.gauge_sum() == 0 for n in self.terms)

    # -- evaluation --------------------------------------------------------

    def evaluate(self, q, qbar=None):
        """Evaluate at amplitudes ``q`` (dict site -> complex or array over the window).

        ``qbar`` defaults to the conjugate of ``q``; passing it separately
        treats q and qbar as independent variables (Wirtinger calculus),
        which the finite-difference oracles rely on.
        """
        getq = self._amp_getter(q)
        getqb = self._amp_getter(qbar) if qbar is not None else None
        total = 0j
        for n, c in self.terms.items():
            mono = 1.0 + 0j
            for j, a, b in n.entries:
                z = getq(j)
                zb = getqb(j) if getqb is not None else z.conjugate()
                if a:
                    mono *= z**a
                if b:
                    mono *= zb**b
            total += c.value * mono
        return total

    def _amp_getter(self, q):
        if isinstance(q, dict):
            return lambda j: complex(q.get(j, 0j))
        lo = self.window[0]
        return lambda j: complex(q[j - lo])

    # -- serialization -----------------------------------------------------

    def to_text(self):
        """Line-oriented debug format; round-trips exactly via ``from_text``."""
        lines = [f"window {self.window[0]} {self.window[1]}"]
        for n, c in self.terms.items():
            sites = " ".join(f"{j}:({a},{b})" for j, a, b in n.entries)
            gparts = " ".join(
                f"{j}:{g.real!r},{g.imag!r}" for j, g in sorted(c.grad.items())
            )
            grad = f"grad {gparts}" if gparts else "grad"
            lines.append(f"{sites} ; {c.value.real!r} {c.value.imag!r} ; {grad}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("window "):
            raise ValueError("missing window header")
        _, lo, hi = lines[0].split()
        terms = {}
        for ln in lines[1:]:
            sites_part, value_part, grad_part = (p.strip() for p in ln.split(";"))
            entries = []
            for tok in sites_part.split():
                j, ab = tok.split(":")
                a, b = ab.strip("()").split(",")
                entries.append((int(j), int(a), int(b)))
            re_s, im_s = value_part.split()
            grad = {}
            gtoks = grad_part.split()
            assert gtoks[0] == "grad"
            for tok in gtoks[1:]:
                j, ri = tok.split(":")
                gre, gim = ri.split(",")
                grad[int(j)] = complex(float(gre), float(gim))
            terms[MultiIndex(entries)] = Coefficient(
                complex(float(re_s), float(im_s)), grad
            )
        return cls(terms, (int(lo), int(hi)))

    def __repr__(self):
        return f"HamPoly({len(self.terms)} terms on {self.window})"


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------


def build_initial_hamiltonian(eps1, eps2, v, window):
    """Initial Hamiltonian on the window.

    H1 = 1/2 ( sum_j v_j |q_j|^2
               + eps1 sum_j (qbar_j q_{j+1} + q_j qbar_{j+1})
               + eps2/2 sum_j |q_j|^4 ),

    truncated to ``window``.  Diagonal coefficients carry d/dv_j = 1/2;
    hopping and quartic coefficients carry no gradient.
    """
    lo, hi = int(window[0]), int(window[1])
    if lo > hi:
        raise InvalidWindow(f"empty window ({lo}, {hi})")
    if eps1 < 0 or eps2 < 0:
        raise ValueError("couplings must be non-negative")
    terms = {}
    for j in range(lo, hi + 1):
        terms[MultiIndex([(j, 1, 1)])] = Coefficient(v[j] / 2.0, {j: 0.5 + 0j})
        if eps2 > 0:
            terms[MultiIndex([(j, 2, 2)])] = Coefficient(eps2 / 4.0)
    if eps1 > 0:
        for j in range(lo, hi):
            terms[MultiIndex([(j, 0, 1), (j + 1, 1, 0)])] = Coefficient(eps1 / 2.0)
            terms[MultiIndex([(j, 1, 0), (j + 1, 0, 1)])] = Coefficient(eps1 / 2.0)
    return HamPoly(terms, (lo, hi))


# ---------------------------------------------------------------------------
# Poisson bracket
# ---------------------------------------------------------------------------


class DiscardLedger:
    """Upper bounds on mass dropped by the weight cap of a capped bracket.

    Per-contribution magnitudes are summed before cancellation, so both
    scalars over-estimate the true discarded mass; they are reported, never
    silently lost.
    """

    __slots__ = ("l1", "norm", "r_weight")

    def __init__(self, r_weight):
        self.l1 = 0.0
        self.norm = 0.0
        self.r_weight = r_weight

    def add(self, value_mag, grad_mag, degree, weight):
        w = degree * self.r_weight ** (weight - 1)
        self.l1 += value_mag
        self.norm += (value_mag + grad_mag) * w


def _merge_entries(ea, eb):
    """Union of two sorted entry tuples with exponents added."""
    out = []
    i = j = 0
    la, lb = len(ea), len(eb)
    while i < la and j < lb:
        sa, aa, ba = ea[i]
        sb, ab, bb = eb[j]
        if sa < sb:
            out.append((sa, aa, ba))
            i += 1
        elif sb < sa:
            out.append((sb, ab, bb))
            j += 1
        else:
            out.append((sa, aa + ab, ba + bb))
            i += 1
            j += 1
    out.extend(ea[i:])
    out.extend(eb[j:])
    return out


def _bracket_core(H, G, w_cap, ledger):
    H._require_same_window(G)
    buckets = {}
    g_items = list(G.terms.items())
    for n, cn in H.terms.items():
        n_ent = n.entries
        vn = cn.value
        gn = cn.grad
        n_deg = n.degree
        for m, cm in g_items:
            m_ent = m.entries
            # common sites with a nonzero symplectic weight (two-pointer scan)
            common = None
            i = j = 0
            la, lb = len(n_ent), len(m_ent)
            while i < la and j < lb:
                sn = n_ent[i][0]
                sm = m_ent[j][0]
                if sn < sm:
                    i += 1
                elif sm < sn:
                    j += 1
                else:
                    _, na, nb = n_ent[i]
                    _, ma, mb = m_ent[j]
                    w = na * mb - nb * ma
                    if w != 0:
                        if common is None:
                            common = []
                        common.append((sn, w))
                    i += 1
                    j += 1
            if common is None:
                continue
            deg = n_deg + m.degree - 2
            vm = cm.value
            gm = cm.grad
            vv = vn * vm
            if w_cap is not None and deg > w_cap:
                # no site can bring the weight under the cap
                if ledger is not None:
                    total_w = sum(abs(w) for _, w in common)
                    gmag = cn.grad_l1() * abs(vm) + abs(vn) * cm.grad_l1()
                    ledger.add(
                        total_w * abs(vv), total_w * gmag, deg,
                        n.spread + m.spread + deg,
                    )
                continue
            merged = _merge_entries(n_ent, m_ent)
            pair_key = (n_ent, m_ent) if n_ent <= m_ent else (m_ent, n_ent)
            pair_vmag = None
            for k, w in common:
                ents = []
                lo_site = hi_site = None
                for site, a, b in merged:
                    if site == k:
                        a -= 1
                        b -= 1
                        if a == 0 and b == 0:
                            continue
                    if lo_site is None:
                        lo_site = site
                    hi_site = site
                    ents.append((site, a, b))
                spread = hi_site - lo_site if len(ents) > 1 else 0
                factor = 1j * w
                if w_cap is not None and spread + deg > w_cap:
                    if ledger is not None:
                        if pair_vmag is None:
                            pair_vmag = abs(vv)
                            pair_gmag = (
                                cn.grad_l1() * abs(vm) + abs(vn) * cm.grad_l1()
                            )
                        aw = abs(w)
                        ledger.add(aw * pair_vmag, aw * pair_gmag, deg, spread + deg)
                    continue
                idx = MultiIndex._trusted(tuple(ents), deg, spread)
                value = factor * vv
                grad = None
                if gn or gm:
                    grad = {}
                    for sj, g in gn.items():
                        grad[sj] = g * vm
                    for sj, g in gm.items():
                        prev = grad.get(sj)
                        grad[sj] = vn * g if prev is None else prev + vn * g
                    for sj in grad:
                        grad[sj] = factor * grad[sj]
                bucket = buckets.get(idx)
                if bucket is None:
                    buckets[idx] = [((pair_key, k), value, grad)]
                else:
                    bucket.append(((pair_key, k), value, grad))
    terms = {}
    for idx, contribs in buckets.items():
        if len(contribs) > 1:
            contribs.sort(key=lambda item: item[0])
        total = 0j
        grad = {}
        for _, value, g in contribs:
            total += value
            if g:
                for sj, x in g.items():
                    prev = grad.get(sj)
                    grad[sj] = x if prev is None else prev + x
        c = Coefficient.__new__(Coefficient)
        c.value = total
        c.grad = grad
        c._gl1 = None
        terms[idx] = c
    return HamPoly(terms, H.window)


def poisson_bracket(H, G):
    """Poisson bracket {H, G}.

    {H,G} = i sum_{n,m} sum_k H(n) G(m) (n_k m'_k - n'_k m_k) * (merged
    monomial with one q and one qbar removed at site k).  Coefficient
    gradients combine by the product rule.  Contributions to each output
    term are accumulated in a canonical order independent of the argument
    order, so {H,G} == -{G,H} holds exactly in floating point and
    {H,H} == 0 exactly.
    """
    return _bracket_core(H, G, None, None)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def weighted_norm(H, frame, r_eff):
    """Sum of |H(n)| * |n| * r_eff^(spread+degree-1) over barrier-meeting terms."""
    if r_eff <= 1:
        raise InvalidRadius(f"effective radius {r_eff} must exceed 1")
    j0, N = frame.j0, frame.N
    total = 0.0
    for n, c in H.terms.items():
        if not support_meets_barrier(n, j0, N):
            continue
        total += abs(c.value) * n.degree * r_eff ** (n.spread + n.degree - 1)
    return total


def lipschitz_norm(H, frame, r_eff):
    """sup_j of the gradient analogue of ``weighted_norm``."""
    if r_eff <= 1:
        raise InvalidRadius(f"effective radius {r_eff} must exceed 1")
    j0, N = frame.j0, frame.N
    per_site = {}
    for n, c in H.terms.items():
        if not c.grad or not support_meets_barrier(n, j0, N):
            continue
        w = n.degree * r_eff ** (n.spread + n.degree - 1)
        for j, g in c.grad.items():
            per_site[j] = per_site.get(j, 0.0) + abs(g) * w
    return max(per_site.values(), default=0.0)


def triple_norm(H, frame, r_eff):
    return weighted_norm(H, frame, r_eff) + lipschitz_norm(H, frame, r_eff)


def l1_value_mass(H):
    """Plain sum of |H(n)| (no barrier filter, no weights).

    Bounds |H(q)| on states with every |q_j| <= 1, which makes it the right
    currency for evaluation-error ledgers.
    """
    return math.fsum(abs(c.value) for c in H.terms.values())


# ---------------------------------------------------------------------------
# structural splits
# ---------------------------------------------------------------------------


def restrict_support(H, frame, half_width, intersect=True):
    """Terms whose support meets A(j0, half_width), or the complement."""
    if half_width < 0:
        raise ValueError("half_width must be >= 0")
    j0 = frame.j0
    return H.filtered(
        lambda n: support_meets_barrier(n, j0, half_width) == intersect
    )


def split_DZR(H):
    """Split into diagonal (resonant, |n| = 2), resonant |n| >= 4, and non-resonant."""
    D, Z, R = {}, {}, {}
    for n, c in H.terms.items():
        if n.is_resonant():
            (D if n.degree == 2 else Z)[n] = c
        else:
            R[n] = c
    w = H.window
    return (
        HamPoly(D, w, _canonical=True),
        HamPoly(Z, w, _canonical=True),
        HamPoly(R, w, _canonical=True),
    )
