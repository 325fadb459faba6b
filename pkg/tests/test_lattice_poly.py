import numpy as np
import pytest

from latticebnf.errors import InvalidRadius, InvalidWindow
from latticebnf.lattice_poly import (
    Coefficient,
    HamPoly,
    MultiIndex,
    NormFrame,
    build_initial_hamiltonian,
    lipschitz_norm,
    poisson_bracket,
    restrict_support,
    split_DZR,
    triple_norm,
    weighted_norm,
)

from helpers import (
    fd_bracket_value,
    oracle_bracket_value,
    random_poly,
    random_state,
)


def mono(entries, value, grad=None):
    return HamPoly({MultiIndex(entries): Coefficient(value, grad)}, (-10, 10))


class TestMultiIndex:
    def test_structure(self):
        n = MultiIndex([(3, 1, 0), (0, 0, 2)])
        assert n.support == (0, 3)
        assert n.degree == 3
        assert n.spread == 3
        assert n.gauge_sum() == -1
        assert not n.is_resonant()

    def test_single_site_spread_zero(self):
        assert MultiIndex([(5, 2, 2)]).spread == 0

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            MultiIndex([(0, 0, 0)])

    def test_canonical_order_is_total(self):
        a = MultiIndex([(0, 1, 0), (1, 0, 1)])
        b = MultiIndex([(0, 1, 1)])
        c = MultiIndex([(1, 1, 1)])
        assert sorted([c, a, b]) == sorted([b, a, c])
        assert a < c and b < c

    def test_conjugate(self):
        n = MultiIndex([(0, 2, 1)])
        assert n.conjugate().entries == ((0, 1, 2),)

    def test_kvector(self):
        n = MultiIndex([(0, 2, 1), (4, 1, 1)])
        assert n.kvector() == ((0, 1),)


class TestBuildInitialHamiltonian:
    def test_diagonal_only(self):
        v = {j: 0.1 * (j + 1) for j in range(5)}
        H = build_initial_hamiltonian(0.0, 0.0, v, (0, 4))
        assert len(H) == 5
        for n, c in H:
            (j, a, b) = n.entries[0]
            assert (a, b) == (1, 1)
            assert c.value == pytest.approx(v[j] / 2)
            assert c.grad == {j: 0.5 + 0j}

    def test_quartic_prefactor(self):
        H = build_initial_hamiltonian(0.0, 0.2, {0: 0.0}, (0, 0))
        quartic = H.coefficient(MultiIndex([(0, 2, 2)]))
        assert quartic.value == pytest.approx(0.05)
        assert quartic.grad == {}

    def test_two_site_hopping(self):
        H = build_initial_hamiltonian(0.1, 0.0, {0: 0.0, 1: 0.0}, (0, 1))
        a = H.coefficient(MultiIndex([(0, 0, 1), (1, 1, 0)]))
        b = H.coefficient(MultiIndex([(0, 1, 0), (1, 0, 1)]))
        assert a.value == pytest.approx(0.05)
        assert b.value == pytest.approx(0.05)

    def test_empty_window(self):
        with pytest.raises(InvalidWindow):
            build_initial_hamiltonian(0.0, 0.0, {}, (3, 2))

    def test_reality_and_gauge(self):
        v = {j: 0.3 for j in range(-2, 3)}
        H = build_initial_hamiltonian(0.05, 0.02, v, (-2, 2))
        assert H.reality_defect() == 0.0
        assert H.is_gauge_invariant()


class TestPoissonBracket:
    def test_self_bracket_is_exactly_zero(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            H = random_poly(rng, (-4, 4), n_terms=10)
            assert poisson_bracket(H, H).is_zero()

    def test_antisymmetry_exact(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            H = random_poly(rng, (-5, 5), n_terms=8)
            G = random_poly(rng, (-5, 5), n_terms=8)
            HG = poisson_bracket(H, G)
            GH = poisson_bracket(G, H)
            assert set(HG.terms) == set(GH.terms)
            for n, c in HG:
                d = GH.terms[n]
                assert c.value == -d.value
                assert set(c.grad) == set(d.grad)
                for j in c.grad:
                    assert c.grad[j] == -d.grad[j]

    def test_number_with_hopping(self):
        # {q_0 qbar_0, q_0 qbar_1} = -i q_0 qbar_1
        H = mono([(0, 1, 1)], 1.0)
        G = mono([(0, 1, 0), (1, 0, 1)], 1.0)
        B = poisson_bracket(H, G)
        assert len(B) == 1
        c = B.coefficient(MultiIndex([(0, 1, 0), (1, 0, 1)]))
        assert c.value == pytest.approx(-1j)

    def test_hopping_chain(self):
        # {q_0 qbar_1, q_1 qbar_2} = -i q_0 qbar_2
        H = mono([(0, 1, 0), (1, 0, 1)], 1.0)
        G = mono([(1, 1, 0), (2, 0, 1)], 1.0)
        B = poisson_bracket(H, G)
        c = B.coefficient(MultiIndex([(0, 1, 0), (2, 0, 1)]))
        assert c.value == pytest.approx(-1j)

    def test_matches_analytic_derivative_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(25):
            H = random_poly(rng, (-4, 4), n_terms=8)
            G = random_poly(rng, (-4, 4), n_terms=8)
            B = poisson_bracket(H, G)
            for _ in range(3):
                q = random_state(rng, (-4, 4))
                got = B.evaluate(q)
                want = oracle_bracket_value(H, G, q)
                assert got == pytest.approx(want, rel=1e-10, abs=1e-12)

    def test_matches_finite_difference_oracle(self):
        rng = np.random.default_rng(10)
        for _ in range(5):
            H = random_poly(rng, (-3, 3), n_terms=6, max_exp=2)
            G = random_poly(rng, (-3, 3), n_terms=6, max_exp=2)
            B = poisson_bracket(H, G)
            q = random_state(rng, (-3, 3))
            got = B.evaluate(q)
            want = fd_bracket_value(H, G, q)
            assert got == pytest.approx(want, rel=1e-6, abs=1e-8)

    def test_gauge_preservation(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            H = random_poly(rng, (-4, 4), gauge_invariant=True)
            G = random_poly(rng, (-4, 4), gauge_invariant=True)
            assert poisson_bracket(H, G).is_gauge_invariant()

    def test_reality_preservation(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            H = random_poly(rng, (-4, 4), real=True)
            G = random_poly(rng, (-4, 4), real=True)
            assert poisson_bracket(H, G).reality_defect() < 1e-12

    def test_spread_and_degree_bookkeeping(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            H = random_poly(rng, (-4, 4), n_terms=1, real=False)
            G = random_poly(rng, (-4, 4), n_terms=1, real=False)
            (n, _), (m, _) = next(iter(H)), next(iter(G))
            B = poisson_bracket(H, G)
            for l, _ in B:
                assert l.spread <= n.spread + m.spread
                assert l.degree == n.degree + m.degree - 2


class TestNorms:
    frame = NormFrame(j0=0, N=8, r=3.0, alpha=0.009, epsilon=1e-3)

    def test_zero_polynomial(self):
        Z = HamPoly({}, (-8, 8))
        assert weighted_norm(Z, self.frame, 3.0) == 0.0
        assert lipschitz_norm(Z, self.frame, 3.0) == 0.0

    def test_single_hopping_term(self):
        c = 0.37
        H = mono([(0, 1, 0), (1, 0, 1)], c)
        r_eff = 2.4
        assert weighted_norm(H, self.frame, r_eff) == pytest.approx(c * 2 * r_eff**2)

    def test_invalid_radius(self):
        H = mono([(0, 1, 1)], 1.0)
        with pytest.raises(InvalidRadius):
            weighted_norm(H, self.frame, 1.0)
        with pytest.raises(InvalidRadius):
            lipschitz_norm(H, self.frame, 0.5)

    def test_initial_offdiagonal_bound(self):
        # || H1 - D1 ||_{j0,N,r} <= 10 N r^3 eps on a window covering the barrier
        frame = NormFrame(j0=4, N=6, r=3.0, alpha=0.009, epsilon=3e-3)
        window = (-12, 12)
        v = {j: 0.5 for j in range(window[0], window[1] + 1)}
        eps1, eps2 = 2e-3, 1e-3
        H = build_initial_hamiltonian(eps1, eps2, v, window)
        D, _, _ = split_DZR(H)
        off = H - D
        bound = 10 * frame.N * frame.r**3 * (eps1 + eps2)
        assert weighted_norm(off, frame, frame.r) <= bound
        assert lipschitz_norm(off, frame, frame.r) == 0.0

    def test_diagonal_lipschitz(self):
        window = (-10, 10)
        v = {j: 0.5 for j in range(-10, 11)}
        D = build_initial_hamiltonian(0.0, 0.0, v, window)
        r_eff = 2.2
        assert lipschitz_norm(D, self.frame, r_eff) == pytest.approx(r_eff)

    def test_gradless_lipschitz_zero(self):
        H = mono([(0, 1, 0), (1, 0, 1)], 0.3)
        assert lipschitz_norm(H, self.frame, 2.0) == 0.0

    def test_monotone_in_radius(self):
        rng = np.random.default_rng(14)
        H = random_poly(rng, (-6, 6), n_terms=12)
        r_vals = [1.5, 2.0, 2.5, 3.0]
        norms = [weighted_norm(H, self.frame, r) for r in r_vals]
        assert norms == sorted(norms)

    def test_restriction_shrinks_norm(self):
        rng = np.random.default_rng(15)
        H = random_poly(rng, (-6, 6), n_terms=12)
        keep = restrict_support(H, self.frame, 2, intersect=True)
        assert weighted_norm(keep, self.frame, 2.5) <= weighted_norm(
            H, self.frame, 2.5
        )


class TestBracketNormInequality:
    def test_bracket_norm_estimate(self):
        # ||| {H, G} |||_{r - sigma} <= (1/sigma) |||H||| |||G||| for H supported
        # inside one barrier interval.
        rng = np.random.default_rng(16)
        frame = NormFrame(j0=5, N=4, r=3.0, alpha=0.009, epsilon=1e-3, sigma=0.5)
        window = (-10, 10)
        violations = 0
        for _ in range(200):
            H = random_poly(rng, window, n_terms=6, support=(2, 8))
            G = random_poly(rng, window, n_terms=6)
            lhs = triple_norm(poisson_bracket(H, G), frame, frame.r - frame.sigma)
            rhs = (
                triple_norm(H, frame, frame.r)
                * triple_norm(G, frame, frame.r)
                / frame.sigma
            )
            if lhs > rhs * (1 + 1e-12):
                violations += 1
        assert violations == 0


class TestRestrictSupport:
    frame = NormFrame(j0=10, N=8, r=3.0, alpha=0.009, epsilon=1e-3)

    def test_partition(self):
        rng = np.random.default_rng(17)
        H = random_poly(rng, (-10, 10), n_terms=15)
        inside = restrict_support(H, self.frame, 5, True)
        outside = restrict_support(H, self.frame, 5, False)
        back = inside + outside
        assert set(back.terms) == set(H.terms)
        for n, c in H:
            assert back.terms[n].value == c.value

    def test_center_kept_at_zero_width(self):
        frame = NormFrame(j0=3, N=2, r=3.0, alpha=0.009, epsilon=1e-3)
        H = HamPoly({MultiIndex([(3, 1, 1)]): Coefficient(1.0)}, (-5, 5))
        assert len(restrict_support(H, frame, 0, True)) == 1

    def test_far_support_dropped(self):
        H = HamPoly(
            {MultiIndex([(0, 1, 0), (1, 0, 1)]): Coefficient(1.0)}, (-20, 20)
        )
        kept = restrict_support(H, self.frame, 5, True)
        assert kept.is_zero()


class TestSplitDZR:
    def test_initial_hamiltonian_classes(self):
        v = {j: 0.2 * j + 0.1 for j in range(4)}
        H = build_initial_hamiltonian(0.1, 0.2, v, (0, 3))
        D, Z, R = split_DZR(H)
        assert len(D) == 4 and len(Z) == 4 and len(R) == 6
        for n, c in D:
            assert n.degree == 2 and n.is_resonant()
        for n, c in Z:
            assert c.value == pytest.approx(0.05)  # eps2/4
        for n, c in R:
            assert c.value == pytest.approx(0.05)  # eps1/2

    def test_pure_diagonal(self):
        v = {j: 0.5 for j in range(3)}
        H = build_initial_hamiltonian(0.0, 0.0, v, (0, 2))
        D, Z, R = split_DZR(H)
        assert len(D) == 3 and Z.is_zero() and R.is_zero()

    def test_single_hopping(self):
        H = mono([(0, 1, 0), (1, 0, 1)], 1.0)
        D, Z, R = split_DZR(H)
        assert D.is_zero() and Z.is_zero() and len(R) == 1

    def test_partition_exact(self):
        rng = np.random.default_rng(18)
        H = random_poly(rng, (-5, 5), n_terms=20)
        D, Z, R = split_DZR(H)
        back = D + Z + R
        assert set(back.terms) == set(H.terms)


class TestSerialization:
    def test_round_trip_exact(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            H = random_poly(rng, (-6, 6), n_terms=10)
            text = H.to_text()
            back = HamPoly.from_text(text)
            assert back.window == H.window
            assert set(back.terms) == set(H.terms)
            for n, c in H:
                d = back.terms[n]
                assert d.value == c.value
                assert d.grad == c.grad

    def test_empty_poly_round_trip(self):
        H = HamPoly({}, (-3, 3))
        assert HamPoly.from_text(H.to_text()).window == (-3, 3)

    def test_sites_ascending_in_output(self):
        H = mono([(2, 1, 0), (-1, 0, 1)], 1.0)
        line = H.to_text().splitlines()[1]
        assert line.startswith("-1:(0,1) 2:(1,0)")


class TestEvaluate:
    def test_wirtinger_independence(self):
        H = mono([(0, 1, 0)], 2.0)  # 2*q_0
        q = np.array([3.0 + 0j] * 21)
        qb = np.array([100.0 + 0j] * 21)
        assert H.evaluate(q, qb) == pytest.approx(6.0)

    def test_dict_state(self):
        H = mono([(0, 1, 1)], 1.0)
        assert H.evaluate({0: 2.0 + 0j}) == pytest.approx(4.0)
