"""Sparse lattice Hamiltonians: monomials, brackets and weighted norms.

Builds the cubic-NLS Hamiltonian on a small window, splits it into its
diagonal / resonant / non-resonant parts, and explores the barrier-weighted
norm and the Poisson bracket estimate that drives every later bound.
"""

from latticebnf import (
    NormFrame,
    build_initial_hamiltonian,
    poisson_bracket,
    split_DZR,
    triple_norm,
    weighted_norm,
)
from latticebnf.resonance import draw_potential

window = (-8, 8)
v = draw_potential(master_seed=12, index=0, window=window)
eps1, eps2 = 1e-3, 2e-4

H = build_initial_hamiltonian(eps1, eps2, v, window)
print(f"H has {len(H)} terms on {window}")

D, Z, R = split_DZR(H)
print(f"diagonal: {len(D)}  resonant quartic: {len(Z)}  hopping: {len(R)}")

# every term of R transports mass; resonant terms depend only on |q_j|^2
for n, c in list(R)[:3]:
    print("  hopping term", n, "coefficient", c.value)

# the norm weights each monomial by degree * r^(spread + degree - 1) and
# only counts terms whose support meets the barrier A(j0, N)
frame = NormFrame(j0=0, N=6, r=3.0, alpha=0.009, epsilon=eps1 + eps2)
print("\n|H - D| in the weighted norm:", weighted_norm(H - D, frame, frame.r))
print("analytic envelope 10 N r^3 eps:",
      10 * frame.N * frame.r**3 * frame.epsilon)

# bracket estimate: |||{H,G}|||_{r-sigma} <= (1/sigma) |||H||| |||G|||
G = build_initial_hamiltonian(5e-4, 0.0, v, window)
sigma = 0.5
lhs = triple_norm(poisson_bracket(H, G), frame, frame.r - sigma)
rhs = triple_norm(H, frame, frame.r) * triple_norm(G, frame, frame.r) / sigma
print(f"\nbracket norm {lhs:.3e} vs estimate {rhs:.3e} (ratio {lhs/rhs:.3f})")

# serialization round-trips exactly
from latticebnf import HamPoly

assert HamPoly.from_text(H.to_text()).to_text() == H.to_text()
print("\ntext serialization round-trips exactly")
