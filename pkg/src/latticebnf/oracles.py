"""Numeric flow oracle: integrate the Hamiltonian vector field of a HamPoly.

Used to verify the symbolic machinery end to end: the time-1 flow of a
generator F is computed by a high-order ODE solver and compared against the
bracket-series Lie transform, and the composed generator flows realize the
symplectic change of variables of a whole normal-form run.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp


class CompiledPoly:
    """Term arrays of a HamPoly for batched evaluation on (n_states, n_sites)."""

    def __init__(self, poly):
        self.window = poly.window
        lo = poly.window[0]
        self.terms = [
            (
                c.value,
                np.array([j - lo for j, _, _ in n.entries]),
                np.array([a for _, a, _ in n.entries]),
                np.array([b for _, _, b in n.entries]),
            )
            for n, c in poly.terms.items()
        ]

    def values(self, Q):
        """Evaluate at the batch Q of shape (n_states, n_sites)."""
        out = np.zeros(Q.shape[0], dtype=complex)
        Qc = Q.conjugate()
        for cval, idx, a, b in self.terms:
            out += cval * np.prod(
                Q[:, idx] ** a[None, :] * Qc[:, idx] ** b[None, :], axis=1
            )
        return out

    def grad_qbar(self, Q):
        """dH/dqbar_j for each state, shape (n_states, n_sites)."""
        out = np.zeros(Q.shape, dtype=complex)
        Qc = Q.conjugate()
        for cval, idx, a, b in self.terms:
            factors = Q[:, idx] ** a[None, :] * Qc[:, idx] ** b[None, :]
            for pos in range(len(idx)):
                if b[pos] == 0:
                    continue
                others = np.prod(np.delete(factors, pos, axis=1), axis=1)
                own = Q[:, idx[pos]] ** a[pos] * Qc[:, idx[pos]] ** (b[pos] - 1)
                out[:, idx[pos]] += cval * b[pos] * own * others
        return out


def flow_time1(F, states, rtol=1e-11, atol=1e-13):
    """Time-1 map of the flow i qdot_j = 2 dF/dqbar_j for a batch of states.

    ``states`` has shape (n_states, n_sites) over F's window.
    """
    cp = CompiledPoly(F)
    if not cp.terms:
        return states.copy()
    shape = states.shape

    def rhs(_t, y):
        Q = y.reshape(shape)
        return (-2j * cp.grad_qbar(Q)).reshape(-1)

    sol = solve_ivp(
        rhs,
        (0.0, 1.0),
        states.reshape(-1).astype(complex),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        dense_output=False,
    )
    if not sol.success:
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return sol.y[:, -1].reshape(shape)


def composed_flow(generators, states, rtol=1e-11, atol=1e-13):
    """Gamma(q) = X^1_{F_1}( X^1_{F_2}( ... X^1_{F_M}(q) ) ).

    The innermost flow belongs to the last generator, matching the
    composition H_final = H_1 o Gamma_1 o ... o Gamma_M.
    """
    Q = states
    for F in reversed(list(generators)):
        Q = flow_time1(F, Q, rtol=rtol, atol=atol)
    return Q


def evaluate_batch(poly, states):
    return CompiledPoly(poly).values(states)
