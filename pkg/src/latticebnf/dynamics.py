"""Symplectic split-step integration of the disordered DNLS on a finite window.

The equation of motion  i qdot_j = eps1 (q_{j-1} + q_{j+1}) + v_j q_j
+ eps2 |q_j|^2 q_j  is integrated by a palindromic composition of exactly
solvable unitary substeps: onsite phase rotation (the onsite flow conserves
each |q_j|, so freezing the modulus there is exact), and two-site bond
rotations on the even and odd bond families.  Every substep is an isometry
of l2, so the conservation law of the continuum flow holds to roundoff.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoundaryContaminated, WindowTooSmall

BOUNDARY_ABORT_FRACTION = 1e-8


@dataclass
class LatticeState:
    """Complex amplitudes on the window [-L, L] at time t."""

    amps: np.ndarray
    window: tuple
    t: float = 0.0

    @classmethod
    def peak(cls, window, site=0, amplitude=1.0):
        lo, hi = window
        amps = np.zeros(hi - lo + 1, dtype=complex)
        amps[site - lo] = amplitude
        return cls(amps, (lo, hi))

    def total_mass(self):
        return float(np.sum(np.abs(self.amps) ** 2))

    def copy(self):
        return LatticeState(self.amps.copy(), self.window, self.t)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    tail_mass: list = field(default_factory=list)
    wavefront: list = field(default_factory=list)
    l2_drift: list = field(default_factory=list)
    energy_drift: list = field(default_factory=list)
    aborted_at: float = None

    def rows(self):
        return zip(self.times, self.tail_mass, self.wavefront,
                   self.l2_drift, self.energy_drift)


def _tuned_rotation(theta):
    """(cos, sin) pair whose squares sum to 1 far below double rounding.

    A fixed rotation pair with c^2 + s^2 = 1 + delta multiplies the bond
    mass by (1 + delta) every step, and a delta of even one ulp accumulates
    linearly over 1e6 steps.  One extended-precision Newton shot on s
    pushes the residual to ~1e-21.
    """
    c = float(np.cos(np.longdouble(theta)))
    s0 = np.longdouble(math.sin(theta))
    if s0 == 0.0:
        return c, 0.0
    val = np.longdouble(c) * np.longdouble(c) + s0 * s0 - 1.0
    return c, float(s0 - val / (2.0 * s0))


class _StepKernel:
    """Componentwise split-step kernel on (re, im) float arrays.

    Complex arithmetic is spelled out in real components: numpy's complex
    multiply contracts to FMA, whose rounding is biased (linear l2 drift)
    and not equivariant under multiplication by i.  The explicit form
    drifts only diffusively and commutes with the quarter-turn gauge
    bit-for-bit.
    """

    def __init__(self, vv, eps1, eps2, dt, n_sites):
        self.vv = vv
        self.eps2 = eps2
        self.half = 0.5 * dt
        self.even = np.arange(0, n_sites - 1, 2)
        self.odd = np.arange(1, n_sites - 1, 2)
        self.ch, self.sh = _tuned_rotation(eps1 * 0.5 * dt)
        self.cf, self.sf = _tuned_rotation(eps1 * dt)

    def _onsite_half(self, re, im):
        m2 = re * re
        m2 += im * im
        m2 *= self.eps2
        m2 += self.vv
        m2 *= self.half  # m2 now holds the phase angle
        pr = np.cos(m2)
        pi = np.sin(m2)
        np.negative(pi, out=pi)
        new_re = re * pr
        new_re -= im * pi
        tmp = re * pi
        im *= pr
        im += tmp
        return new_re, im

    def _bond(self, re, im, idx, c, s):
        ra = re[idx]
        ia = im[idx]
        rb = re[idx + 1]
        ib = im[idx + 1]
        # qa' = c qa - i s qb ; qb' = -i s qa + c qb
        re[idx] = c * ra + s * ib
        im[idx] = c * ia - s * rb
        re[idx + 1] = c * rb + s * ia
        im[idx + 1] = c * ib - s * ra

    def step(self, re, im):
        re, im = self._onsite_half(re, im)
        self._bond(re, im, self.even, self.ch, self.sh)
        self._bond(re, im, self.odd, self.cf, self.sf)
        self._bond(re, im, self.even, self.ch, self.sh)
        return self._onsite_half(re, im)


def step_strang(state, v, eps1, eps2, dt):
    """One palindromic split step of size dt.

    Composition: onsite half, even bonds half, odd bonds full, even bonds
    half, onsite half.  Palindromic ordering keeps the scheme second order
    and exactly time-reversible; every factor is unitary, so l2 is
    preserved to roundoff with no systematic drift.
    """
    if dt == 0.0:
        raise ValueError("dt must be nonzero")
    lo, hi = state.window
    vv = np.asarray([v[j] for j in range(lo, hi + 1)]) if not isinstance(v, np.ndarray) else v
    kernel = _StepKernel(vv, eps1, eps2, dt, len(state.amps))
    re = state.amps.real.copy()
    im = state.amps.imag.copy()
    re, im = kernel.step(re, im)
    amps = np.empty(len(re), dtype=complex)
    amps.real = re
    amps.imag = im
    return LatticeState(amps, state.window, state.t + dt)


def energy(state, v, eps1, eps2):
    """Hamiltonian of the lattice equation evaluated on the state."""
    q = state.amps
    lo, hi = state.window
    vv = np.asarray([v[j] for j in range(lo, hi + 1)]) if not isinstance(v, np.ndarray) else v
    onsite = float(np.sum(vv * np.abs(q) ** 2))
    hop = 2.0 * float(np.sum((q[:-1].conjugate() * q[1:]).real))
    quartic = float(np.sum(np.abs(q) ** 4))
    return 0.5 * (onsite + eps1 * hop + 0.5 * eps2 * quartic)


def tail_mass(state, j0, N):
    """Mass beyond the widened barrier: sum over |j| > j0 + N."""
    lo, hi = state.window
    L = max(abs(lo), abs(hi))
    if j0 + N >= L:
        raise WindowTooSmall(f"j0 + N = {j0 + N} must stay below L = {L}")
    sites = np.arange(lo, hi + 1)
    mask = np.abs(sites) > j0 + N
    return float(np.sum(np.abs(state.amps[mask]) ** 2))


def wavefront(state, j0, delta):
    """Smallest N' >= 0 with tail mass beyond j0 + N' below 2 delta.

    Returns the window-edge sentinel L - j0 when no smaller N' qualifies
    (the tail beyond the window is empty, so the sentinel always does).
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    lo, hi = state.window
    L = max(abs(lo), abs(hi))
    sentinel = L - j0
    if sentinel <= 0:
        return 0
    sites = np.arange(lo, hi + 1)
    d = np.abs(sites) - j0  # distance past the centre, <= sentinel
    masses = np.abs(state.amps) ** 2
    buckets = np.zeros(sentinel + 1)
    sel = d >= 1
    np.add.at(buckets, d[sel], masses[sel])
    suffix = np.cumsum(buckets[::-1])[::-1]  # suffix[k] = mass at distance >= k
    tails = np.append(suffix[1:], 0.0)  # tails[N'] = mass beyond j0 + N'
    below = np.nonzero(tails < 2 * delta)[0]
    return int(below[0]) if len(below) else int(sentinel)


def evolve(
    state0,
    v,
    eps1,
    eps2,
    dt,
    t_max,
    sample_every,
    j0,
    N,
    delta,
):
    """Integrate to t_max, recording observables every ``sample_every`` steps.

    Aborts with :class:`BoundaryContaminated` when the mass on the two edge
    sites exceeds 1e-8 of the total; the trajectory recorded so far stays
    valid and is attached to the exception.
    """
    if t_max <= 0 or dt <= 0:
        raise ValueError("need positive dt and t_max")
    lo, hi = state0.window
    vv = np.asarray([v[j] for j in range(lo, hi + 1)])
    n_steps = int(round(t_max / dt))
    total0 = state0.total_mass()
    e0 = energy(state0, vv, eps1, eps2)
    traj = Trajectory()

    def record(re, im, t):
        amps = np.empty(len(re), dtype=complex)
        amps.real = re
        amps.imag = im
        st = LatticeState(amps, state0.window, t)
        traj.times.append(t)
        traj.tail_mass.append(tail_mass(st, j0, N))
        traj.wavefront.append(wavefront(st, j0, delta))
        traj.l2_drift.append(abs(st.total_mass() - total0) / total0)
        e = energy(st, vv, eps1, eps2)
        traj.energy_drift.append(abs(e - e0) / max(abs(e0), 1e-300))

    kernel = _StepKernel(vv, eps1, eps2, dt, len(state0.amps))
    re = state0.amps.real.copy()
    im = state0.amps.imag.copy()
    record(re, im, state0.t)
    abort_level = BOUNDARY_ABORT_FRACTION * total0
    for step in range(1, n_steps + 1):
        re, im = kernel.step(re, im)
        t = step * dt  # avoid accumulated addition error in t
        boundary = re[0] * re[0] + im[0] * im[0] + re[-1] * re[-1] + im[-1] * im[-1]
        if boundary > abort_level:
            traj.aborted_at = t
            raise BoundaryContaminated(t, traj)
        if step % sample_every == 0 or step == n_steps:
            record(re, im, t)
    return traj


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    L: int
    j0: int
    N: int
    eps1: float
    eps2: float
    delta: float
    dt: float
    t_max: float
    initial_site: int = 0

    def window(self):
        return (-self.L, self.L)


def checkpoint_times(t_max):
    """Geometric grid 1, 2, 5, 10, ... capped at t_max (t_max always included)."""
    out = []
    decade = 1.0
    while decade <= t_max:
        for m in (1.0, 2.0, 5.0):
            t = m * decade
            if t <= t_max:
                out.append(t)
        decade *= 10.0
    if not out or out[-1] < t_max:
        out.append(float(t_max))
    return out


@dataclass
class EnsembleSummary:
    checkpoints: list
    success_probability: list
    ci95: list
    wavefront_median: list
    realizations: int
    contaminated: int
    log_fit: dict
    master_seed: int

    def to_json_dict(self):
        return {
            "checkpoints": self.checkpoints,
            "success_probability": self.success_probability,
            "ci95": [list(c) for c in self.ci95],
            "wavefront_median": self.wavefront_median,
            "realizations": self.realizations,
            "contaminated": self.contaminated,
            "log_fit": self.log_fit,
            "master_seed": self.master_seed,
        }


def _fit_log_model(ts, ys):
    """Least squares a*ln t + b and the best power law a*t^c + b, c >= 0.25."""
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = ts >= 1.0
    ts, ys = ts[keep], ys[keep]
    if len(ts) < 3:
        return {"a": 0.0, "b": float(ys.mean()) if len(ys) else 0.0,
                "residual": 0.0, "power_residual": 0.0, "power_c": 0.25}

    def lsq(basis):
        A = np.column_stack([basis, np.ones_like(basis)])
        coef, *_ = np.linalg.lstsq(A, ys, rcond=None)
        resid = float(np.sum((A @ coef - ys) ** 2))
        return coef, resid

    (a, b), res_log = lsq(np.log(ts))
    best_pow = math.inf
    best_c = 0.25
    for c in np.arange(0.25, 2.01, 0.05):
        _, res = lsq(ts**c)
        if res < best_pow:
            best_pow, best_c = res, float(c)
    return {
        "a": float(a),
        "b": float(b),
        "residual": res_log,
        "power_residual": best_pow,
        "power_c": best_c,
    }


def run_realization(cfg, master_seed, index):
    """One disorder realization; returns (index, checkpoint flags, wavefronts, aborted)."""
    from .resonance import draw_potential

    v = draw_potential(master_seed, index, cfg.window())
    state = LatticeState.peak(cfg.window(), site=cfg.initial_site)
    cps = checkpoint_times(cfg.t_max)
    steps_per = max(int(round(min(cps) / cfg.dt)), 1)
    try:
        traj = evolve(
            state, v, cfg.eps1, cfg.eps2, cfg.dt, cfg.t_max, steps_per,
            cfg.j0, cfg.N, cfg.delta,
        )
        aborted = False
    except BoundaryContaminated as exc:
        traj = exc.trajectory
        aborted = True
    ok_so_far = True
    flags, fronts = [], []
    ti = np.asarray(traj.times)
    tm = np.asarray(traj.tail_mass)
    wf = np.asarray(traj.wavefront)
    for t in cps:
        upto = ti <= t + 1e-12
        if aborted and traj.aborted_at is not None and t >= traj.aborted_at:
            flags.append(None)  # unknown beyond contamination
            fronts.append(None)
            continue
        ok_so_far = ok_so_far and bool(np.all(tm[upto] < 2 * cfg.delta))
        flags.append(ok_so_far)
        fronts.append(int(wf[upto][-1]) if upto.any() else 0)
    return index, flags, fronts, aborted


def summarize_ensemble(results, cfg, master_seed):
    """Deterministic reduction of per-realization results (in index order)."""
    results = sorted(results, key=lambda r: r[0])
    cps = checkpoint_times(cfg.t_max)
    n_cp = len(cps)
    succ = []
    ci = []
    medians = []
    contaminated = sum(1 for r in results if r[3])
    for i in range(n_cp):
        flags = [r[1][i] for r in results if r[1][i] is not None]
        fronts = [r[2][i] for r in results if r[2][i] is not None]
        p = (sum(flags) / len(flags)) if flags else 0.0
        nn = max(len(flags), 1)
        half = 1.959963984540054 * math.sqrt(max(p * (1 - p), 0.0) / nn)
        succ.append(p)
        ci.append((max(0.0, p - half), min(1.0, p + half)))
        medians.append(float(np.median(fronts)) if fronts else 0.0)
    fit = _fit_log_model(cps, medians)
    return EnsembleSummary(
        checkpoints=cps,
        success_probability=succ,
        ci95=ci,
        wavefront_median=medians,
        realizations=len(results),
        contaminated=contaminated,
        log_fit=fit,
        master_seed=int(master_seed),
    )


def run_ensemble(cfg, realizations, master_seed, pool_map=None):
    """Evolve ``realizations`` independent potentials and aggregate.

    ``pool_map`` may be any map-like callable (e.g. a process pool map);
    results are reduced in realization order, so the summary is identical
    for any worker count.
    """
    if realizations < 1:
        raise ValueError("realizations must be >= 1")
    args = [(cfg, master_seed, i) for i in range(realizations)]
    mapper = pool_map if pool_map is not None else map
    results = list(mapper(_run_realization_star, args))
    return summarize_ensemble(results, cfg, master_seed)


def _run_realization_star(args):
    return run_realization(*args)
