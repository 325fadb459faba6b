"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with ``pytest -s`` to see them
live).  Seed-pinned regression values live in tests/data/baselines.json;
they were frozen from the first validated run of this suite.
"""

import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from latticebnf import verify
from latticebnf.dynamics import SimulationConfig, run_ensemble
from latticebnf.lattice_poly import (
    NormFrame,
    build_initial_hamiltonian,
    split_DZR,
    triple_norm,
)
from latticebnf.normal_form import remainder_decomposition, run_normal_form, split_for_step
from latticebnf.oracles import composed_flow, evaluate_batch
from latticebnf.resonance import (
    draw_potential,
    estimate_resonant_measure,
    screen_potential,
)

BASELINES = json.loads(
    (Path(__file__).parent / "data" / "baselines.json").read_text()
)

DESK = dict(eps1=9.5e-4, eps2=5e-5, N=16, r=3.0, alpha=0.009)
DESK_WINDOW = (-6, 5)  # 12 sites


def report(name, ok, detail=""):
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def find_screened_seed(window, M, margin, start=0):
    """First master seed whose index-0 draw passes screening with margin."""
    frame = NormFrame(j0=0, N=DESK["N"], r=DESK["r"], alpha=DESK["alpha"],
                      epsilon=DESK["eps1"] + DESK["eps2"])
    for seed in range(start, start + 500):
        rep = screen_potential(draw_potential(seed, 0, window), M, frame)
        if rep.passed and rep.min_ratio >= margin:
            return seed
    raise RuntimeError("no screened seed with requested margin")


@pytest.fixture(scope="module")
def desk_normal_form():
    """The pinned M=3 desk run shared by several criteria."""
    t0 = time.perf_counter()
    seed = BASELINES["normal_form"]["master_seed"]
    frame = NormFrame(j0=0, N=DESK["N"], r=DESK["r"], alpha=DESK["alpha"],
                      epsilon=DESK["eps1"] + DESK["eps2"])
    v = draw_potential(seed, 0, DESK_WINDOW)
    assert screen_potential(v, 3, frame).passed
    H1 = build_initial_hamiltonian(DESK["eps1"], DESK["eps2"], v, DESK_WINDOW)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_normal_form(H1, v, 3, frame)
    return frame, v, H1, res, time.perf_counter() - t0


class TestPoissonBracketOracle:
    def test_bracket_oracle_1000_pairs(self):
        t0 = time.perf_counter()
        suite = verify.bracket_oracle_suite(pairs=1000, states_per_pair=10,
                                            seed=201)
        wall = time.perf_counter() - t0
        ok = report(
            "poisson-bracket-oracle", suite.passed and wall <= 60.0,
            f"{suite.detail}; wall {wall:.1f}s (budget 60s)",
        )
        assert ok


class TestBracketNormInequality:
    def test_bracket_inequality_1000_pairs(self):
        suite = verify.bracket_inequality_suite(pairs=1000, seed=202)
        assert report("bracket-norm-inequality", suite.passed, suite.detail)


class TestHomologicalInverse:
    def test_homological_500_potentials(self):
        suite = verify.homological_suite(n_potentials=500, seed=203)
        assert report("homological-inverse", suite.passed, suite.detail)


class TestConjugationOracle:
    def test_conjugation_m3_100_states(self, desk_normal_form):
        frame, v, H1, res, nf_wall = desk_normal_form
        t0 = time.perf_counter()
        rng = np.random.default_rng(204)
        lo, hi = DESK_WINDOW
        states = rng.normal(size=(100, hi - lo + 1)) + 1j * rng.normal(
            size=(100, hi - lo + 1)
        )
        states /= np.linalg.norm(states, axis=1, keepdims=True)
        flowed = composed_flow([st.F for st in res.steps], states)
        lhs = evaluate_batch(H1, flowed)
        rhs = evaluate_batch(res.H_final, states)
        err = float(np.max(np.abs(lhs - rhs)))
        budget = res.tail_l1 + 1e-8
        wall = time.perf_counter() - t0 + nf_wall
        ok = report(
            "conjugation-oracle", err <= budget and wall <= 300.0,
            f"err {err:.3e} <= tail {res.tail_l1:.3e} + 1e-8; wall {wall:.1f}s",
        )
        assert ok


class TestNormalFormDecay:
    def test_remainder_decay(self, desk_normal_form):
        frame, v, H1, res, _ = desk_normal_form
        _, _, R1 = split_DZR(H1)
        rcal = [triple_norm(R1, frame, frame.r)]
        rcal += [st.diagnostics.norm_Rcal for st in res.steps]
        ratios = [rcal[s + 1] / rcal[s] for s in range(2)]
        base = BASELINES["normal_form"]["decay_ratios"]
        drift = max(abs(r - b) for r, b in zip(ratios, base))
        ok = all(r <= 0.5 for r in ratios) and drift <= 0.05
        assert report(
            "normal-form-decay", ok,
            f"ratios {ratios[0]:.4f}, {ratios[1]:.4f} (<= 0.5); baseline drift {drift:.1e}",
        )


class TestR3Cancellation:
    def test_r3_tail_identity(self, desk_normal_form):
        frame, v, H1, res, _ = desk_normal_form
        _, _, R = split_for_step(res.H_final, res.v_final)
        R1, R2, R3 = remainder_decomposition(R, frame, res.M)
        bad = [n for n in R3.terms if n.tail_gauge_sum(frame.j0) != 0]
        off_barrier = verify.cancellation_suite(seed=206, M=2)
        ok = not bad and off_barrier.passed
        assert report(
            "r3-cancellation", ok,
            f"desk run R3 terms {len(R3)}, off-centre run {off_barrier.detail}",
        )


class TestIntegrator:
    def test_l2_drift_million_steps(self):
        from latticebnf.dynamics import LatticeState, step_strang

        rng = np.random.default_rng(207)
        window = (-32, 32)
        v = draw_potential(17, 0, window)
        amps = rng.normal(size=65) + 1j * rng.normal(size=65)
        state = LatticeState(amps / np.linalg.norm(amps), window)
        total0 = state.total_mass()
        worst = 0.0
        n_steps = 10**6
        for k in range(n_steps):
            state = step_strang(state, v.values, 5e-3, 5e-3, 1e-2)
            if (k + 1) % 50000 == 0:
                worst = max(worst, abs(state.total_mass() - total0) / total0)
        assert report(
            "integrator-l2-drift", worst <= 1e-12,
            f"worst drift {worst:.2e} over 1e6 steps",
        )

    def test_linear_limit_32_sites(self):
        from scipy.linalg import expm

        from latticebnf.dynamics import LatticeState, step_strang

        rng = np.random.default_rng(208)
        window = (-16, 15)
        v = draw_potential(18, 0, window)
        amps = rng.normal(size=32) + 1j * rng.normal(size=32)
        s0 = LatticeState(amps / np.linalg.norm(amps), window)
        eps1, dt, t_end = 0.05, 1e-3, 10.0
        s = s0.copy()
        for _ in range(int(round(t_end / dt))):
            s = step_strang(s, v.values, eps1, 0.0, dt)
        Hm = np.diag(v.values).astype(complex)
        for i in range(31):
            Hm[i, i + 1] += eps1
            Hm[i + 1, i] += eps1
        expect = expm(-1j * Hm * t_end) @ s0.amps
        err = float(np.max(np.abs(s.amps - expect)))
        assert report(
            "integrator-linear-limit", err <= 1e-6, f"err {err:.2e} at t=10"
        )

    def test_dt_halving_and_gauge(self):
        suite = verify.integrator_suite(seed=209, drift_steps=2000)
        assert report("integrator-order-and-gauge", suite.passed, suite.detail)


class TestMeasureEstimate:
    def test_resonant_fraction_and_modulation(self):
        frame = NormFrame(j0=0, N=16, r=3.0, alpha=0.009, epsilon=1e-3)
        base = BASELINES["measure"]
        rep = estimate_resonant_measure(
            frame, 3, 10**4, base["master_seed"], (-14, 14),
            eps1=9.5e-4, eps2=5e-5, nf_probe=2,
        )
        bound = frame.epsilon ** (frame.alpha / 2)
        sigma = math.sqrt(max(rep.resonant_fraction * (1 - rep.resonant_fraction), 1e-12) / rep.samples)
        band = 3 * sigma
        drift = abs(rep.resonant_fraction - base["fraction"])
        mod_bound = 40 * frame.N**2 * frame.r**3 * frame.epsilon
        max_mod = max(rep.max_modulation) if rep.max_modulation else 0.0
        ok = (
            rep.resonant_fraction <= bound
            and drift <= band
            and max_mod <= mod_bound
        )
        assert report(
            "measure-estimate", ok,
            f"fraction {rep.resonant_fraction:.4f} <= {bound:.4f}; "
            f"baseline drift {drift:.2e} (band {band:.2e}); "
            f"max modulation {max_mod:.2e} <= {mod_bound:.1f}",
        )


class TestLocalizationProbe:
    def test_ensemble_success_and_log_fit(self):
        t0 = time.perf_counter()
        cfg = SimulationConfig(
            L=256, j0=20, N=10, eps1=5e-3, eps2=5e-3, delta=0.01,
            dt=1e-2, t_max=1e3,
        )
        base = BASELINES["localization"]
        summary = run_ensemble(cfg, 64, master_seed=base["master_seed"])
        wall = time.perf_counter() - t0
        ok = summary.contaminated == 0
        for p, b, ci in zip(
            summary.success_probability, base["success"], base["ci_half"]
        ):
            if p < b - ci:
                ok = False
        fit = summary.log_fit
        fit_ok = fit["residual"] <= fit["power_residual"] + 1e-12
        ok = ok and fit_ok
        assert report(
            "localization-probe", ok,
            f"success {min(summary.success_probability):.3f} min; "
            f"log-fit residual {fit['residual']:.3e} vs best power "
            f"{fit['power_residual']:.3e}; wall {wall:.0f}s",
        )


class TestDeterminism:
    def test_subcommands_byte_identical(self, tmp_path):
        import os
        import subprocess
        import sys

        def run(args):
            env = dict(os.environ)
            env["PYTHONWARNINGS"] = "ignore"
            res = subprocess.run(
                [sys.executable, "-m", "latticebnf.cli", *args],
                cwd=tmp_path, env=env, capture_output=True, text=True,
            )
            assert res.returncode == 0, res.stderr
            return res

        (tmp_path / "sim.cfg").write_text(
            "L = 16\nj0 = 4\nN = 2\neps1 = 5e-3\neps2 = 5e-3\n"
            "delta = 0.01\nt_max = 5\nrealizations = 6\nmaster_seed = 3\n"
        )
        sim_outs = set()
        for threads in ("1", "4", "8"):
            run(["simulate", "--config", "sim.cfg", "--out", "e.json",
                 "--threads", threads])
            sim_outs.add((tmp_path / "e.json").read_bytes())
        ok = len(sim_outs) == 1

        seed = str(BASELINES["normal_form"]["master_seed"])
        nf_outs = set()
        for threads in ("1", "4"):
            run(["normal-form", "--L", "6", "--eps1", "9.5e-4",
                 "--eps2", "5e-5", "--M", "2", "--master-seed", seed,
                 "--out", "nf.jsonl", "--threads", threads])
            nf_outs.add((tmp_path / "nf.jsonl").read_bytes())
        ok = ok and len(nf_outs) == 1

        res_outs = set()
        for threads in ("1", "8"):
            run(["resonance", "--L", "10", "--eps1", "5e-4", "--eps2", "5e-4",
                 "--M", "2", "--samples", "200", "--master-seed", "11",
                 "--out", "r.json", "--threads", threads])
            res_outs.add((tmp_path / "r.json").read_bytes())
        ok = ok and len(res_outs) == 1

        ver_outs = set()
        for _ in range(2):
            run(["verify", "--out", "v.json", "--quick", "true",
                 "--tol-scale", "1.0"])
            ver_outs.add((tmp_path / "v.json").read_bytes())
        ok = ok and len(ver_outs) == 1

        assert report(
            "determinism", ok,
            "simulate x3 threads, normal-form x2, resonance x2, verify x2",
        )
