"""Experiment drivers: flat-file config, subcommands, deterministic output.

Subcommands: ``simulate`` (disorder ensembles), ``normal-form`` (one
normal-form run with JSONL diagnostics), ``resonance`` (Monte Carlo measure
estimate), ``verify`` (property suites).  Every output file embeds the
resolved config and a format version; reruns with the same config and
master seed are byte-identical for any worker count.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from dataclasses import dataclass, fields

from . import dynamics, normal_form, resonance, verify
from .errors import (
    ConfigError,
    InvalidValue,
    LatticeBNFError,
    MissingField,
    UnknownKey,
)
from .lattice_poly import NormFrame, build_initial_hamiltonian, triple_norm

log = logging.getLogger("latticebnf")

FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MODULE = 3
EXIT_VERIFY = 4


@dataclass
class RunConfig:
    mode: str = None
    L: int = None
    j0: int = 0
    N: int = 16
    r: float = 3.0
    sigma: float = None  # default r / (2N)
    alpha: float = 0.009
    eps1: float = None
    eps2: float = None
    delta: float = None
    M: int = None
    dt: float = 1e-2
    t_max: float = None
    realizations: int = None
    samples: int = None
    master_seed: int = 0
    w_cap: int = None
    strict: bool = False
    out_path: str = None
    out_format: str = "json"
    threads: int = None
    write_trajectories: bool = False
    run_nf: bool = False
    nf_probe: int = 2
    strict_threshold: float = 1.0
    tol_scale: float = 1.0
    quick: bool = True


_BOOL = {"true": True, "1": True, "yes": True, "false": False, "0": False, "no": False}


def _parse_value(name, text, kind):
    text = text.strip()
    try:
        if kind is bool:
            if text.lower() not in _BOOL:
                raise ValueError("expected a boolean")
            return _BOOL[text.lower()]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise InvalidValue(name, str(exc)) from None


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_KIND = {
    "mode": str, "L": int, "j0": int, "N": int, "r": float, "sigma": float,
    "alpha": float, "eps1": float, "eps2": float, "delta": float, "M": int,
    "dt": float, "t_max": float, "realizations": int, "samples": int,
    "master_seed": int, "w_cap": int, "strict": bool, "out_path": str,
    "out_format": str, "threads": int, "write_trajectories": bool,
    "run_nf": bool, "nf_probe": int, "strict_threshold": float,
    "tol_scale": float, "quick": bool,
}

_REQUIRED = {
    "simulate": ("L", "eps1", "eps2", "delta", "t_max", "realizations"),
    "normal-form": ("L", "eps1", "eps2", "M"),
    "resonance": ("L", "eps1", "eps2", "M", "samples"),
    "verify": (),
}


def _validate(cfg):
    if cfg.mode not in _REQUIRED:
        raise InvalidValue("mode", f"unknown mode {cfg.mode!r}")
    for name in _REQUIRED[cfg.mode]:
        if getattr(cfg, name) is None:
            raise MissingField(name, cfg.mode)
    if not 0 < cfg.alpha < 0.01:
        raise InvalidValue("alpha", "must lie in (0, 1/100)")
    if cfg.r <= 2:
        raise InvalidValue("r", "must be > 2")
    # simulate uses N only as the tail-mass offset, where 0 is meaningful
    if cfg.N < (0 if cfg.mode == "simulate" else 1):
        raise InvalidValue("N", "must be >= 1")
    if cfg.sigma is not None and not 0 < cfg.sigma < cfg.r / 2:
        raise InvalidValue("sigma", "must lie in (0, r/2)")
    if cfg.dt is not None and cfg.dt <= 0:
        raise InvalidValue("dt", "must be > 0")
    if cfg.t_max is not None and cfg.t_max <= 0:
        raise InvalidValue("t_max", "must be > 0")
    if cfg.L is not None and cfg.L <= 0:
        raise InvalidValue("L", "must be > 0")
    if cfg.eps1 is not None and cfg.eps1 < 0:
        raise InvalidValue("eps1", "must be >= 0")
    if cfg.eps2 is not None and cfg.eps2 < 0:
        raise InvalidValue("eps2", "must be >= 0")
    if cfg.delta is not None and cfg.delta <= 0:
        raise InvalidValue("delta", "must be > 0")
    if cfg.M is not None and cfg.M < 0:
        raise InvalidValue("M", "must be >= 0")
    if cfg.realizations is not None and cfg.realizations < 1:
        raise InvalidValue("realizations", "must be >= 1")
    if cfg.samples is not None and cfg.samples < 1:
        raise InvalidValue("samples", "must be >= 1")
    if cfg.out_format not in ("csv", "json"):
        raise InvalidValue("out_format", "must be csv or json")
    if cfg.threads is not None and cfg.threads < 1:
        raise InvalidValue("threads", "must be >= 1")
    return cfg


def parse_config(file_text=None, overrides=(), mode=None):
    """Build a RunConfig from `key = value` lines plus override pairs.

    ``overrides`` is a flat sequence of (key, value) string pairs (from
    ``--key value`` flags) taking precedence over the file.  Every
    resolved field is echoed to the log with its source.
    """
    sources = {}
    values = {}
    if file_text is not None:
        for lineno, raw in enumerate(file_text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidValue(f"line {lineno}", f"expected key = value: {raw!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _KIND:
                raise UnknownKey(key)
            values[key] = _parse_value(key, val, _KIND[key])
            sources[key] = "file"
    for key, val in overrides:
        key = key.replace("-", "_")
        if key not in _KIND:
            raise UnknownKey(key)
        values[key] = _parse_value(key, val, _KIND[key])
        sources[key] = "flag"
    if mode is not None:
        if "mode" in values and values["mode"] != mode:
            raise InvalidValue(
                "mode", f"config says {values['mode']!r}, subcommand is {mode!r}"
            )
        values["mode"] = mode
        sources.setdefault("mode", "subcommand")
    cfg = RunConfig(**values)
    cfg = _validate(cfg)
    for f in fields(RunConfig):
        src = sources.get(f.name, "default")
        log.info("config: %s = %r (%s)", f.name, getattr(cfg, f.name), src)
    return cfg


def _resolved_config_dict(cfg):
    """Resolved config embedded in outputs.

    ``threads`` is a scheduling knob with no effect on results, so it is
    left out to keep output files byte-identical across worker counts.
    """
    return {
        f.name: getattr(cfg, f.name)
        for f in fields(RunConfig)
        if f.name != "threads"
    }


def _json_dumps(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ": "), indent=1)


def _thread_count(cfg):
    if cfg.threads is not None:
        return cfg.threads
    env = os.environ.get("LATTICEBNF_THREADS")
    if env:
        try:
            return max(int(env), 1)
        except ValueError:
            raise InvalidValue("LATTICEBNF_THREADS", "must be an integer") from None
    return os.cpu_count() or 1


def _frame(cfg):
    return NormFrame(
        j0=cfg.j0, N=cfg.N, r=cfg.r, alpha=cfg.alpha,
        epsilon=cfg.eps1 + cfg.eps2, sigma=cfg.sigma,
    )


def _write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _sim_config(cfg):
    return dynamics.SimulationConfig(
        L=cfg.L, j0=cfg.j0, N=cfg.N, eps1=cfg.eps1, eps2=cfg.eps2,
        delta=cfg.delta, dt=cfg.dt, t_max=cfg.t_max,
    )


def _simulate_worker(args):
    sim, master_seed, idx, traj_path, config_json = args
    from .errors import BoundaryContaminated

    result = dynamics.run_realization(sim, master_seed, idx)
    if traj_path is not None:
        from .resonance import draw_potential

        v = draw_potential(master_seed, idx, sim.window())
        state = dynamics.LatticeState.peak(sim.window(), site=sim.initial_site)
        cps = dynamics.checkpoint_times(sim.t_max)
        steps_per = max(int(round(min(cps) / sim.dt)), 1)
        try:
            traj = dynamics.evolve(
                state, v, sim.eps1, sim.eps2, sim.dt, sim.t_max, steps_per,
                sim.j0, sim.N, sim.delta,
            )
        except BoundaryContaminated as exc:
            traj = exc.trajectory
        _write_text(traj_path, _trajectory_csv(traj, config_json))
    return result


def _trajectory_csv(traj, config_json=""):
    lines = [f"# format latticebnf-trajectory/{FORMAT_VERSION}"]
    if config_json:
        lines.append(f"# config {config_json}")
    lines.append("t,tail_mass,wavefront,l2_drift,energy_drift")
    for t, tm, wf, l2, ed in traj.rows():
        lines.append(f"{t!r},{tm!r},{wf},{l2!r},{ed!r}")
    return "\n".join(lines) + "\n"


def cmd_simulate(cfg):
    sim = _sim_config(cfg)
    n_threads = _thread_count(cfg)
    out_path = cfg.out_path or "ensemble.json"
    stem = out_path.rsplit(".", 1)[0]
    config_json = _json_dumps_compact(_resolved_config_dict(cfg))
    jobs = []
    for i in range(cfg.realizations):
        traj_path = f"{stem}_r{i:04d}.csv" if cfg.write_trajectories else None
        jobs.append((sim, cfg.master_seed, i, traj_path, config_json))
    if n_threads > 1 and cfg.realizations > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(_simulate_worker, jobs))
    else:
        results = [_simulate_worker(j) for j in jobs]
    summary = dynamics.summarize_ensemble(results, sim, cfg.master_seed)
    payload = {
        "format": f"latticebnf-ensemble/{FORMAT_VERSION}",
        "config": _resolved_config_dict(cfg),
        "summary": summary.to_json_dict(),
    }
    _write_text(out_path, _json_dumps(payload) + "\n")
    log.info("wrote %s (%d realizations, %d contaminated)", out_path,
             summary.realizations, summary.contaminated)
    return EXIT_OK


# ---------------------------------------------------------------------------
# normal-form
# ---------------------------------------------------------------------------


def cmd_normalform(cfg):
    frame = _frame(cfg)
    window = (-cfg.L, cfg.L)
    v = resonance.draw_potential(cfg.master_seed, 0, window)
    screen = resonance.screen_potential(v, max(cfg.M, 1), frame)
    if not screen.passed:
        log.error(
            "potential failed nonresonance screening at step %s: witness %s",
            screen.failed_step, screen.witness,
        )
        return EXIT_MODULE
    H1 = build_initial_hamiltonian(cfg.eps1, cfg.eps2, v, window)
    D1, Z1, R1 = normal_form.split_for_step(H1, v)
    records = []
    records.append({
        "s": 0,
        "N_s": frame.N,
        "r_eff": frame.r,
        "norm_F": 0.0,
        "norm_Z": triple_norm(Z1, frame, frame.r),
        "norm_R": triple_norm(R1, frame, frame.r),
        "norm_Rcal": triple_norm(R1, frame, frame.r),
        "lie_tail": 0.0,
        "wall_time_ms": None,
    })
    from .errors import BoundViolation, LieSeriesDiverges

    try:
        res = normal_form.run_normal_form(
            H1, v, cfg.M, frame, w_cap=cfg.w_cap, strict=cfg.strict
        )
    except (BoundViolation, LieSeriesDiverges) as exc:
        log.error("bound check failed under --strict: %s", exc)
        return EXIT_VERIFY
    except LatticeBNFError as exc:
        log.error("normal form failed: %s", exc)
        return EXIT_MODULE
    for st in res.steps:
        rec = st.diagnostics.record_fields()
        records.append(rec)
        log.info("step %d: wall %.1f ms, lie orders %d",
                 st.s, st.diagnostics.wall_time_ms, st.diagnostics.lie_orders)
    _, _, R_final = normal_form.split_for_step(res.H_final, res.v_final)
    try:
        R1p, R2p, R3p = normal_form.remainder_decomposition(R_final, frame, cfg.M)
        verdict = "ok"
    except LatticeBNFError as exc:
        log.error("remainder decomposition: %s", exc)
        return EXIT_MODULE
    r_half = frame.r / 2.0
    norm_r12 = (
        triple_norm(R1p + R2p, frame, r_half) if r_half > 1 else float("nan")
    )
    records.append({
        "final": True,
        "norm_R12": norm_r12,
        "r3_cancellation": verdict,
        "r3_terms": len(R3p),
        "lie_tail_total": res.tail_norm,
    })
    out_path = cfg.out_path or "normal_form.jsonl"
    header = {
        "format": f"latticebnf-nf-diagnostics/{FORMAT_VERSION}",
        "config": _resolved_config_dict(cfg),
    }
    lines = [_json_dumps_compact(header)]
    lines += [_json_dumps_compact(r) for r in records]
    _write_text(out_path, "\n".join(lines) + "\n")
    log.info("wrote %s", out_path)
    return EXIT_OK


def _json_dumps_compact(payload):
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# resonance
# ---------------------------------------------------------------------------


def cmd_resonance(cfg):
    frame = _frame(cfg)
    window = (-cfg.L, cfg.L)
    report = resonance.estimate_resonant_measure(
        frame, cfg.M, cfg.samples, cfg.master_seed, window,
        eps1=cfg.eps1, eps2=cfg.eps2, run_nf=cfg.run_nf,
        nf_probe=cfg.nf_probe, w_cap=cfg.w_cap,
        threshold_scale=cfg.strict_threshold,
    )
    payload = {
        "format": f"latticebnf-resonance/{FORMAT_VERSION}",
        "config": _resolved_config_dict(cfg),
        "report": report.to_json_dict(),
    }
    out_path = cfg.out_path or "resonance.json"
    _write_text(out_path, _json_dumps(payload) + "\n")
    log.info("wrote %s (fraction %.4f)", out_path, report.resonant_fraction)
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(cfg):
    suites = verify.run_all(quick=cfg.quick, tol_scale=cfg.tol_scale)
    width = max(len(s.name) for s in suites)
    all_ok = True
    for s in suites:
        mark = "PASS" if s.passed else "FAIL"
        print(f"{s.name:<{width}}  {mark}  {s.detail}")
        all_ok = all_ok and s.passed
    if cfg.out_path:
        payload = {
            "format": f"latticebnf-verify/{FORMAT_VERSION}",
            "config": _resolved_config_dict(cfg),
            "suites": [
                {"name": s.name, "passed": s.passed, "detail": s.detail}
                for s in suites
            ],
        }
        _write_text(cfg.out_path, _json_dumps(payload) + "\n")
    return EXIT_OK if all_ok else EXIT_VERIFY


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="latticebnf",
        description="Normal-form, resonance and localization experiments "
        "for the 1D disordered discrete NLS.  Any config key can be "
        "overridden with --key value.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "normal-form", "resonance", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output path")
        p.add_argument("--threads", type=int)
        p.add_argument("--strict", action="store_true")
    return parser


def _collect_overrides(extras, args):
    if len(extras) % 2 != 0:
        raise InvalidValue("overrides", f"dangling flag in {extras}")
    pairs = []
    for key, val in zip(extras[::2], extras[1::2]):
        if not key.startswith("--"):
            raise InvalidValue("overrides", f"expected --key, got {key!r}")
        pairs.append((key[2:], val))
    if args.out is not None:
        pairs.append(("out_path", args.out))
    if args.threads is not None:
        pairs.append(("threads", str(args.threads)))
    if args.strict:
        pairs.append(("strict", "true"))
    return pairs


def main(argv=None):
    logging.basicConfig(
        level=os.environ.get("LATTICEBNF_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        file_text = None
        if args.config:
            with open(args.config) as fh:
                file_text = fh.read()
        overrides = _collect_overrides(extras, args)
        cfg = parse_config(file_text, overrides, mode=args.command)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read config: %s", exc)
        return EXIT_CONFIG
    handler = {
        "simulate": cmd_simulate,
        "normal-form": cmd_normalform,
        "resonance": cmd_resonance,
        "verify": cmd_verify,
    }[cfg.mode]
    try:
        return handler(cfg)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except LatticeBNFError as exc:
        log.error("module error: %s", exc)
        return EXIT_MODULE
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_MODULE


if __name__ == "__main__":
    sys.exit(main())
