"""Command-line surface.

Subcommands: mati, sweep-ps, sweep-lr, gain, simulate, verify, reproduce,
constants.  Exit codes: 0 on success/pass, 1 on verification failure,
2 on usage errors (argparse's convention).
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import bench
from .config import ConfigError, load_config, merge_config
from .core_sim import TransmissionSchedule, simulate_trajectory
from .lyapunov_verify import (
    UFunction,
    WFunction,
    check_flow_decrease,
    check_jump_expectation,
    check_jump_supermartingale,
    l2_gain,
    verify_w_conditions,
    write_reports_csv,
)
from .mati_bounds import (
    InfeasibleError,
    ProtocolConstants,
    StabilityCertificate,
    sweep_lambda_rho,
    sweep_ps,
    tau_star,
    tau_star_ode,
    write_lr_sweep_csv,
    write_ps_sweep_csv,
)
from .protocols import DropoutModel, ProtocolSpec


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="key = value config file")
    p.add_argument("--system", choices=["batch-reactor", "robot-arm"], default=None)
    p.add_argument("--protocol", choices=["rr", "tod"], default=None)
    p.add_argument("--dropout", choices=["bernoulli", "csma", "markov", "iid"], default=None)
    p.add_argument("--ps", type=float, default=None)
    p.add_argument("--probs", type=str, default=None, help="comma-separated per-node probabilities")
    p.add_argument("--recovery", type=str, default=None, help="markov recovery rates")
    p.add_argument("--p1", type=float, default=None)
    p.add_argument("--p2", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--tmax", type=float, default=None)
    p.add_argument("--miati", type=float, default=None)
    p.add_argument("--mati", type=float, default=None)
    p.add_argument("--x0-norm", dest="x0_norm", type=float, default=None)
    p.add_argument("--out", type=str, default=None)


_DEFAULTS = {
    "system": "batch-reactor",
    "scheduler": "tod",
    "kind": "iid",
    "ps": 1.0,
    "seed": 2024,
    "runs": 15,
    "tmax": 5.0,
    "miati": 0.005,
    "mati": 0.005,
    "x0_norm": 1.0,
    "eps_conv": 0.05,
    "out": "out",
}


def _settings(args) -> dict:
    """CLI flags override config file entries override defaults."""
    fromfile = load_config(args.config) if args.config else {}
    cli = {
        "system": args.system,
        "scheduler": args.protocol,
        "kind": args.dropout,
        "ps": args.ps,
        "seed": getattr(args, "seed", None),
        "runs": getattr(args, "runs", None),
        "tmax": getattr(args, "tmax", None),
        "miati": getattr(args, "miati", None),
        "mati": getattr(args, "mati", None),
        "x0_norm": getattr(args, "x0_norm", None),
        "out": args.out,
    }
    if args.probs:
        cli["probs"] = tuple(float(t) for t in args.probs.split(","))
    if args.recovery:
        cli["recovery"] = tuple(float(t) for t in args.recovery.split(","))
    if args.p1 is not None:
        cli["p1"] = args.p1
    if args.p2 is not None:
        cli["p2"] = args.p2
    merged = merge_config(cli, fromfile)
    if "system" not in merged and "name" in merged:
        merged["system"] = merged["name"]
    for key, val in _DEFAULTS.items():
        merged.setdefault(key, val)
    # config files may use the long scheduler names
    merged["scheduler"] = {"round-robin": "rr", "try-once-discard": "tod"}.get(
        merged["scheduler"], merged["scheduler"]
    )
    return merged


def _dropout_from(settings: dict, ell: int) -> DropoutModel:
    kind = settings["kind"]
    if kind == "bernoulli":
        probs = settings.get("probs") or bench.ROBOT_ARM_NODE_PROBS[:ell]
        if len(probs) != ell:
            raise ConfigError(f"need {ell} node probabilities, got {len(probs)}")
        return DropoutModel.bernoulli(probs)
    if kind == "csma":
        return DropoutModel.csma(settings.get("p1", 0.9), settings.get("p2", 0.9), ell)
    if kind == "markov":
        probs = settings.get("probs") or (0.9,) * ell
        recovery = settings.get("recovery") or (0.9,) * ell
        return DropoutModel.markov(probs, recovery)
    return DropoutModel.iid(settings["ps"], ell)


def _spec_from(settings: dict, system) -> ProtocolSpec:
    return ProtocolSpec(
        scheduler="round-robin" if settings["scheduler"] == "rr" else "try-once-discard",
        coupling="ethernet-zero",
        partition=system.partition,
    )


def cmd_mati(args) -> int:
    st = _settings(args)
    consts, cert = bench.benchmark_constants(st["system"], st["scheduler"])
    res = tau_star(consts, cert, st["ps"])
    if not res.feasible:
        print(f"infeasible at ps={st['ps']}: rho^2 ps + lambda^2 (1-ps) >= 1")
        return 1
    print(
        f"tau_star={res.tau_star:.6f}  branch={res.branch}  "
        f"rho_prime={res.rho_prime:.6f}  ps={st['ps']}"
    )
    return 0


def cmd_sweep_ps(args) -> int:
    st = _settings(args)
    consts, cert = bench.benchmark_constants(st["system"], st["scheduler"])
    pts = sweep_ps(consts, cert, bench.PS_GRID)
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_ps_{st['system']}_{st['scheduler']}.csv"
    write_ps_sweep_csv(pts, path)
    print(path)
    return 0


def cmd_sweep_lr(args) -> int:
    st = _settings(args)
    _, cert = bench.benchmark_constants(st["system"], st["scheduler"])
    pts = sweep_lambda_rho(cert, st["ps"], bench.LAMBDA_GRID, bench.RHO_GRID)
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_lr_{st['system']}_{st['scheduler']}.csv"
    write_lr_sweep_csv(pts, path)
    print(path)
    return 0


def cmd_gain(args) -> int:
    st = _settings(args)
    if st["system"] != "batch-reactor":
        print("gain computation targets the linear benchmark", file=sys.stderr)
        return 2
    C = bench.BATCH_A2 if st["scheduler"] == "tod" else math.sqrt(2.0) * bench.BATCH_A2
    gamma = l2_gain(bench.BATCH_A1, bench.BATCH_B1, C)
    print(f"l2_gain={gamma:.6f}  scheduler={st['scheduler']}")
    return 0


def cmd_simulate(args) -> int:
    st = _settings(args)
    system = bench.benchmark_system(st["system"])
    spec = _spec_from(st, system)
    dropout = _dropout_from(st, len(system.partition))
    schedule = TransmissionSchedule(st["miati"], st["mati"])
    rng = np.random.default_rng(st["seed"])
    v = rng.standard_normal(system.n_x)
    x0 = st["x0_norm"] * v / np.linalg.norm(v)
    arc = simulate_trajectory(
        system, spec, dropout, schedule, x0, np.zeros(system.n_e), st["tmax"], st["seed"]
    )
    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"arc_{st['system']}_{st['scheduler']}_seed{st['seed']}.csv"
    arc.to_csv(path)
    xf = np.linalg.norm(arc.final_state().x)
    print(f"{path}  jumps={arc.jump_count}  |x(T)|={xf:.6g}")
    return 0


def cmd_verify(args) -> int:
    st = _settings(args)
    rng = np.random.default_rng(st["seed"])
    reports = []

    # per-jump W ratios for both schedulers across node counts
    for ell in (2, 3, 5):
        part = (1,) * ell
        for sched, wf in (("try-once-discard", WFunction.tod(part)), ("round-robin", WFunction.rr(part))):
            spec = ProtocolSpec(scheduler=sched, coupling="ethernet-zero", partition=part)
            rho = math.sqrt((ell - 1) / ell)
            lam = 1.0 if sched == "try-once-discard" else math.sqrt(ell)
            declared = ProtocolConstants(rho=rho, lam=lam, alpha2w=wf.alpha2w)
            reports.extend(verify_w_conditions(wf, spec, declared, 2000, rng))

    # closed form against the decay-flow oracle
    worst = 0.0
    for _ in range(25):
        rho = rng.uniform(0.1, 0.9)
        lam = rng.uniform(1.0, 1.6)
        ps_min = max(0.0, (lam**2 - 1.0) / (lam**2 - rho**2))
        ps = rng.uniform(ps_min + 0.05 * (1 - ps_min), 1.0)
        consts = ProtocolConstants(rho=rho, lam=lam)
        L = rng.uniform(0.5, 20.0)
        cert = StabilityCertificate(L=L, gamma=L * rng.uniform(0.3, 3.0))
        res = tau_star(consts, cert, ps)
        worst = max(worst, abs(res.tau_star - tau_star_ode(consts, cert, ps, tol=1e-11)))
    from .lyapunov_verify import CheckReport

    reports.append(CheckReport("mati-closed-form-vs-oracle", "max |diff|", 1e-8, worst, worst <= 1e-8))

    # flow decrease and jump supermartingale on a fresh arc
    system = bench.benchmark_system(st["system"])
    spec = _spec_from(st, system)
    dropout = _dropout_from(st, len(system.partition))
    consts, cert, V, wf = bench.flow_check_setup(st["system"], st["scheduler"])
    res = tau_star(consts, cert, 1.0)
    tau_m = min(st["mati"], 0.9 * res.tau_star)
    schedule = TransmissionSchedule(min(st["miati"], tau_m), tau_m)
    u = UFunction.build(V, wf, consts, cert, tau_max=tau_m, ps=1.0)
    v0 = np.random.default_rng(st["seed"]).standard_normal(system.n_x)
    x0 = v0 / np.linalg.norm(v0)
    arc = simulate_trajectory(
        system, spec, DropoutModel.iid(1.0, len(system.partition)), schedule,
        x0, np.zeros(system.n_e), min(st["tmax"], 2.0), st["seed"],
    )
    reports.append(check_flow_decrease(u, arc))
    reports.append(check_jump_supermartingale(u, arc, dropout, spec, 2000, rng))

    # expected jump contraction for the configured dropout model
    e_samples = [rng.standard_normal(system.n_e) for _ in range(50)]
    reports.append(
        check_jump_expectation(wf, consts, dropout, spec, e_samples, 5000, rng)
    )

    out = Path(st["out"])
    out.mkdir(parents=True, exist_ok=True)
    path = out / "verify_report.csv"
    write_reports_csv(reports, path)
    n_fail = sum(not r.passed for r in reports)
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.check}: {r.quantity} = "
              f"{r.observed:.3g} (bound {r.bound:.3g})")
    print(f"report: {path}")
    return 0 if n_fail == 0 else 1


def cmd_reproduce(args) -> int:
    st = _settings(args)
    paths = bench.reproduce(args.target, st["out"], seed=st["seed"], n_runs=st["runs"])
    for p in paths:
        print(p)
    return 0


def cmd_constants(args) -> int:
    st = _settings(args)
    for name, value in bench.constants_table():
        print(f"{name} = {value:.6f}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ncsim",
        description="Networked control loops over lossy channels: simulation, "
        "transmission-interval bounds, and Lyapunov verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, extra in [
        ("mati", cmd_mati, None),
        ("sweep-ps", cmd_sweep_ps, None),
        ("sweep-lr", cmd_sweep_lr, None),
        ("gain", cmd_gain, None),
        ("simulate", cmd_simulate, None),
        ("verify", cmd_verify, None),
        ("reproduce", cmd_reproduce, "target"),
        ("constants", cmd_constants, None),
    ]:
        p = sub.add_parser(name)
        if extra == "target":
            p.add_argument(
                "target",
                choices=["fig1", "fig2", "fig3", "fig4", "table-constants", "all"],
            )
        _add_common(p)
        p.set_defaults(func=fn)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InfeasibleError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
