"""Command-line front end.

Exit codes: 0 ok, 1 config/validation error, 2 series did not converge,
3 property failure, 4 oracle mismatch, 5 Monte Carlo estimate outside its band.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ConfigError, InvalidRates, NHCTMCError, NoConvergence
from .fields import KernelField
from .io import write_columns_csv, write_field_csv, write_json
from .kernel import backward_residual, forward_residual, minimal_solution, regularity_defect
from .oracle import oracle_minimal
from .policy import queue_metrics
from .properties import PropertyOutcome, consequence_checks, derivative_at_diagonal, validate_pretransition
from .rates import PiecewiseConstantRates, require_valid
from .sampler import estimate_from_terminal, terminal_states

log = logging.getLogger("nhctmc")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CONVERGENCE = 2
EXIT_PROPERTY = 3
EXIT_ORACLE = 4
EXIT_STATISTICAL = 5


def _solve(cfg: RunConfig, layout="end", s=None, t_end=None):
    return minimal_solution(
        cfg.rates,
        cfg.s if s is None else s,
        cfg.t_end if t_end is None else t_end,
        cfg.h,
        cfg.series_tol,
        layout=layout,
        max_order=cfg.max_order,
    )


def _labels(cfg):
    return cfg.rates.space.labels


def cmd_build(cfg: RunConfig, out: Path, **_) -> int:
    sol = _solve(cfg)
    write_field_csv(out / "field.csv", sol.times, sol.field, _labels(cfg))
    report = sol.report()
    report["final_defect"] = sol.defect[-1].tolist()
    write_json(out / "series.json", report)
    log.info("order %d, tail bound %.3e", sol.series_order, sol.tail_bound)
    return EXIT_OK


def _derivative_outcome(cfg, field, probes):
    Q = cfg.rates
    steps = (10 * cfg.h, 5 * cfg.h, 2.5 * cfg.h)
    worst, loc = 0.0, {}
    for s in probes:
        if s + steps[0] > Q.horizon:
            continue
        # the one-sided window must not touch a jump, up to round-off in the probe time
        if any(s - 1e-9 <= d <= s + steps[0] for d in Q.discontinuities):
            continue
        for i in range(Q.size):
            for j in range(Q.size):
                est = derivative_at_diagonal(field, Q, i, j, s, steps)
                if est.error > worst:
                    worst, loc = est.error, {"s": s, "i": i, "j": j, "estimate": est.estimate, "rate": est.target}
    return PropertyOutcome("derivative_condition", worst, 0.0, cfg.derivative_tol, loc)


def cmd_verify(cfg: RunConfig, out: Path, field_hook=None, **_) -> int:
    Q = cfg.rates
    end = _solve(cfg, "end")
    start = _solve(cfg, "start")
    fwd = forward_residual(Q, end)
    bwd = backward_residual(Q, start)
    defect = regularity_defect(end, cfg.defect_tol)

    field = KernelField(Q, cfg.t_end, cfg.h, cfg.series_tol, max_order=cfg.max_order)
    if field_hook is not None:
        field = field_hook(field)
    probes = np.linspace(cfg.s, cfg.t_end, cfg.probes).tolist()
    outcomes = validate_pretransition(field, probes, cfg.tol, cfg.ck_tol, steps=(cfg.h, 4 * cfg.h))
    seen = {o.name for o in outcomes}
    outcomes += [o for o in consequence_checks(field, probes, cfg.tol, Q) if o.name not in seen]
    outcomes.append(PropertyOutcome("forward_residual", fwd.max_residual, 0.0, cfg.residual_tol, fwd.as_dict()))
    outcomes.append(PropertyOutcome("backward_residual", bwd.max_residual, 0.0, cfg.residual_tol, bwd.as_dict()))
    outcomes.append(_derivative_outcome(cfg, field, probes))

    failed = [o for o in outcomes if not o.passed]
    report = {
        "passed": not failed,
        "properties": [o.as_dict() for o in outcomes],
        "residuals": {"forward": fwd.as_dict(), "backward": bwd.as_dict()},
        "regularity": defect.as_dict(),
        "series": end.report(),
    }
    write_json(out / "verification.json", report)
    cols = {"t": defect.times}
    for i, lab in enumerate(_labels(cfg)):
        cols[f"defect[{lab}]"] = defect.defect[:, i]
    write_columns_csv(out / "defect.csv", cols)
    if failed:
        for o in failed:
            print(f"property failed: {o.name}: measured {o.measured:.6g} > bound {o.bound:g} + tol {o.tol:g} at {o.location}",
                  file=sys.stderr)
        return EXIT_PROPERTY
    log.info("all %d properties pass; regular=%s", len(outcomes), defect.regular)
    return EXIT_OK


def cmd_oracle_compare(cfg: RunConfig, out: Path, **_) -> int:
    Q = cfg.rates
    if not isinstance(Q, PiecewiseConstantRates):
        print("error: oracle requires piecewise-constant rates", file=sys.stderr)
        return EXIT_CONFIG
    sol = _solve(cfg)
    worst, where = 0.0, None
    for t, P in zip(sol.times, sol.field):
        ref = oracle_minimal(Q, cfg.s, float(t))
        d = np.abs(P - ref)
        k = int(np.argmax(d))
        if d.flat[k] > worst:
            i, j = np.unravel_index(k, d.shape)
            worst, where = float(d.flat[k]), {"t": float(t), "i": int(i), "j": int(j)}
    ok = worst <= cfg.oracle_bound
    write_json(out / "oracle.json", {"max_discrepancy": worst, "location": where, "bound": cfg.oracle_bound, "passed": ok})
    if not ok:
        print(f"oracle mismatch: {worst:.3e} > {cfg.oracle_bound:.1e} at {where}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path, **_) -> int:
    Q = cfg.rates
    i0 = cfg.initial_state
    sol = _solve(cfg)
    row = sol.endpoint[i0]
    defect = float(sol.defect[-1, i0])
    final = terminal_states(Q, i0, cfg.s, cfg.t_end, cfg.n_paths, cfg.seed)
    est = estimate_from_terminal(final, Q.size)
    cmp = est.compare(row, defect, cfg.z)
    write_json(out / "simulation.json", {"seed": cfg.seed, "initial_state": i0, "estimate": est.as_dict(), "comparison": cmp})
    if cfg.raw_csv:
        write_columns_csv(out / "terminal_states.csv", {"path": np.arange(final.size), "final_state": final})
    if not cmp["all_within"]:
        print(f"estimate outside {cfg.z:g}-sigma band: {cmp['within']}", file=sys.stderr)
        return EXIT_STATISTICAL
    return EXIT_OK


def cmd_policy(cfg: RunConfig, out: Path, **_) -> int:
    if cfg.kind != "policy":
        print("error: the policy command needs a model of type 'policy'", file=sys.stderr)
        return EXIT_CONFIG
    sol = _solve(cfg)
    m = queue_metrics(sol, cfg.initial_state)
    write_columns_csv(out / "queue_metrics.csv", {"t": m.times, "mean_queue": m.mean, "survival": m.survival})
    write_field_csv(out / "field.csv", sol.times, sol.field, _labels(cfg))
    write_json(out / "series.json", sol.report())
    return EXIT_OK


COMMANDS = {
    "build": cmd_build,
    "verify": cmd_verify,
    "oracle-compare": cmd_oracle_compare,
    "simulate": cmd_simulate,
    "policy": cmd_policy,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nhctmc", description="Minimal transition matrices of nonhomogeneous CTMCs.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", required=True, type=Path)
        c.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        c.add_argument("--seed", type=int, default=None, help="simulation seed (overrides config)")
        c.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None, field_hook=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        require_valid(cfg.rates)
    except InvalidRates as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out, field_hook=field_hook)
    except NoConvergence as e:
        print(f"no convergence: {e}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    except NHCTMCError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
