"""Command-line experiment runner.

    exitrate <simulate|exit-rate|eigen|rate|optimize|verify> --config PATH
             [--out DIR] [--threads N]

Exit codes: 0 ok, 2 invalid config, 3 numerical failure, 4 outputs written
but convergence flags present.  Stream ids are ``section.stream_id + i`` for
trajectory ``i``; the global ``seed`` keys every stream.
"""

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .action import asymptotic_rate, lemma3_gap
from .config import ConfigError, build, load_config
from .domain import GridSpec
from .errors import DomainError, NumericalError
from .gainopt import GainSearchSpace, RateConfig, grid_search, refine_search
from .simulate import (SdeConfig, estimate_survival, exit_rate_mc, simulate_deterministic,
                       simulate_sde)
from .spectrum import assemble, eigen_rate, principal_eigen
from .verify import cross_check

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_FLAGS = 0, 2, 3, 4
_CONVERGENCE_FLAGS = ("not-converged", "cap-reached", "under-resolved")


@dataclass
class RunReport:
    command: str
    digest: str
    summary: dict
    flags: list = field(default_factory=list)
    wall_time: float = 0.0

    def to_dict(self):
        # wall time is reported on stdout only so that files stay reproducible
        return {"command": self.command, "config_digest": self.digest,
                "summary": self.summary, "flags": self.flags}


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_num(v) for v in row) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _path_rows(path):
    return [[t, *x] for t, x in zip(path.times, path.states)]


def _state_header(d):
    return [f"x{j + 1}" for j in range(d)]


def _require(section, name):
    if section is None:
        raise ConfigError(f"{name}: section is required for this command")
    return section


def cmd_simulate(cfg, built, out, threads):
    sde = _require(cfg.sde, "sde")
    d = built.model.d
    if sde.deterministic:
        path = simulate_deterministic(built.model, built.gains, built.x0, sde.t_max, sde.dt)
        write_csv(out / "trajectory.csv", ["t", *_state_header(d)], _path_rows(path))
        return {"deterministic": True, "final_state": path.states[-1].tolist()}, []
    samples = []
    for i in range(sde.n_paths):
        sc = SdeConfig(sde.epsilon, sde.dt, sde.t_max, cfg.seed, sde.stream_id + i,
                       sde.exit_correction)
        path, ex = simulate_sde(built.model, built.gains, built.dom, sc, built.x0)
        write_csv(out / f"trajectory_{i:04d}.csv", ["t", *_state_header(d)], _path_rows(path))
        samples.append({"stream_id": sde.stream_id + i, "exited": ex.exited, "tau": ex.tau,
                        "x_exit": ex.x_exit.tolist()})
    return {"deterministic": False, "samples": samples}, []


def cmd_exit_rate(cfg, built, out, threads):
    sde = _require(cfg.sde, "sde")
    if sde.T_list is None:
        raise ConfigError("sde.T_list: required for exit-rate")
    sc = SdeConfig(sde.epsilon, sde.dt, sde.t_max, cfg.seed, sde.stream_id, sde.exit_correction)
    surv = estimate_survival(built.model, built.gains, built.dom, sc, built.x0, sde.T_list,
                             sde.n_traj, threads)
    write_csv(out / "survival.csv", ["T", "p_hat", "ci_lo", "ci_hi"],
              zip(surv.T, surv.p_hat, surv.ci_lo, surv.ci_hi))
    est = exit_rate_mc(surv)
    est.metadata["epsilon"] = sde.epsilon
    write_json(out / "rate_mc.json", est.to_dict())
    return {"lambda_mc": est.value, "stderr": est.uncertainty}, list(est.flags)


def cmd_eigen(cfg, built, out, threads):
    ei = _require(cfg.eigen, "eigen")
    spec = GridSpec(ei.points_per_axis)
    table = eigen_rate(built.model, built.gains, built.dom, ei.epsilon_list, spec,
                       ei.refine_tol, ei.tol)
    write_csv(out / "rate_table.csv", ["epsilon", "lambda", "eps_times_lambda", "resolved"],
              [[r["epsilon"], r["lambda"], r["eps_times_lambda"], r["resolved"]]
               for r in table.rows])
    genr = assemble(built.model, built.gains, built.dom, spec, ei.epsilon_list[-1])
    res = principal_eigen(genr, ei.tol)
    write_csv(out / "eigenfunction.csv", [*_state_header(built.model.d), "v"],
              [[*x, v] for x, v in zip(genr.grid.points, res.eigenfunction)])
    est = table.estimate
    est.metadata["lambda"] = res.lam
    est.metadata["residual"] = res.residual
    est.metadata["iterations"] = res.iterations
    write_json(out / "rate_pde.json", est.to_dict())
    return {"rows": table.rows, "lambda_smallest_eps": res.lam}, list(table.flags) + res.flags


def _rate_args(rs):
    return dict(T_list=rs.T_list, n_per_T=rs.n_per_T, margin=rs.margin, levels=rs.levels,
                converge_tol=rs.converge_tol)


def cmd_rate(cfg, built, out, threads):
    rs = _require(cfg.rate, "rate")
    est = asymptotic_rate(built.model, built.gains, built.dom, x_start=built.x0,
                          pinned=rs.pinned, pinned_points=rs.pinned_points, **_rate_args(rs))
    table = est.metadata["table"]
    write_csv(out / "rate_sweep.csv", ["T", "S_min", "S_min_over_T", "converged"],
              [[r["T"], r["S_min"], r["S_min_over_T"], r["converged"]] for r in table])
    write_csv(out / "optimal_path.csv", ["t", *_state_header(built.model.d)],
              _path_rows(est.path))
    payload = est.to_dict()
    if rs.lemma3_delta is not None:
        T = rs.T_list[-1]
        inner, outer, gap = lemma3_gap(built.model, built.gains, built.dom, rs.lemma3_delta,
                                       T, max(2, int(round(rs.n_per_T * T))), built.x0,
                                       rs.levels)
        payload["lemma3"] = {"delta": rs.lemma3_delta, "T": T, "inner": inner,
                             "outer": outer, "gap": gap}
    write_json(out / "rate_variational.json", payload)
    return {"r_hat": est.value, "relative_spread": est.uncertainty}, list(est.flags)


def cmd_optimize(cfg, built, out, threads):
    sr = _require(cfg.search, "search")
    rs = sr.rate or cfg.rate
    rate_cfg = RateConfig(**({} if rs is None else _rate_args(rs)),
                          x_start=tuple(built.x0), rank_epsilon=sr.rank_epsilon,
                          objective=sr.objective)
    space = GainSearchSpace(tuple(sr.lower), tuple(sr.upper),
                            None if sr.mask is None else tuple(sr.mask))
    result = grid_search(built.model, built.dom, space, sr.resolution, rate_cfg, sr.cap,
                         threads)
    grid_best = result.best
    if sr.refine:
        result = refine_search(result, built.model, built.dom, rate_cfg, space, sr.budget,
                               step=sr.resolution)
    n_entries = sum(k.size for k in result.log[0].gains.K)
    header = [f"k{j + 1}" for j in range(n_entries)] + ["feasible", "verdict", "r_hat", "flag"]
    rows = []
    for ev in result.log:
        flag = ";".join(ev.flags) if ev.flags else ""
        rows.append([*ev.gains.flat(), ev.feasible, ev.verdict, ev.r_hat, flag])
    write_csv(out / "search_log.csv", header, rows)
    best = result.best
    write_json(out / "incumbent.json", {
        "gains": [k.tolist() for k in best.gains.K],
        "r_hat": best.r_hat,
        "verdict": best.verdict,
        "flags": best.flags,
        "grid_incumbent": {"gains": [k.tolist() for k in grid_best.gains.K],
                           "r_hat": grid_best.r_hat},
        "refine_trace": result.trace,
        "notes": result.notes,
        "evaluations": len(result.log),
    })
    return {"r_hat": best.r_hat, "gains": [k.tolist() for k in best.gains.K],
            "verdict": best.verdict}, list(best.flags)


def cmd_verify(cfg, built, out, threads):
    sec = _require(cfg.verify, "verify")
    report = cross_check(built.model, built.gains, built.dom, built.x0, sec, cfg.seed, threads)
    write_json(out / "verification.json", report)
    summary = {k: report[k] for k in ("eps_lambda_mc", "eps_lambda_pde", "r_hat")}
    return summary, list(report["flags"])


COMMANDS = {
    "simulate": cmd_simulate,
    "exit-rate": cmd_exit_rate,
    "eigen": cmd_eigen,
    "rate": cmd_rate,
    "optimize": cmd_optimize,
    "verify": cmd_verify,
}


def run(command, config_path, out_dir=None, threads=None):
    """Run one command; returns (exit code, RunReport or None)."""
    if threads is None:
        threads = int(os.environ.get("EXITRATE_THREADS", "1"))
    try:
        cfg = load_config(config_path)
        built = build(cfg)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    out = Path(out_dir or cfg.output_dir or "exitrate-out")
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        summary, flags = COMMANDS[command](cfg, built, out, max(1, threads))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, None
    except (NumericalError, DomainError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL, None
    report = RunReport(command, cfg.digest(), summary, flags, time.perf_counter() - start)
    write_json(out / "report.json", report.to_dict())
    print(json.dumps(_clean(report.summary), sort_keys=True))
    print(f"{command}: {report.wall_time:.2f}s, outputs in {out}", file=sys.stderr)
    code = EXIT_OK
    if any(any(c in f for c in _CONVERGENCE_FLAGS) for f in flags):
        code = EXIT_FLAGS
    return code, report


def main(argv=None):
    parser = argparse.ArgumentParser(prog="exitrate", description=__doc__.split("\n\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $EXITRATE_THREADS or 1)")
    args = parser.parse_args(argv)
    code, _ = run(args.command, args.config, args.out, args.threads)
    return code


if __name__ == "__main__":
    sys.exit(main())
