"""Command-line entry point: ``dpfront {train,evaluate,oracle,contour,table}``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.
Run directories default to ``$DPFRONT_OUTPUT_ROOT`` (or ``./runs``).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .autodiff import AutodiffError
from .config import ConfigError, RunConfig
from .metrics import (
    ReferenceGrid,
    append_table_rows,
    error_report,
    extract_zero_level,
    read_table,
    table_row,
    write_contours_csv,
)
from .problems import NewtonError, ObstacleGeometry, appendix_value, make_problem
from .schemes import TrainedPolicy, TrainingError, evaluate_policy, train

log = logging.getLogger("dpfront")

OUTPUT_ROOT_ENV = "DPFRONT_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def git_blob_hash(text: str) -> str:
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_json_atomic(path, obj) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def default_run_dir(cfg: RunConfig) -> str:
    if cfg.output_dir:
        return cfg.output_dir
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    s = cfg.scheme
    return os.path.join(root, f"{cfg.problem}_d{cfg.d}_{s.scheme}_N{s.N}_p{s.p}_seed{cfg.seed}")


def _thread_limit(n: int):
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load_run(run_dir):
    cfg_path = os.path.join(run_dir, "config.ini")
    if not os.path.exists(cfg_path):
        raise ConfigError(f"{run_dir} is not a run directory (no config.ini)")
    cfg = RunConfig.load(cfg_path)
    problem = make_problem(cfg.problem, cfg.d)
    policy = TrainedPolicy.load(os.path.join(run_dir, "policy"))
    manifest_path = os.path.join(run_dir, "manifest.json")
    manifest = _read_json(manifest_path) if os.path.exists(manifest_path) else {}
    return cfg, problem, policy, manifest


# ---------------------------------------------------------------- commands


def cmd_train(cfg: RunConfig, run_dir: str | None = None) -> str:
    run_dir = run_dir or default_run_dir(cfg)
    os.makedirs(run_dir, exist_ok=True)
    text = cfg.to_text()
    with open(os.path.join(run_dir, "config.ini"), "w") as fh:
        fh.write(text)
    problem = make_problem(cfg.problem, cfg.d)
    t0 = time.perf_counter()
    with _thread_limit(cfg.threads):
        policy = train(problem, cfg.scheme,
                       loss_csv=os.path.join(run_dir, "losses.csv"),
                       value_loss_csv=os.path.join(run_dir, "value_losses.csv"))
    elapsed = time.perf_counter() - t0
    policy.save(os.path.join(run_dir, "policy"))
    _write_json_atomic(os.path.join(run_dir, "manifest.json"), {
        "version": __version__,
        "config": text,
        "input_hash": git_blob_hash(text),
        "threads": cfg.threads,
        "timings": {"train": elapsed},
        "report": None,
    })
    log.info("trained %s in %.1f s -> %s", cfg.scheme.scheme, elapsed, run_dir)
    return run_dir


def cmd_evaluate(run_dir: str, eta: float | None = None, resolution: int | None = None,
                 table: str | None = None) -> dict:
    cfg, problem, policy, manifest = _load_run(run_dir)
    eta = cfg.eta if eta is None else eta
    grid = ReferenceGrid.for_problem(problem, resolution or cfg.resolution)
    X = grid.points()
    t0 = time.perf_counter()
    with _thread_limit(cfg.threads):
        v_hat = evaluate_policy(policy, problem, 0, X)
    t_eval = time.perf_counter() - t0
    v = problem.value(0.0, X) if problem.oracle is not None else None
    ab = grid.plane_coords()
    with open(os.path.join(run_dir, "error_field.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("a", "b", "v_hat", "v", "abs_err"))
        for k in range(len(X)):
            if v is None:
                w.writerow((f"{ab[k, 0]:.10g}", f"{ab[k, 1]:.10g}", repr(float(v_hat[k])), "", ""))
            else:
                w.writerow((f"{ab[k, 0]:.10g}", f"{ab[k, 1]:.10g}", repr(float(v_hat[k])),
                            repr(float(v[k])), repr(float(abs(v_hat[k] - v[k])))))
    s = cfg.scheme
    cpu = float(manifest.get("timings", {}).get("train", 0.0))
    if v is None:
        row = {"scheme": s.scheme, "N": s.N, "layers": s.layers, "neurons": s.neurons,
               "M": s.M, "sg_iters": s.sg_iters, "global_Linf": "nan", "global_L1_rel": "nan",
               "local_Linf": "nan", "local_L1_rel": "nan", "cpu_seconds": f"{cpu:.2f}"}
        report = None
    else:
        rep = error_report(v_hat, v, eta)
        rep.seconds = t_eval
        row = table_row(rep, f"{s.scheme} (p={s.p})", s.N, s.layers, s.neurons, s.M,
                        s.sg_iters, cpu)
        report = {"global_Linf": rep.global_Linf, "global_L1_rel": rep.global_L1_rel,
                  "local_Linf": rep.local_Linf, "local_L1_rel": rep.local_L1_rel,
                  "eta": rep.eta, "n_local": rep.n_local}
    append_table_rows(os.path.join(run_dir, "errors.csv"), [row])
    if table:
        append_table_rows(table, [row])
    if manifest:
        manifest.setdefault("timings", {})["evaluate"] = t_eval
        manifest["report"] = report
        _write_json_atomic(os.path.join(run_dir, "manifest.json"), manifest)
    return row


def _read_points(path, d: int | None) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].startswith("#"):
                continue
            try:
                rows.append([float(t) for t in rec])
            except ValueError:
                if rows:
                    raise ConfigError(f"{path}: non-numeric row {rec!r}") from None
                continue  # header line
    if not rows:
        raise ConfigError(f"{path}: no points")
    X = np.array(rows, dtype=np.float64)
    if d is not None and X.shape[1] != d:
        raise ConfigError(f"{path}: points have {X.shape[1]} columns, expected d={d}")
    return X


def cmd_oracle(problem_name: str, t: float, points: str, d: int | None = None,
               out=None) -> tuple[np.ndarray, list[str]]:
    X = _read_points(points, d)
    problem = make_problem(problem_name, X.shape[1])
    if not 0.0 <= t <= problem.T:
        raise ConfigError(f"t must lie in [0, {problem.T}]")
    if problem_name.startswith("eikadv"):
        geom = ObstacleGeometry(**problem.params["geometry"])
        vals, branches = appendix_value(t, X, geom, return_branch=True, on_error="mark")
    else:
        vals, branches = problem.value(t, X), ["closed-form"] * len(X)
    failed = sum(b == "newton-failed" for b in branches)
    if failed:
        log.warning("%d point(s) where Newton failed; rows marked", failed)
    fh = sys.stdout if out is None else open(out, "w", newline="")
    try:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(X.shape[1])] + ["value", "branch"])
        for x, v, b in zip(X, vals, branches):
            w.writerow([f"{c:.17g}" for c in x] + [repr(float(v)), b])
    finally:
        if out is not None:
            fh.close()
    return vals, branches


def cmd_contour(run_dir: str, times: list[int], resolution: int | None = None) -> list[str]:
    cfg, problem, policy, _ = _load_run(run_dir)
    grid = ReferenceGrid.for_problem(problem, resolution or cfg.resolution)
    X = grid.points()
    written = []
    for n in times:
        if not 0 <= n <= policy.N:
            raise ConfigError(f"time index {n} outside 0..{policy.N}")
        v_hat = evaluate_policy(policy, problem, n, X).reshape(grid.shape)
        path = os.path.join(run_dir, f"contour_n{n}.csv")
        write_contours_csv(path, extract_zero_level(v_hat, grid.a, grid.b))
        written.append(path)
        if problem.oracle is not None:
            v = problem.value(n * problem.T / policy.N, X).reshape(grid.shape)
            path = os.path.join(run_dir, f"oracle_contour_n{n}.csv")
            write_contours_csv(path, extract_zero_level(v, grid.a, grid.b))
            written.append(path)
    return written


def cmd_table(run_dirs: list[str], out: str | None = None) -> list[dict]:
    rows = []
    for rd in run_dirs:
        path = os.path.join(rd, "errors.csv")
        if not os.path.exists(path):
            raise ConfigError(f"{rd}: no errors.csv; run `evaluate` first")
        rows.extend(read_table(path))
    if out is None:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]) if rows else [])
        if rows:
            w.writeheader()
            w.writerows(rows)
    else:
        if os.path.exists(out):
            os.remove(out)
        append_table_rows(out, rows)
    return rows


# -------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dpfront", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a scheme from a config file")
    p.add_argument("config")
    p.add_argument("--out", help="run directory (overrides config and environment)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--threads", type=int, help="cap on BLAS threads")

    p = sub.add_parser("evaluate", help="error table row for a trained run")
    p.add_argument("run_dir")
    p.add_argument("--eta", type=float)
    p.add_argument("--resolution", type=int)
    p.add_argument("--table", help="also append the row to this CSV")

    p = sub.add_parser("oracle", help="exact values at points from a CSV file")
    p.add_argument("problem")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--points", required=True)
    p.add_argument("--d", type=int)
    p.add_argument("--out")

    p = sub.add_parser("contour", help="zero-level polylines of V_n and v(t_n)")
    p.add_argument("run_dir")
    p.add_argument("--times", type=int, nargs="+", default=[0])
    p.add_argument("--resolution", type=int)

    p = sub.add_parser("table", help="aggregate error rows across run directories")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            cfg = RunConfig.load(args.config)
            if args.seed is not None:
                cfg.seed = cfg.scheme.seed = args.seed
            if args.threads is not None:
                cfg.threads = args.threads
            print(cmd_train(cfg, args.out))
        elif args.command == "evaluate":
            row = cmd_evaluate(args.run_dir, args.eta, args.resolution, args.table)
            print(",".join(str(row[k]) for k in row))
        elif args.command == "oracle":
            cmd_oracle(args.problem, args.t, args.points, args.d, args.out)
        elif args.command == "contour":
            for path in cmd_contour(args.run_dir, args.times, args.resolution):
                print(path)
        elif args.command == "table":
            cmd_table(args.run_dirs, args.out)
    except (TrainingError, AutodiffError, NewtonError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
