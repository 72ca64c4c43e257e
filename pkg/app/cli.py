# -*- coding: utf-8 -*-
"""
Командний рядок: simulate, run, experiment, privacy, report, serve
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import pandas as pd

from . import config
from .data_generator import generate_site_data, make_ground_truth, write_site_csv
from .errors import CedarError
from .harness import (
    analyze_csv,
    default_config,
    load_config,
    roc_auc,
    run_experiment,
    run_power_study,
    run_roc_study,
    run_privacy_table,
    summarize,
    privacy_table_layout,
    write_gnuplot,
    write_rows,
)
from .models import CedarOptions, MethodName, PrivacyEstimator
from .posterior import derive_seed

logger = logging.getLogger(__name__)


def _float_list(text: str) -> List[float]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if "/" in part:
            num, den = part.split("/")
            values.append(float(num) / float(den))
        elif part:
            values.append(float(part))
    return values


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# --- simulate ---

def cmd_simulate(args) -> int:
    truth = make_ground_truth(args.p, derive_seed(args.seed, 0), args.sigma0_sq, args.design)
    out = _ensure_dir(args.out)
    for m in range(1, args.M + 1):
        site = generate_site_data(truth, args.n, derive_seed(args.seed, 0, args.n, args.M, m), site_id=m)
        write_site_csv(site, os.path.join(out, f"site_{m}.csv"))
    with open(os.path.join(out, "truth.json"), "w", encoding="utf-8") as f:
        f.write(truth.model_dump_json(indent=2))
    print(f"Wrote {args.M} site files (n={args.n}, p={args.p}) to {out}")
    return 0


# --- run ---

def _print_table(result: dict) -> None:
    print(f"Method: {result['method']}  p={result['p']}  M={result['M']}  N={result['N']}  "
          f"rounds={result['trace']['rounds']}")
    intervals = result.get("confidence_intervals") or [[float("nan")] * 2] * result["p"]
    walds = {w["j"]: w for w in result.get("wald", [])}
    print(f"{'j':>3} {'beta':>12} {'ci_low':>12} {'ci_high':>12} {'wald':>9} {'p_value':>9}")
    for j, beta in enumerate(result["beta"]):
        w = walds.get(j, {})
        print(f"{j:>3} {beta:>12.6g} {intervals[j][0]:>12.6g} {intervals[j][1]:>12.6g} "
              f"{w.get('statistic', float('nan')):>9.4g} {w.get('p_value', float('nan')):>9.4g}")


def cmd_run(args) -> int:
    cedar = CedarOptions(max_iters=args.max_iters, tol=args.tol, penalty_lambda=args.penalty_lambda)
    result = analyze_csv(args.csv, MethodName(args.method), K=args.K, psi=args.psi, seed=args.seed,
                         alpha=args.alpha, workdir=args.workdir, cedar=cedar)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as f:
            json.dump(result, f, indent=2)
    _print_table(result)
    return 0


# --- experiment ---

def _experiment_config(args):
    overrides = dict(master_seed=args.seed, workers=args.workers, replicates=args.replicates,
                     transport=args.transport, record_timing=args.record_timing or None,
                     p=args.p, n_grid=args.n_grid, M_grid=args.M_grid, K_list=args.K_list)
    if args.config:
        return load_config(args.config, overrides)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return default_config(full_scale=args.full_scale, **overrides)


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    out = _ensure_dir(args.out)
    if args.study == "roc":
        curve = run_roc_study(cfg)
        curve.to_csv(os.path.join(out, "roc.csv"), index=False, float_format="%.12g")
        for label, area in roc_auc(curve).items():
            print(f"{label:>10}: AUC={area:.4f}")
        return 0

    if args.study == "power":
        table = run_power_study(cfg)
        table.to_csv(os.path.join(out, "power.csv"), index=False, float_format="%.12g")
        print(table.to_string(index=False))
        return 0

    rows = run_experiment(cfg)
    write_rows(rows, os.path.join(out, "results.csv"))
    summary = summarize(rows)
    summary.to_csv(os.path.join(out, "summary.csv"), index=False, float_format="%.12g")
    if args.gnuplot:
        write_gnuplot(summary, os.path.join(out, "gnuplot"))
    print(summary[["label", "n", "M", "l2_error", "l2_error_se", "comm_rounds", "failed"]].to_string(index=False))
    return 0


# --- privacy ---

def cmd_privacy(args) -> int:
    grid = None
    if args.p is not None or args.K is not None or args.c is not None:
        ps = args.p or [4]
        Ks = args.K or [4]
        cs = args.c or [1.0, 1 / 2, 1 / 4, 1 / 8, 1 / 16]
        grid = [(p, K, c) for p in ps for K in Ks for c in cs]
    table = run_privacy_table(grid, psi=args.psi, reps=args.reps, redraws=args.redraws, seed=args.seed,
                       estimator=PrivacyEstimator(args.estimator), n=args.n, delta=args.delta)
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.6g")
        logger.info(f"Saved privacy table to {args.out}")
    print(table_layout_text(table))
    return 0


def table_layout_text(table: pd.DataFrame) -> str:
    if table[["p", "K", "c"]].duplicated().any():
        return table.to_string(index=False)
    return privacy_table_layout(table).round(2).to_string()


# --- report ---

def cmd_report(args) -> int:
    if args.compare:
        return _report_comparison(args)
    frame = pd.concat([pd.read_csv(path) for path in args.csv], ignore_index=True)
    summary = summarize(frame)
    if args.out:
        summary.to_csv(args.out, index=False, float_format="%.12g")
    if args.gnuplot:
        paths = write_gnuplot(summary, args.gnuplot)
        logger.info(f"Wrote {len(paths)} gnuplot files to {args.gnuplot}")
    print(summary.to_string(index=False))
    return 0


def _report_comparison(args) -> int:
    result = analyze_csv(args.csv, K=args.K, psi=args.psi, seed=args.seed, compare=True, repeats=args.repeats)
    table = pd.DataFrame(result["comparison"])
    if args.out:
        table.to_csv(args.out, index=False, float_format="%.12g")
        logger.info(f"Saved comparison to {args.out}")
    print(f"Central site: {result['central']}  M={result['M']}  N={result['N']}  K={args.K}")
    print(table.to_string(index=False))
    return 0


# --- serve ---

def cmd_serve(args) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port,
                reload=args.reload and not config.IS_PRODUCTION, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cedar", description="Розподілена лінійна регресія з апостеріорними вибірками")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="згенерувати CSV файли сайтів")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--M", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma0-sq", dest="sigma0_sq", type=float, default=1.0)
    p.add_argument("--design", choices=["sparse", "null"], default="sparse")
    p.add_argument("--out", default=os.path.join(config.DATA_DIR, "sites"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="аналіз CSV файлів сайтів; перший файл центральний")
    p.add_argument("csv", nargs="+")
    p.add_argument("--method", choices=[m.value for m in MethodName], default=MethodName.CEDAR.value)
    p.add_argument("--K", type=int, default=0)
    p.add_argument("--psi", type=float, default=config.DEFAULT_PSI)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=config.DEFAULT_MAX_ITERS)
    p.add_argument("--tol", type=float, default=config.DEFAULT_TOL)
    p.add_argument("--penalty-lambda", dest="penalty_lambda", type=float, default=0.0)
    p.add_argument("--workdir", default=None, help="корінь файлового транспорту")
    p.add_argument("--output", default=None, help="JSON з результатом")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("experiment", help="симуляційне дослідження")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None, help="JSON конфігурація експерименту")
    p.add_argument("--study", choices=["error", "power", "roc"], default="error")
    p.add_argument("--p", type=int, default=None)
    p.add_argument("--n-grid", dest="n_grid", type=_int_list, default=None)
    p.add_argument("--M-grid", dest="M_grid", type=_int_list, default=None)
    p.add_argument("--K-list", dest="K_list", type=_int_list, default=None)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--transport", choices=["inprocess", "filedrop"], default=None)
    p.add_argument("--record-timing", dest="record_timing", action="store_true")
    p.add_argument("--full-scale", dest="full_scale", action="store_true")
    p.add_argument("--gnuplot", action="store_true")
    p.add_argument("--out", default=os.path.join(config.DATA_DIR, "experiment"))
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("privacy", help="рівні диференційної приватності")
    p.add_argument("--p", type=_int_list, default=None)
    p.add_argument("--K", type=_int_list, default=None)
    p.add_argument("--c", type=_float_list, default=None, help="наприклад 1,1/2,1/4")
    p.add_argument("--n", type=int, default=None, help="за замовчуванням p/c")
    p.add_argument("--delta", type=float, default=None, help="за замовчуванням 1/n")
    p.add_argument("--psi", type=float, default=100.0)
    p.add_argument("--reps", type=int, default=config.DEFAULT_MC_REPS)
    p.add_argument("--redraws", type=int, default=config.DEFAULT_MC_REDRAWS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--estimator", choices=[e.value for e in PrivacyEstimator],
                   default=PrivacyEstimator.HOCKEY_STICK.value)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_privacy)

    p = sub.add_parser("report", help="агрегувати CSV результатів або порівняти методи з OPT на файлах сайтів")
    p.add_argument("csv", nargs="+")
    p.add_argument("--out", default=None)
    p.add_argument("--gnuplot", default=None, help="каталог для .dat файлів")
    p.add_argument("--compare", action="store_true", help="csv є файлами сайтів; відстані до OPT")
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--psi", type=float, default=config.DEFAULT_PSI)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=config.DEFAULT_COMPARE_REPEATS)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="HTTP сервіс центрального сайту")
    p.add_argument("--host", default="0.0.0.0")
    p.add_argument("--port", type=int, default=config.PORT)
    p.add_argument("--reload", action="store_true")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=config.LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CedarError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        print(f"Error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
