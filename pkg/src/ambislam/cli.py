"""Command line interface: simulate, solve, eval, compare, bench-reinit."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import io
from .config import ConfigError, RunConfig, config_to_dict, load_config
from .evaluation import bench_reinit, compute_errors, match_landmarks, run_comparison
from .pipeline import METHODS, canonical_method, run
from .simulator import generate

log = logging.getLogger("ambislam")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _sidecar(path: Path, suffix: str) -> Path:
    return path.with_name(path.stem + suffix)


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def cmd_simulate(args) -> int:
    cfg = _config(args)
    if args.kind:
        cfg.scenario = dataclasses.replace(cfg.scenario, kind=args.kind)
    truth, mlog = generate(cfg.scenario)
    out = Path(args.out)
    io.write_log(out, mlog)
    truth_path = Path(args.truth) if args.truth else _sidecar(out, ".truth.json")
    io.write_truth(truth_path, truth)
    print(f"wrote {out} ({mlog.n_steps} steps, {len(mlog.landmarks)} detections) and {truth_path}")
    return 0


def cmd_solve(args) -> int:
    cfg = _config(args)
    pcfg = cfg.pipeline
    if args.method:
        pcfg = dataclasses.replace(pcfg, method=canonical_method(args.method))
    mlog = io.read_log(args.log)
    res = run(mlog, pcfg)
    out = Path(args.out)
    graph = io.GraphFile.from_values(res.estimate)
    graph.write(out)
    actions = Path(args.actions) if args.actions else _sidecar(out, ".actions.jsonl")
    actions.write_text(io.dump_actions(res.actions))
    print(f"{res.method}: {len(res.estimate)} variables, {res.n_reinit} re-initializations; "
          f"wrote {out} and {actions}")
    return 0


def cmd_eval(args) -> int:
    estimate = io.read_values(args.estimate)
    truth = io.read_truth(args.truth)
    corr = match_landmarks(estimate, {}, truth) if args.association == "nearest_neighbor" else None
    report = compute_errors(estimate, truth, corr, strict=True).as_dict()
    report.pop("wall_time")
    text = _json(report)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return 0


_METRICS = ("mte_robot", "mte_landmark", "mre_robot", "mre_landmark")


def cmd_compare(args) -> int:
    cfg = _config(args)
    methods = tuple(canonical_method(m) for m in args.methods) if args.methods else cfg.comparison.methods
    seeds = tuple(args.seeds) if args.seeds else cfg.comparison.seeds
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, series_rows = [], []
    for seed in seeds:
        scfg = cfg.with_seed(seed)
        truth, mlog = generate(scfg.scenario)
        comp = run_comparison(mlog, truth, methods, scfg.pipeline)
        for m in methods:
            rep = comp.reports[m]
            row = {"method": m, "seed": seed, **{k: getattr(rep, k) for k in _METRICS},
                   "n_reinit": comp.results[m].n_reinit, "log_checksum": comp.checksum[:16]}
            if args.timing:
                row["wall_time"] = rep.wall_time
            rows.append(row)
            series_rows += [{"method": m, "seed": seed, "step": t, "mte_robot": v}
                            for t, v in enumerate(comp.results[m].series)]
    _write_csv(out / "results.csv", rows)
    _write_csv(out / "series.csv", series_rows)
    summary = {"config": config_to_dict(cfg), "methods": {}}
    for m in methods:
        mine = [r for r in rows if r["method"] == m]
        summary["methods"][m] = {k: sum(r[k] for r in mine) / len(mine) for k in _METRICS}
        summary["methods"][m]["runs"] = len(mine)
    (out / "summary.json").write_text(_json(summary))
    for m, s in summary["methods"].items():
        print(f"{m:10s} mte_robot {s['mte_robot']:.4f} m  mte_landmark {s['mte_landmark']:.4f} m  "
              f"mre_landmark {s['mre_landmark']:.2f} deg")
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    bcfg = cfg.bench
    if args.repetitions is not None:
        bcfg = dataclasses.replace(bcfg, repetitions=args.repetitions)
    if args.chain_length is not None:
        bcfg = dataclasses.replace(bcfg, chain_length=args.chain_length)
    rows = [r.as_dict() for r in bench_reinit(bcfg)]
    if args.out:
        _write_csv(Path(args.out), rows)
    print("chain landmarks edges  plain[s]  reinit[s]  batch[s]")
    for r in rows:
        print(f"{r['chain_length']:5d} {r['landmarks']:9d} {r['edges']:5d}  {r['median_plain']:.5f}"
              f"   {r['median_reinit']:.5f}   {r['median_batch']:.5f}")
    return 0


def _write_csv(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambislam", description="Object SLAM with ambiguous pose measurements")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a measurement log and ground truth")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--kind", choices=("mugs", "cards", "custom"))
    s.add_argument("--out", required=True, help="measurement log (JSON lines)")
    s.add_argument("--truth", help="ground truth file (default: <out>.truth.json)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("solve", help="run one method on a measurement log")
    s.add_argument("--log", required=True)
    s.add_argument("--config")
    s.add_argument("--method", choices=("sh", "mm", "mm-reinit", "mm_reinit"))
    s.add_argument("--out", required=True, help="estimate graph file")
    s.add_argument("--actions", help="action log (default: <out>.actions.jsonl)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("eval", help="score an estimate against ground truth")
    s.add_argument("--estimate", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--association", choices=("oracle", "nearest_neighbor"), default="oracle")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("compare", help="run several methods on shared simulated logs")
    s.add_argument("--config")
    s.add_argument("--methods", nargs="+", choices=METHODS + ("mm-reinit",))
    s.add_argument("--seeds", nargs="+", type=int)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--timing", action="store_true", help="add wall-clock time to results.csv")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("bench-reinit", help="time plain, re-initializing and batch updates")
    s.add_argument("--config")
    s.add_argument("--repetitions", type=int)
    s.add_argument("--chain-length", type=int)
    s.add_argument("--out", help="CSV output")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, io.FormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
