"""Command-line entry point: ``awpsp {gen-traces,simulate,compare,verify-theory}``.

Output layout of ``simulate`` (under ``<output_dir>/<name>/``)::

    config.yaml                  resolved configuration
    <policy>/seed-<s>.jsonl      per-round records (``.partial`` while running)
    <policy>/fairness.csv        round, policy, seed and the five fairness metrics
    summary.csv                  one row per (policy, seed): accuracy, active/failed counts
    per_class.csv                final-round per-class accuracy, ``--`` for uncovered classes

Set ``AWPSP_OUTPUT_DIR`` to override every output directory.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import trace_model as tm
from .config import ConfigError, ExperimentConfig, config_to_dict, load_config
from .sim.experiment import build_environment, run_experiment
from .theory import SUITE, run_suite

log = logging.getLogger("awpsp")

OUTPUT_ENV = "AWPSP_OUTPUT_DIR"
FAIRNESS_KEYS = ("avg_within_class_var", "var_of_class_means", "kl_divergence", "unseen_class_count", "gini")
SUMMARY_KEYS = (
    "mean_accuracy",
    "final_accuracy",
    "mean_avg_within_class_var",
    "mean_var_of_class_means",
    "mean_kl",
    "mean_unseen",
    "final_gini",
)


def _output_dir(cli_value: str | None, default: str) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cli_value or default)


def _output_file(path: str) -> Path:
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) / Path(path).name if env else Path(path)


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return "--"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


# ---------------------------------------------------------------------------
# gen-traces
# ---------------------------------------------------------------------------


def cmd_gen_traces(args: argparse.Namespace) -> int:
    out = _output_dir(args.out, "traces")
    if args.ingest:
        try:
            events = tm.read_event_csv(args.ingest)
        except tm.TraceFormatError as exc:
            for line, msg in exc.problems:
                print(f"{args.ingest}:{line}: {msg}", file=sys.stderr)
            return 2
        result = tm.ingest_events(events, args.step_seconds)
        for dev in result.excluded:
            log.warning("device %s has no events; excluded", dev)
        traces = result.traces
    else:
        if args.nodes < 1 or args.groups < 1 or args.groups > args.nodes:
            print("need 1 <= groups <= nodes", file=sys.stderr)
            return 2
        sizes = [len(chunk) for chunk in np.array_split(np.arange(args.nodes), args.groups)]
        specs = [tm.GroupSpec(s, args.p_on, args.mean_on_steps, args.flip_prob) for s in sizes]
        traces = tm.synthesize_traces(args.nodes, args.steps, specs, args.seed)
    if not traces:
        print("no traces produced", file=sys.stderr)
        return 2
    _write_text(out / "traces.json", tm.traces_to_json(traces))
    if len(traces) >= 2:
        _write_text(out / "correlation.csv", tm.correlation_to_csv(tm.trace_correlation(traces)))
    live = [t for t in traces if t.has_live_window]
    if live:
        _write_text(out / "histogram.csv", tm.histogram_to_csv(tm.availability_histogram(live, args.bins)))
    print(f"wrote {len(traces)} traces to {out}")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _run_dir(cfg: ExperimentConfig, override: str | None) -> Path:
    return _output_dir(override, cfg.output_dir) / cfg.name


def cmd_simulate(args: argparse.Namespace) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    policies = [args.policy] if args.policy else list(cfg.policies)
    seeds = args.seeds if args.seeds else list(cfg.seeds)
    root = _run_dir(cfg, args.output_dir)
    _write_text(root / "config.yaml", yaml.safe_dump(config_to_dict(cfg), sort_keys=True))

    summary_rows = [["setting", "seed", "mean_accuracy", "mean_active", "mean_failed", "stalled_rounds",
                     "undefined_accuracy_rounds", *SUMMARY_KEYS[2:]]]
    per_class_rows = [["setting", "seed", *[f"class_{c}" for c in range(cfg.data.n_classes)]]]
    for policy in policies:
        fair_rows = [["round", "policy", "seed", *FAIRNESS_KEYS, "accuracy"]]
        for seed in seeds:
            env = build_environment(cfg, seed)
            final = root / policy / f"seed-{seed}.jsonl"
            partial = final.with_name(final.name + ".partial")
            partial.parent.mkdir(parents=True, exist_ok=True)
            with open(partial, "w") as fh:
                def sink(rec: dict, fh=fh) -> None:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                    fh.flush()

                run = run_experiment(cfg, seed, policy, env, on_record=sink)
            os.replace(partial, final)
            rounds = [r for r in run.records if r["type"] == "round"]
            for r in rounds:
                fair_rows.append([r["round"], policy, seed, *[_fmt(r["fairness"][k]) for k in FAIRNESS_KEYS], _fmt(r["accuracy"])])
            s = run.records[-1]
            summary_rows.append([policy, seed, _fmt(s["mean_accuracy"]), _fmt(s["mean_active"]), _fmt(s["mean_failed"]),
                                 s["stalled_rounds"], s["undefined_accuracy_rounds"], *[_fmt(s[k]) for k in SUMMARY_KEYS[2:]]])
            last = rounds[-1]["per_class_accuracy"] if rounds else {}
            per_class_rows.append([policy, seed, *[_fmt(last.get(str(c))) for c in range(cfg.data.n_classes)]])
            log.info("%s seed %d: mean accuracy %s", policy, seed, _fmt(s["mean_accuracy"]))
        _write_text(root / policy / "fairness.csv", _csv(fair_rows))
    _write_text(root / "summary.csv", _csv(summary_rows))
    _write_text(root / "per_class.csv", _csv(per_class_rows))
    print(f"wrote results to {root}")
    return 0


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------


class CompareError(ValueError):
    pass


def load_run_dir(path: str | Path) -> dict[int, list[dict]]:
    """Read every completed ``seed-*.jsonl`` in a directory, keyed by seed."""
    path = Path(path)
    files = sorted(path.glob("seed-*.jsonl"))
    if not files:
        raise CompareError(f"{path}: no completed seed-*.jsonl logs")
    out = {}
    for f in files:
        records = [json.loads(line) for line in f.read_text().splitlines() if line.strip()]
        out[int(f.stem.split("-", 1)[1])] = records
    return out


def run_metrics(records: list[dict]) -> dict[str, float | None]:
    """Per-run scalar metrics recomputed from raw round records."""
    rounds = [r for r in records if r.get("type") == "round"]

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "rounds": len(rounds),
        "mean_accuracy": mean([r["accuracy"] for r in rounds]),
        "mean_avg_within_class_var": mean([r["fairness"]["avg_within_class_var"] for r in rounds]),
        "mean_var_of_class_means": mean([r["fairness"]["var_of_class_means"] for r in rounds]),
        "mean_kl": mean([r["fairness"]["kl_divergence"] for r in rounds]),
        "mean_unseen": mean([r["fairness"]["unseen_class_count"] for r in rounds]),
        "final_gini": rounds[-1]["fairness"]["gini"] if rounds else None,
    }


def compare_runs(a: dict[int, list[dict]], b: dict[int, list[dict]]) -> list[dict]:
    """Paired deltas (``a - b``) per metric, with per-seed values, mean and SD."""
    if set(a) != set(b):
        raise CompareError(f"seed sets differ: {sorted(a)} vs {sorted(b)}")
    ma = {s: run_metrics(r) for s, r in a.items()}
    mb = {s: run_metrics(r) for s, r in b.items()}
    for s in sorted(a):
        if ma[s]["rounds"] != mb[s]["rounds"]:
            raise CompareError(f"seed {s}: round counts differ ({ma[s]['rounds']} vs {mb[s]['rounds']})")
    rows = []
    for key in SUMMARY_KEYS:
        if key == "final_accuracy":
            continue
        deltas = {}
        for s in sorted(a):
            x, y = ma[s][key], mb[s][key]
            deltas[s] = None if x is None or y is None else x - y
        vals = [v for v in deltas.values() if v is not None]
        rows.append({
            "metric": key,
            "per_seed": deltas,
            "mean_delta": float(np.mean(vals)) if vals else None,
            "sd_delta": float(np.std(vals, ddof=1)) if len(vals) > 1 else (0.0 if vals else None),
            "mean_a": _safe_mean([ma[s][key] for s in sorted(a)]),
            "mean_b": _safe_mean([mb[s][key] for s in sorted(a)]),
        })
    return rows


def _safe_mean(vals):
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


def cmd_compare(args: argparse.Namespace) -> int:
    try:
        rows = compare_runs(load_run_dir(args.a), load_run_dir(args.b))
    except CompareError as exc:
        print(f"compare: {exc}", file=sys.stderr)
        return 2
    seeds = sorted(rows[0]["per_seed"])
    table = [["metric", "mean_a", "mean_b", "mean_delta", "sd_delta", *[f"delta_seed_{s}" for s in seeds]]]
    for row in rows:
        table.append([row["metric"], _fmt(row["mean_a"]), _fmt(row["mean_b"]), _fmt(row["mean_delta"]),
                      _fmt(row["sd_delta"]), *[_fmt(row["per_seed"][s]) for s in seeds]])
    text = _csv(table)
    if args.out:
        _write_text(_output_file(args.out), text)
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# verify-theory
# ---------------------------------------------------------------------------


def cmd_verify_theory(args: argparse.Namespace) -> int:
    try:
        rows = run_suite(args.check, seed=args.seed)
    except KeyError as exc:
        print(exc.args[0], file=sys.stderr)
        return 2
    table = [["check", "result", "gap", "bound", "seed", "detail"]]
    for r in rows:
        table.append([r.name, "PASS" if r.passed else "FAIL", f"{r.gap:.6g}", f"{r.bound:.6g}", r.seed, r.detail])
    widths = [max(len(str(row[k])) for row in table) for k in range(5)]
    for row in table:
        print("  ".join(str(c).ljust(w) for c, w in zip(row[:5], widths)) + "  " + str(row[5]))
    if args.out:
        _write_text(_output_file(args.out), _csv(table))
    return 0 if all(r.passed for r in rows) else 1


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="awpsp", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-traces", help="synthesize or ingest availability traces")
    g.add_argument("--nodes", type=int, default=100)
    g.add_argument("--groups", type=int, default=10)
    g.add_argument("--steps", type=int, default=2000)
    g.add_argument("--p-on", type=float, default=0.5)
    g.add_argument("--mean-on-steps", type=float, default=5.0)
    g.add_argument("--flip-prob", type=float, default=0.05)
    g.add_argument("--bins", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--ingest", metavar="EVENTS_CSV", help="device_id,timestamp,kind event file")
    g.add_argument("--step-seconds", type=int, default=60)
    g.add_argument("--out", help="output directory (default: traces)")
    g.set_defaults(func=cmd_gen_traces)

    s = sub.add_parser("simulate", help="run an experiment config")
    s.add_argument("config")
    s.add_argument("--policy", choices=["aw_psp", "classic_psp"])
    s.add_argument("--seeds", type=int, nargs="+")
    s.add_argument("--output-dir")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="paired deltas between two policy log directories")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--out", help="also write the table to this CSV")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify-theory", help="run the numerical theory checks")
    v.add_argument("--check", action="append", help=f"one of: {', '.join(SUITE)} (repeatable)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the table to this CSV")
    v.set_defaults(func=cmd_verify_theory)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
