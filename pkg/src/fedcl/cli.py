"""Command-line front end.

    fedcl run --preset desk --seed 0 --seed 1
    fedcl run --config exp.yaml --set rounds=20 --set data.base_size=500
    fedcl report runs/desk
    fedcl audit runs/desk/fedmoco/seed-0
    fedcl export-data --preset desk --out data/

`run` executes every requested (arm, node-count, seed) combination and lays
the results out under an output root (``--out``, else $FEDCL_OUT, else
./runs). Each run directory gets the resolved config, the final encoder
checkpoint, per-round metrics, the message log with its audit verdict, and
evaluation scores; files are written atomically so an interrupted run never
leaves a half-written artifact behind.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import datagen, evaluate, federation
from .config import (ARMS, ExperimentConfig, PRESETS, apply_arm, from_dict,
                     load_config, preset_config, save_config, to_dict)
from .errors import ConfigError

OUT_ENV = "FEDCL_OUT"


def _out_root(value: str | None) -> Path:
    return Path(value or os.environ.get(OUT_ENV) or "./runs")


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _atomic_write_text(path: Path, text: str) -> None:
    _atomic_write_bytes(path, text.encode("utf-8"))


def _apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Merge ``--set dotted.key=value`` pairs into a config dictionary.
    Values go through YAML parsing so `10`, `0.5`, `true` and `[1,2]`
    arrive typed."""
    for item in assignments:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects dotted.key=value, got {item!r}")
        target = raw
        parts = key.split(".")
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"--set {key}: {part} is not a section")
        try:
            target[parts[-1]] = yaml.safe_load(value)
        except yaml.YAMLError as exc:
            raise ConfigError(f"--set {key}: value {value!r} is not valid YAML "
                              f"({exc})") from exc
    return raw


def _model_label(arm: str, node_count: int | None) -> str:
    return arm if node_count is None else f"{arm}-k{node_count}"


def _evaluate_run(config: ExperimentConfig, result, seed: int) -> list[dict]:
    records: list[dict] = []
    spec = config.scenario_spec()
    train, test = datagen.make_eval_split(spec, seed)
    if config.run_probe:
        probe_cfg = dataclasses.replace(config.probe, seed=seed)
        probe = evaluate.linear_probe(result.theta0, train, test, probe_cfg)
        records.append({"metric": "probe_accuracy", "value": probe.accuracy})
        for cls, acc in sorted(probe.per_class_accuracy.items()):
            records.append({"metric": f"probe_accuracy_class_{cls}", "value": acc})
    if config.run_fine_tune:
        ft_cfg = dataclasses.replace(config.fine_tune, seed=seed)
        ft = evaluate.fine_tune(result.theta0, config.fine_tune_fraction, train, test, ft_cfg)
        records.append({"metric": "finetune_final_accuracy", "value": ft.final_accuracy})
        records.append({"metric": "finetune_best_accuracy", "value": ft.best_accuracy})
        records.append({"metric": "finetune_best_epoch", "value": float(ft.best_epoch)})
    return records


def _write_run_dir(run_dir: Path, config: ExperimentConfig, result,
                   eval_records: list[dict]) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(config, run_dir / "config.yaml")

    checkpoint = run_dir / "checkpoint.bin"
    federation.save_checkpoint(result.theta0, run_dir / "checkpoint.bin.tmp")
    os.replace(run_dir / "checkpoint.bin.tmp", checkpoint)

    metric_lines = federation.metrics_records(result.metrics)
    metrics_text = "\n".join(json.dumps(r, sort_keys=True) for r in metric_lines)
    metrics_text += "\n" if metric_lines else ""
    _atomic_write_text(run_dir / "metrics.jsonl", metrics_text)

    timing = [{"round": i + 1, "seconds": s} for i, s in enumerate(result.wall_times)]
    _atomic_write_text(run_dir / "timing.jsonl",
                       "\n".join(json.dumps(r) for r in timing) + ("\n" if timing else ""))

    federation.write_message_log(result.messages, run_dir / "messages.log.tmp")
    os.replace(run_dir / "messages.log.tmp", run_dir / "messages.log")

    report = federation.audit_privacy(result.messages)
    _atomic_write_text(run_dir / "audit.json", json.dumps({
        "passed": report.passed,
        "counts": report.counts,
        "violations": report.violations,
    }, sort_keys=True, indent=2) + "\n")

    _atomic_write_text(run_dir / "eval.jsonl",
                       "\n".join(json.dumps(r, sort_keys=True) for r in eval_records)
                       + ("\n" if eval_records else ""))

    digest = hashlib.sha256()
    digest.update(checkpoint.read_bytes())
    digest.update((run_dir / "metrics.jsonl").read_bytes())
    _atomic_write_text(run_dir / "digest.txt", digest.hexdigest() + "\n")


def _load_base_config(args) -> tuple[ExperimentConfig, tuple[str, ...],
                                     tuple[int, ...], str]:
    """Resolve (config, arms, node_counts, run name) from --preset/--config."""
    if bool(args.preset) == bool(args.config):
        raise ConfigError("exactly one of --preset or --config is required")
    if args.preset:
        config, preset = preset_config(args.preset)
        arms = preset.arms
        node_counts = preset.node_counts
        name = args.name or args.preset
    else:
        config = load_config(args.config)
        arms = ("fedmoco",)
        node_counts = ()
        name = args.name or Path(args.config).stem
    if args.arms:
        unknown = [a for a in args.arms if a not in ARMS]
        if unknown:
            raise ConfigError(f"unknown arm(s): {', '.join(unknown)}; "
                              f"choose from {', '.join(sorted(ARMS))}")
        arms = tuple(args.arms)
    if args.set:
        config = from_dict(_apply_overrides(to_dict(config), args.set))
    return config, arms, node_counts, name


def cmd_run(args) -> int:
    config, arms, node_counts, name = _load_base_config(args)
    seeds = tuple(args.seed) if args.seed else (config.seed,)
    counts: tuple[int | None, ...] = tuple(node_counts) if node_counts else (None,)
    out_dir = _out_root(args.out) / name

    planned = [(arm, k, s) for arm in arms for k in counts for s in seeds]
    print(f"{len(planned)} run(s) -> {out_dir}")
    for arm, k, seed in planned:
        run_cfg = dataclasses.replace(copy.deepcopy(config), seed=seed)
        if k is not None:
            run_cfg.nodes = k
        run_cfg = apply_arm(run_cfg, arm)
        run_cfg.validate()
        label = _model_label(arm, k)
        run_dir = out_dir / label / f"seed-{seed}"
        print(f"  {label} seed={seed} ... ", end="", flush=True)
        result = federation.run_training(run_cfg)
        eval_records = [{"model": label, "seed": seed, **rec}
                        for rec in _evaluate_run(run_cfg, result, seed)]
        _write_run_dir(run_dir, run_cfg, result, eval_records)
        headline = next((r for r in eval_records if r["metric"] == "probe_accuracy"), None)
        if headline is None:
            headline = next(iter(eval_records), None)
        shown = f"{headline['metric']}={headline['value']:.4f}" if headline else "done"
        print(shown)

    rows = _collect_eval(out_dir)
    if rows:
        _print_table(_summarize(rows))
    return 0


def _collect_eval(root: Path) -> list[dict]:
    rows: list[dict] = []
    for path in sorted(root.rglob("eval.jsonl")):
        rows.extend(federation.read_jsonl(path))
    return rows


def _summarize(rows: list[dict]) -> list[dict]:
    grouped: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        grouped.setdefault((row["model"], row["metric"]), []).append(float(row["value"]))
    summary = []
    for (model, metric), values in sorted(grouped.items()):
        arr = np.asarray(values, dtype=np.float64)
        summary.append({
            "model": model,
            "metric": metric,
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else None,
            "seeds": int(arr.size),
        })
    return summary


def _print_table(summary: list[dict]) -> None:
    headline = [row for row in summary if "_class_" not in row["metric"]]
    if not headline:
        return
    width = max(len(r["model"]) for r in headline)
    mwidth = max(len(r["metric"]) for r in headline)
    print(f"\n{'model':<{width}}  {'metric':<{mwidth}}  mean      std       seeds")
    for row in headline:
        std = f"{row['std']:.4f}" if row["std"] is not None else "   --  "
        print(f"{row['model']:<{width}}  {row['metric']:<{mwidth}}  "
              f"{row['mean']:.4f}    {std}   {row['seeds']}")


def cmd_report(args) -> int:
    root = Path(args.run_dir)
    rows = _collect_eval(root)
    if not rows:
        print(f"no eval.jsonl records under {root}", file=sys.stderr)
        return 1
    summary = _summarize(rows)
    _atomic_write_text(root / "report.json", json.dumps(summary, indent=2) + "\n")
    _print_table(summary)
    single = [r["model"] for r in summary if r["seeds"] == 1]
    if single:
        print(f"\nnote: single-seed results for {', '.join(sorted(set(single)))}")
    print(f"\nwrote {root / 'report.json'}")
    return 0


_EXPECTED_TAG = {
    "params_down": "params",
    "params_up": "params",
    "metadata_up": "metadata",
    "metadata_down": "metadata_list",
    "control": "control",
}


def cmd_audit(args) -> int:
    """Re-examine written message logs: payload tags must match the message
    kind, and counts must agree with each run's config (every node uploads
    and downloads parameters each round; metadata flows only after warm-up).
    Accepts either a single run directory or a tree of them."""
    root = Path(args.run_dir)
    if (root / "messages.log").exists():
        run_dirs = [root]
    else:
        run_dirs = sorted(p.parent for p in root.rglob("messages.log"))
    if not run_dirs:
        print(f"no messages.log found under {root}", file=sys.stderr)
        return 1
    worst = 0
    for run_dir in run_dirs:
        if len(run_dirs) > 1:
            print(f"== {run_dir} ==")
        worst = max(worst, _audit_one(run_dir))
    return worst


def _audit_one(run_dir: Path) -> int:
    records = federation.read_message_log(run_dir / "messages.log")
    problems: list[str] = []
    counts: dict[str, int] = {}
    for i, rec in enumerate(records):
        counts[rec["kind"]] = counts.get(rec["kind"], 0) + 1
        expected = _EXPECTED_TAG.get(rec["kind"])
        if expected is None:
            problems.append(f"message {i}: unknown kind {rec['kind']!r}")
        elif rec["payload"] != expected:
            problems.append(f"message {i}: {rec['kind']} carries {rec['payload']!r}")

    config_path = run_dir / "config.yaml"
    if config_path.exists():
        cfg = load_config(config_path)
        k, t, tw = cfg.nodes, cfg.rounds, cfg.warmup_rounds
        meta_rounds = max(0, t - tw) if cfg.metadata_enabled else 0
        expect = {"params_down": k * t, "params_up": k * t,
                  "metadata_up": k * meta_rounds, "metadata_down": k * meta_rounds}
        for kind, want in expect.items():
            got = counts.get(kind, 0)
            if got != want:
                problems.append(f"count {kind}: expected {want}, found {got}")

    for kind in sorted(counts):
        print(f"{kind:>14}: {counts[kind]}")
    if problems:
        for p in problems:
            print(f"FAIL {p}")
        return 1
    print(f"audit passed ({len(records)} messages)")
    return 0


def cmd_export_data(args) -> int:
    config, _, _, name = _load_base_config(args)
    spec = config.scenario_spec()
    dest = Path(args.out or f"./data-{name}")
    dest.mkdir(parents=True, exist_ok=True)
    for k in range(config.nodes):
        shard = datagen.generate_node_dataset(spec, k, config.seed, keep_labels=True)
        datagen.export_dataset(shard, dest / f"node-{k}.bin")
        print(f"node-{k}: {len(shard)} images -> {dest / f'node-{k}.bin'}")
    train, test = datagen.make_eval_split(spec, config.seed)
    datagen.export_dataset(train, dest / "eval-train.bin")
    datagen.export_dataset(test, dest / "eval-test.bin")
    print(f"eval split: {len(train)} train / {len(test)} test -> {dest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcl",
                                     description="Federated contrastive pre-training simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute training runs and evaluate them")
    run.add_argument("--preset", choices=sorted(PRESETS), help="named experiment preset")
    run.add_argument("--config", help="YAML config file")
    run.add_argument("--seed", type=int, action="append",
                     help="seed to run (repeatable; default: config seed)")
    run.add_argument("--arms", nargs="+", metavar="ARM",
                     help=f"override arm list ({', '.join(sorted(ARMS))})")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config field, e.g. --set data.base_size=500")
    run.add_argument("--out", help=f"output root (default $({OUT_ENV}) or ./runs)")
    run.add_argument("--name", help="run collection name (default: preset/config name)")
    run.set_defaults(func=cmd_run)

    report = sub.add_parser("report", help="aggregate eval results across seeds")
    report.add_argument("run_dir", help="directory produced by `fedcl run`")
    report.set_defaults(func=cmd_report)

    audit = sub.add_parser("audit", help="verify a run's message log")
    audit.add_argument("run_dir", help="single run directory containing messages.log")
    audit.set_defaults(func=cmd_audit)

    export = sub.add_parser("export-data", help="write node shards and eval split to disk")
    export.add_argument("--preset", choices=sorted(PRESETS))
    export.add_argument("--config")
    export.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    export.add_argument("--arms", nargs="+", help=argparse.SUPPRESS)
    export.add_argument("--name", help=argparse.SUPPRESS)
    export.add_argument("--out", help="destination directory")
    export.set_defaults(func=cmd_export_data)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
