"""Command-line entry points: train, prune, eval, sweep, report, inspect."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, data, harness, training
from .harness import ExperimentConfig, config_from_dict
from .models import ConfigError


def _load_config(path: str | None, overrides: list[str], seed: int | None,
                 out: str | None) -> ExperimentConfig:
    raw = {}
    if path:
        raw = json.loads(Path(path).read_text())
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass  # keep as string
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    cfg = config_from_dict(raw)
    if seed is not None:
        cfg.seeds = [seed]
    if out is not None:
        cfg.out_dir = out
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args.config, args.set, args.seed, args.out)
    report = harness.run_experiment(cfg, quiet=False)
    print(json.dumps({"config_hash": report["config_hash"],
                      "metrics_mean": report["metrics_mean"],
                      "report": str(Path(cfg.out_dir) / "report.json")}, indent=2))
    return 0


def cmd_prune(args) -> int:
    cfg = _load_config(args.config, args.set, None, None)
    if isinstance(cfg.method, str):
        raise ConfigError("prune needs a one-shot pruner method in the config "
                          "(smp prunes during training; use the train command)")
    model, meta = checkpoint.load_model(args.checkpoint)
    dataset = data.load_or_generate(int(cfg.dataset.get("seed", 2024)),
                                    int(cfg.dataset.get("n_samples", 640)))
    spec = harness.pruner_spec_from_config(cfg, dataset)
    batches = None
    if spec.kind == "snip":
        from .rng import CounterRng
        batches = [dataset.sample_batch(CounterRng(cfg.seeds[0]).derive(4), cfg.batch_size)
                   for _ in range(spec.snip_batches)]
    masks = baselines.compute_masks(model, spec, batches=batches)
    model.apply_masks(masks)
    out = args.out or "pruned.smpc"
    checkpoint.save(model, out)
    print(json.dumps({"sparsity": model.mask_sparsity(), "checkpoint": out,
                      "compression": checkpoint.compression_report(model)}, indent=2))
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config, args.set, None, None)
    model, meta = checkpoint.load_model(args.checkpoint)
    dataset = data.load_or_generate(int(cfg.dataset.get("seed", 2024)),
                                    int(cfg.dataset.get("n_samples", 640)))
    metrics = training.evaluate(model, dataset, split=args.split)
    metrics["cost"] = training.cost_report(model)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_sweep(args) -> int:
    raw = json.loads(Path(args.config).read_text())
    base = raw.get("base", {})
    configs = []
    for entry in raw.get("grid", [{}]):
        merged = dict(base)
        merged.update(entry)
        configs.append(config_from_dict(merged))
    result = harness.run_sweep(configs, args.out or "runs/sweep", quiet=False)
    failures = [r for r in result["rows"] if r["error"]]
    print(f"sweep complete: {len(result['rows'])} rows -> {result['csv']}"
          + (f" ({len(failures)} failed)" if failures else ""))
    return 0


def cmd_report(args) -> int:
    out = harness.emit_figures_data(args.run, seed=args.seed, render=not args.no_render)
    print(json.dumps(out, indent=2))
    return 0


def cmd_inspect(args) -> int:
    tensors, meta = checkpoint.load_raw(args.checkpoint)
    print(f"container: {args.checkpoint}")
    print(f"records: {len(tensors)}")
    for name, t in tensors.items():
        nnz = int(np.count_nonzero(t))
        print(f"  {name:32s} shape={list(t.shape)!s:16s} nnz={nnz}/{t.size}")
    print("metadata:")
    print(json.dumps(meta, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunelab",
                                     description="pruning experiments on desk-scale caption models")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--set", action="append", metavar="K=V",
                       help="override a config key (dotted path, JSON value)")

    p = sub.add_parser("train", help="run an experiment (all seeds)")
    common(p)
    p.add_argument("--seed", type=int, help="run a single seed")
    p.add_argument("--out", help="output directory override")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("prune", help="apply a one-shot pruner to a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="output checkpoint path")
    p.set_defaults(fn=cmd_prune)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="run a grid of configs")
    p.add_argument("--config", required=True, help="JSON with base + grid")
    p.add_argument("--out", help="sweep output directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="emit figure CSVs and PNGs for a run")
    p.add_argument("--run", required=True, help="run directory with report.json")
    p.add_argument("--seed", type=int, help="which seed to report (default: first)")
    p.add_argument("--no-render", action="store_true", help="CSVs only, no PNGs")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("inspect", help="print checkpoint contents")
    p.add_argument("checkpoint")
    p.set_defaults(fn=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, baselines.ContractError, checkpoint.FormatError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
