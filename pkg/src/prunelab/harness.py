"""Experiment orchestration: configs, prune-finetune schemes, sweeps, reports.

A run is fully determined by (config, seed): datasets, weight init, batch
order and mask draws all derive from counter streams keyed off the seed,
so re-running a config reproduces every metric and checkpoint byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import baselines, checkpoint, data, gating, smp, training
from .baselines import ContractError, PrunerSpec
from .models import ConfigError, Dims, build_model
from .optim import Sgd
from .rng import CounterRng
from .smp import SmpConfig, SparsitySchedule
from .training import GradualHooks, SmpHooks, TelemetryWriter

SCHEMES = ("decoder_only", "A", "B", "C")

# rng stream tags
_TAG_INIT = 1
_TAG_TRAIN = 2
_TAG_PHASE2 = 3
_TAG_SNIP = 4
_TAG_RETRAIN = 5


@dataclass
class ExperimentConfig:
    arch: str = "sa_lstm"
    dims: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=lambda: {"seed": 2024, "n_samples": 640})
    method: object = "smp"  # "smp" | "dense" | pruner-spec dict
    s_target: float = 0.8
    lambda_s: object = "auto"
    m: float = 5.0
    gate_lr: float = 100.0
    optimizer: dict = field(default_factory=lambda: {"lr": 0.05, "eps": 0.01,
                                                     "beta1": 0.9, "beta2": 0.999})
    steps: int = 4000  # calibrated with the default Dims; see models.Dims
    batch_size: int = 16
    scheme: str = "decoder_only"
    seeds: list = field(default_factory=lambda: [1, 2, 3])
    dropout: float = 0.0
    sparse_dropout: float | None = None  # defaults to dropout / 2 (heuristic guess)
    frozen_sample: str = "bern"
    out_dir: str = "runs/exp"

    def validate(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if not (0.0 <= float(self.s_target) < 1.0):
            raise ConfigError(f"s_target must lie in [0,1), got {self.s_target}")
        if self.frozen_sample not in ("bern", "round"):
            raise ConfigError(f"frozen_sample must be bern or round, got {self.frozen_sample}")
        if not self.seeds:
            raise ConfigError("seeds list is empty")

    def resolved_lambda(self) -> float:
        if self.lambda_s == "auto":
            return smp.default_lambda(float(self.s_target))
        return float(self.lambda_s)

    def method_name(self) -> str:
        if isinstance(self.method, str):
            return self.method
        kind = self.method.get("kind", "?")
        if kind == "lottery":
            return f"lottery({self.method.get('inner', {}).get('kind', '?')})"
        return kind

    def to_dict(self) -> dict:
        return asdict(self)


def config_from_dict(raw: dict) -> ExperimentConfig:
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = ExperimentConfig(**raw)
    cfg.validate()
    return cfg


def config_hash(cfg: ExperimentConfig) -> str:
    payload = cfg.to_dict()
    payload.pop("out_dir")  # location does not affect results
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _build_dims(cfg: ExperimentConfig) -> Dims:
    base = Dims()
    for k, v in cfg.dims.items():
        if not hasattr(base, k):
            raise ConfigError(f"unknown dim {k!r}")
        setattr(base, k, int(v))
    return base


def pruner_spec_from_config(cfg: ExperimentConfig, dataset) -> PrunerSpec:
    raw = dict(cfg.method)
    inner = raw.pop("inner", None)
    spec = PrunerSpec(**raw)
    if spec.s_target == 0.0:
        spec.s_target = float(cfg.s_target)
    if inner is not None:
        spec.inner = PrunerSpec(**inner)
        if spec.inner.s_target == 0.0:
            spec.inner.s_target = float(cfg.s_target)
    if spec.kind == "gradual_uniform":
        steps_per_epoch = max(dataset.train_end // cfg.batch_size, 1)
        if spec.start_step is None:
            spec.start_step = steps_per_epoch  # after the first epoch
        if spec.end_step is None:
            spec.end_step = cfg.steps // 2  # half of the run
        if spec.frequency is None:
            spec.frequency = 50
    if spec.kind in ("hard_blind", "hard_uniform", "hard_distribution") \
            and spec.retrain_steps is None:
        spec.retrain_steps = cfg.steps // 3
    spec.validate()
    return spec


def _smp_hooks(cfg: ExperimentConfig, model, steps: int) -> SmpHooks:
    schedule = SparsitySchedule(s_target=float(cfg.s_target), n_max=steps)
    config = SmpConfig(lambda_s=cfg.resolved_lambda(), gate_lr=cfg.gate_lr,
                       m=cfg.m, sample=cfg.frozen_sample)
    live = {n: gp.gate for n, gp in model.gated.items()
            if gp.gate is not None and gp.gate.requires_grad}
    return SmpHooks(schedule=schedule, config=config, gate_opt=Sgd(live, lr=cfg.gate_lr))


def _gradual_hooks(cfg: ExperimentConfig, spec: PrunerSpec, steps: int, parts) -> GradualHooks:
    return GradualHooks(s_final=spec.s_target, start_step=min(spec.start_step, steps - 1),
                        end_step=min(spec.end_step, steps), frequency=spec.frequency,
                        parts=tuple(parts))


class _SeedRun:
    """All phases of one (config, seed) execution."""

    def __init__(self, cfg: ExperimentConfig, seed: int, dataset, out_dir: Path):
        self.cfg = cfg
        self.seed = seed
        self.dataset = dataset
        self.dir = out_dir
        self.dir.mkdir(parents=True, exist_ok=True)
        root = CounterRng(seed)
        self.model = build_model(cfg.arch, _build_dims(cfg), rng=root.derive(_TAG_INIT))
        self.model.frozen_sample = cfg.frozen_sample
        if cfg.method == "dense":
            self.model.dropout_rate = float(cfg.dropout)
        else:  # sparse nets run reduced dropout (half unless overridden)
            self.model.dropout_rate = (float(cfg.sparse_dropout)
                                       if cfg.sparse_dropout is not None
                                       else float(cfg.dropout) / 2.0)
        self.train_rng = root.derive(_TAG_TRAIN)
        self.root = root
        self.phases: list[dict] = []

    def _phase(self, label: str, steps: int, *, trainable, smp_hooks=None, gradual=None,
               rng=None) -> dict:
        path = self.dir / f"telemetry-{len(self.phases)}-{label}.ndjson"
        with TelemetryWriter(path) as tw:
            stats = training.train(
                self.model, self.dataset, steps=steps, rng=rng or self.train_rng,
                lr=float(self.cfg.optimizer.get("lr", 0.05)),
                adam_eps=float(self.cfg.optimizer.get("eps", 1e-2)),
                batch_size=self.cfg.batch_size, smp_hooks=smp_hooks, gradual=gradual,
                trainable_parts=trainable, telemetry=tw)
        rec = {"label": label, "steps": steps, "telemetry": str(path), **stats}
        self.phases.append(rec)
        return rec

    # ---- method flows ------------------------------------------------------

    def run(self) -> dict:
        cfg = self.cfg
        method = cfg.method if isinstance(cfg.method, str) else "pruner"
        if method == "smp":
            self._run_smp()
        elif method == "dense":
            if cfg.scheme != "decoder_only":
                raise ConfigError("dense runs use scheme decoder_only")
            self._phase("dense", cfg.steps, trainable=("decoder",))
        else:
            spec = pruner_spec_from_config(cfg, self.dataset)
            self._run_pruner(spec)
        return self._finish()

    def _run_smp(self):
        cfg = self.cfg
        scheme = cfg.scheme
        if scheme == "decoder_only":
            self.model.attach_gates(cfg.m, parts=("decoder",))
            self._phase("smp", cfg.steps, trainable=("decoder",),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps))
        elif scheme == "A":
            self.model.attach_gates(cfg.m, parts=("encoder", "decoder"))
            self._phase("smp-prune-both", cfg.steps, trainable=("decoder",),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps))
            self.model.freeze_gates()
            self._phase("finetune-frozen", cfg.steps, trainable=("encoder", "decoder"),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps),
                        rng=self.root.derive(_TAG_PHASE2))
        elif scheme == "B":
            self._phase("decoder-dense", cfg.steps, trainable=("decoder",))
            ckpt = self.dir / "decoder-dense.smpc"
            checkpoint.save(self.model, ckpt)
            self.phases[-1]["checkpoint"] = str(ckpt)
            self.model.attach_gates(cfg.m, parts=("encoder", "decoder"))
            self._phase("smp-finetune-both", cfg.steps, trainable=("encoder", "decoder"),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps),
                        rng=self.root.derive(_TAG_PHASE2))
        elif scheme == "C":
            self.model.attach_gates(cfg.m, parts=("decoder",))
            self._phase("smp-decoder", cfg.steps, trainable=("decoder",),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps))
            self.model.freeze_gates(parts=("decoder",))
            self.model.attach_gates(cfg.m, parts=("encoder",))
            self._phase("smp-encoder", cfg.steps, trainable=("encoder", "decoder"),
                        smp_hooks=_smp_hooks(cfg, self.model, cfg.steps),
                        rng=self.root.derive(_TAG_PHASE2))

    def _run_pruner(self, spec: PrunerSpec):
        cfg = self.cfg
        scheme = cfg.scheme
        hard = spec.kind in ("hard_blind", "hard_uniform", "hard_distribution")
        if scheme == "A" and hard:
            raise ConfigError("scheme A is not defined for hard pruning "
                              "(it needs a trained model before masks exist)")
        if scheme != "decoder_only" and spec.kind in ("snip", "lottery", "supermask_maskonly"):
            raise ConfigError(f"{spec.kind} supports scheme decoder_only only")

        if spec.kind == "gradual_uniform":
            self._run_gradual(spec)
        elif hard:
            self._run_hard(spec)
        elif spec.kind == "snip":
            batches = [self.dataset.sample_batch(self.root.derive(_TAG_SNIP), cfg.batch_size)
                       for _ in range(spec.snip_batches)]
            masks = baselines.snip_prune(self.model, batches, spec.s_target)
            self.model.apply_masks(masks)
            self._phase("snip-train", cfg.steps, trainable=("decoder",))
        elif spec.kind == "lottery":
            init = baselines.snapshot_init(self.model)
            self._phase("dense-train", cfg.steps, trainable=("decoder",))
            baselines.lottery_oneshot(self.model, init, spec.inner, parts=("decoder",))
            self._phase("ticket-retrain", cfg.steps, trainable=("decoder",),
                        rng=self.root.derive(_TAG_RETRAIN))
        elif spec.kind == "supermask_maskonly":
            path = self.dir / "telemetry-0-maskonly.ndjson"
            with TelemetryWriter(path) as tw:
                stats = baselines.supermask_maskonly_train(
                    self.model, self.dataset, steps=cfg.steps, batch_size=cfg.batch_size,
                    rng=self.train_rng, m=cfg.m, gate_lr=cfg.gate_lr, telemetry=tw)
            self.phases.append({"label": "maskonly", "steps": cfg.steps,
                                "telemetry": str(path), **stats})
        else:
            raise ConfigError(f"unhandled pruner kind {spec.kind}")

    def _run_gradual(self, spec: PrunerSpec):
        cfg = self.cfg
        scheme = cfg.scheme
        if scheme == "decoder_only":
            self._phase("gradual", cfg.steps, trainable=("decoder",),
                        gradual=_gradual_hooks(cfg, spec, cfg.steps, ("decoder",)))
        elif scheme == "A":
            self._phase("gradual-prune-both", cfg.steps, trainable=("decoder",),
                        gradual=_gradual_hooks(cfg, spec, cfg.steps, ("encoder", "decoder")))
            self._phase("finetune-masked", cfg.steps, trainable=("encoder", "decoder"),
                        rng=self.root.derive(_TAG_PHASE2))
        elif scheme == "B":
            self._phase("decoder-dense", cfg.steps, trainable=("decoder",))
            ckpt = self.dir / "decoder-dense.smpc"
            checkpoint.save(self.model, ckpt)
            self.phases[-1]["checkpoint"] = str(ckpt)
            self._phase("gradual-finetune-both", cfg.steps, trainable=("encoder", "decoder"),
                        gradual=_gradual_hooks(cfg, spec, cfg.steps, ("encoder", "decoder")),
                        rng=self.root.derive(_TAG_PHASE2))
        elif scheme == "C":
            self._phase("gradual-decoder", cfg.steps, trainable=("decoder",),
                        gradual=_gradual_hooks(cfg, spec, cfg.steps, ("decoder",)))
            self._phase("gradual-encoder", cfg.steps, trainable=("encoder", "decoder"),
                        gradual=_gradual_hooks(cfg, spec, cfg.steps, ("encoder",)),
                        rng=self.root.derive(_TAG_PHASE2))

    def _run_hard(self, spec: PrunerSpec):
        cfg = self.cfg
        scheme = cfg.scheme
        if scheme == "decoder_only":
            self._phase("dense-train", cfg.steps, trainable=("decoder",))
            self._hard_prune_phase(spec, parts=("decoder",), trainable=("decoder",))
        elif scheme == "B":
            self._phase("decoder-dense", cfg.steps, trainable=("decoder",))
            ckpt = self.dir / "decoder-dense.smpc"
            checkpoint.save(self.model, ckpt)
            self.phases[-1]["checkpoint"] = str(ckpt)
            self._hard_prune_phase(spec, parts=("encoder", "decoder"),
                                   trainable=("encoder", "decoder"))
        elif scheme == "C":
            self._phase("dense-train", cfg.steps, trainable=("decoder",))
            self._hard_prune_phase(spec, parts=("decoder",), trainable=("decoder",))
            self._hard_prune_phase(spec, parts=("encoder",),
                                   trainable=("encoder", "decoder"), label="hard-encoder")

    def _hard_prune_phase(self, spec, parts, trainable, label="hard-retrain"):
        cfg = self.cfg
        masks = baselines.compute_masks(self.model, spec, parts=parts)
        self.model.apply_masks(masks)
        steps = spec.retrain_steps or cfg.steps // 3
        self._phase(label, steps, trainable=trainable, rng=self.root.derive(_TAG_RETRAIN))

    # ---- wrap-up -----------------------------------------------------------

    def _finish(self) -> dict:
        model = self.model
        if model.gated and not model.finalized:
            sparsity_report = smp.smp_finalize(model)
        else:
            per_layer = training.per_layer_sparsity(model)
            # report over the pruned population: masked tensors when masks
            # exist (e.g. decoder-only runs), all prunable otherwise
            names = sorted(model.masks) if model.masks else model.prunable_names()
            p_total = sum(model.params[n].data.size for n in names)
            nnz = sum(int(np.count_nonzero(model.params[n].data)) for n in names)
            sparsity_report = {"sparsity": 1.0 - nnz / p_total if p_total else 0.0,
                               "p_nnz": nnz, "p_total": p_total, "per_layer": per_layer}
        metrics = {split: training.evaluate(model, self.dataset, split)
                   for split in ("val", "test")}
        cost = training.cost_report(model)
        compression = checkpoint.compression_report(model)
        ckpt = self.dir / "model.smpc"
        checkpoint.save(model, ckpt, extra_meta={"seed": self.seed,
                                                 "config_hash": config_hash(self.cfg)})
        return {
            "seed": self.seed,
            "phases": self.phases,
            "metrics": metrics,
            "sparsity": sparsity_report["sparsity"],
            "sparsity_report": sparsity_report,
            "per_layer_sparsity": training.per_layer_sparsity(model),
            "cost": cost,
            "compression": compression,
            "checkpoint": str(ckpt),
        }


def run_experiment(cfg: ExperimentConfig, quiet: bool = True) -> dict:
    """Execute every seed of a config and write the aggregated RunReport."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = data.load_or_generate(int(cfg.dataset.get("seed", 2024)),
                                    int(cfg.dataset.get("n_samples", 640)),
                                    cache_dir=out / "cache")
    per_seed = []
    for seed in cfg.seeds:
        run = _SeedRun(cfg, int(seed), dataset, out / f"seed{seed}")
        per_seed.append(run.run())
        if not quiet:
            m = per_seed[-1]["metrics"]["test"]
            print(f"  seed {seed}: sparsity={per_seed[-1]['sparsity']:.4f} "
                  f"token_acc={m['token_accuracy']:.4f}")
    report = {
        "config_hash": config_hash(cfg),
        "config": cfg.to_dict(),
        "method": cfg.method_name(),
        "per_seed": per_seed,
        "metrics_mean": _aggregate(per_seed, np.mean),
        "metrics_std": _aggregate(per_seed, np.std),
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return report


def _aggregate(per_seed: list, fn) -> dict:
    out = {}
    keys = ["token_accuracy", "exact_match", "xe_loss"]
    for split in ("val", "test"):
        for k in keys:
            vals = [r["metrics"][split][k] for r in per_seed]
            out[f"{split}.{k}"] = float(fn(vals))
    out["sparsity"] = float(fn([r["sparsity"] for r in per_seed]))
    out["nnz"] = float(fn([r["cost"]["nnz"] for r in per_seed]))
    return out


def run_sweep(configs: list[ExperimentConfig], out_dir, jobs: int = 1,
              quiet: bool = True) -> dict:
    """Run a list of configs, collecting per-run reports and an aggregate CSV.

    A failed run is recorded with its error and the sweep continues.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    reports = []
    for i, cfg in enumerate(configs):
        cfg.out_dir = str(out / f"run{i:03d}-{cfg.method_name()}-s{cfg.s_target}")
        try:
            report = run_experiment(cfg, quiet=quiet)
            reports.append(report)
            for seed_rec in report["per_seed"]:
                rows.append({
                    "run": i,
                    "method": cfg.method_name(),
                    "scheme": cfg.scheme,
                    "s_target": cfg.s_target,
                    "seed": seed_rec["seed"],
                    "sparsity": seed_rec["sparsity"],
                    "nnz": seed_rec["cost"]["nnz"],
                    "token_accuracy": seed_rec["metrics"]["test"]["token_accuracy"],
                    "exact_match": seed_rec["metrics"]["test"]["exact_match"],
                    "error": "",
                })
        except Exception as e:  # noqa: BLE001 - sweep must survive failed runs
            rows.append({"run": i, "method": cfg.method_name(), "scheme": cfg.scheme,
                         "s_target": cfg.s_target, "seed": "", "sparsity": "",
                         "nnz": "", "token_accuracy": "", "exact_match": "",
                         "error": f"{type(e).__name__}: {e}"})
            if not quiet:
                traceback.print_exc()
    agg_path = out / "aggregate.csv"
    fields = ["run", "method", "scheme", "s_target", "seed", "sparsity", "nnz",
              "token_accuracy", "exact_match", "error"]
    with open(agg_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
    return {"rows": rows, "csv": str(agg_path), "reports": reports}


# ---------------------------------------------------------------------------
# figure data extraction


HIST_BINS = 101


def emit_figures_data(run_dir, seed: int | None = None, render: bool = True) -> dict:
    """Write the three figure CSVs (and PNG renders) for one run.

    Produces per-layer final sparsity, per-step training progression, and
    a histogram of nonzero prunable weights on a fixed 101-bin grid over
    [-max|w|, max|w|].
    """
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise FileNotFoundError(f"no report.json under {run_dir}")
    report = json.loads(report_path.read_text())
    per_seed = report["per_seed"]
    if seed is not None:
        matches = [r for r in per_seed if r["seed"] == seed]
        if not matches:
            raise ValueError(f"seed {seed} not present in {report_path}")
        rec = matches[0]
    else:
        rec = per_seed[0]
    fig_dir = run_dir / "figures"
    fig_dir.mkdir(exist_ok=True)

    layer_csv = fig_dir / "layer_sparsity.csv"
    layers = rec["per_layer_sparsity"]
    with open(layer_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "sparsity"])
        for name, s in layers.items():
            w.writerow([name, f"{s:.6f}"])

    prog_csv = fig_dir / "progression.csv"
    telemetry = []
    for phase_idx, phase in enumerate(rec["phases"]):
        tpath = Path(phase["telemetry"])
        if not tpath.exists():
            raise FileNotFoundError(f"missing telemetry file {tpath}")
        with open(tpath) as fh:
            for line in fh:
                r = json.loads(line)
                r["phase"] = phase_idx
                telemetry.append(r)
    with open(prog_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "step", "xe_loss", "weighted_sparsity_loss",
                    "gate_mean", "sparsity"])
        for r in telemetry:
            w.writerow([r["phase"], r["step"], r["xe_loss"], r["weighted_sparsity_loss"],
                        "" if r["gate_mean"] is None else r["gate_mean"], r["sparsity"]])

    hist_csv = fig_dir / "weight_hist.csv"
    tensors, meta = checkpoint.load_raw(rec["checkpoint"])
    values = np.concatenate([tensors[n].ravel() for n in meta["prunable"]])
    nonzero = values[values != 0]
    peak = float(np.abs(nonzero).max()) if nonzero.size else 1.0
    counts, edges = np.histogram(nonzero, bins=HIST_BINS, range=(-peak, peak))
    with open(hist_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for i in range(HIST_BINS):
            w.writerow([f"{edges[i]:.8g}", f"{edges[i + 1]:.8g}", int(counts[i])])

    out = {"layer_csv": str(layer_csv), "progression_csv": str(prog_csv),
           "hist_csv": str(hist_csv)}
    if render:
        from . import figures
        out["figures"] = figures.render_run(fig_dir)
    return out
