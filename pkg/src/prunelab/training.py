"""Teacher-forcing training loop, evaluation, and analytic cost reporting."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd, baselines, data, gating, smp
from .autograd import Tensor
from .optim import Adam, Sgd, cosine_lr
from .rng import CounterRng
from .smp import SmpConfig, SparsitySchedule, TrainingDiverged


class TelemetryWriter:
    """Newline-delimited JSON records, one per call, in step order."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w", encoding="utf-8")

    def write(self, record: dict):
        self._fh.write(json.dumps(record) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class GradualHooks:
    s_final: float
    start_step: int
    end_step: int
    frequency: int
    parts: tuple = ("encoder", "decoder")


@dataclass
class SmpHooks:
    schedule: SparsitySchedule
    config: SmpConfig
    gate_opt: Sgd


LAYER_TELEMETRY_EVERY = 100


def train(model, dataset, *, steps: int, rng: CounterRng, lr: float,
          batch_size: int = 16, adam_eps: float = 1e-2,
          smp_hooks: SmpHooks | None = None, gradual: GradualHooks | None = None,
          trainable_parts=("encoder", "decoder"), telemetry=None,
          lr_schedule: str = "cosine") -> dict:
    """Run the training loop with optional per-step pruning hooks.

    Gate-training steps go through the single-objective path in
    :mod:`prunelab.smp`; gradual pruning re-ranks magnitudes on its own
    schedule; fixed masks are re-applied after every optimizer update so
    pruned weights can never be resurrected by stale momentum.
    """
    theta_opt = Adam(model.trainable(trainable_parts), lr=lr, eps=adam_eps)
    # distinct streams: every method sees the same batch order for a seed
    batch_rng = rng.derive(0xBA7C4)
    mask_rng = rng.derive(0x3A21E)
    model.dropout_rng = mask_rng
    initial_loss = None
    last_loss = None
    for n in range(steps):
        lr_n = cosine_lr(n, steps, lr) if lr_schedule == "cosine" else lr
        batch = dataset.sample_batch(batch_rng, batch_size)

        if gradual is not None and gradual.start_step <= n <= gradual.end_step \
                and (n - gradual.start_step) % gradual.frequency == 0:
            s_t = baselines.gradual_schedule(n, gradual.start_step, gradual.end_step,
                                             gradual.s_final)
            params = {name: model.params[name].data
                      for name in model.prunable_names(gradual.parts)}
            current = {name: gating.PruneMask(model.masks[name])
                       for name in params if name in model.masks} or None
            model.apply_masks(baselines.gradual_prune_step(params, current, s_t))

        if smp_hooks is not None:
            record = smp.smp_train_step(model, batch, smp_hooks.schedule, smp_hooks.config,
                                        mask_rng, theta_opt, smp_hooks.gate_opt, lr=lr_n)
        else:
            eff = model.effective_weights(rng=mask_rng)
            logits, targets = model.forward_logits(batch, eff)
            loss = autograd.cross_entropy(logits, targets, model.pad_id)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at step {n}")
            theta_opt.zero_grad()
            loss.backward()
            theta_opt.step(lr=lr_n)
            record = {"step": n, "xe_loss": loss.item(), "weighted_sparsity_loss": 0.0,
                      "gate_mean": None, "sparsity": model.mask_sparsity()}
        model.reapply_masks()

        if initial_loss is None:
            initial_loss = record["xe_loss"]
        elif record["xe_loss"] > 10.0 * max(initial_loss, 1e-6):
            raise TrainingDiverged(
                f"loss {record['xe_loss']:.3f} exceeded 10x initial {initial_loss:.3f} at step {n}")
        last_loss = record["xe_loss"]

        if telemetry is not None:
            if n % LAYER_TELEMETRY_EVERY == 0 or n == steps - 1:
                record = dict(record, layers=per_layer_sparsity(model))
            telemetry.write(record)
    return {"steps": steps, "initial_loss": initial_loss, "final_loss": last_loss}


def per_layer_sparsity(model) -> dict[str, float]:
    out = {}
    for name in model.prunable_names():
        if name in model.gated and not model.finalized:
            g = model.gated[name].gate.data
            out[name] = 1.0 - float(np.count_nonzero(g >= 0)) / g.size
        elif name in model.masks:
            bits = model.masks[name]
            out[name] = 1.0 - float(np.count_nonzero(bits)) / bits.size
        else:
            w = model.params[name].data
            out[name] = 1.0 - float(np.count_nonzero(w)) / w.size
    return out


def eval_weights(model) -> dict[str, Tensor]:
    """Deterministic effective weights: ML draw for live gates, masks, or raw."""
    eff = {}
    for name, p in model.params.items():
        if name in model.gated and not model.finalized:
            bits = (model.gated[name].gate.data >= 0).astype(np.float32)
            eff[name] = Tensor(p.data * bits)
        elif name in model.masks:
            eff[name] = Tensor(p.data * model.masks[name])
        else:
            eff[name] = p
    return eff


def _canonical(tokens) -> tuple:
    out = []
    for t in tokens:
        t = int(t)
        out.append(t)
        if t == data.EOS_ID:
            break
    return tuple(out)


def evaluate(model, dataset, split: str = "val") -> dict:
    """Teacher-forcing metrics plus greedy-decode caption statistics."""
    feats, caps = dataset.split(split)
    eff = eval_weights(model)
    with autograd.no_grad():
        logits, targets = model.forward_logits((feats, caps), eff)
        xe = autograd.cross_entropy(logits, targets, model.pad_id).item()
        pred = logits.data.argmax(axis=1)
        valid = targets != model.pad_id
        token_accuracy = float((pred[valid] == targets[valid]).mean())
        generated = model.decode_greedy(feats, eff)
    refs = [_canonical(c) for c in caps]
    gens = [_canonical(g) for g in generated]
    exact = float(np.mean([g == r for g, r in zip(gens, refs)]))
    unique_fraction = len(set(gens)) / len(gens)
    lengths = [max(len(g) - 2, 0) for g in gens]  # words between BOS and EOS
    return {
        "xe_loss": xe,
        "token_accuracy": token_accuracy,
        "exact_match": exact,
        "caption_stats": {
            "unique_fraction": unique_fraction,
            "avg_length": float(np.mean(lengths)),
        },
        "n": len(gens),
    }


def cost_report(model, caption_len: int = 9) -> dict:
    """NNZ and analytic decode cost. Counts assume greedy decoding."""
    counts = model.param_count()
    prunable_nnz = sum(int(np.count_nonzero(model.params[n].data))
                       for n in model.prunable_names())
    return {
        "nnz": prunable_nnz + counts["excluded"],
        "prunable_nnz": prunable_nnz,
        "p_total": counts["total"],
        "p_prunable": counts["prunable"],
        "flops_per_caption": model.flops_per_caption(caption_len),
        "decode": "greedy",  # not comparable to beam-search cost figures
        "caption_len": caption_len,
    }
