"""Comparison pruning methods under a single spec-driven interface.

Five method families: hard magnitude pruning (global, per-layer, and
std-threshold ranking), gradual magnitude pruning on a cubic ramp,
saliency-at-init pruning, one-shot winning-ticket reset, and mask-only
gate training with frozen weights. All of them operate on the prunable
registry only; biases and normalization parameters stay dense.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd, gating
from .autograd import Tensor
from .gating import PruneMask
from .optim import Sgd
from .rng import CounterRng

_HARD_KINDS = ("hard_blind", "hard_uniform", "hard_distribution")
KINDS = _HARD_KINDS + ("gradual_uniform", "snip", "lottery", "supermask_maskonly")


class ContractError(RuntimeError):
    """A pruner precondition was violated by the caller."""


class DegenerateInputError(ValueError):
    """Inputs carry no usable pruning signal (e.g. all-zero saliency)."""


@dataclass
class PrunerSpec:
    kind: str
    s_target: float = 0.0
    start_step: int | None = None
    end_step: int | None = None
    frequency: int | None = None
    retrain_steps: int | None = None
    lambda_c: float | None = None  # hard_distribution threshold factor
    snip_batches: int = 1
    inner: "PrunerSpec | None" = None  # lottery wraps exactly one non-lottery spec

    def validate(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown pruner kind {self.kind!r}")
        schedule_given = any(v is not None for v in (self.start_step, self.end_step, self.frequency))
        if self.kind == "gradual_uniform":
            if not schedule_given:
                raise ContractError("gradual_uniform requires start/end/frequency schedule params")
        elif schedule_given:
            raise ContractError(f"schedule params are only valid for gradual_uniform, not {self.kind}")
        if self.kind == "lottery":
            if self.inner is None or self.inner.kind == "lottery":
                raise ContractError("lottery wraps exactly one non-lottery inner spec")
            self.inner.validate()
        elif self.inner is not None:
            raise ContractError("inner spec only valid for lottery")
        if not (0.0 <= self.s_target < 1.0):
            raise ContractError(f"s_target must lie in [0,1), got {self.s_target}")


def snapshot_init(model) -> dict[str, np.ndarray]:
    """Immutable copy of all parameters, captured before training."""
    return {name: p.data.copy() for name, p in model.params.items()}


# ---------------------------------------------------------------------------
# hard magnitude pruning


def magnitude_prune_blind(params: dict[str, np.ndarray], s_target: float) -> dict[str, PruneMask]:
    """Drop the globally smallest |w| entries across all tensors.

    Exactly floor(s_target * total) entries are pruned; ties break by
    ascending flat index in registry order (stable sort).
    """
    names = list(params)
    flats = [np.abs(np.asarray(params[n])).ravel() for n in names]
    all_mag = np.concatenate(flats) if flats else np.zeros(0)
    k = int(math.floor(s_target * all_mag.size))
    keep = np.ones(all_mag.size, dtype=np.float32)
    if k > 0:
        order = np.argsort(all_mag, kind="stable")
        keep[order[:k]] = 0.0
    masks = {}
    offset = 0
    for n, f in zip(names, flats):
        masks[n] = PruneMask(keep[offset: offset + f.size].reshape(params[n].shape))
        offset += f.size
    return masks


def magnitude_prune_uniform(params: dict[str, np.ndarray], s_target: float) -> dict[str, PruneMask]:
    """Drop the floor(s_target * size) smallest |w| entries of each tensor."""
    masks = {}
    for n, w in params.items():
        w = np.asarray(w)
        k = int(math.floor(s_target * w.size))
        keep = np.ones(w.size, dtype=np.float32)
        if k > 0:
            order = np.argsort(np.abs(w).ravel(), kind="stable")
            keep[order[:k]] = 0.0
        masks[n] = PruneMask(keep.reshape(w.shape))
    return masks


def magnitude_prune_distribution(params: dict[str, np.ndarray], factor: float) -> dict[str, PruneMask]:
    """Per-tensor threshold at factor * std(tensor); prune |w| < threshold."""
    if factor < 0:
        raise ContractError(f"threshold factor must be >= 0, got {factor}")
    masks = {}
    for n, w in params.items():
        w = np.asarray(w)
        thresh = factor * float(w.std())
        masks[n] = PruneMask((np.abs(w) >= thresh).astype(np.float32))
    return masks


def achieved_sparsity(masks: dict[str, PruneMask]) -> float:
    total = sum(m.size() for m in masks.values())
    kept = sum(m.nnz() for m in masks.values())
    return 1.0 - kept / total if total else 0.0


def calibrate_distribution_factor(params: dict[str, np.ndarray], s_target: float,
                                  tol: float = 0.005, max_iter: int = 80) -> float:
    """Bisect the std factor until achieved global sparsity is within tol."""
    lo, hi = 0.0, 1.0
    while achieved_sparsity(magnitude_prune_distribution(params, hi)) < s_target:
        hi *= 2.0
        if hi > 1e6:
            raise DegenerateInputError("distribution factor search failed to bracket the target")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        s = achieved_sparsity(magnitude_prune_distribution(params, mid))
        if abs(s - s_target) <= tol:
            return mid
        if s < s_target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# gradual magnitude pruning


def gradual_schedule(t: int, t0: int, t_end: int, s_final: float) -> float:
    """Cubic sparsity ramp from 0 at t0 to s_final at t_end."""
    if t0 >= t_end:
        raise ContractError(f"pruning window start {t0} must precede end {t_end}")
    frac = min(max((t - t0) / (t_end - t0), 0.0), 1.0)
    return s_final * (1.0 - (1.0 - frac) ** 3)


def gradual_prune_step(params: dict[str, np.ndarray], masks: dict[str, PruneMask] | None,
                       s_t: float) -> dict[str, PruneMask]:
    """Extend the masks so each tensor reaches sparsity s_t.

    Masks only grow their zero set (monotone within a phase); the newly
    dropped entries are the smallest |w| among those still kept.
    """
    out = {}
    for name, w in params.items():
        w = np.asarray(w)
        bits = (masks[name].bits.copy() if masks and name in masks
                else np.ones(w.shape, dtype=np.float32))
        size = w.size
        target_zeros = int(math.floor(s_t * size))
        cur_zeros = size - int(np.count_nonzero(bits))
        if target_zeros < cur_zeros:
            raise ContractError(
                f"sparsity schedule decreased for {name}: {cur_zeros} -> {target_zeros} zeros")
        extra = target_zeros - cur_zeros
        if extra > 0:
            flat_bits = bits.ravel()
            kept_idx = np.flatnonzero(flat_bits)
            order = np.argsort(np.abs(w.ravel()[kept_idx]), kind="stable")
            flat_bits[kept_idx[order[:extra]]] = 0.0
        out[name] = PruneMask(bits)
    return out


# ---------------------------------------------------------------------------
# saliency pruning at initialization


def snip_prune(model, batches, s_target: float) -> dict[str, PruneMask]:
    """Rank weights by |dL/dc| at all-ones multiplicative masks.

    Saliency is the sum of per-batch absolute gradients, normalised by
    the grand total; the globally top (1 - s_target) fraction is kept.
    """
    names = model.prunable_names()
    cs = {n: Tensor(np.ones_like(model.params[n].data), requires_grad=True) for n in names}
    sal = {n: np.zeros_like(model.params[n].data, dtype=np.float64) for n in names}
    got_batch = False
    for batch in batches:
        got_batch = True
        eff = {}
        for name, p in model.params.items():
            if name in cs:
                eff[name] = autograd.mul(Tensor(p.data), cs[name])
            else:
                eff[name] = Tensor(p.data)
        logits, targets = model.forward_logits(batch, eff)
        loss = autograd.cross_entropy(logits, targets, model.pad_id)
        for c in cs.values():
            c.grad = None
        loss.backward()
        for n in names:
            sal[n] += np.abs(cs[n].grad)
    if not got_batch:
        raise ContractError("snip requires at least one batch")
    total = sum(float(s.sum()) for s in sal.values())
    if total == 0.0:
        raise DegenerateInputError("zero total saliency: no gradient reaches any mask")
    flat = np.concatenate([sal[n].ravel() for n in names]) / total
    p_total = flat.size
    keep_n = p_total - int(math.floor(s_target * p_total))
    order = np.argsort(-flat, kind="stable")  # ties keep the earlier flat index
    keep = np.zeros(p_total, dtype=np.float32)
    keep[order[:keep_n]] = 1.0
    masks = {}
    offset = 0
    for n in names:
        size = sal[n].size
        masks[n] = PruneMask(keep[offset: offset + size].reshape(sal[n].shape))
        offset += size
    return masks


# ---------------------------------------------------------------------------
# one-shot winning-ticket reset


def compute_masks(model, spec: PrunerSpec, parts=("encoder", "decoder"),
                  batches=None) -> dict[str, PruneMask]:
    """Dispatch a one-shot spec to its mask computation."""
    spec.validate()
    params = {n: model.params[n].data for n in model.prunable_names(parts)}
    if spec.kind == "hard_blind":
        return magnitude_prune_blind(params, spec.s_target)
    if spec.kind == "hard_uniform":
        return magnitude_prune_uniform(params, spec.s_target)
    if spec.kind == "hard_distribution":
        factor = spec.lambda_c
        if factor is None:
            factor = calibrate_distribution_factor(params, spec.s_target)
        return magnitude_prune_distribution(params, factor)
    if spec.kind == "snip":
        if batches is None:
            raise ContractError("snip requires batches")
        return snip_prune(model, batches, spec.s_target)
    if spec.kind == "gradual_uniform":
        if not model.masks:
            raise ContractError("gradual masks requested before any gradual training")
        return {n: PruneMask(model.masks[n].copy()) for n in params if n in model.masks}
    raise ContractError(f"no one-shot mask computation for kind {spec.kind!r}")


def lottery_oneshot(model, init: dict[str, np.ndarray], inner: PrunerSpec,
                    parts=("encoder", "decoder"), batches=None) -> dict[str, PruneMask]:
    """Mask from the trained weights, then rewind survivors to their init.

    Surviving positions are bit-identical to the snapshot; pruned
    positions are zero. The caller retrains afterwards.
    """
    for name in model.params:
        if name not in init:
            raise ContractError(f"init snapshot is missing parameter {name}")
    masks = compute_masks(model, inner, parts=parts, batches=batches)
    for name, p in model.params.items():
        p.data = init[name].copy()
    model.masks = {}
    model.apply_masks(masks, zero_weights=True)
    return masks


# ---------------------------------------------------------------------------
# mask-only gate training (weights frozen)


def supermask_maskonly_train(model, dataset, *, steps: int, batch_size: int,
                             rng: CounterRng, m: float = 5.0, gate_lr: float = 100.0,
                             telemetry=None) -> dict:
    """Train gates only; weights stay at initialization.

    No sparsity penalty is applied, so the final sparsity is an outcome,
    not a control: it is reported but cannot be targeted.
    """
    model.attach_gates(m)
    for p in model.params.values():
        p.requires_grad = False  # weights frozen
    gate_opt = Sgd(model.gate_tensors(), lr=gate_lr)
    for n in range(steps):
        batch = dataset.sample_batch(rng, batch_size)
        eff = model.effective_weights(rng=rng)
        logits, targets = model.forward_logits(batch, eff)
        loss = autograd.cross_entropy(logits, targets, model.pad_id)
        gate_opt.zero_grad()
        loss.backward()
        gate_opt.step()
        if telemetry is not None:
            p_nnz, p_total = gating.count_nnz(model.gated)
            telemetry.write({"step": n, "xe_loss": loss.item(),
                             "weighted_sparsity_loss": 0.0,
                             "gate_mean": gating.gate_mean(model.gated),
                             "sparsity": 1.0 - p_nnz / p_total})
    for p in model.params.values():
        p.requires_grad = True
    p_nnz, p_total = gating.count_nnz(model.gated)
    return {"sparsity": 1.0 - p_nnz / p_total, "p_nnz": p_nnz, "p_total": p_total}


def hard_prune_retrain(model, spec: PrunerSpec, dataset, *, rng: CounterRng,
                       lr: float, batch_size: int = 16, adam_eps: float = 1e-2,
                       telemetry=None, parts=("encoder", "decoder")) -> dict:
    """Apply one-shot hard masks to a trained model, then retrain.

    Masks stay fixed through retraining, so pruned positions can never
    come back. Retrain budget defaults to one third of the main run.
    """
    from . import training  # function-level import: training also uses this module

    masks = compute_masks(model, spec, parts=parts)
    model.apply_masks(masks, zero_weights=True)
    steps = spec.retrain_steps if spec.retrain_steps is not None else 0
    stats = {"retrain_steps": steps, "sparsity": model.mask_sparsity(parts)}
    if steps > 0:
        stats["train"] = training.train(
            model, dataset, steps=steps, batch_size=batch_size, rng=rng,
            lr=lr, adam_eps=adam_eps, telemetry=telemetry)
    return stats
