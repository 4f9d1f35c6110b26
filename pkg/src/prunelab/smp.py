"""Sparsity-annealed gate training.

The training objective adds an annealed absolute-difference penalty to the
task loss: L = L_task + lambda_s * alpha(n) * |s_target - current_sparsity|
where current sparsity is measured under the deterministic ML draw. Gates
receive gradient through both routes: the task loss via the Bernoulli
masks and the sparsity loss via the ML-draw count, each binarisation
bridged by the straight-through estimator.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autograd, gating
from .autograd import Tensor
from .gating import GatedParameter, LifecycleError
from .rng import CounterRng


@dataclass
class SparsitySchedule:
    """Annealing state for the sparsity penalty."""

    s_target: float
    n_max: int
    n: int = 0

    def __post_init__(self):
        if not (0.0 <= self.s_target < 1.0):
            raise ValueError(f"s_target must lie in [0,1), got {self.s_target}")
        if self.n_max <= 0:
            raise ValueError("n_max must be positive")

    @property
    def alpha(self) -> float:
        return anneal_alpha(self.n, self.n_max)


@dataclass
class SmpConfig:
    lambda_s: float = 5.0
    gate_lr: float = 100.0  # constant, no annealing
    m: float = 5.0
    sample: str = "bern"  # "round" keeps frozen-gate runs deterministic


def anneal_alpha(n: int, n_max: int) -> float:
    """Inverted half-cosine ramp: 0 at n=0, 0.5 midway, 1 at n=n_max."""
    if n_max <= 0:
        raise ValueError("n_max must be positive")
    if n > n_max:
        warnings.warn(f"annealing step {n} > n_max {n_max}; clamping alpha to 1", stacklevel=2)
        return 1.0
    return 1.0 - 0.5 * (1.0 + math.cos(n * math.pi / n_max))


def default_lambda(s_target: float) -> float:
    """Heuristic penalty weight: max(5, 0.5 / (1 - s_target))."""
    if s_target >= 1.0:
        raise ValueError(f"s_target must be < 1, got {s_target}")
    return max(5.0, 0.5 / (1.0 - s_target))


def sparsity_loss(gates, s_target: float, alpha: float) -> Tensor:
    """alpha * |s_target - (1 - p_nnz / p_total)| as a graph node.

    p_nnz is the ML-draw kept count; its gradient reaches the gates via
    the straight-through count path (round_count_ste), so every gate
    feels the same pressure magnitude regardless of its current value.
    """
    gps = gating._iter_gates(gates)
    p_total = sum(gp.gate.data.size for gp in gps)
    if p_total == 0:
        raise ValueError("sparsity_loss needs at least one gated parameter")
    kept_terms = [autograd.sum_(gating.round_count_ste(gp.gate)) for gp in gps]
    p_nnz = kept_terms[0]
    for term in kept_terms[1:]:
        p_nnz = autograd.add(p_nnz, term)
    current_sparsity = autograd.add(1.0, autograd.mul(p_nnz, -1.0 / p_total))
    gap = autograd.add(s_target, autograd.mul(current_sparsity, -1.0))
    return autograd.mul(autograd.abs_(gap), alpha)


def total_loss(task_loss: Tensor, sparsity: Tensor, lambda_s: float) -> Tensor:
    return autograd.add(task_loss, autograd.mul(sparsity, lambda_s))


class TrainingDiverged(RuntimeError):
    pass


def smp_train_step(model, batch, schedule: SparsitySchedule, config: SmpConfig,
                   rng: CounterRng, theta_opt, gate_opt, lr: float | None = None) -> dict:
    """One full gate-training step.

    Sample Bernoulli masks, run the forward pass, combine task and
    sparsity losses, backprop once, then update weights with the model
    optimizer and gates with their own constant-rate optimizer. Returns
    the telemetry record for this step.
    """
    if schedule.n >= schedule.n_max:
        raise ValueError(f"schedule exhausted: step {schedule.n} >= n_max {schedule.n_max}")
    gates = model.gated
    gate_mean = gating.gate_mean(gates)
    p_nnz, p_total = gating.count_nnz(gates)

    eff = model.effective_weights(rng=rng)
    logits, targets = model.forward_logits(batch, eff)
    task = autograd.cross_entropy(logits, targets, model.pad_id)
    alpha = schedule.alpha
    ls = sparsity_loss(gates, schedule.s_target, alpha)
    loss = total_loss(task, ls, config.lambda_s)

    if not np.isfinite(loss.data):
        layers = {gp.name: 1.0 - np.count_nonzero(gp.gate.data >= 0) / gp.gate.data.size
                  for gp in gates.values()}
        raise TrainingDiverged(f"non-finite loss at step {schedule.n}; per-layer sparsity: {layers}")

    theta_opt.zero_grad()
    gate_opt.zero_grad()
    loss.backward()
    theta_opt.step(lr=lr)
    if not model.gates_frozen:
        gate_opt.step()

    record = {
        "step": schedule.n,
        "xe_loss": task.item(),
        "weighted_sparsity_loss": config.lambda_s * ls.item(),
        "gate_mean": gate_mean,
        "sparsity": 1.0 - p_nnz / p_total,
    }
    schedule.n += 1
    return record


def smp_finalize(model) -> dict:
    """Finalize every gated parameter and report achieved sparsity."""
    gates = model.gated
    p_nnz, p_total = gating.count_nnz(gates)
    per_layer = {}
    for name, gp in gates.items():
        kept = int(np.count_nonzero(gp.gate.data >= 0.0))
        per_layer[name] = 1.0 - kept / gp.gate.data.size
        gating.finalize(gp)
    model.finalized = True
    return {
        "sparsity": 1.0 - p_nnz / p_total if p_total else 0.0,
        "p_nnz": p_nnz,
        "p_total": p_total,
        "per_layer": per_layer,
    }
