"""Learned binary gates over weight tensors.

Each prunable weight W carries a same-shaped gating tensor G. During
training the effective weight is W * sample(sigmoid(G)) where sample is
either an unbiased Bernoulli draw or the deterministic maximum-likelihood
draw (keep iff sigmoid(g) >= 0.5, i.e. g >= 0; the tie at exactly 0.5 is
kept). Binarisation is non-differentiable, so the backward pass treats it
as the identity (straight-through): the gradient recorded at sigmoid(G)
is exactly the gradient arriving at the sample node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd
from .autograd import DimensionError, Tensor
from .rng import CounterRng

MODE_TRAIN_BERN = "train_bern"
MODE_TRAIN_ROUND = "train_round"
MODE_FROZEN_GATE = "frozen_gate"
MODE_FINALIZED = "finalized"


class LifecycleError(RuntimeError):
    """Operation invalid for the parameter's current lifecycle mode."""


@dataclass
class PruneMask:
    """Binary keep/drop tensor aligned with one weight tensor."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.float32)

    def nnz(self) -> int:
        return int(np.count_nonzero(self.bits))

    def size(self) -> int:
        return int(self.bits.size)


@dataclass
class GatedParameter:
    """A prunable weight tensor paired with its gating tensor."""

    weight: Tensor
    gate: Tensor
    mode: str = MODE_TRAIN_BERN
    name: str = ""

    def __post_init__(self):
        if self.gate.data.shape != self.weight.data.shape:
            raise DimensionError(
                f"gate shape {self.gate.data.shape} != weight shape {self.weight.data.shape}"
            )


def make_gated(weight: Tensor, m: float, name: str = "", mode: str = MODE_TRAIN_BERN) -> GatedParameter:
    """Attach a gate initialised to the constant m."""
    gate = Tensor(np.full(weight.data.shape, m, dtype=np.float32), requires_grad=True)
    return GatedParameter(weight=weight, gate=gate, mode=mode, name=name)


def sample_bern(gp: GatedParameter, rng: CounterRng) -> PruneMask:
    """Unbiased draw: bit i is 1 with probability sigmoid(g_i)."""
    if gp.mode == MODE_FINALIZED:
        raise LifecycleError(f"cannot sample a finalized parameter {gp.name!r}")
    p = _sigmoid_np(gp.gate.data)
    return PruneMask(rng.bernoulli(p))


def sample_round(gp: GatedParameter) -> PruneMask:
    """Maximum-likelihood draw: keep iff g >= 0. Deterministic."""
    return PruneMask((gp.gate.data >= 0.0).astype(np.float32))


def binarize_ste(s: Tensor, bits: np.ndarray) -> Tensor:
    """Insert the sampled bits into the graph with identity backward.

    Forward value is the binary mask; the backward pass copies the
    upstream gradient to s unchanged (straight-through).
    """
    bits = np.asarray(bits, dtype=np.float32)
    if bits.shape != s.data.shape:
        raise DimensionError(f"bits shape {bits.shape} != gate shape {s.data.shape}")

    def backward():
        if s.requires_grad:
            autograd._accum(s, out.grad)

    out = autograd._make(bits, (s,), backward)
    return out


def masked_forward(gp, mask: PruneMask) -> Tensor:
    """Effective weight W * mask with the mask held constant.

    Gradients reach W only through kept positions; no gradient flows to
    any gate. Accepts a GatedParameter or a bare weight Tensor; use
    gated_forward for the trainable-gate path.
    """
    w = gp.weight if isinstance(gp, GatedParameter) else gp
    if mask.bits.shape != w.data.shape:
        raise DimensionError(f"mask shape {mask.bits.shape} != weight shape {w.data.shape}")
    return autograd.mul(w, Tensor(mask.bits))


def gated_forward(gp: GatedParameter, rng: CounterRng | None,
                  frozen_sample: str = "bern") -> Tensor:
    """Effective weight with gradient flow to both W and G.

    Builds sigmoid(G) -> straight-through binarize -> W * bits. Sampling
    follows the parameter's mode: Bernoulli for train_bern, ML draw for
    train_round; frozen gates keep Bernoulli unless frozen_sample is
    "round".
    """
    if gp.mode == MODE_FINALIZED:
        raise LifecycleError(f"cannot gate-forward a finalized parameter {gp.name!r}")
    use_round = gp.mode == MODE_TRAIN_ROUND or (
        gp.mode == MODE_FROZEN_GATE and frozen_sample == "round")
    s = autograd.sigmoid(gp.gate)
    if use_round:
        bits = (gp.gate.data >= 0.0).astype(np.float32)
    else:
        if rng is None:
            raise ValueError("Bernoulli sampling requires an rng")
        bits = rng.bernoulli(s.data)
    b = binarize_ste(s, bits)
    return autograd.mul(gp.weight, b)


def round_count_ste(gate: Tensor) -> Tensor:
    """ML-draw bits for the kept-count, straight-through to the raw gate.

    The count path treats the whole round(sigmoid(g)) composite as the
    identity, so the sparsity penalty applies position-independent
    pressure: d bits / d g = 1. (The sampling path used for effective
    weights keeps the estimator at the sample node instead; see
    binarize_ste.)
    """
    bits = (gate.data >= 0.0).astype(np.float32)

    def backward():
        if gate.requires_grad:
            autograd._accum(gate, out.grad)

    out = autograd._make(bits, (gate,), backward)
    return out


def finalize(gp: GatedParameter) -> Tensor:
    """Overwrite W with W * round(sigmoid(G)) and retire the gate."""
    if gp.mode == MODE_FINALIZED:
        raise LifecycleError(f"parameter {gp.name!r} already finalized")
    bits = (gp.gate.data >= 0.0).astype(np.float32)
    gp.weight.data = gp.weight.data * bits
    gp.mode = MODE_FINALIZED
    gp.gate = None  # discardable per the training contract
    return gp.weight


def count_nnz(gates) -> tuple[int, int]:
    """(kept, total) under the ML draw across all gating tensors."""
    p_nnz = 0
    p_total = 0
    for gp in _iter_gates(gates):
        g = gp.gate.data
        p_nnz += int(np.count_nonzero(g >= 0.0))
        p_total += int(g.size)
    return p_nnz, p_total


def gate_mean(gates) -> float:
    """Average gating value across all tensors (telemetry quantity)."""
    total = 0.0
    n = 0
    for gp in _iter_gates(gates):
        total += float(gp.gate.data.sum(dtype=np.float64))
        n += gp.gate.data.size
    return total / max(n, 1)


def _iter_gates(gates):
    if isinstance(gates, dict):
        return list(gates.values())
    return list(gates)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
