"""Desk-scale encoder-decoder models over the synthetic scene task.

Three decoders are available: a single-layer LSTM or GRU with one-head
soft attention over region features, and a single-block transformer whose
token positions attend over the projected regions (prefix style). The
encoder is a two-layer dense stack applied per region. Every learnable
tensor is registered exactly once and flagged prunable or excluded;
biases and normalization parameters are always excluded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd, data, gating
from .autograd import Tensor
from .gating import GatedParameter, PruneMask
from .rng import CounterRng

ARCHS = ("sa_lstm", "sa_gru", "mini_transformer")


class ConfigError(ValueError):
    """Invalid experiment or model configuration."""


@dataclass
class Dims:
    """Default sizes are the calibrated desk-scale model (~65k prunable
    decoder weights), sized so the sparsity penalty's travel budget at
    lambda = 5 comfortably completes within a few thousand steps while
    lambda = 1 cannot."""

    vocab: int = data.VOCAB_SIZE
    raw_feat: int = data.RAW_FEAT
    regions: int = data.N_REGIONS
    enc_hidden: int = 32
    feat: int = 24
    embed: int = 32
    hidden: int = 96
    attn: int = 32
    d_model: int = 32
    heads: int = 4
    ffn: int = 64
    max_len: int = data.MAX_LEN

    def validate(self):
        for name, v in self.__dict__.items():
            if int(v) <= 0:
                raise ConfigError(f"dim {name} must be positive, got {v}")
        if self.d_model % self.heads != 0:
            raise ConfigError("d_model must divide evenly into heads")


@dataclass
class ParamInfo:
    part: str  # "encoder" | "decoder"
    prunable: bool


class Model:
    """Parameter registry plus pruning state shared by all architectures."""

    arch = "base"
    pad_id = data.PAD_ID

    def __init__(self, dims: Dims, rng: CounterRng):
        dims.validate()
        self.dims = dims
        self.params: dict[str, Tensor] = {}
        self.info: dict[str, ParamInfo] = {}
        self.gated: dict[str, GatedParameter] = {}
        self.masks: dict[str, np.ndarray] = {}
        self.gates_frozen = False
        self.finalized = False
        self.frozen_sample = "bern"
        self.dropout_rate = 0.0
        self.dropout_rng = None
        self._build(rng)

    # -- registry -----------------------------------------------------------

    def _register(self, name: str, shape, part: str, prunable: bool, init: np.ndarray):
        if name in self.params:
            raise ConfigError(f"duplicate parameter {name}")
        t = Tensor(init.astype(np.float32), requires_grad=True, name=name)
        assert t.data.shape == tuple(shape)
        self.params[name] = t
        self.info[name] = ParamInfo(part=part, prunable=prunable)

    def _kernel(self, name, shape, part, rng):
        fan_in, fan_out = shape[0], shape[-1]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        w = (rng.uniform(shape) * 2.0 - 1.0) * limit
        self._register(name, shape, part, prunable=True, init=w)

    def _bias(self, name, size, part, value=0.0):
        self._register(name, (size,), part, prunable=False,
                       init=np.full(size, value, dtype=np.float32))

    def prunable_names(self, parts=("encoder", "decoder")) -> list[str]:
        return [n for n, i in self.info.items() if i.prunable and i.part in parts]

    def trainable(self, parts=("encoder", "decoder")) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if self.info[n].part in parts}

    def param_count(self) -> dict:
        prunable = sum(self.params[n].data.size for n in self.prunable_names())
        excluded = sum(p.data.size for n, p in self.params.items() if not self.info[n].prunable)
        return {"prunable": int(prunable), "excluded": int(excluded),
                "total": int(prunable + excluded)}

    # -- pruning state ------------------------------------------------------

    def attach_gates(self, m: float, parts=("encoder", "decoder"),
                     mode: str = gating.MODE_TRAIN_BERN):
        for name in self.prunable_names(parts):
            if name not in self.gated:
                self.gated[name] = gating.make_gated(self.params[name], m, name=name, mode=mode)

    def set_gate_mode(self, mode: str, parts=("encoder", "decoder")):
        for gp in self.gated.values():
            if self.info[gp.name].part in parts:
                gp.mode = mode

    def freeze_gates(self, parts=("encoder", "decoder")):
        """Stop gate updates (mode frozen_gate); sampling continues."""
        for gp in self.gated.values():
            if self.info[gp.name].part in parts and gp.mode != gating.MODE_FINALIZED:
                gp.mode = gating.MODE_FROZEN_GATE
                gp.gate.requires_grad = False
        self.gates_frozen = all(
            gp.gate is None or not gp.gate.requires_grad for gp in self.gated.values())

    def gate_tensors(self) -> dict[str, Tensor]:
        return {n: gp.gate for n, gp in self.gated.items()}

    def apply_masks(self, masks: dict[str, PruneMask], zero_weights: bool = True):
        for name, mask in masks.items():
            if name not in self.params or not self.info[name].prunable:
                raise ConfigError(f"mask for unknown or non-prunable parameter {name}")
            bits = mask.bits if isinstance(mask, PruneMask) else np.asarray(mask, dtype=np.float32)
            if bits.shape != self.params[name].data.shape:
                raise autograd.DimensionError(f"mask shape mismatch for {name}")
            self.masks[name] = bits
            if zero_weights:
                self.params[name].data *= bits

    def reapply_masks(self):
        """Re-zero masked positions; call after every optimizer step."""
        for name, bits in self.masks.items():
            self.params[name].data *= bits

    def mask_sparsity(self, parts=("encoder", "decoder")) -> float:
        names = self.prunable_names(parts)
        total = sum(self.params[n].data.size for n in names)
        if total == 0:
            return 0.0
        kept = 0
        for n in names:
            if n in self.masks:
                kept += int(np.count_nonzero(self.masks[n]))
            else:
                kept += self.params[n].data.size
        return 1.0 - kept / total

    def value_sparsity(self, parts=("encoder", "decoder")) -> float:
        names = self.prunable_names(parts)
        total = sum(self.params[n].data.size for n in names)
        nnz = sum(int(np.count_nonzero(self.params[n].data)) for n in names)
        return 1.0 - nnz / total if total else 0.0

    def effective_weights(self, rng: CounterRng | None = None) -> dict[str, Tensor]:
        """Resolve each parameter to the tensor the forward pass should use.

        Gated parameters are sampled once per call so a step reuses one
        mask everywhere the tensor appears.
        """
        eff = {}
        for name, p in self.params.items():
            if name in self.gated and not self.finalized:
                eff[name] = gating.gated_forward(self.gated[name], rng,
                                                 frozen_sample=self.frozen_sample)
            elif name in self.masks:
                eff[name] = gating.masked_forward(p, PruneMask(self.masks[name]))
            else:
                eff[name] = p
        return eff

    # -- architecture hooks ---------------------------------------------------

    def _build(self, rng: CounterRng):
        raise NotImplementedError

    def forward_logits(self, batch, eff):
        raise NotImplementedError

    def decode_greedy(self, features: np.ndarray, eff=None, max_len: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def flops_per_caption(self, caption_len: int = 9) -> float:
        raise NotImplementedError

    def _maybe_dropout(self, t: Tensor) -> Tensor:
        # training-graph paths only; inference runs under no_grad
        if self.dropout_rate > 0.0 and autograd._grad_enabled and self.dropout_rng is not None:
            return autograd.dropout(t, self.dropout_rate, self.dropout_rng)
        return t

    # shared encoder

    def _build_encoder(self, rng):
        d = self.dims
        self._kernel("enc.l0.kernel", (d.raw_feat, d.enc_hidden), "encoder", rng)
        self._bias("enc.l0.bias", d.enc_hidden, "encoder")
        self._kernel("enc.l1.kernel", (d.enc_hidden, d.feat), "encoder", rng)
        self._bias("enc.l1.bias", d.feat, "encoder")

    def _encode(self, features: np.ndarray, eff) -> Tensor:
        d = self.dims
        b, k, f = features.shape
        x = Tensor(features.reshape(b * k, f))
        h = autograd.relu(autograd.add(autograd.matmul(x, eff["enc.l0.kernel"]), eff["enc.l0.bias"]))
        out = autograd.tanh(autograd.add(autograd.matmul(h, eff["enc.l1.kernel"]), eff["enc.l1.bias"]))
        return autograd.reshape(out, (b, k, d.feat))

    def _encoder_flops(self) -> float:
        d = self.dims
        nnz = self._nnz_by_name()
        return d.regions * (2 * nnz["enc.l0.kernel"] + d.enc_hidden
                            + 2 * nnz["enc.l1.kernel"] + d.feat)

    def _nnz_by_name(self) -> dict[str, int]:
        out = {}
        for name, p in self.params.items():
            if name in self.masks:
                out[name] = int(np.count_nonzero(self.masks[name]))
            elif name in self.gated and not self.finalized:
                out[name] = int(np.count_nonzero(self.gated[name].gate.data >= 0))
            else:
                out[name] = int(np.count_nonzero(p.data))
        return out


def _step_major_targets(tokens: np.ndarray) -> np.ndarray:
    # logits are stacked per decode step, so targets go step-major too
    return tokens[:, 1:].T.reshape(-1)


class SaLstmModel(Model):
    arch = "sa_lstm"

    def _build(self, rng):
        d = self.dims
        self._build_encoder(rng)
        self._kernel("dec.embedding", (d.vocab, d.embed), "decoder", rng)
        lstm_in = d.embed + d.feat + d.hidden
        self._kernel("dec.lstm.kernel", (lstm_in, 4 * d.hidden), "decoder", rng)
        bias = np.zeros(4 * d.hidden, dtype=np.float32)
        bias[d.hidden: 2 * d.hidden] = 1.0  # forget-gate bias
        self._register("dec.lstm.bias", (4 * d.hidden,), "decoder", prunable=False, init=bias)
        self._kernel("dec.attn.key.kernel", (d.feat, d.attn), "decoder", rng)
        self._bias("dec.attn.key.bias", d.attn, "decoder")
        self._kernel("dec.attn.query.kernel", (d.hidden, d.attn), "decoder", rng)
        self._kernel("dec.attn.qk.kernel", (d.attn, 1), "decoder", rng)
        self._kernel("dec.output.kernel", (d.hidden, d.vocab), "decoder", rng)
        self._bias("dec.output.bias", d.vocab, "decoder")

    def _attend(self, regions, keys, h, eff, b, k):
        d = self.dims
        q = autograd.matmul(h, eff["dec.attn.query.kernel"])  # [B,A]
        mix = autograd.tanh(autograd.add(keys, autograd.reshape(q, (b, 1, d.attn))))
        scores = autograd.matmul(autograd.reshape(mix, (b * k, d.attn)), eff["dec.attn.qk.kernel"])
        weights = autograd.softmax(autograd.reshape(scores, (b, k)))
        ctx = autograd.sum_(autograd.mul(autograd.reshape(weights, (b, k, 1)), regions), axis=1)
        return ctx  # [B, feat]

    def _cell(self, x, h, c, eff):
        d = self.dims
        z = autograd.add(autograd.matmul(autograd.concat([x, h], axis=1), eff["dec.lstm.kernel"]),
                         eff["dec.lstm.bias"])
        i = autograd.sigmoid(autograd.narrow(z, 1, 0, d.hidden))
        f = autograd.sigmoid(autograd.narrow(z, 1, d.hidden, d.hidden))
        g = autograd.tanh(autograd.narrow(z, 1, 2 * d.hidden, d.hidden))
        o = autograd.sigmoid(autograd.narrow(z, 1, 3 * d.hidden, d.hidden))
        c_new = autograd.add(autograd.mul(f, c), autograd.mul(i, g))
        h_new = autograd.mul(o, autograd.tanh(c_new))
        return h_new, c_new

    def _init_state(self, b):
        d = self.dims
        return (Tensor(np.zeros((b, d.hidden), dtype=np.float32)),
                Tensor(np.zeros((b, d.hidden), dtype=np.float32)))

    def _precompute(self, features, eff):
        b, k, _ = features.shape
        d = self.dims
        regions = self._encode(features, eff)
        keys = autograd.reshape(
            autograd.add(autograd.matmul(autograd.reshape(regions, (b * k, d.feat)),
                                         eff["dec.attn.key.kernel"]),
                         eff["dec.attn.key.bias"]),
            (b, k, d.attn))
        return regions, keys

    def forward_logits(self, batch, eff):
        features, tokens = batch
        b, k, _ = features.shape
        t_in = tokens.shape[1] - 1
        regions, keys = self._precompute(features, eff)
        h, c = self._init_state(b)
        outs = []
        for t in range(t_in):
            emb = autograd.embedding(eff["dec.embedding"], tokens[:, t])
            ctx = self._attend(regions, keys, h, eff, b, k)
            x = autograd.concat([emb, ctx], axis=1)
            h, c = self._cell(x, h, c, eff)
            outs.append(autograd.add(autograd.matmul(self._maybe_dropout(h),
                                                     eff["dec.output.kernel"]),
                                     eff["dec.output.bias"]))
        return autograd.concat(outs, axis=0), _step_major_targets(tokens)

    def decode_greedy(self, features, eff=None, max_len=None):
        eff = eff or self.effective_weights()
        max_len = max_len or self.dims.max_len
        b, k, _ = features.shape
        with autograd.no_grad():
            regions, keys = self._precompute(features, eff)
            h, c = self._init_state(b)
            tok = np.full(b, data.BOS_ID, dtype=np.int64)
            out = [tok]
            for _ in range(max_len - 1):
                emb = autograd.embedding(eff["dec.embedding"], tok)
                ctx = self._attend(regions, keys, h, eff, b, k)
                h, c = self._cell(autograd.concat([emb, ctx], axis=1), h, c, eff)
                logits = autograd.add(autograd.matmul(h, eff["dec.output.kernel"]),
                                      eff["dec.output.bias"])
                tok = logits.data.argmax(axis=1)
                out.append(tok)
        return np.stack(out, axis=1)

    def flops_per_caption(self, caption_len: int = 9) -> float:
        d = self.dims
        nnz = self._nnz_by_name()
        k = d.regions
        per_step = (2 * nnz["dec.attn.query.kernel"]
                    + k * 2 * nnz["dec.attn.qk.kernel"]
                    + 2 * k * d.feat  # context mix
                    + 2 * nnz["dec.lstm.kernel"] + 4 * d.hidden
                    + 2 * nnz["dec.output.kernel"] + d.vocab)
        keys = k * (2 * nnz["dec.attn.key.kernel"] + d.attn)
        return float(self._encoder_flops() + keys + caption_len * per_step)


class SaGruModel(SaLstmModel):
    arch = "sa_gru"

    def _build(self, rng):
        d = self.dims
        self._build_encoder(rng)
        self._kernel("dec.embedding", (d.vocab, d.embed), "decoder", rng)
        gru_in = d.embed + d.feat + d.hidden
        self._kernel("dec.gru.zr.kernel", (gru_in, 2 * d.hidden), "decoder", rng)
        self._bias("dec.gru.zr.bias", 2 * d.hidden, "decoder")
        self._kernel("dec.gru.h.kernel", (gru_in, d.hidden), "decoder", rng)
        self._bias("dec.gru.h.bias", d.hidden, "decoder")
        self._kernel("dec.attn.key.kernel", (d.feat, d.attn), "decoder", rng)
        self._bias("dec.attn.key.bias", d.attn, "decoder")
        self._kernel("dec.attn.query.kernel", (d.hidden, d.attn), "decoder", rng)
        self._kernel("dec.attn.qk.kernel", (d.attn, 1), "decoder", rng)
        self._kernel("dec.output.kernel", (d.hidden, d.vocab), "decoder", rng)
        self._bias("dec.output.bias", d.vocab, "decoder")

    def _cell(self, x, h, c, eff):
        d = self.dims
        zr = autograd.sigmoid(
            autograd.add(autograd.matmul(autograd.concat([x, h], axis=1), eff["dec.gru.zr.kernel"]),
                         eff["dec.gru.zr.bias"]))
        z = autograd.narrow(zr, 1, 0, d.hidden)
        r = autograd.narrow(zr, 1, d.hidden, d.hidden)
        cand = autograd.tanh(
            autograd.add(autograd.matmul(autograd.concat([x, autograd.mul(r, h)], axis=1),
                                         eff["dec.gru.h.kernel"]),
                         eff["dec.gru.h.bias"]))
        one_minus_z = autograd.add(1.0, autograd.mul(z, -1.0))
        h_new = autograd.add(autograd.mul(one_minus_z, h), autograd.mul(z, cand))
        return h_new, c

    def flops_per_caption(self, caption_len: int = 9) -> float:
        d = self.dims
        nnz = self._nnz_by_name()
        k = d.regions
        per_step = (2 * nnz["dec.attn.query.kernel"]
                    + k * 2 * nnz["dec.attn.qk.kernel"]
                    + 2 * k * d.feat
                    + 2 * nnz["dec.gru.zr.kernel"] + 2 * d.hidden
                    + 2 * nnz["dec.gru.h.kernel"] + d.hidden
                    + 2 * nnz["dec.output.kernel"] + d.vocab)
        keys = k * (2 * nnz["dec.attn.key.kernel"] + d.attn)
        return float(self._encoder_flops() + keys + caption_len * per_step)


class MiniTransformerModel(Model):
    arch = "mini_transformer"

    def _build(self, rng):
        d = self.dims
        self._build_encoder(rng)
        self._kernel("dec.region_proj.kernel", (d.feat, d.d_model), "decoder", rng)
        self._bias("dec.region_proj.bias", d.d_model, "decoder")
        self._kernel("dec.embedding", (d.vocab, d.d_model), "decoder", rng)
        self._kernel("dec.pos", (d.regions + d.max_len, d.d_model), "decoder", rng)
        self._kernel("dec.attn.qkv.kernel", (d.d_model, 3 * d.d_model), "decoder", rng)
        self._bias("dec.attn.qkv.bias", 3 * d.d_model, "decoder")
        self._kernel("dec.attn.out.kernel", (d.d_model, d.d_model), "decoder", rng)
        self._bias("dec.attn.out.bias", d.d_model, "decoder")
        self._bias("dec.ln1.scale", d.d_model, "decoder", value=1.0)
        self._bias("dec.ln1.bias", d.d_model, "decoder")
        self._kernel("dec.ffn.w1", (d.d_model, d.ffn), "decoder", rng)
        self._bias("dec.ffn.w1.bias", d.ffn, "decoder")
        self._kernel("dec.ffn.w2", (d.ffn, d.d_model), "decoder", rng)
        self._bias("dec.ffn.w2.bias", d.d_model, "decoder")
        self._bias("dec.ln2.scale", d.d_model, "decoder", value=1.0)
        self._bias("dec.ln2.bias", d.d_model, "decoder")
        self._kernel("dec.output.kernel", (d.d_model, d.vocab), "decoder", rng)
        self._bias("dec.output.bias", d.vocab, "decoder")

    def _attn_mask(self, t_in: int) -> np.ndarray:
        k = self.dims.regions
        n = k + t_in
        allowed = np.zeros((n, n), dtype=bool)
        allowed[:, :k] = True  # everyone sees the regions
        for i in range(k, n):
            allowed[i, k: i + 1] = True  # causal over tokens
        allowed[:k, k:] = False  # regions never see tokens
        return np.where(allowed, 0.0, -1e9).astype(np.float32)

    def _block(self, features, tokens_in, eff):
        d = self.dims
        b, k, _ = features.shape
        t_in = tokens_in.shape[1]
        n = k + t_in
        regions = self._encode(features, eff)
        reg = autograd.add(
            autograd.matmul(autograd.reshape(regions, (b * k, d.feat)), eff["dec.region_proj.kernel"]),
            eff["dec.region_proj.bias"])
        reg = autograd.reshape(reg, (b, k, d.d_model))
        emb = autograd.embedding(eff["dec.embedding"], tokens_in.reshape(-1))
        emb = autograd.reshape(emb, (b, t_in, d.d_model))
        pos = autograd.narrow(eff["dec.pos"], 0, 0, n)
        s = autograd.add(autograd.concat([reg, emb], axis=1), autograd.reshape(pos, (1, n, d.d_model)))

        qkv = autograd.add(autograd.matmul(autograd.reshape(s, (b * n, d.d_model)),
                                           eff["dec.attn.qkv.kernel"]),
                           eff["dec.attn.qkv.bias"])
        dh = d.d_model // d.heads

        def heads(part):
            x = autograd.reshape(autograd.narrow(qkv, 1, part * d.d_model, d.d_model),
                                 (b, n, d.heads, dh))
            return autograd.reshape(autograd.transpose(x, (0, 2, 1, 3)), (b * d.heads, n, dh))

        q, k_, v = heads(0), heads(1), heads(2)
        scores = autograd.mul(autograd.bmm(q, autograd.transpose(k_, (0, 2, 1))), 1.0 / math.sqrt(dh))
        scores = autograd.add(scores, Tensor(self._attn_mask(t_in)[None]))
        ctx = autograd.bmm(autograd.softmax(scores), v)
        ctx = autograd.reshape(autograd.transpose(autograd.reshape(ctx, (b, d.heads, n, dh)),
                                                  (0, 2, 1, 3)), (b * n, d.d_model))
        attn = autograd.add(autograd.matmul(ctx, eff["dec.attn.out.kernel"]), eff["dec.attn.out.bias"])
        x = autograd.layer_norm(autograd.add(autograd.reshape(attn, (b, n, d.d_model)), s),
                                eff["dec.ln1.scale"], eff["dec.ln1.bias"])
        flat = autograd.reshape(x, (b * n, d.d_model))
        ff = autograd.add(autograd.matmul(
            autograd.relu(autograd.add(autograd.matmul(flat, eff["dec.ffn.w1"]), eff["dec.ffn.w1.bias"])),
            eff["dec.ffn.w2"]), eff["dec.ffn.w2.bias"])
        y = autograd.layer_norm(autograd.add(x, autograd.reshape(ff, (b, n, d.d_model))),
                                eff["dec.ln2.scale"], eff["dec.ln2.bias"])
        return autograd.narrow(y, 1, k, t_in)  # [B, T, Dm]

    def forward_logits(self, batch, eff):
        features, tokens = batch
        b = features.shape[0]
        tokens_in = tokens[:, :-1]
        t_in = tokens_in.shape[1]
        d = self.dims
        y = self._block(features, tokens_in, eff)
        flat = autograd.reshape(autograd.transpose(y, (1, 0, 2)), (t_in * b, d.d_model))
        logits = autograd.add(autograd.matmul(self._maybe_dropout(flat), eff["dec.output.kernel"]),
                              eff["dec.output.bias"])
        return logits, _step_major_targets(tokens)

    def decode_greedy(self, features, eff=None, max_len=None):
        eff = eff or self.effective_weights()
        max_len = max_len or self.dims.max_len
        b = features.shape[0]
        d = self.dims
        toks = np.full((b, 1), data.BOS_ID, dtype=np.int64)
        with autograd.no_grad():
            for _ in range(max_len - 1):
                y = self._block(features, toks, eff)
                last = autograd.narrow(y, 1, toks.shape[1] - 1, 1)
                logits = autograd.add(
                    autograd.matmul(autograd.reshape(last, (b, d.d_model)), eff["dec.output.kernel"]),
                    eff["dec.output.bias"])
                nxt = logits.data.argmax(axis=1)
                toks = np.concatenate([toks, nxt[:, None]], axis=1)
        return toks

    def flops_per_caption(self, caption_len: int = 9) -> float:
        d = self.dims
        nnz = self._nnz_by_name()
        n = d.regions + caption_len
        per_pass = (d.regions * 2 * nnz["dec.region_proj.kernel"]
                    + n * (2 * nnz["dec.attn.qkv.kernel"] + 2 * nnz["dec.attn.out.kernel"]
                           + 2 * nnz["dec.ffn.w1"] + 2 * nnz["dec.ffn.w2"])
                    + 2 * n * n * d.d_model * 2  # score and context products
                    + 2 * nnz["dec.output.kernel"] + d.vocab)
        return float(self._encoder_flops() + caption_len * per_pass)


_ARCH_CLASSES = {
    "sa_lstm": SaLstmModel,
    "sa_gru": SaGruModel,
    "mini_transformer": MiniTransformerModel,
}


def build_model(arch: str, dims: Dims | None = None, seed: int = 0,
                rng: CounterRng | None = None) -> Model:
    """Construct a model with deterministic initial weights."""
    if arch not in _ARCH_CLASSES:
        raise ConfigError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
    if rng is None:
        rng = CounterRng(seed).derive(0x1417)
    return _ARCH_CLASSES[arch](dims or Dims(), rng)
