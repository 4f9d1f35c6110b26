"""Synthetic caption-like task: deterministic scenes and template captions.

A scene holds one or two object groups, each with a count, color, shape
and an optional size marker. Region features encode the attributes as
one-hot blocks (plus distractor regions of low-amplitude noise), and the
caption is produced by a fixed template grammar, so the mapping from
features to caption is exact and learnable to near-zero error.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import CounterRng

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2

_COUNTS = ["one", "two", "three", "four"]
_COLORS = ["red", "green", "blue", "yellow", "purple", "orange", "pink"]
_SHAPES = ["circle", "square", "triangle", "star", "ring", "cross", "hexagon"]
_SIZES = ["small", "big"]

VOCAB = (["<pad>", "<bos>", "<eos>"] + _COUNTS + _COLORS + _SHAPES + ["and"] + _SIZES)
VOCAB_SIZE = len(VOCAB)  # 24

_COUNT_BASE = 3
_COLOR_BASE = _COUNT_BASE + len(_COUNTS)
_SHAPE_BASE = _COLOR_BASE + len(_COLORS)
_AND_ID = _SHAPE_BASE + len(_SHAPES)
_SIZE_BASE = _AND_ID + 1

N_REGIONS = 4
RAW_FEAT = 24  # 1 flag + 2 group + 4 count + 7 color + 7 shape + 1 sized + 2 size
MAX_LEN = 12


@dataclass(frozen=True)
class SceneGroup:
    count: int
    color: int
    shape: int
    sized: bool
    size: int


@dataclass
class SceneSample:
    groups: tuple
    features: np.ndarray  # [N_REGIONS, RAW_FEAT] float32
    caption: np.ndarray  # [MAX_LEN] int64, PAD-filled after EOS


def caption_for_groups(groups) -> list[int]:
    """Template grammar: BOS [size] count color shape (and ...)? EOS."""
    toks = [BOS_ID]
    for i, g in enumerate(groups):
        if i > 0:
            toks.append(_AND_ID)
        if g.sized:
            toks.append(_SIZE_BASE + g.size)
        toks.append(_COUNT_BASE + g.count)
        toks.append(_COLOR_BASE + g.color)
        toks.append(_SHAPE_BASE + g.shape)
    toks.append(EOS_ID)
    return toks


def _group_vector(g: SceneGroup, group_idx: int) -> np.ndarray:
    v = np.zeros(RAW_FEAT, dtype=np.float32)
    v[0] = 1.0
    v[1 + group_idx] = 1.0
    v[3 + g.count] = 1.0
    v[7 + g.color] = 1.0
    v[14 + g.shape] = 1.0
    if g.sized:
        v[21] = 1.0
        v[22 + g.size] = 1.0
    return v


def make_sample(seed: int, index: int) -> SceneSample:
    """Deterministic sample: identical (seed, index) -> identical bytes."""
    rng = CounterRng(seed).derive(0x5CE4E, index)
    n_groups = 1 + int(rng.uniform() < 0.5)
    groups = tuple(
        SceneGroup(
            count=rng.integers(0, len(_COUNTS)),
            color=rng.integers(0, len(_COLORS)),
            shape=rng.integers(0, len(_SHAPES)),
            sized=rng.uniform() < 0.4,
            size=rng.integers(0, len(_SIZES)),
        )
        for _ in range(n_groups)
    )
    feats = np.zeros((N_REGIONS, RAW_FEAT), dtype=np.float32)
    slots = np.argsort(rng.uniform(N_REGIONS))  # deterministic shuffle
    for i, g in enumerate(groups):
        feats[slots[i]] = _group_vector(g, i)
    for j in range(len(groups), N_REGIONS):
        noise = rng.uniform(RAW_FEAT - 1).astype(np.float32) * 0.3
        feats[slots[j], 1:] = noise  # distractor: flag stays 0
    toks = caption_for_groups(groups)
    caption = np.full(MAX_LEN, PAD_ID, dtype=np.int64)
    caption[: len(toks)] = toks
    return SceneSample(groups=groups, features=feats, caption=caption)


@dataclass
class Dataset:
    seed: int
    features: np.ndarray  # [N, K, F]
    captions: np.ndarray  # [N, T]
    train_end: int
    val_end: int

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    def split(self, name: str):
        if name == "train":
            sl = slice(0, self.train_end)
        elif name == "val":
            sl = slice(self.train_end, self.val_end)
        elif name == "test":
            sl = slice(self.val_end, self.n_samples)
        else:
            raise ValueError(f"unknown split {name!r}")
        return self.features[sl], self.captions[sl]

    def sample_batch(self, rng: CounterRng, batch_size: int):
        idx = rng.integers(0, self.train_end, size=batch_size)
        return self.features[idx], self.captions[idx]


def generate_dataset(seed: int, n_samples: int) -> Dataset:
    """Deterministic dataset with an 80/10/10 train/val/test split."""
    if n_samples <= 0:
        raise ValueError("n_samples must be positive")
    feats = np.zeros((n_samples, N_REGIONS, RAW_FEAT), dtype=np.float32)
    caps = np.zeros((n_samples, MAX_LEN), dtype=np.int64)
    for i in range(n_samples):
        s = make_sample(seed, i)
        feats[i] = s.features
        caps[i] = s.caption
    train_end = int(n_samples * 0.8)
    val_end = train_end + int(n_samples * 0.1)
    return Dataset(seed=seed, features=feats, captions=caps,
                   train_end=train_end, val_end=val_end)


_CACHE_VERSION = 1


def load_or_generate(seed: int, n_samples: int, cache_dir: str | Path | None = None) -> Dataset:
    """Fetch from the cache container if present, else generate and cache."""
    if cache_dir is None:
        return generate_dataset(seed, n_samples)
    from . import checkpoint

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"scenes-s{seed}-n{n_samples}.smpc"
    if path.exists():
        try:
            tensors, meta = checkpoint.load_raw(path)
            if meta.get("cache_version") == _CACHE_VERSION and meta.get("seed") == seed:
                return Dataset(
                    seed=seed,
                    features=tensors["features"],
                    captions=tensors["captions"].astype(np.int64),
                    train_end=int(meta["train_end"]),
                    val_end=int(meta["val_end"]),
                )
        except checkpoint.FormatError:
            pass  # stale or corrupt cache: regenerate below
    ds = generate_dataset(seed, n_samples)
    checkpoint.save_raw(
        path,
        {"features": ds.features, "captions": ds.captions.astype(np.float32)},
        {"cache_version": _CACHE_VERSION, "seed": seed, "n_samples": n_samples,
         "train_end": ds.train_end, "val_end": ds.val_end},
    )
    return ds


def decode_tokens(tokens) -> str:
    """Human-readable caption, BOS/EOS/PAD stripped."""
    words = []
    for t in tokens:
        if t == EOS_ID:
            break
        if t in (PAD_ID, BOS_ID):
            continue
        words.append(VOCAB[int(t)])
    return " ".join(words)
