"""Late fusion: penultimate acoustic and text vectors, concatenated, classified by a random forest.

The forest is written from scratch: bootstrap-bagged CART trees with Gini
splits at midpoints of sorted unique values and sqrt feature subsampling.
Split search and tree traversal run in :mod:`dialogsent._kernels`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .audio_features import MfccConfig, featurize, read_matrix, write_matrix
from .corpus import NUM_CLASSES, SentimentLabel, Utterance
from .errors import ConsistencyError, InputError, LoadError
from .nets import ModelGraph, forward
from .text_features import EmbeddingConfig, HashedProvider, embed

PRESET_FUSED_DIM = {"switchboard": 64 + 128, "iemocap": 32 + 128}


@dataclass(frozen=True)
class FusedVector:
    values: np.ndarray
    utterance_id: str
    label: Optional[SentimentLabel] = None


@dataclass(frozen=True)
class ForestConfig:
    num_trees: int = 100
    max_depth: Optional[int] = None
    min_samples_leaf: int = 1
    features_per_split: str = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.num_trees < 1:
            raise InputError("num_trees must be at least 1")
        if self.min_samples_leaf < 1:
            raise InputError("min_samples_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InputError("max_depth must be non-negative")
        if self.features_per_split != "sqrt":
            raise InputError("only 'sqrt' feature subsampling is supported")

    def num_split_features(self, dim: int) -> int:
        return max(1, int(math.isqrt(dim)))


class DecisionTree:
    """Flat array tree; ``feature[i] == -1`` marks a leaf. Samples go left when ``x <= threshold``."""

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = np.ascontiguousarray(feature, dtype=np.intp)
        self.threshold = np.ascontiguousarray(threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(left, dtype=np.intp)
        self.right = np.ascontiguousarray(right, dtype=np.intp)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1, NUM_CLASSES)

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _kernels.apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def predict(self, X) -> np.ndarray:
        return self.counts[self.apply(X)].argmax(axis=1)

    def split_thresholds(self) -> list[tuple[int, float]]:
        return [(int(f), float(t)) for f, t in zip(self.feature, self.threshold) if f >= 0]

    def to_dict(self) -> dict:
        nodes = []
        for i in range(self.node_count):
            if self.feature[i] < 0:
                nodes.append({"counts": self.counts[i].tolist()})
            else:
                nodes.append({
                    "feature": int(self.feature[i]),
                    "threshold": float(self.threshold[i]),
                    "left": int(self.left[i]),
                    "right": int(self.right[i]),
                    "counts": self.counts[i].tolist(),
                })
        return {"nodes": nodes}

    @classmethod
    def from_dict(cls, data) -> "DecisionTree":
        nodes = data["nodes"]
        return cls(
            [n.get("feature", -1) for n in nodes],
            [n.get("threshold", 0.0) for n in nodes],
            [n.get("left", -1) for n in nodes],
            [n.get("right", -1) for n in nodes],
            [n["counts"] for n in nodes],
        )


def fit_tree(X, y, sample_idx, rng: np.random.Generator, mtry: int,
             max_depth: Optional[int] = None, min_samples_leaf: int = 1) -> DecisionTree:
    """Grow one CART tree on the rows ``sample_idx`` (duplicates allowed)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.intp)
    d = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(np.bincount(y[idx], minlength=NUM_CLASSES))
        return len(feature) - 1

    stack = [(new_node(sample_idx), np.asarray(sample_idx, dtype=np.intp), 0)]
    while stack:
        node, idx, depth = stack.pop()
        c = counts[node]
        if (c > 0).sum() <= 1 or (max_depth is not None and depth >= max_depth) \
                or len(idx) < 2 * min_samples_leaf:
            continue
        # sklearn-style: keep drawing features past mtry until some valid split appears
        perm = rng.permutation(d)
        f = -1
        for start in range(0, d, mtry):
            f, t, _ = _kernels.best_split(X, y, idx, perm[start:start + mtry], min_samples_leaf)
            if f >= 0:
                break
        if f < 0:
            continue
        go_left = X[idx, f] <= t
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, t
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return DecisionTree(feature, threshold, left, right, counts)


def tree_rngs(seed: int, num_trees: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(num_trees)]


def bootstrap_indices(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.integers(0, n, size=n)


class Forest:
    def __init__(self, trees: Sequence[DecisionTree], num_features: int, config: ForestConfig):
        self.trees = list(trees)
        self.num_features = int(num_features)
        self.config = config

    @classmethod
    def fit(cls, X, y, config: ForestConfig = ForestConfig()) -> "Forest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.intp)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise InputError(f"bad training data shapes {X.shape}, {y.shape}")
        if len(np.unique(y)) < 2:
            raise InputError("random forest needs at least two classes in the training data")
        if y.min() < 0 or y.max() >= NUM_CLASSES:
            raise InputError(f"labels must lie in [0, {NUM_CLASSES})")
        mtry = config.num_split_features(X.shape[1])
        trees = []
        for rng in tree_rngs(config.seed, config.num_trees):
            boot = bootstrap_indices(rng, len(y))
            trees.append(fit_tree(X, y, boot, rng, mtry, config.max_depth, config.min_samples_leaf))
        return cls(trees, X.shape[1], config)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.num_features:
            raise InputError(f"expected {self.num_features} features, got {X.shape[1]}")
        return X

    def votes(self, X) -> np.ndarray:
        """(n, 3) count of trees voting for each class."""
        X = self._check(X)
        out = np.zeros((len(X), NUM_CLASSES), dtype=np.int64)
        rows = np.arange(len(X))
        for tree in self.trees:
            out[rows, tree.predict(X)] += 1
        return out

    def predict(self, X) -> np.ndarray:
        # argmax takes the first maximum: ties go to the lowest class index
        return self.votes(X).argmax(axis=1)

    def to_dict(self) -> dict:
        return {
            "num_features": self.num_features,
            "classes": list(range(NUM_CLASSES)),
            "config": asdict(self.config),
            "trees": [t.to_dict() for t in self.trees],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def from_dict(cls, data) -> "Forest":
        return cls([DecisionTree.from_dict(t) for t in data["trees"]], data["num_features"],
                   ForestConfig(**data["config"]))

    @classmethod
    def load(cls, path) -> "Forest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (KeyError, ValueError) as exc:
            raise LoadError(f"{path}: malformed forest file ({exc})") from None


def fit_forest(data: Sequence[FusedVector], config: ForestConfig = ForestConfig()) -> Forest:
    if not data:
        raise InputError("no training vectors")
    if any(v.label is None for v in data):
        raise InputError("every training vector needs a label")
    X = np.stack([v.values for v in data])
    y = np.array([int(v.label) for v in data])
    return Forest.fit(X, y, config)


def predict(forest: Forest, vector) -> SentimentLabel:
    values = vector.values if isinstance(vector, FusedVector) else vector
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1:
        raise InputError("predict takes a single vector")
    return SentimentLabel(int(forest.predict(values)[0]))


# -- fused feature extraction ---------------------------------------------------

@dataclass
class Featurizers:
    mfcc: MfccConfig = MfccConfig()
    embedding: EmbeddingConfig = EmbeddingConfig()
    provider: object = None

    def acoustic(self, utterance: Utterance) -> np.ndarray:
        return featurize(utterance, self.mfcc).values.astype(np.float32)

    def text(self, utterance: Utterance) -> np.ndarray:
        return embed(list(utterance.transcript), self.embedding, self.provider or HashedProvider()).values


def _check_dims(acoustic: ModelGraph, text: ModelGraph, preset: Optional[str]) -> int:
    dim = acoustic.penultimate_dim + text.penultimate_dim
    if preset is not None and PRESET_FUSED_DIM.get(preset) != dim:
        raise ConsistencyError(f"fused width {dim} does not match preset {preset!r} "
                               f"({PRESET_FUSED_DIM.get(preset)})")
    return dim


def fused_matrix(acoustic: ModelGraph, text: ModelGraph, acoustic_inputs, text_inputs,
                 preset: Optional[str] = None) -> np.ndarray:
    """Eval-mode penultimate features, concatenated ``[acoustic | text]``."""
    dim = _check_dims(acoustic, text, preset)
    _, pa = forward(acoustic, acoustic_inputs, "eval")
    _, pt = forward(text, text_inputs, "eval")
    out = np.hstack([pa, pt]).astype(np.float64)
    if out.shape[1] != dim:
        raise ConsistencyError(f"fused width {out.shape[1]} != {dim}")
    return out


def extract_fused(acoustic: ModelGraph, text: ModelGraph, utterance: Utterance,
                  featurizers: Featurizers, preset: Optional[str] = None) -> FusedVector:
    values = fused_matrix(acoustic, text, featurizers.acoustic(utterance)[None],
                          featurizers.text(utterance)[None], preset)[0]
    return FusedVector(values, utterance.id, utterance.label)


def write_fused(path_prefix, vectors: Sequence[FusedVector]) -> None:
    """``<prefix>.mf60`` holds the float32 grid, ``<prefix>.csv`` the ids and labels."""
    prefix = Path(path_prefix)
    if not vectors:
        raise InputError("no vectors to write")
    write_matrix(prefix.with_suffix(".mf60"), np.stack([v.values for v in vectors]))
    with open(prefix.with_suffix(".csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["utterance_id", "label"])
        for v in vectors:
            w.writerow([v.utterance_id, "" if v.label is None else SentimentLabel(v.label).tag])


def read_fused(path_prefix) -> list[FusedVector]:
    prefix = Path(path_prefix)
    grid = read_matrix(prefix.with_suffix(".mf60"))
    with open(prefix.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != len(grid):
        raise LoadError(f"{prefix}: {len(rows)} index rows for {len(grid)} vectors")
    return [FusedVector(grid[i].astype(np.float64), r["utterance_id"],
                        SentimentLabel.parse(r["label"]) if r["label"] else None)
            for i, r in enumerate(rows)]
