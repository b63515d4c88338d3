"""Dialog-grouped stratified k-fold splits.

All utterances of a dialog land in one fold. Folds are filled greedily: the
largest dialogs first, each going to the fold where it adds the least squared
deviation from that fold's proportional per-class target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import NUM_CLASSES, Corpus
from .errors import InputError


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    fold_of_dialog: Mapping[str, int]

    def dialogs_in(self, fold: int) -> list[str]:
        return sorted(d for d, f in self.fold_of_dialog.items() if f == fold)

    def to_json(self) -> str:
        return json.dumps({"k": self.k, "fold_of_dialog": dict(sorted(self.fold_of_dialog.items()))},
                          indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FoldAssignment":
        data = json.loads(text)
        k = int(data["k"])
        mapping = {str(d): int(f) for d, f in data["fold_of_dialog"].items()}
        bad = {d: f for d, f in mapping.items() if not 0 <= f < k}
        if bad:
            raise InputError(f"fold indices out of range for k={k}: {bad}")
        return cls(k, mapping)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "FoldAssignment":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class FoldView:
    train_ids: frozenset
    validation_ids: frozenset
    test_ids: frozenset


def _dialog_class_counts(corpus: Corpus) -> dict[str, np.ndarray]:
    counts: dict[str, np.ndarray] = {}
    for u in corpus.labeled():
        counts.setdefault(u.dialog_id, np.zeros(NUM_CLASSES, dtype=np.int64))[int(u.label)] += 1
    return counts


def assign_folds(corpus: Corpus, k: int, seed: int = 0) -> FoldAssignment:
    if k < 2:
        raise InputError(f"k must be at least 2, got {k}")
    counts = _dialog_class_counts(corpus)
    if len(counts) < k:
        raise InputError(f"{len(counts)} dialogs with labeled utterances, fewer than k={k}")

    rng = np.random.default_rng(seed)
    order = sorted(counts, key=lambda d: (-int(counts[d].sum()), d))
    total = sum(counts.values())
    target = total / k
    target_size = total.sum() / k
    fold_counts = np.zeros((k, NUM_CLASSES), dtype=np.float64)
    mapping: dict[str, int] = {}
    for d in order:
        c = counts[d]
        # increase in squared deviation (per class, plus fold size) if d joins each fold
        dev = fold_counts - target
        cost = (c * (2 * dev + c)).sum(axis=1)
        size_dev = fold_counts.sum(axis=1) - target_size
        cost = cost + c.sum() * (2 * size_dev + c.sum())
        best = np.flatnonzero(np.isclose(cost, cost.min(), rtol=0, atol=1e-9))
        f = int(best[0] if best.size == 1 else rng.choice(best))
        mapping[d] = f
        fold_counts[f] += c
    # dialogs with no labeled utterance still need a fold
    for d in sorted(set(corpus.dialogs()) - set(mapping)):
        mapping[d] = int(np.argmin(fold_counts.sum(axis=1)))
    return FoldAssignment(k, mapping)


def fold_view(corpus: Corpus, assignment: FoldAssignment, test_fold: int, validation_fold: int) -> FoldView:
    k = assignment.k
    for name, f in (("test_fold", test_fold), ("validation_fold", validation_fold)):
        if not 0 <= f < k:
            raise InputError(f"{name}={f} out of range for k={k}")
    if test_fold == validation_fold:
        raise InputError(f"test and validation fold are both {test_fold}")
    train, val, test = set(), set(), set()
    for u in corpus.labeled():
        try:
            f = assignment.fold_of_dialog[u.dialog_id]
        except KeyError:
            raise InputError(f"dialog {u.dialog_id} missing from fold assignment") from None
        (test if f == test_fold else val if f == validation_fold else train).add(u.id)
    return FoldView(frozenset(train), frozenset(val), frozenset(test))


def fold_class_proportions(corpus: Corpus, assignment: FoldAssignment) -> np.ndarray:
    """(k, 3) per-fold class proportions of labeled utterances."""
    out = np.zeros((assignment.k, NUM_CLASSES))
    for u in corpus.labeled():
        out[assignment.fold_of_dialog[u.dialog_id], int(u.label)] += 1
    sizes = out.sum(axis=1, keepdims=True)
    return np.divide(out, sizes, out=np.zeros_like(out), where=sizes > 0)
