import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialogsent import _kernels
from dialogsent._kernels import _slow
from dialogsent.corpus import SentimentLabel, Utterance
from dialogsent.errors import ConsistencyError, InputError, LoadError
from dialogsent.fusion import (
    DecisionTree,
    Featurizers,
    Forest,
    ForestConfig,
    FusedVector,
    bootstrap_indices,
    extract_fused,
    fit_forest,
    fit_tree,
    fused_matrix,
    predict,
    read_fused,
    tree_rngs,
    write_fused,
)
from dialogsent.nets import AcousticModelSpec, ConvBlockSpec, TextModelSpec, build_acoustic, build_text
from dialogsent.text_features import EmbeddingConfig

try:
    from dialogsent._kernels import _fast
except ImportError:  # extension not built
    _fast = None


def blobs(seed, n=300, dim=40, spread=1.5):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 3, n)
    centres = rng.standard_normal((3, dim))
    return centres[y] + spread * rng.standard_normal((n, dim)), y


def vectors(X, y):
    return [FusedVector(x, f"u{i}", SentimentLabel(int(c))) for i, (x, c) in enumerate(zip(X, y))]


# -- forest behaviour --------------------------------------------------------------

def test_single_tree_shatters_four_points():
    X = np.array([[0.0, 0.0], [0.0, 1.0], [3.0, 0.0], [3.0, 1.0]])
    y = np.array([0, 0, 1, 1])
    f = Forest.fit(X, y, ForestConfig(num_trees=1, seed=5))
    tree = fit_tree(X, y, np.arange(4), np.random.default_rng(0), mtry=1)
    assert (tree.predict(X) == y).all()
    assert f.trees[0].counts.sum(axis=1)[0] == 4


def test_hundred_trees_fit_toy_fused_features():
    X, y = blobs(0)
    forest = fit_forest(vectors(X, y), ForestConfig(num_trees=100, seed=0))
    # observed training accuracy 1.0
    assert (forest.predict(X) == y).mean() >= 0.99


def test_same_seed_same_forest():
    X, y = blobs(1, n=120)
    probe = blobs(2, n=50)[0]
    a = Forest.fit(X, y, ForestConfig(num_trees=10, seed=3))
    b = Forest.fit(X, y, ForestConfig(num_trees=10, seed=3))
    assert a.to_dict() == b.to_dict()
    np.testing.assert_array_equal(a.votes(probe), b.votes(probe))
    c = Forest.fit(X, y, ForestConfig(num_trees=10, seed=4))
    assert c.to_dict() != a.to_dict()


def test_leaf_counts_sum_to_samples():
    X, y = blobs(3, n=80)
    forest = Forest.fit(X, y, ForestConfig(num_trees=5, seed=1, min_samples_leaf=3))
    for tree in forest.trees:
        leaves = tree.feature < 0
        internal = ~leaves
        assert tree.counts[0].sum() == len(y)
        np.testing.assert_array_equal(tree.counts[internal],
                                      tree.counts[tree.left[internal]] + tree.counts[tree.right[internal]])
        assert tree.counts[leaves].sum(axis=1).min() >= 3


def _stump(label_counts):
    return DecisionTree([-1], [0.0], [-1], [-1], [label_counts])


def test_single_tree_predicts_leaf_majority():
    f = Forest([_stump([1, 5, 2])], 3, ForestConfig(num_trees=1))
    assert predict(f, np.zeros(3)) is SentimentLabel.POSITIVE


def test_vote_tie_goes_to_lowest_index():
    f = Forest([_stump([0, 3, 0]), _stump([0, 0, 3])], 2, ForestConfig(num_trees=2))
    assert predict(f, np.zeros(2)) == SentimentLabel(1)
    unanimous = Forest([_stump([0, 0, 1])] * 3, 2, ForestConfig(num_trees=3))
    assert predict(unanimous, np.zeros(2)) == SentimentLabel(2)


def test_bootstraps_differ():
    rngs = tree_rngs(0, 5)
    samples = [bootstrap_indices(r, 20) for r in rngs]
    assert any(not np.array_equal(samples[0], s) for s in samples[1:])
    assert all(s.min() >= 0 and s.max() < 20 for s in samples)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_duplicated_training_set_same_tree(seed):
    X, y = blobs(seed, n=40, dim=6)
    n = len(y)
    a = fit_tree(X, y, np.arange(n), np.random.default_rng(seed), mtry=2)
    b = fit_tree(X, y, np.tile(np.arange(n), 2), np.random.default_rng(seed), mtry=2)
    assert a.split_thresholds() == b.split_thresholds()
    probe = blobs(seed + 1, n=30, dim=6)[0]
    np.testing.assert_array_equal(a.predict(probe), b.predict(probe))


def test_accuracy_monotone_in_depth():
    X, y = blobs(5, n=150, spread=3.0)
    acc = [(Forest.fit(X, y, ForestConfig(num_trees=15, max_depth=d, seed=2)).predict(X) == y).mean()
           for d in (0, 1, 2, 4, 8, None)]
    assert all(b >= a for a, b in zip(acc, acc[1:]))
    assert acc[-1] > acc[0]


def test_forest_errors():
    X, y = blobs(0, n=30)
    with pytest.raises(InputError):
        Forest.fit(X, np.zeros(30, dtype=int))
    with pytest.raises(InputError):
        fit_forest([])
    with pytest.raises(InputError):
        fit_forest([FusedVector(np.zeros(3), "a")])
    forest = Forest.fit(X, y, ForestConfig(num_trees=2))
    with pytest.raises(InputError):
        forest.predict(np.zeros((2, 41)))
    with pytest.raises(InputError):
        ForestConfig(num_trees=0)
    with pytest.raises(InputError):
        ForestConfig(features_per_split="log2")


def test_forest_serialisation(tmp_path):
    X, y = blobs(7, n=90)
    forest = Forest.fit(X, y, ForestConfig(num_trees=7, seed=9))
    forest.save(tmp_path / "forest.json")
    back = Forest.load(tmp_path / "forest.json")
    assert back.to_dict() == forest.to_dict()
    np.testing.assert_array_equal(back.votes(X), forest.votes(X))
    node = json.loads((tmp_path / "forest.json").read_text())["trees"][0]["nodes"][0]
    assert set(node) == {"feature", "threshold", "left", "right", "counts"}
    (tmp_path / "bad.json").write_text("{\"trees\": []}")
    with pytest.raises(LoadError):
        Forest.load(tmp_path / "bad.json")


# -- compiled kernels ---------------------------------------------------------------

@pytest.mark.skipif(_fast is None, reason="compiled kernels not built")
@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 60), st.integers(1, 4))
def test_backends_agree_on_best_split(seed, n, leaf):
    rng = np.random.default_rng(seed)
    X = np.round(rng.standard_normal((n, 5)), 1)  # rounding forces ties between values
    y = rng.integers(0, 3, n).astype(np.intp)
    idx = rng.integers(0, n, n).astype(np.intp)
    feats = rng.permutation(5)[:3].astype(np.intp)
    assert _fast.best_split(X, y, idx, feats, leaf) == _slow.best_split(X, y, idx, feats, leaf)


@pytest.mark.skipif(_fast is None, reason="compiled kernels not built")
def test_backends_grow_identical_forests(monkeypatch):
    X, y = blobs(11, n=120)
    fast = Forest.fit(X, y, ForestConfig(num_trees=5, seed=1))
    monkeypatch.setattr(_kernels, "best_split", _slow.best_split)
    monkeypatch.setattr(_kernels, "apply_tree", _slow.apply_tree)
    slow = Forest.fit(X, y, ForestConfig(num_trees=5, seed=1))
    assert slow.to_dict() == fast.to_dict()
    t = fast.trees[0]
    np.testing.assert_array_equal(_fast.apply_tree(t.feature, t.threshold, t.left, t.right, X),
                                  _slow.apply_tree(t.feature, t.threshold, t.left, t.right, X))


# -- fused features ---------------------------------------------------------------

@pytest.mark.parametrize("preset, dim", [("switchboard", 192), ("iemocap", 160)])
def test_preset_fused_dims(preset, dim, rng):
    acoustic = build_acoustic(getattr(AcousticModelSpec, preset)(), (300, 60, 1))
    text = build_text(TextModelSpec(), (8, 300))
    out = fused_matrix(acoustic, text, rng.standard_normal((2, 300, 60)), rng.standard_normal((2, 8, 300)), preset)
    assert out.shape == (2, dim)


def test_fused_dim_mismatch_is_consistency_error(rng):
    acoustic = build_acoustic(AcousticModelSpec.iemocap(), (300, 60, 1))
    text = build_text(TextModelSpec(), (8, 300))
    with pytest.raises(ConsistencyError):
        fused_matrix(acoustic, text, rng.standard_normal((1, 300, 60)), rng.standard_normal((1, 8, 300)),
                     "switchboard")


def test_extract_fused_order_and_determinism(rng):
    spec = AcousticModelSpec(blocks=(ConvBlockSpec(4, pool=(None, 2)),), dense_sizes=(8,))
    acoustic = build_acoustic(spec, (300, 60, 1), seed=1)
    text = build_text(TextModelSpec(lstm_units=16), (8, 300), seed=2)
    u = Utterance("x", "d", rng.uniform(-0.5, 0.5, 4000), 16000, ("w0001", "f002"), (), SentimentLabel.NEUTRAL)
    feats = Featurizers(embedding=EmbeddingConfig(max_tokens=8))
    a = extract_fused(acoustic, text, u, feats)
    b = extract_fused(acoustic, text, u, feats)
    assert a.values.shape == (24,)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.utterance_id == "x" and a.label is SentimentLabel.NEUTRAL
    direct = fused_matrix(acoustic, text, feats.acoustic(u)[None], feats.text(u)[None])[0]
    np.testing.assert_array_equal(a.values, direct)
    assert np.all(a.values[:8] >= 0.0)  # acoustic half is post-ReLU


def test_fused_file_round_trip(tmp_path):
    X, y = blobs(2, n=5, dim=7)
    vs = vectors(X.astype(np.float32).astype(np.float64), y)
    vs.append(FusedVector(np.ones(7), "unlabeled"))
    write_fused(tmp_path / "fold00_train", vs)
    back = read_fused(tmp_path / "fold00_train")
    assert [v.utterance_id for v in back] == [v.utterance_id for v in vs]
    assert [v.label for v in back] == [v.label for v in vs]
    for v, w in zip(vs, back):
        np.testing.assert_array_equal(v.values, w.values)
