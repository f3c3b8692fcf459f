import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

import oracles
from conftest import separable
from vesselseg import forest
from vesselseg.exceptions import (
    BadVectorLength,
    CorruptModel,
    EmptyEvalSet,
    EmptyTrainingSet,
    ValidationError,
)
from vesselseg.forest import LEAF, RandomForest, Tree, dumps, load_model, loads, save_model


def leaf(vessel, non):
    return Tree(np.array([LEAF]), np.array([0.0]), np.array([-1]), np.array([-1]),
                np.array([vessel]), np.array([non]))


def stump(feature, threshold, left, right):
    return Tree(
        np.array([feature, LEAF, LEAF]), np.array([threshold, 0.0, 0.0]),
        np.array([1, -1, -1]), np.array([2, -1, -1]),
        np.array([left[0] + right[0], left[0], right[0]]),
        np.array([left[1] + right[1], left[1], right[1]]),
    )


def hand_model(trees, width=37):
    m = RandomForest(n_trees=len(trees))
    m.trees_ = list(trees)
    m.n_features_in_ = width
    m.classes_ = np.array([0, 1])
    m._flatten()
    return m


@pytest.fixture(scope="module")
def fitted():
    X, y = separable()
    return RandomForest(n_trees=10, random_state=3).fit(X, y), X, y


def test_separable_training_accuracy(fitted):
    model, X, y = fitted
    assert np.array_equal(model.predict(X).astype(bool), y)


def test_depth_one_separates():
    X, y = separable()
    model = RandomForest(n_trees=10, max_depth=1, mtry=37).fit(X, y)
    assert np.array_equal(model.predict(X).astype(bool), y)
    assert all(t.max_depth() <= 1 for t in model.trees_)


def test_all_vessel_training():
    X = np.random.default_rng(0).normal(size=(30, 37))
    model = RandomForest(n_trees=5).fit(X, np.ones(30, bool))
    assert all(t.node_count == 1 for t in model.trees_)
    assert np.all(model.vessel_proba(np.random.default_rng(1).normal(size=(20, 37))) == 1.0)


def test_single_leaf_fraction():
    model = hand_model([leaf(3, 1)])
    assert model.vessel_proba(np.zeros(37))[0] == 0.75
    assert np.allclose(model.predict_proba(np.zeros((2, 37))), [[0.25, 0.75]] * 2)


def test_predict_threshold_rules():
    assert hand_model([leaf(3, 1)]).predict(np.zeros(37))[0] == 1
    assert hand_model([leaf(1, 1)]).predict(np.zeros(37), threshold=0.5)[0] == 0
    assert hand_model([leaf(1, 4)]).predict(np.zeros(37), threshold=0.1)[0] == 1


def test_bad_vector_length(fitted):
    model, _, _ = fitted
    with pytest.raises(BadVectorLength):
        model.vessel_proba(np.zeros(36))
    with pytest.raises(BadVectorLength):
        model.predict(np.zeros((3, 38)))


def test_empty_training_set():
    with pytest.raises(EmptyTrainingSet):
        RandomForest().fit(np.zeros((0, 37)), np.zeros(0))


def test_param_validation():
    with pytest.raises(ValidationError):
        RandomForest(n_trees=0).fit(*separable(20))
    with pytest.raises(ValidationError):
        RandomForest(max_depth=0).fit(*separable(20))


def test_traversal_oracle(fitted, rng):
    model, _, _ = fitted
    V = rng.normal(size=(200, 37)) * 2
    got = model.vessel_proba(V)
    for i in range(200):
        ref = np.mean([oracles.tree_proba(t, V[i]) for t in model.trees_])
        assert got[i] == pytest.approx(ref, abs=1e-15)


def test_tree_values_are_leaf_fractions(fitted, rng):
    model, _, _ = fitted
    V = rng.normal(size=(50, 37))
    tv = model.tree_values(V)
    for k, t in enumerate(model.trees_):
        assert np.allclose(tv[:, k], [oracles.tree_proba(t, v) for v in V])


def gini(pos, n):
    return 0.0 if n == 0 else 1.0 - (pos / n) ** 2 - ((n - pos) / n) ** 2


def subtree_counts(t, i):
    if t.feature[i] == LEAF:
        return int(t.vessel[i]), int(t.vessel[i] + t.non_vessel[i])
    a = subtree_counts(t, t.left[i])
    b = subtree_counts(t, t.right[i])
    return a[0] + b[0], a[1] + b[1]


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 120), width=st.integers(1, 8),
       mtry=st.integers(1, 8), min_leaf=st.integers(1, 4))
def test_splits_never_increase_impurity(seed, n, width, mtry, min_leaf):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 5, (n, width)).astype(float)
    y = rng.random(n) < 0.4
    model = RandomForest(n_trees=3, mtry=mtry, min_samples_leaf=min_leaf, random_state=seed).fit(X, y)
    for t in model.trees_:
        assert subtree_counts(t, 0)[1] == n  # bootstrap keeps n draws
        for i in range(t.node_count):
            if t.feature[i] == LEAF:
                continue
            pos, total = subtree_counts(t, i)
            pl, nl = subtree_counts(t, t.left[i])
            pr, nr = subtree_counts(t, t.right[i])
            assert nl >= min_leaf and nr >= min_leaf
            after = (nl * gini(pl, nl) + nr * gini(pr, nr)) / total
            assert after <= gini(pos, total) + 1e-12
    p = model.vessel_proba(X)
    assert np.all((p >= 0) & (p <= 1))


def test_max_depth_respected():
    X, y = separable(200, seed=5)
    y = y ^ (np.random.default_rng(0).random(200) < 0.2)
    model = RandomForest(n_trees=4, max_depth=3).fit(X, y)
    assert max(t.max_depth() for t in model.trees_) <= 3


def test_adding_pure_vessel_tree_never_lowers_probability(fitted, rng):
    model, _, _ = fitted
    bigger = hand_model(model.trees_ + [leaf(5, 0)])
    V = rng.normal(size=(300, 37))
    assert np.all(bigger.vessel_proba(V) >= model.vessel_proba(V) - 1e-15)


def test_deterministic_serialisation():
    X, y = separable()
    a = dumps(RandomForest(n_trees=10, random_state=11).fit(X, y))
    b = dumps(RandomForest(n_trees=10, random_state=11).fit(X, y))
    c = dumps(RandomForest(n_trees=10, random_state=12).fit(X, y))
    assert a == b and a != c


def test_parallel_fit_matches_serial():
    X, y = separable()
    a = dumps(RandomForest(n_trees=6, random_state=2).fit(X, y))
    b = dumps(RandomForest(n_trees=6, random_state=2, n_jobs=2).fit(X, y))
    assert a == b


def test_round_trip(tmp_path, fitted, rng):
    model, _, _ = fitted
    path = tmp_path / "m.elrf"
    save_model(model, path)
    loaded = load_model(path)
    V = rng.normal(size=(1000, 37)) * 3
    assert np.array_equal(loaded.predict_proba(V), model.predict_proba(V))
    assert dumps(loaded) == dumps(model)


def test_corrupt_models(tmp_path, fitted):
    model, _, _ = fitted
    data = dumps(model)
    with pytest.raises(CorruptModel):
        loads(b"")
    with pytest.raises(CorruptModel):
        loads(b"XXXX" + data[4:])
    future = data[:4] + (99).to_bytes(4, "little") + data[8:]
    with pytest.raises(CorruptModel):
        loads(future)
    with pytest.raises(CorruptModel):
        loads(data[:-3])
    with pytest.raises(CorruptModel):
        loads(data + b"\0")
    (tmp_path / "empty").write_bytes(b"")
    with pytest.raises(CorruptModel):
        load_model(tmp_path / "empty")


def test_dangling_node_rejected():
    data = bytearray(dumps(hand_model([stump(0, 0.0, (1, 0), (0, 1))])))
    # header 32 bytes, node count 4, then tag, feature, threshold, left, right
    right_at = 32 + 4 + 1 + 4 + 8 + 4
    assert int.from_bytes(data[right_at : right_at + 4], "little") == 2
    data[right_at : right_at + 4] = (7).to_bytes(4, "little")
    with pytest.raises(CorruptModel):
        loads(bytes(data))
    data[right_at : right_at + 4] = (1).to_bytes(4, "little")
    with pytest.raises(CorruptModel):
        loads(bytes(data))


def test_only_37_feature_models_serialise():
    X, y = separable(50, width=5)
    with pytest.raises(ValidationError):
        dumps(RandomForest(n_trees=2).fit(X, y))


def test_permutation_importance_cases(fitted):
    model, X, y = fitted
    Xc = X.copy()
    Xc[:, 20:25] = 3.0
    ranking = dict(forest.permutation_importance(
        model, Xc, y, {"signal": [0, 1], "const": list(range(20, 25))}, random_state=0))
    assert ranking["const"] == 0.0
    assert ranking["signal"] > 0.3
    unused = [i for i in range(37) if i not in set(np.concatenate([t.feature for t in model.trees_]))]
    assert len(unused) >= 2
    ranking = dict(forest.permutation_importance(model, X, y, {"a": unused[:1], "b": unused[1:2]}))
    assert ranking == {"a": 0.0, "b": 0.0}
    with pytest.raises(EmptyEvalSet):
        forest.permutation_importance(model, np.zeros((0, 37)), np.zeros(0))


def test_sklearn_estimator_protocol():
    m = RandomForest(n_trees=7, mtry=3)
    assert m.get_params()["n_trees"] == 7
    c = clone(m)
    assert c.get_params() == m.get_params()
    X, y = separable(80)
    c.fit(X, y)
    assert list(c.classes_) == [0, 1]
    assert c.score(X, y) == 1.0
