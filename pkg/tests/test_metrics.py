import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from vesselseg.exceptions import DegenerateClasses, DimensionMismatch, EmptyEvaluation
from vesselseg.metrics import ConfusionMatrix, confusion, evaluate, metrics, roc_auc

# (tp, fp, tn, fn) -> hand-computed (tpr, tnr, accuracy, f1, mcc)
FIXTURES = [
    ((30, 0, 70, 0), (1.0, 1.0, 1.0, 1.0, 1.0)),
    ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5, 0.0)),
    ((0, 30, 0, 70), (0.0, 0.0, 0.0, 0.0, -1.0)),
    ((6, 2, 10, 2), (0.75, 10 / 12, 0.8, 0.75, (60 - 4) / math.sqrt(8 * 8 * 12 * 12))),
    ((3, 1, 4, 2), (0.6, 0.8, 0.7, 6 / 9, 10 / math.sqrt(4 * 5 * 5 * 6))),
]


@pytest.mark.parametrize("counts,expected", FIXTURES)
def test_metric_fixtures(counts, expected):
    r = metrics(ConfusionMatrix(*counts))
    assert (r.tpr, r.tnr, r.accuracy, r.f1, r.mcc) == pytest.approx(expected, abs=1e-15)


def test_undefined_is_none_not_zero():
    r = metrics(ConfusionMatrix(0, 0, 10, 0))
    assert r.tpr is None and r.mcc is None and r.f1 is None
    assert r.tnr == 1.0 and r.accuracy == 1.0


def test_empty_evaluation():
    with pytest.raises(EmptyEvaluation):
        metrics(ConfusionMatrix(0, 0, 0, 0))


def test_confusion_examples():
    gt = np.zeros((10, 10), bool)
    gt.flat[:30] = True
    assert confusion(gt, gt) == ConfusionMatrix(30, 0, 70, 0)
    cm = confusion(~gt, gt)
    assert cm.tp == 0 and cm.tn == 0
    pred = np.array([[1, 1, 0, 0]], bool)
    truth = np.array([[1, 0, 1, 0]], bool)
    assert confusion(pred, truth) == ConfusionMatrix(1, 1, 1, 1)


def test_mcc_symmetric_under_joint_flip(rng):
    for _ in range(10):
        gt = rng.random((12, 12)) < 0.3
        pred = gt ^ (rng.random((12, 12)) < 0.2)
        a = metrics(confusion(pred, gt))
        b = metrics(confusion(~pred, ~gt))
        assert a.accuracy == b.accuracy
        assert a.mcc == pytest.approx(b.mcc, abs=1e-15)


def test_confusion_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        confusion(np.zeros((3, 3), bool), np.zeros((3, 4), bool))
    with pytest.raises(DimensionMismatch):
        confusion(np.zeros((3, 3), bool), np.zeros((3, 3), bool), np.ones((2, 3), bool))


def test_fov_exterior_is_ignored(rng):
    gt = rng.random((20, 20)) < 0.3
    pred = rng.random((20, 20)) < 0.3
    fov = np.zeros((20, 20), bool)
    fov[3:17, 2:15] = True
    scores = rng.random((20, 20))
    base = evaluate(pred, gt, fov, scores)
    for _ in range(5):
        noise = rng.random((20, 20)) < 0.5
        p2 = np.where(fov, pred, noise)
        g2 = np.where(fov, gt, ~noise)
        s2 = np.where(fov, scores, rng.random((20, 20)))
        assert confusion(p2, g2, fov) == confusion(pred, gt, fov)
        other = evaluate(p2, g2, fov, s2)
        assert other.auc == base.auc and other.roc == base.roc
    assert confusion(pred, gt, fov).total == fov.sum()


def test_auc_spec_examples():
    gt = np.array([True, True, False, False])
    assert roc_auc(np.array([0.9, 0.9, 0.1, 0.1]), gt)[0] == 1.0
    assert roc_auc(np.full(4, 0.3), gt)[0] == 0.5
    scores = np.array([0.9, 0.8, 0.8, 0.4, 0.3, 0.1])
    labels = np.array([1, 1, 0, 1, 0, 0], bool)
    assert roc_auc(scores, labels)[0] == oracles.pair_auc(scores, labels) == 7.5 / 9


def test_auc_matches_pair_oracle(rng):
    for n in (2, 3, 10, 57, 400, 2000):
        for levels in (3, 20, None):
            scores = rng.random(n) if levels is None else rng.integers(0, levels, n) / levels
            labels = rng.random(n) < rng.uniform(0.1, 0.9)
            labels[0], labels[-1] = True, False
            assert roc_auc(scores, labels)[0] == oracles.pair_auc(scores.tolist(), labels.tolist())


@settings(max_examples=50, deadline=None)
@given(data=st.data())
def test_auc_invariant_under_increasing_transform(data):
    n = data.draw(st.integers(2, 200))
    seed = data.draw(st.integers(0, 2**31))
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, data.draw(st.integers(1, 50)), n).astype(float)
    labels = rng.random(n) < 0.5
    labels[0], labels[1] = True, False
    transform = data.draw(st.sampled_from([
        lambda s: np.exp(s / 7.0),
        lambda s: s**3 + 2 * s,
        lambda s: np.log1p(s) - 100.0,
        lambda s: 1.0 / (1.0 + np.exp(-(s - 10) / 3.0)),
    ]))
    assert roc_auc(transform(scores), labels)[0] == roc_auc(scores, labels)[0]


def test_roc_staircase(rng):
    for _ in range(20):
        n = int(rng.integers(2, 300))
        scores = rng.integers(0, int(rng.integers(1, 30)), n).astype(float)
        labels = rng.random(n) < 0.4
        labels[0], labels[1] = True, False
        _, roc = roc_auc(scores, labels)
        assert roc[0] == (0.0, 0.0) and roc[-1] == (1.0, 1.0)
        assert len(roc) == len(np.unique(scores)) + 1
        f = np.array([p[0] for p in roc])
        t = np.array([p[1] for p in roc])
        assert np.all(np.diff(f) >= 0) and np.all(np.diff(t) >= 0)
        # trapezoid area under the staircase is the tie-aware AUC
        area = float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2))
        assert area == pytest.approx(roc_auc(scores, labels)[0], abs=1e-12)


def test_degenerate_classes():
    with pytest.raises(DegenerateClasses):
        roc_auc(np.zeros(5), np.ones(5, bool))
    gt = np.zeros((4, 4), bool)
    gt[0, 0] = True
    fov = np.ones((4, 4), bool)
    fov[0, 0] = False
    with pytest.raises(DegenerateClasses):
        roc_auc(np.zeros((4, 4)), gt, fov)


def test_evaluate_without_scores():
    gt = np.eye(5, dtype=bool)
    r = evaluate(gt, gt)
    assert r.auc is None and r.roc == [] and r.mcc == 1.0
