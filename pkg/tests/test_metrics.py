import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plantvit.autograd import Tensor
from plantvit.data import ImageBatch
from plantvit.errors import DataError, MetricError
from plantvit.metrics import auc_ovr, binary_auc, confusion, evaluate, prf1, report, write_confusion_csv

from oracles import brute_force_auc


def test_confusion_hand_count():
    assert confusion([0, 0, 1], [0, 1, 1], 2).tolist() == [[1, 1], [0, 1]]


def test_confusion_perfect_is_diagonal():
    y = np.array([0, 1, 1, 2, 2, 2])
    assert np.array_equal(confusion(y, y, 3), np.diag([1, 2, 3]))


def test_trace_over_total_is_accuracy():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        y, p = rng.integers(0, 4, n), rng.integers(0, 4, n)
        cm = confusion(y, p, 4)
        assert cm.sum() == n and (cm >= 0).all()
        assert np.trace(cm) / cm.sum() == np.mean(y == p)


@pytest.mark.parametrize("y,p", [([0, 2], [0, 0]), ([0, 0], [0, -1]), ([0], [0, 1])])
def test_confusion_rejects_bad_input(y, p):
    with pytest.raises(DataError):
        confusion(y, p, 2)


def test_prf1_diagonal_all_ones():
    out = prf1(np.diag([3, 4, 5]))
    for k in ("precision", "recall", "f1"):
        assert np.all(out[k] == 1.0) and out["macro"][k] == 1.0 and out["weighted"][k] == 1.0


def test_prf1_hand_case():
    out = prf1(np.array([[1, 1], [0, 1]]))
    np.testing.assert_allclose(out["precision"], [1.0, 0.5], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out["recall"], [0.5, 1.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(out["f1"], [2 / 3, 2 / 3], rtol=0, atol=1e-15)
    assert out["macro"]["f1"] == pytest.approx(2 / 3, abs=1e-15)
    # supports (2, 1): weighted recall = (2 * 0.5 + 1 * 1.0) / 3
    assert out["weighted"]["recall"] == pytest.approx(2 / 3, abs=1e-15)
    assert out["weighted"]["precision"] == pytest.approx((2 * 1.0 + 0.5) / 3, abs=1e-15)


def test_prf1_zero_division_flagged():
    cm = np.array([[2, 0, 0], [1, 0, 0], [0, 0, 0]])
    out = prf1(cm)
    assert out["precision"][1] == 0.0 and out["recall"][2] == 0.0 and out["f1"][1] == 0.0
    assert out["flags"]["precision_undefined"] == [1, 2]
    assert out["flags"]["zero_support"] == [2]


def test_weighted_equals_macro_for_equal_support():
    rng = np.random.default_rng(1)
    for _ in range(50):
        cm = rng.integers(0, 10, size=(4, 4))
        cm[np.arange(4), np.arange(4)] += 20 - cm.sum(axis=1)  # each row sums to 20
        out = prf1(cm)
        for k in ("precision", "recall", "f1"):
            assert out["weighted"][k] == pytest.approx(out["macro"][k], abs=1e-12)


def test_macro_invariant_under_relabeling():
    rng = np.random.default_rng(2)
    cm = rng.integers(0, 9, size=(5, 5))
    perm = rng.permutation(5)
    a, b = prf1(cm), prf1(cm[np.ix_(perm, perm)])
    for k in ("precision", "recall", "f1"):
        np.testing.assert_allclose(a[k][perm], b[k], atol=1e-15)
        assert a["macro"][k] == pytest.approx(b["macro"][k], abs=1e-12)
        assert a["weighted"][k] == pytest.approx(b["weighted"][k], abs=1e-12)


def _rows(n, C, rng):
    p = rng.random((n, C))
    return p / p.sum(axis=1, keepdims=True)


def test_auc_perfect_separation():
    labels = np.array([0, 0, 1, 1])
    probs = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.1, 0.9]])
    out = auc_ovr(labels, probs)
    np.testing.assert_array_equal(out["auc"], [1.0, 1.0])
    assert out["macro"] == 1.0


def test_auc_identical_rows_is_half():
    labels = np.array([0, 1, 2, 0, 1, 2, 2])
    probs = np.tile([0.2, 0.3, 0.5], (7, 1))
    out = auc_ovr(labels, probs)
    assert np.all(out["auc"] == 0.5) and out["macro"] == 0.5 and out["weighted"] == 0.5


def test_auc_six_sample_hand_case():
    scores = np.array([0.9, 0.4, 0.4, 0.7, 0.2, 0.4])
    positive = np.array([1, 1, 0, 0, 0, 1], dtype=bool)
    # positives 0.9, 0.4, 0.4 vs negatives 0.4, 0.7, 0.2:
    # 0.9 wins 3; each 0.4 wins 1 (0.2), ties 1 (0.4), loses 1 -> 1.5 each
    assert binary_auc(scores, positive) == pytest.approx(6 / 9, abs=1e-15)
    assert brute_force_auc(scores, positive) == pytest.approx(6 / 9, abs=1e-15)


def test_auc_random_three_class_vs_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(6, 40))
        labels = rng.integers(0, 3, n)
        labels[:3] = [0, 1, 2]
        probs = np.round(_rows(n, 3, rng), 1)  # coarse rounding forces ties
        probs /= probs.sum(axis=1, keepdims=True)
        out = auc_ovr(labels, probs)
        for c in range(3):
            assert abs(out["auc"][c] - brute_force_auc(probs[:, c], labels == c)) <= 1e-9


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=50, deadline=None)
def test_auc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    scores = rng.random(25)
    positive = rng.random(25) < 0.4
    positive[:2] = [True, False]
    base = binary_auc(scores, positive)
    assert binary_auc(np.exp(3 * scores) - 7, positive) == pytest.approx(base, abs=1e-12)


def test_auc_absent_class_flagged_and_excluded():
    labels = np.array([0, 0, 1, 1, 1])
    probs = np.array([[0.6, 0.3, 0.1], [0.5, 0.4, 0.1], [0.2, 0.7, 0.1], [0.3, 0.6, 0.1], [0.1, 0.6, 0.3]])
    out = auc_ovr(labels, probs)
    assert np.isnan(out["auc"][2]) and out["flags"]["auc_undefined"] == [2]
    assert out["macro"] == pytest.approx(np.mean(out["auc"][:2]))


def test_auc_errors():
    with pytest.raises(MetricError):
        auc_ovr([1, 1, 1], np.tile([0.5, 0.5], (3, 1)))
    with pytest.raises(MetricError):
        auc_ovr([0, 1], np.array([[0.5, 0.6], [0.5, 0.5]]))
    with pytest.raises(DataError):
        auc_ovr([0, 1], np.array([[0.5, 0.5]]))


def test_report_schema_and_identity(tmp_path):
    rng = np.random.default_rng(4)
    labels = rng.integers(0, 3, 60)
    probs = _rows(60, 3, rng)
    rep, cm = report(labels, probs, ["x", "y", "z"])
    assert rep.accuracy == np.trace(cm) / cm.sum()
    d = json.loads(rep.to_json())
    assert set(d) >= {"accuracy", "per_class", "macro", "weighted"}
    assert [c["name"] for c in d["per_class"]] == ["x", "y", "z"]
    assert set(d["per_class"][0]) == {"name", "precision", "recall", "f1", "auc", "support"}
    assert set(d["macro"]) == {"precision", "recall", "f1", "auc"}
    assert sum(c["support"] for c in d["per_class"]) == 60
    assert "accuracy" in rep.table() and "macro" in rep.table()
    write_confusion_csv(cm, tmp_path / "cm.csv", ["x", "y", "z"])
    lines = (tmp_path / "cm.csv").read_text().splitlines()
    assert lines[0] == "true\\pred,x,y,z" and len(lines) == 4


def test_report_empty_raises():
    with pytest.raises(DataError):
        report(np.array([], dtype=int), np.zeros((0, 2)))


class _ConstantModel:
    """Stand-in model that always favours class 0."""

    training = False

    def __init__(self, C):
        self.C = C

    def train(self, mode=True):
        self.training = mode
        return self

    def eval(self):
        return self.train(False)

    def __call__(self, x):
        out = np.zeros((len(x), self.C), dtype=np.float32)
        out[:, 0] = 1.0
        return Tensor(out)


def test_evaluate_constant_model_accuracy_one_over_c():
    C = 4
    labels = np.repeat(np.arange(C), 5)
    stream = [ImageBatch(np.zeros((10, 3, 2, 2), np.float32), labels[i:i + 10], [str(j) for j in range(i, i + 10)])
              for i in (0, 10)]
    rep, cm = evaluate(_ConstantModel(C), stream)
    assert rep.accuracy == 1 / C
    assert cm[:, 0].tolist() == [5] * C
