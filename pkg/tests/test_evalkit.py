import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofbench import evalkit as ek
from conftest import brute_eer, pair_auc

FOUR_S = [0.9, 0.1, 0.8, 0.2]
FOUR_Y = [1, 0, 0, 1]


def score_sets(max_n=12):
    """Score/label lists with both classes present; scores on a coarse grid so ties occur."""

    @st.composite
    def build(draw):
        n = draw(st.integers(2, max_n))
        labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)))
        scores = draw(st.lists(st.integers(-5, 5).map(lambda v: v / 4.0), min_size=n, max_size=n))
        return scores, labels

    return build()


# ---------------------------------------------------------------------------
# confusion and hard metrics


def test_confusion_perfect_split():
    assert tuple(ek.confusion([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0], 0.5)) == (2, 0, 2, 0)


def test_confusion_minus_infinity_predicts_everything_fake():
    y = [1, 0, 0, 1, 1]
    assert tuple(ek.confusion([0.3, 0.1, 0.9, 0.2, 0.5], y, -math.inf)) == (3, 2, 0, 0)


def test_confusion_hand_enumerated():
    # 0.9/1 TP, 0.1/0 TN, 0.8/0 FP, 0.2/1 FN
    assert tuple(ek.confusion(FOUR_S, FOUR_Y, 0.5)) == (1, 1, 1, 1)


def test_threshold_tie_goes_to_fake():
    assert tuple(ek.confusion([0.5], [0], 0.5)) == (0, 1, 0, 0)


def test_basic_metrics_arithmetic():
    acc, prec, rec, f1 = ek.basic_metrics((2, 1, 2, 0))
    assert acc == pytest.approx(0.8)
    assert prec == pytest.approx(2 / 3)
    assert rec == 1.0
    assert f1 == pytest.approx(0.8)


def test_basic_metrics_all_negative_predictor_is_zero_not_nan():
    assert ek.basic_metrics((0, 0, 10, 0)) == (1.0, 0.0, 0.0, 0.0)
    assert ek.basic_metrics((0, 0, 5, 5))[1:] == (0.0, 0.0, 0.0)


@given(st.tuples(*[st.integers(0, 50)] * 4).filter(lambda c: sum(c) > 0))
def test_basic_metrics_match_direct_formulas(c):
    tp, fp, tn, fn = c
    acc, prec, rec, f1 = ek.basic_metrics(c)
    assert acc == pytest.approx((tp + tn) / sum(c))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    assert prec == pytest.approx(p) and rec == pytest.approx(r)
    assert f1 == pytest.approx(2 * p * r / (p + r) if p + r else 0.0)
    assert f1 <= min(2 * prec, 2 * rec) + 1e-12
    assert min(prec, rec) - 1e-12 <= f1 <= max(prec, rec) + 1e-12


@given(score_sets(), st.floats(-2, 2))
def test_confusion_totals(ss, t):
    assert ek.confusion(*ss, t).n == len(ss[0])


# ---------------------------------------------------------------------------
# ROC / AUC / EER / DET


def test_roc_sentinels_and_monotone():
    c = ek.roc_curve(FOUR_S, FOUR_Y)
    assert (c.thresholds[0], c.fpr[0], c.tpr[0]) == (math.inf, 0.0, 0.0)
    assert (c.thresholds[-1], c.fpr[-1], c.tpr[-1]) == (-math.inf, 1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_perfect_separation_passes_through_top_left():
    c = ek.roc_curve([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
    assert any(f == 0 and t == 1 for f, t in zip(c.fpr, c.tpr))
    assert ek.auc(c) == 1.0
    assert ek.eer([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])[0] == 0.0
    assert any((p == [0.0, 0.0]).all() for p in ek.det_points([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]))


def test_constant_scorer_is_uninformative():
    s, y = [0.3] * 6, [1, 0, 1, 0, 0, 1]
    c = ek.roc_curve(s, y)
    assert len(c) == 3 and (c.fpr[1], c.tpr[1]) == (1.0, 1.0)
    assert ek.auc(c) == 0.5
    assert ek.eer(s, y)[0] == 0.5
    det = ek.det_points(s, y)
    assert np.allclose(det.sum(axis=1), 1.0)


def test_four_point_fixture():
    assert ek.roc_auc(FOUR_S, FOUR_Y) == pytest.approx(0.75, abs=1e-12)
    assert ek.eer(FOUR_S, FOUR_Y)[0] == pytest.approx(0.5, abs=1e-12)
    assert float(pair_auc(FOUR_S, FOUR_Y)) == 0.75
    assert float(brute_eer(FOUR_S, FOUR_Y)) == 0.5


def test_diagonal_curve_area():
    assert ek.auc(ek.RocCurve(np.array([np.inf, -np.inf]), np.array([0.0, 1.0]), np.array([0.0, 1.0]))) == 0.5


def test_inverted_perfect_scorer_eer_is_one():
    s, y = [0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]
    assert ek.eer(s, y)[0] == 1.0
    assert ek.roc_auc(s, y) == 0.0


@pytest.mark.parametrize("fn", [ek.roc_curve, ek.eer, ek.det_points, ek.roc_auc])
def test_single_class_rejected(fn):
    with pytest.raises(ek.DegenerateScoresError):
        fn([0.1, 0.2], [1, 1])


@settings(max_examples=300, deadline=None)
@given(score_sets())
def test_auc_equals_pair_concordance(ss):
    assert ek.roc_auc(*ss) == pytest.approx(float(pair_auc(*ss)), abs=1e-9)


@settings(max_examples=300, deadline=None)
@given(score_sets())
def test_eer_equals_threshold_sweep(ss):
    assert ek.eer(*ss)[0] == pytest.approx(float(brute_eer(*ss)), abs=1e-9)


@settings(deadline=None)
@given(score_sets(), st.sampled_from(["exp", "affine", "cube"]))
def test_monotone_transform_invariance(ss, kind):
    s, y = ss
    f = {"exp": np.exp, "affine": lambda v: 3.0 * v - 7.0, "cube": lambda v: v**3 + v}[kind]
    t = f(np.asarray(s))
    assert ek.roc_auc(t, y) == pytest.approx(ek.roc_auc(s, y), abs=1e-12)
    assert ek.eer(t, y)[0] == pytest.approx(ek.eer(s, y)[0], abs=1e-12)
    a, b = ek.roc_curve(s, y), ek.roc_curve(t, y)
    assert np.array_equal(a.fpr, b.fpr) and np.array_equal(a.tpr, b.tpr)


@settings(deadline=None)
@given(score_sets())
def test_reversal_symmetry(ss):
    s, y = np.asarray(ss[0]), np.asarray(ss[1])
    assert ek.roc_auc(s, y) + ek.roc_auc(-s, y) == pytest.approx(1.0, abs=1e-9)
    assert ek.eer(-s, 1 - y)[0] == pytest.approx(ek.eer(s, y)[0], abs=1e-9)


@settings(deadline=None)
@given(score_sets())
def test_eer_lies_on_det_curve(ss):
    rate, _ = ek.eer(*ss)
    det = ek.det_points(*ss)
    d = det[:, 0] - det[:, 1]
    hits = det[d == 0, 0]
    if hits.size:
        assert rate == pytest.approx(hits[0], abs=1e-9)
        return
    j = int(np.argmax(d > 0))
    i = j - 1
    # FPR = FNR on the segment between DET points i and j
    a = -d[i] / (d[j] - d[i])
    fpr = det[i, 0] + a * (det[j, 0] - det[i, 0])
    fnr = det[i, 1] + a * (det[j, 1] - det[i, 1])
    assert fpr == pytest.approx(fnr, abs=1e-9)
    assert rate == pytest.approx(fpr, abs=1e-9)


# ---------------------------------------------------------------------------
# reports and files


def test_oracle_scorer_report_is_perfect():
    y = np.array([0, 1] * 10)
    r = ek.evaluate(ek.ScoreSet(y.astype(float), y))
    assert (r.accuracy, r.precision, r.recall, r.f1, r.eer, r.auc) == (1.0, 1.0, 1.0, 1.0, 0.0, 1.0)
    assert r.threshold_used == 0.5


def test_report_threshold_policies():
    r = ek.report_from_scores(FOUR_S, FOUR_Y, policy="eer")
    assert r.threshold_used == pytest.approx(ek.eer(FOUR_S, FOUR_Y)[1])
    m = ek.report_from_scores(FOUR_S, FOUR_Y, policy=ek.ThresholdPolicy.MEDIAN)
    assert m.threshold_used == pytest.approx(0.5)


def test_constant_scores_with_median_threshold_give_single_class_confusion():
    r = ek.report_from_scores([0.2] * 6, [0, 1, 0, 1, 0, 1], policy="median")
    assert r.accuracy == 0.5
    c = r.confusion
    assert (c.tp + c.fp == 6) or (c.tn + c.fn == 6)


def test_scoreset_validation():
    with pytest.raises(ValueError):
        ek.ScoreSet(np.array([0.1, np.nan]), np.array([0, 1]))
    with pytest.raises(ValueError):
        ek.ScoreSet(np.array([0.1]), np.array([0, 1]))
    with pytest.raises(ValueError):
        ek.ScoreSet(np.array([0.1]), np.array([2]))
    with pytest.raises(ValueError):
        ek.ScoreSet(np.zeros(0), np.zeros(0))


def test_score_file_roundtrip_sorted(tmp_path):
    ss = ek.ScoreSet(np.array([0.25, 0.5, 1e-17]), np.array([1, 0, 1]), ("c", "a", "b"))
    p = tmp_path / "s.tsv"
    ek.write_score_file(p, ss)
    lines = p.read_text().splitlines()
    assert [l.split("\t")[0] for l in lines] == ["a", "b", "c"]
    back = ek.read_score_file(p)
    assert back.clip_ids == ("a", "b", "c")
    assert back.scores.tolist() == [0.5, 1e-17, 0.25]
    assert back.labels.tolist() == [0, 1, 1]


def test_score_file_rejects_malformed(tmp_path):
    p = tmp_path / "s.tsv"
    p.write_text("a\t1\t0.5\nb\tfake\t0.2\n")
    with pytest.raises(ValueError, match="line 2"):
        ek.read_score_file(p)


def test_write_report_files(tmp_path):
    r = ek.report_from_scores(FOUR_S, FOUR_Y, metadata={"model": "x"})
    ek.write_report(tmp_path, r)
    d = json.loads((tmp_path / "report.json").read_text())
    assert d["auc"] == pytest.approx(0.75) and d["metadata"] == {"model": "x"}
    roc = (tmp_path / "roc.csv").read_text().splitlines()
    assert roc[0] == "threshold,fpr,tpr" and len(roc) == 1 + len(r.roc)
    assert (tmp_path / "det.csv").read_text().splitlines()[0] == "fpr,fnr"
    conf = (tmp_path / "confusion.csv").read_text().splitlines()
    assert conf[1] == "real,1,1" and conf[2] == "fake,1,1"


def test_table_uses_percent_with_two_decimals():
    r = ek.report_from_scores(FOUR_S, FOUR_Y)
    table = ek.format_table([("m", r)])
    header, _, row = table.splitlines()
    assert [h.strip() for h in header.split("|")] == ["Model", "Acc", "Prec", "Rec", "F1", "EER", "AUC"]
    assert [c.strip() for c in row.split("|")] == ["m", "50.00", "50.00", "50.00", "50.00", "50.00", "75.00"]
