import numpy as np
import pytest

from oracles import recount
from trkcnn.metrics import (
    UNDEFINED, ConfusionMatrix, confusion, f1, format_percent, metrics, read_report_csv, render_report,
    report_columns, report_csv,
)

# diagonal (70, 39, 76) over rows (75, 41, 83); off-diagonal placement is arbitrary
ENSEMBLE = np.array([[70, 3, 2], [1, 39, 1], [2, 5, 76]])


def test_confusion_examples():
    assert np.array_equal(confusion([0, 1, 2], [0, 1, 2]).counts, np.eye(3, dtype=int))
    cm = confusion([0], [2], n_classes=3)
    assert cm.counts[0, 2] == 1 and cm.total == 1
    assert ConfusionMatrix(ENSEMBLE).total == 199


def test_confusion_errors():
    with pytest.raises(ValueError, match="outside"):
        confusion([0, 3], [0, 1], n_classes=3)
    with pytest.raises(ValueError, match="length"):
        confusion([0, 1], [0])
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]))


def test_f1_from_published_rates():
    assert abs(f1(85.37, 74.47) - 79.55) <= 0.01
    assert format_percent(f1(85.37, 74.47)) == "79.55"


def test_reconstructed_ensemble_row():
    r = metrics(ConfusionMatrix(ENSEMBLE), "ENSEMBLE")
    expected = {"Acc": 92.96, "Sp": 93.33, "Se^S": 95.12, "Se^G": 91.57}
    for key, value in expected.items():
        assert abs(r[key] - value) <= 0.01
        assert format_percent(r[key]) == f"{value:.2f}"


def test_all_correct_binary():
    r = metrics(ConfusionMatrix(np.array([[5, 0], [0, 7]])))
    assert r.binary
    assert all(r[k] == 100.0 for k in ("Acc", "Sp", "Se", "Pr", "F1"))


def test_undefined_cases():
    r = metrics(ConfusionMatrix(np.array([[4, 0, 0], [0, 0, 0], [1, 0, 3]])))
    assert r["Se^S"] is UNDEFINED and r["Pr^S"] is UNDEFINED and r["F1^S"] is UNDEFINED
    assert "-" in render_report([r])
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(np.zeros((3, 3))))


@pytest.mark.parametrize("seed", range(25))
def test_agrees_with_brute_force_recount(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 6))
    t = rng.integers(0, n, 80)
    p = np.where(rng.random(80) < 0.6, t, rng.integers(0, n, 80))
    r = metrics(confusion(t, p, n))
    names = report_columns(n)
    assert r["Acc"] == pytest.approx(100 * np.mean(t == p))
    for c in range(1, n):
        o = recount(t, p, c)
        suffix = names[2 + c - 1].split("^")[1]
        assert r["Sp"] == pytest.approx(100 * o["neg_right"] / o["neg_total"])
        se = 100 * o["tp"] / (o["tp"] + o["fn"]) if o["tp"] + o["fn"] else UNDEFINED
        pr = 100 * o["tp"] / (o["tp"] + o["fp"]) if o["tp"] + o["fp"] else UNDEFINED
        assert r["Se^" + suffix] == (se if se is UNDEFINED else pytest.approx(se))
        assert r["Pr^" + suffix] == (pr if pr is UNDEFINED else pytest.approx(pr))
        if se is not UNDEFINED and pr is not UNDEFINED and se + pr > 0:
            assert abs(r["F1^" + suffix] - 2 * se * pr / (se + pr)) < 1e-9
        for key in ("Se^", "Pr^", "F1^"):
            v = r[key + suffix]
            assert v is UNDEFINED or 0 <= v <= 100


def test_permutation_invariance_of_acc_but_not_sp():
    cm = ENSEMBLE
    perm = [2, 0, 1]
    permuted = cm[np.ix_(perm, perm)]
    a, b = metrics(ConfusionMatrix(cm)), metrics(ConfusionMatrix(permuted))
    assert a["Acc"] == b["Acc"]
    assert a["Sp"] != b["Sp"]


def test_collapse():
    cm = ConfusionMatrix(ENSEMBLE)
    assert cm.collapse(1).counts.tolist() == [[70, 5], [3, 121]]
    assert cm.collapse(2).counts.tolist() == [[113, 3], [7, 76]]


def test_half_up_rounding():
    assert format_percent(0.125) == "0.13"
    assert format_percent(12.345) == "12.35"
    assert format_percent(UNDEFINED) == "-"


def test_render_has_one_row_per_report_and_stable_columns():
    reports = [metrics(ConfusionMatrix(ENSEMBLE), "A"), metrics(ConfusionMatrix(ENSEMBLE).collapse(1), "B")]
    text = render_report(reports)
    lines = text.strip().splitlines()
    assert len(lines) == 4
    header = lines[0].split()
    assert header == ["Method", "Acc(%)", "Sp(%)", "Se^S(%)", "Se^G(%)", "Pr^S(%)", "Pr^G(%)", "F1^S(%)", "F1^G(%)"]
    binary_cells = lines[3].split()[1:]
    assert binary_cells[2] == binary_cells[3]


def test_csv_round_trip():
    reports = [metrics(ConfusionMatrix(ENSEMBLE), "A"),
               metrics(ConfusionMatrix(np.array([[4, 0, 0], [0, 0, 0], [1, 0, 3]])), "B"),
               metrics(ConfusionMatrix(ENSEMBLE).collapse(2), "C")]
    text = report_csv(reports)
    back = read_report_csv(text)
    assert report_csv(back) == text
    assert [r.label for r in back] == ["A", "B", "C"] and back[2].binary


def test_confusion_csv_round_trip():
    cm = ConfusionMatrix(ENSEMBLE)
    assert np.array_equal(ConfusionMatrix.from_csv(cm.to_csv()).counts, cm.counts)
