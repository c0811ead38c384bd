import json

import numpy as np
import pytest

from cmpc.metrics import THRESHOLDS, evaluate, iou, overall_iou, prec_at

import oracles


def masks_with(iu):
    """Build a (pred, gt) pair with the given intersection/union counts."""
    i, u = iu
    pred, gt = np.zeros(u, bool), np.zeros(u, bool)
    pred[:i] = gt[:i] = True
    gt[i:] = True
    return pred, gt


def test_iou_cases():
    m = np.array([[1, 0], [1, 1]])
    assert iou(m, m) == 1.0
    assert iou(np.array([1, 0]), np.array([0, 1])) == 0.0
    assert iou(np.array([1, 1, 0]), np.array([0, 1, 1])) == pytest.approx(1 / 3, abs=1e-15)
    assert iou(np.zeros(4), np.zeros(4)) == 1.0
    with pytest.raises(ValueError):
        iou(np.zeros(3), np.zeros(4))


def test_overall_iou_is_ratio_of_sums():
    a, b = masks_with((1, 2)), masks_with((3, 4))
    assert overall_iou([a]) == iou(*a)
    got = overall_iou([a, b])
    assert got == 4 / 6
    assert got != pytest.approx(0.625)
    with pytest.raises(ValueError):
        overall_iou([])


def test_overall_iou_matches_pixel_count_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pairs = [(rng.random((6, 7)) < 0.4, rng.random((6, 7)) < 0.3) for _ in range(3)]
        assert overall_iou(pairs) == oracles.overall_iou(pairs)


def test_prec_cases():
    m = [np.ones((2, 2))] * 3
    assert all(prec_at(list(zip(m, m)), X) == 1.0 for X in THRESHOLDS)
    empty = [(np.zeros((2, 2)), np.ones((2, 2)))] * 3
    assert all(prec_at(empty, X) == 0.0 for X in THRESHOLDS)
    assert prec_at(ious=[0.55, 0.65, 0.95], X=0.6) == pytest.approx(2 / 3)
    assert prec_at(ious=[0.5], X=0.5) == 0.0   # strictly greater
    with pytest.raises(ValueError):
        prec_at(ious=[0.5], X=1.0)


def test_report_schema_and_monotone_prec():
    rng = np.random.default_rng(1)
    preds = rng.random((30, 8, 8)) < 0.5
    gts = rng.random((30, 8, 8)) < 0.5
    rep = evaluate(preds, gts)
    d = json.loads(rep.to_json(config_hash="abc", seed=0))
    assert set(d["prec"]) == {"0.5", "0.6", "0.7", "0.8", "0.9"}
    assert d["config_hash"] == "abc" and d["n"] == 30
    vals = [rep.prec[x] for x in THRESHOLDS]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    table = rep.table()
    assert "Overall IoU" in table and "Prec@0.9" in table
