import itertools
import json
from collections import namedtuple

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from shapely.geometry import box

from rainbow_vectors import evaluation as ev
from rainbow_vectors.errors import ConfigError

Item = namedtuple("Item", "id cls footprint")


def sq(i, x, y, s=10.0, cls="moving_car"):
    return Item(i, cls, box(x, y, x + s, y + s))


def brute_max_pairs(pred, gt, thresh):
    """Largest one-to-one matching by exhaustive search (small inputs only)."""
    edges = {(p.id, g.id) for p in pred for g in gt
             if p.cls == g.cls and ev.iou(p.footprint, g.footprint) >= thresh}
    best = 0
    pids = [p.id for p in pred]
    gids = [g.id for g in gt]
    for k in range(min(len(pids), len(gids)), 0, -1):
        for ps in itertools.combinations(pids, k):
            for gs in itertools.permutations(gids, k):
                if all((a, b) in edges for a, b in zip(ps, gs)):
                    return k
    return best


def test_iou_examples():
    a = box(0, 0, 10, 10)
    assert ev.iou(a, a) == 1.0
    assert ev.iou(a, box(20, 20, 30, 30)) == 0.0
    assert ev.iou(a, box(5, 0, 15, 10)) == pytest.approx(1 / 3)
    assert ev.iou(a, box(0, 0, 0, 10)) == 0.0


def test_iou_symmetric():
    a, b = box(0, 0, 7, 3), box(2, 1, 9, 8)
    assert ev.iou(a, b) == ev.iou(b, a)


def test_greedy_takes_best_iou_first():
    # pred 0 overlaps both truths; truth 1 matches it best
    pred = [Item(0, "moving_car", box(4, 0, 14, 10))]
    gt = [sq(0, 0, 0), sq(1, 3, 0)]
    pairs = ev.match_detections(pred, gt)
    assert [(p.pred_id, p.gt_id) for p in pairs] == [(0, 1)]


def test_ties_break_on_ids():
    pred = [sq(5, 0, 0), sq(2, 0, 0)]
    gt = [sq(9, 0, 0)]
    assert [(p.pred_id, p.gt_id) for p in ev.match_detections(pred, gt)] == [(2, 9)]


def test_no_cross_class_matches():
    pred = [sq(0, 0, 0, cls="moving_truck")]
    gt = [sq(0, 0, 0, cls="moving_car")]
    rep = ev.evaluate(pred, gt)
    assert rep.pairs == []
    assert rep.classes["moving_truck"].precision == 0.0
    assert rep.classes["moving_car"].recall == 0.0


def test_threshold_inclusive():
    pred, gt = [sq(0, 5, 0)], [sq(0, 0, 0)]
    assert len(ev.match_detections(pred, gt, ev.MatchConfig(iou_thresh=1 / 3))) == 1
    assert len(ev.match_detections(pred, gt, ev.MatchConfig(iou_thresh=0.34))) == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        ev.MatchConfig(iou_thresh=0)
    with pytest.raises(ConfigError):
        ev.MatchConfig(method="hungarian")


def test_count_fraction_examples():
    assert ev.count_fraction(465, 449) == pytest.approx(1.0356, abs=1e-4)
    assert ev.count_fraction(12, 12) == 1.0
    assert ev.count_fraction(3, 0) is None


def test_f1_identity():
    rep = ev.evaluate([sq(0, 0, 0), sq(1, 50, 50)], [sq(0, 0, 0), sq(1, 100, 0), sq(2, 200, 0)])
    c = rep.classes["moving_car"]
    assert (c.tp, c.n_pred, c.n_gt) == (1, 2, 3)
    assert c.precision == 0.5 and c.recall == pytest.approx(1 / 3)
    assert c.f1 == pytest.approx(2 * 0.5 * (1 / 3) / (0.5 + 1 / 3))
    assert ev.f1_score(0.0, 0.0) == 0.0


def test_empty_inputs():
    rep = ev.evaluate([], [])
    assert rep.classes == {} and rep.mean["f1"] == 0.0 and rep.mean["count_frac"] is None
    rep = ev.evaluate([], [sq(0, 0, 0)])
    assert rep.classes["moving_car"].count_frac == 0.0


def random_items(rng, n, cls_choices=("moving_car", "moving_truck")):
    out = []
    for i in range(n):
        x, y = rng.uniform(0, 30, 2)
        w, h = rng.uniform(4, 12, 2)
        out.append(Item(i, cls_choices[rng.integers(len(cls_choices))], box(x, y, x + w, y + h)))
    return out


@pytest.mark.parametrize("seed", range(5))
def test_swap_keeps_f1(seed):
    rng = np.random.default_rng(seed)
    a, b = random_items(rng, 6), random_items(rng, 7)
    ab, ba = ev.evaluate(a, b, ev.MatchConfig(method="optimal")), ev.evaluate(b, a, ev.MatchConfig(method="optimal"))
    for k in ab.classes:
        assert ab.classes[k].f1 == pytest.approx(ba.classes[k].f1)
        assert ab.classes[k].precision == pytest.approx(ba.classes[k].recall)


@pytest.mark.parametrize("method", ev.MATCH_METHODS)
def test_raising_threshold_never_adds_matches(method):
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b = random_items(rng, 5), random_items(rng, 5)
        counts = [len(ev.match_detections(a, b, ev.MatchConfig(t, method))) for t in (0.1, 0.25, 0.5, 0.75)]
        if method == "optimal":
            assert counts == sorted(counts, reverse=True)
        assert all(c <= min(len(a), len(b)) for c in counts)


def test_count_fraction_ignores_geometry():
    rng = np.random.default_rng(4)
    a, b = random_items(rng, 9, ("moving_car",)), random_items(rng, 6, ("moving_car",))
    moved = [Item(p.id, p.cls, box(500, 500, 501, 501)) for p in a]
    assert ev.evaluate(a, b).classes["moving_car"].count_frac == ev.evaluate(moved, b).classes["moving_car"].count_frac
    assert ev.evaluate(moved, b).classes["moving_car"].tp == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 5), st.integers(0, 5))
def test_matching_is_one_to_one(seed, n_pred, n_gt):
    rng = np.random.default_rng(seed)
    a, b = random_items(rng, n_pred), random_items(rng, n_gt)
    for method in ev.MATCH_METHODS:
        pairs = ev.match_detections(a, b, ev.MatchConfig(method=method))
        assert len({p.pred_id for p in pairs}) == len(pairs) == len({p.gt_id for p in pairs})
        assert all(p.iou >= 0.25 for p in pairs)


@pytest.mark.parametrize("seed", range(3))
def test_optimal_equals_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    for _ in range(150):
        a, b = random_items(rng, rng.integers(0, 6), ("c",)), random_items(rng, rng.integers(0, 6), ("c",))
        got = ev.match_detections(a, b, ev.MatchConfig(method="optimal"))
        assert len(got) == brute_max_pairs(a, b, 0.25)


def test_greedy_can_be_suboptimal():
    # pred 0 fits truth 1 best, which leaves pred 1 and truth 0 stranded
    pred = [Item(0, "c", box(0, 0, 10, 10)), Item(1, "c", box(4, 0, 14, 10))]
    gt = [Item(0, "c", box(-4, 0, 6, 10)), Item(1, "c", box(1, 0, 11, 10))]
    greedy = ev.match_detections(pred, gt)
    best = ev.match_detections(pred, gt, ev.MatchConfig(method="optimal"))
    assert [(p.pred_id, p.gt_id) for p in greedy] == [(0, 1)]
    assert sorted((p.pred_id, p.gt_id) for p in best) == [(0, 0), (1, 1)]
    assert brute_max_pairs(pred, gt, 0.25) == 2


def test_merge_adds_counts():
    r1 = ev.evaluate([sq(0, 0, 0)], [sq(0, 0, 0)])
    r2 = ev.evaluate([sq(0, 0, 0)], [sq(0, 50, 0), sq(1, 80, 0)])
    m = ev.EvalReport.merge([r1, r2])
    c = m.classes["moving_car"]
    assert (c.tp, c.n_pred, c.n_gt) == (1, 2, 3)
    assert len(m.pairs) == 1


def test_report_text_and_json():
    rep = ev.evaluate([sq(0, 0, 0), sq(1, 40, 0, cls="moving_truck")], [sq(0, 0, 0), sq(1, 40, 0, cls="moving_truck")])
    text = rep.to_text()
    header = text.splitlines()[0].split()
    assert header == ["Class", "Precision", "Recall", "F1", "N_pred", "N_gt", "count_frac"]
    mean = [ln for ln in text.splitlines() if ln.startswith("Mean")][0].split()
    assert mean[3] == "1.000"
    d = json.loads(rep.to_json())
    assert d["mean"]["f1"] == 1.0 and set(d["classes"]) == {"moving_car", "moving_truck"}


def test_mean_is_unweighted_over_classes():
    pred = [sq(i, 30 * i, 0) for i in range(4)] + [sq(0, 0, 0, cls="moving_truck")]
    gt = [sq(i, 30 * i, 0) for i in range(4)] + [sq(0, 500, 0, cls="moving_truck")]
    m = ev.evaluate(pred, gt).mean
    assert m["f1"] == pytest.approx(0.5)
    assert m["count_frac"] == 1.0
