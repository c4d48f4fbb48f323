from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssmctb import metrics as M
from ssmctb.metrics import VideoScores


# -- oracles -------------------------------------------------------------------------

def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    won = 0.0
    for p in pos:
        for n in neg:
            won += 1.0 if p > n else 0.5 if p == n else 0.0
    return won / (len(pos) * len(neg))


def rank_precision_ap(scores, labels):
    """Mean precision at the rank of each positive (scores assumed distinct)."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / hits


def components(binary):
    """4-connected components of a 2D boolean array by breadth-first search."""
    h, w = binary.shape
    seen = np.zeros_like(binary, dtype=bool)
    comps = []
    for y in range(h):
        for x in range(w):
            if binary[y, x] and not seen[y, x]:
                comp, q = set(), deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.add((cy, cx))
                    for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                        if 0 <= ny < h and 0 <= nx < w and binary[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                comps.append(comp)
    return comps


def sweep_oracle(videos, alpha, beta):
    """Exhaustive sweep over every distinct map value; returns (RBDC, TBDC)."""
    frames = [(vi, f) for vi, v in enumerate(videos) for f in range(v.scores.size)]
    regions = []  # (video, frame, track, pixel set)
    for vi, v in enumerate(videos):
        for f in range(v.scores.size):
            for tid in sorted(set(np.unique(v.track_ids[f]).tolist()) - {0}):
                ys, xs = np.nonzero(v.track_ids[f] == tid)
                regions.append((vi, f, int(tid), set(zip(ys.tolist(), xs.tolist()))))
    tracks = sorted({(vi, t) for vi, _, t, _ in regions})
    values = sorted(set(np.concatenate([v.pixel_maps.ravel() for v in videos]).tolist()))
    points = []
    for t in values:
        fp = 0
        found = [False] * len(regions)
        for vi, f in frames:
            for comp in components(videos[vi].pixel_maps[f] >= t):
                matched = False
                for ri, (rv, rf, _, pix) in enumerate(regions):
                    if (rv, rf) != (vi, f):
                        continue
                    iou = len(comp & pix) / len(comp | pix)
                    if iou > alpha:
                        found[ri] = True
                        matched = True
                fp += 0 if matched else 1
        rbdr = sum(found) / len(regions)
        tdet = 0
        for tk in tracks:
            idx = [ri for ri, r in enumerate(regions) if (r[0], r[2]) == tk]
            if sum(found[i] for i in idx) / len(idx) > beta:
                tdet += 1
        points.append((fp / len(frames), rbdr, tdet / len(tracks)))

    def area(col):
        xs = sorted({p[0] for p in points if p[0] <= 1.0}) + [1.0]
        total = 0.0
        for a, b in zip(xs[:-1], xs[1:]):
            best = max(p[col] for p in points if p[0] <= a)
            total += best * (b - a)
        return total

    return area(1), area(2)


def random_videos(rng, n_videos=2, max_frames=5, extent=6, max_regions=3):
    vids = []
    for vi in range(n_videos):
        t = int(rng.integers(1, max_frames + 1))
        track_ids = np.zeros((t, extent, extent))
        for f in range(t):
            for r in range(int(rng.integers(0, max_regions + 1))):
                y, x = rng.integers(0, extent - 1, size=2)
                hh, ww = rng.integers(1, 3, size=2)
                track_ids[f, y:y + hh, x:x + ww] = r + 1
        maps = np.round(rng.random((t, extent, extent)) * 6) / 6 + track_ids * rng.random() * 0.5
        labels = (track_ids.reshape(t, -1).max(axis=1) > 0).astype(float)
        vids.append(VideoScores(f"v{vi}", maps.reshape(t, -1).max(axis=1), labels, maps,
                                (track_ids > 0).astype(float), track_ids))
    if not any(v.track_ids.any() for v in vids):
        vids[0].track_ids[0, 0, 0] = 1
    return vids


# -- frame-level --------------------------------------------------------------------------

def test_auc_examples():
    assert M.roc_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]) == 0.75
    assert M.roc_auc([1, 1, 1, 1], [1, 0, 1, 0]) == 0.5
    assert M.roc_auc([2, 3], [0, 1]) == 1.0
    with pytest.raises(ValueError):
        M.roc_auc([0.1, 0.2], [1, 1])


def test_ap_examples():
    assert M.average_precision([4, 3, 2, 1], [1, 0, 1, 0]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)
    assert M.average_precision([4, 3, 2, 1], [1, 1, 0, 0]) == 1.0
    assert M.average_precision([4, 3, 2, 1], [0, 0, 0, 1]) == 0.25
    with pytest.raises(ValueError):
        M.average_precision([1, 2], [0, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_and_ap_match_oracles(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 200))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    ties = rng.integers(0, 5, size=n).astype(float)
    assert M.roc_auc(ties, labels) == pytest.approx(pairwise_auc(ties, labels), abs=1e-12)
    s = rng.normal(size=n)
    assert M.roc_auc(s, labels) == pytest.approx(pairwise_auc(s, labels), abs=1e-12)
    assert M.average_precision(s, labels) == pytest.approx(rank_precision_ap(s, labels), abs=1e-12)
    # strictly increasing transforms do not change the AUC
    assert M.roc_auc(np.exp(s), labels) == pytest.approx(M.roc_auc(s, labels), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_micro_and_macro_match_oracle(seed):
    rng = np.random.default_rng(seed)
    vids = []
    for i in range(int(rng.integers(1, 5))):
        n = int(rng.integers(2, 50))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        vids.append(VideoScores(f"v{i}", rng.normal(size=n) + y * rng.random(), y))
    cat_s = np.concatenate([v.scores for v in vids])
    cat_y = np.concatenate([v.labels for v in vids])
    assert M.micro_auc(vids) == pytest.approx(pairwise_auc(cat_s, cat_y), abs=1e-12)
    expect = np.mean([pairwise_auc(v.scores, v.labels) for v in vids])
    assert M.macro_auc(vids) == pytest.approx(expect, abs=1e-12)


def test_micro_differs_from_macro_on_crafted_case():
    vids = [VideoScores("a", [0.9, 0.8], [1, 0]), VideoScores("b", [0.3, 0.1], [1, 0])]
    assert M.macro_auc(vids) == 1.0
    assert M.micro_auc(vids) == 0.75 == pairwise_auc([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    one = [VideoScores("a", [0.9, 0.2, 0.5], [1, 0, 1])]
    assert M.micro_auc(one) == M.macro_auc(one)


def test_macro_skips_single_class_videos(caplog):
    vids = [VideoScores("a", [0.9, 0.8], [1, 0]), VideoScores("b", [0.3, 0.1], [0, 0]),
            VideoScores("c", [0.1, 0.3], [1, 0])]
    assert M.macro_auc(vids) == 0.5
    assert "b" in caplog.text
    rep = M.evaluate_videos(vids)
    assert rep.macro_skipped == ["b"]


# -- region and track criteria ------------------------------------------------------------

def toy_volume():
    gt = np.zeros((3, 12, 12))
    gt[0, 1:3, 1:3] = 1
    gt[1, 1:3, 2:4] = 1
    gt[1, 4:6, 4:6] = 2
    gt[2, 4:6, 3:5] = 2
    maps = gt * 0.8
    maps[2, 0, 0] = 0.9   # spurious detection
    maps[0, 1, 1] = 0.4
    return [VideoScores("toy", maps.reshape(3, -1).max(axis=1), [1, 1, 1], maps, gt > 0, gt)]


def test_rbdc_tbdc_toy_matches_sweep_oracle():
    vids = toy_volume()
    got = M.rbdc_tbdc(vids, 0.1, 0.1, max_thresholds=None)
    assert got == pytest.approx(sweep_oracle(vids, 0.1, 0.1), abs=1e-12)
    # half the regions at zero false positives, all of them from 1/3 per frame on
    assert got == pytest.approx((0.5 / 3 + 2 / 3, 0.5 / 3 + 2 / 3), abs=1e-12)


def test_perfect_detection_scores_one():
    gt = np.zeros((4, 8, 8))
    gt[:, 2:4, 2:5] = 1
    gt[1:3, 6:8, 0:2] = 2
    v = [VideoScores("p", [1, 1, 1, 1], [1, 1, 1, 1], gt > 0, gt > 0, gt)]
    assert M.rbdc(v) == 1.0 and M.tbdc(v) == 1.0


def test_empty_detection_scores_zero():
    gt = np.zeros((4, 8, 8))
    gt[:, 2:4, 2:4] = 1
    v = [VideoScores("e", [0, 0, 0, 0], [1, 1, 1, 1], np.zeros_like(gt), gt > 0, gt)]
    assert M.rbdc(v) == 0.0 and M.tbdc(v) == 0.0


def test_no_ground_truth_rejected():
    z = np.zeros((2, 4, 4))
    with pytest.raises(ValueError):
        M.rbdc([VideoScores("z", [0, 0], [0, 0], z, z, z)])


def test_threshold_subsampling_caps_count():
    maps = np.random.default_rng(0).random((3, 16, 16))
    assert M.select_thresholds(maps, 256).size <= 256
    assert M.select_thresholds(maps, None).size == np.unique(maps).size


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_toy_volumes_match_sweep_oracle(seed):
    vids = random_videos(np.random.default_rng(seed))
    got = M.rbdc_tbdc(vids, 0.1, 0.1, max_thresholds=None)
    assert got == pytest.approx(sweep_oracle(vids, 0.1, 0.1), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_criteria_monotone_in_alpha_and_beta(seed):
    vids = random_videos(np.random.default_rng(seed))
    grid = [0.0, 0.1, 0.3, 0.5, 0.9]
    r = [M.rbdc(vids, alpha=a, max_thresholds=None) for a in grid]
    assert all(x >= y - 1e-12 for x, y in zip(r, r[1:]))
    t = [M.tbdc(vids, beta=b, max_thresholds=None) for b in grid]
    assert all(x >= y - 1e-12 for x, y in zip(t, t[1:]))
    ta = [M.tbdc(vids, alpha=a, max_thresholds=None) for a in grid]
    assert all(x >= y - 1e-12 for x, y in zip(ta, ta[1:]))
