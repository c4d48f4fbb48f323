"""Detection and localization measures: ROC AUC, AP, micro/macro AUC, RBDC and TBDC."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

log = logging.getLogger(__name__)

# face adjacency within a frame, nothing across frames
_FRAME_CROSS = np.zeros((3, 3, 3), dtype=bool)
_FRAME_CROSS[1] = ndimage.generate_binary_structure(2, 1)


@dataclass
class VideoScores:
    name: str
    scores: np.ndarray                     # (t,)
    labels: np.ndarray                     # (t,) in {0, 1}
    pixel_maps: np.ndarray | None = None   # (t, h, w)
    masks: np.ndarray | None = None        # (t, h, w) in {0, 1}
    track_ids: np.ndarray | None = None    # (t, h, w); 0 = background

    def __post_init__(self) -> None:
        self.scores = np.asarray(self.scores, dtype=np.float64).ravel()
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        if self.scores.shape != self.labels.shape:
            raise ValueError(f"{self.name}: {self.scores.size} scores but {self.labels.size} labels")
        for attr in ("pixel_maps", "masks", "track_ids"):
            arr = getattr(self, attr)
            if arr is not None and arr.shape[0] != self.scores.size:
                raise ValueError(f"{self.name}: {attr} has {arr.shape[0]} frames, expected {self.scores.size}")


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(bool)


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative (ties count 1/2)."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    n1 = int(y.sum())
    n0 = y.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs at least one positive and one negative label")
    ranks = rankdata(s)  # midranks for ties
    return float((ranks[y].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def average_precision(scores, labels) -> float:
    """Sum over distinct descending thresholds of precision times recall increment."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average_precision needs at least one positive label")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of each block of equal scores
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(precision * recall_gain))


def micro_auc(videos: Sequence[VideoScores]) -> float:
    """ROC AUC over all frames of all videos concatenated."""
    return roc_auc(np.concatenate([v.scores for v in videos]), np.concatenate([v.labels for v in videos]))


def per_video_auc(videos: Sequence[VideoScores]) -> dict[str, float | None]:
    """ROC AUC of each video; ``None`` for videos holding a single class."""
    out: dict[str, float | None] = {}
    for v in videos:
        npos = int(_binary_labels(v.labels).sum())
        out[v.name] = roc_auc(v.scores, v.labels) if 0 < npos < v.labels.size else None
    return out


def macro_auc(videos: Sequence[VideoScores]) -> float:
    """Mean of per-video AUCs; single-class videos are skipped and logged."""
    per = per_video_auc(videos)
    skipped = [k for k, v in per.items() if v is None]
    if skipped:
        log.warning("macro_auc skips %d single-class video(s): %s", len(skipped), ", ".join(skipped))
    vals = [v for v in per.values() if v is not None]
    if not vals:
        raise ValueError("macro_auc: no video holds both classes")
    return float(np.mean(vals))


# -- region / track detection criteria ------------------------------------------

@dataclass
class DetectionCurve:
    thresholds: np.ndarray
    fpr: np.ndarray     # false-positive regions per frame
    rbdr: np.ndarray    # region detection rate
    tbdr: np.ndarray    # track detection rate


def _stack(videos: Sequence[VideoScores]):
    maps, tracks, vid = [], [], []
    for vi, v in enumerate(videos):
        if v.pixel_maps is None or v.track_ids is None:
            raise ValueError(f"{v.name}: RBDC/TBDC need pixel_maps and track_ids")
        if v.pixel_maps.shape != v.track_ids.shape:
            raise ValueError(f"{v.name}: pixel maps {v.pixel_maps.shape} vs tracks {v.track_ids.shape}")
        maps.append(np.asarray(v.pixel_maps, dtype=np.float64))
        tracks.append(np.asarray(v.track_ids).astype(np.int64))
        vid.append(np.full(v.pixel_maps.shape[0], vi))
    return np.concatenate(maps), np.concatenate(tracks), np.concatenate(vid)


def _ground_truth(tracks: np.ndarray, vid: np.ndarray):
    """Number every (frame, track id) region; map regions to global tracks."""
    gt = np.zeros(tracks.shape, dtype=np.int64)
    region_track: list[int] = []
    track_key: dict[tuple[int, int], int] = {}
    g = 0
    for f in range(tracks.shape[0]):
        for tid in np.unique(tracks[f]):
            if tid == 0:
                continue
            g += 1
            gt[f][tracks[f] == tid] = g
            key = (int(vid[f]), int(tid))
            region_track.append(track_key.setdefault(key, len(track_key)))
    return gt, np.array(region_track, dtype=np.int64), len(track_key)


def select_thresholds(maps: np.ndarray, max_thresholds: int | None = 256) -> np.ndarray:
    """Distinct map values, or ``max_thresholds`` quantiles of them when there are more."""
    vals = np.unique(maps)
    if max_thresholds is not None and vals.size > max_thresholds:
        vals = np.unique(np.quantile(vals, np.linspace(0.0, 1.0, max_thresholds), method="nearest"))
    return vals


def detection_curve(videos: Sequence[VideoScores], alpha: float = 0.1, beta: float = 0.1,
                    thresholds: np.ndarray | None = None, max_thresholds: int | None = 256) -> DetectionCurve:
    """Detection rates and false positives per frame at every threshold (``map >= t`` is detected).

    A ground-truth region counts as detected when some detected connected
    component has IOU > ``alpha`` with it; a detected component with no such
    match is a false positive.  A track counts as detected when the fraction
    of its frames whose region is detected exceeds ``beta``.
    """
    maps, tracks, vid = _stack(videos)
    gt, region_track, n_tracks = _ground_truth(tracks, vid)
    n_regions = region_track.size
    if n_regions == 0:
        raise ValueError("RBDC/TBDC need at least one ground-truth region")
    track_len = np.bincount(region_track, minlength=n_tracks)
    gt_area = np.bincount(gt.ravel(), minlength=n_regions + 1)
    if thresholds is None:
        thresholds = select_thresholds(maps, max_thresholds)
    thresholds = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    n_frames = maps.shape[0]
    fpr, rbdr, tbdr = [], [], []
    for t in thresholds:
        det, n_det = ndimage.label(maps >= t, structure=_FRAME_CROSS)
        if n_det == 0:
            fpr.append(0.0); rbdr.append(0.0); tbdr.append(0.0)
            continue
        det_area = np.bincount(det.ravel(), minlength=n_det + 1)
        both = (det > 0) & (gt > 0)
        keys = det[both] * (n_regions + 1) + gt[both]
        pair, inter = np.unique(keys, return_counts=True)
        d_idx, g_idx = np.divmod(pair, n_regions + 1)
        iou = inter / (det_area[d_idx] + gt_area[g_idx] - inter)
        hit = iou > alpha
        tp_dets = np.unique(d_idx[hit]).size
        found = np.unique(g_idx[hit]) - 1
        hits_per_track = np.bincount(region_track[found], minlength=n_tracks)
        fpr.append((n_det - tp_dets) / n_frames)
        rbdr.append(found.size / n_regions)
        tbdr.append(float(np.sum(hits_per_track / track_len > beta)) / n_tracks)
    return DetectionCurve(thresholds, np.array(fpr), np.array(rbdr), np.array(tbdr))


def area_under_detection_curve(fpr, rate, max_fpr: float = 1.0) -> float:
    """Normalised area of the best-rate envelope for false positives per frame in ``[0, max_fpr]``.

    The envelope at ``x`` is the highest detection rate among operating points
    with at most ``x`` false positives per frame (0 if there is none).
    """
    fpr = np.asarray(fpr, dtype=np.float64)
    rate = np.asarray(rate, dtype=np.float64)
    keep = fpr <= max_fpr
    fpr, rate = fpr[keep], rate[keep]
    if fpr.size == 0:
        return 0.0
    order = np.lexsort((-rate, fpr))
    xs = np.r_[fpr[order], max_fpr]
    env = np.maximum.accumulate(rate[order])
    return float(np.sum(env * np.diff(xs)) / max_fpr)


def rbdc(videos: Sequence[VideoScores], alpha: float = 0.1, **kw) -> float:
    c = detection_curve(videos, alpha=alpha, **kw)
    return area_under_detection_curve(c.fpr, c.rbdr)


def tbdc(videos: Sequence[VideoScores], beta: float = 0.1, alpha: float = 0.1, **kw) -> float:
    c = detection_curve(videos, alpha=alpha, beta=beta, **kw)
    return area_under_detection_curve(c.fpr, c.tbdr)


def rbdc_tbdc(videos: Sequence[VideoScores], alpha: float = 0.1, beta: float = 0.1, **kw) -> tuple[float, float]:
    c = detection_curve(videos, alpha=alpha, beta=beta, **kw)
    return area_under_detection_curve(c.fpr, c.rbdr), area_under_detection_curve(c.fpr, c.tbdr)


# -- reports -----------------------------------------------------------------------

@dataclass
class EvalReport:
    kind: str
    auroc: float | None = None
    ap: float | None = None
    pixel_auroc: float | None = None
    pixel_ap: float | None = None
    micro_auc: float | None = None
    macro_auc: float | None = None
    rbdc: float | None = None
    tbdc: float | None = None
    macro_skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def evaluate_images(scores, labels, pixel_maps=None, masks=None) -> EvalReport:
    rep = EvalReport("images", auroc=roc_auc(scores, labels), ap=average_precision(scores, labels))
    if pixel_maps is not None and masks is not None and np.any(masks) and not np.all(masks):
        rep.pixel_auroc = roc_auc(np.ravel(pixel_maps), np.ravel(masks))
        rep.pixel_ap = average_precision(np.ravel(pixel_maps), np.ravel(masks))
    return rep


def evaluate_videos(videos: Sequence[VideoScores], alpha: float = 0.1, beta: float = 0.1,
                    max_thresholds: int | None = 256) -> EvalReport:
    per = per_video_auc(videos)
    rep = EvalReport("videos", micro_auc=micro_auc(videos),
                     macro_skipped=[k for k, v in per.items() if v is None])
    if any(v is not None for v in per.values()):
        rep.macro_auc = macro_auc(videos)
    if all(v.pixel_maps is not None and v.track_ids is not None for v in videos) and \
            any(np.any(v.track_ids) for v in videos):
        rep.rbdc, rep.tbdc = rbdc_tbdc(videos, alpha, beta, max_thresholds=max_thresholds)
    return rep
