"""Synthetic one-class anomaly benchmarks (images and videos) and their directory format.

Images: a fixed 4x4 grid of Gaussian bumps with jittered amplitudes.  Test
anomalies are an inverted-intensity rectangle or a sharp off-grid bump.

Videos: Gaussian blobs drifting rightwards at constant velocity on a torus.
Each test video holds one anomalous event: a blob doubling its speed, a blob
reversing, or a new (larger) blob appearing.  Anomalous pixels carry track
id 1 for the duration of the event.

All randomness comes from :class:`ssmctb.rng.XorShift64Star`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import XorShift64Star
from .tensor import read_sstb, write_sstb

IMAGE_ANOMALIES = ("rect", "bump")
VIDEO_ANOMALIES = ("speed", "reverse", "new_blob")
MASK_LEVEL = 0.1


@dataclass
class ImageDataset:
    train: np.ndarray            # (n_train, h, w, 1)
    test: np.ndarray             # (n_test, h, w, 1)
    labels: np.ndarray           # (n_test,)
    masks: np.ndarray            # (n_test, h, w)
    generator: dict = field(default_factory=dict)
    kinds: list = field(default_factory=list)  # anomaly kind per test sample ("" if normal)

    kind = "images"


@dataclass
class Video:
    name: str
    frames: np.ndarray           # (t, h, w, 1)
    labels: np.ndarray           # (t,)
    masks: np.ndarray            # (t, h, w)
    track_ids: np.ndarray        # (t, h, w); 0 = background
    anomaly: str = ""


@dataclass
class VideoDataset:
    train: list[Video]
    test: list[Video]
    generator: dict = field(default_factory=dict)

    kind = "videos"


# -- images ------------------------------------------------------------------

def _gauss(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2.0 * sigma ** 2))


def _normal_image(rng: XorShift64Star, h: int, w: int) -> np.ndarray:
    sy, sx = h / 4, w / 4
    sigma = 0.35 * min(sy, sx)
    img = np.zeros((h, w))
    for gy in range(4):
        for gx in range(4):
            amp = rng.uniform(0.25, 0.75)
            img += amp * _gauss(h, w, sy / 2 + gy * sy, sx / 2 + gx * sx, sigma)
    return img


def _insert_anomaly(rng: XorShift64Star, img: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    h, w = img.shape
    mask = np.zeros((h, w), dtype=bool)
    if kind == "rect":
        rh, rw = rng.randint(4, 9), rng.randint(4, 9)
        y0, x0 = rng.randint(0, h - rh + 1), rng.randint(0, w - rw + 1)
        mask[y0:y0 + rh, x0:x0 + rw] = True
        img = np.where(mask, 1.0 - img, img)
    elif kind == "bump":
        sy, sx = h / 4, w / 4
        gy, gx = rng.randint(0, 3), rng.randint(0, 3)
        cy = (gy + 1) * sy + rng.uniform(-1.0, 1.0)
        cx = (gx + 1) * sx + rng.uniform(-1.0, 1.0)
        bump = rng.uniform(0.6, 1.0) * _gauss(h, w, cy, cx, 1.2)
        mask = bump > MASK_LEVEL * 0.5
        img = img + bump
    else:
        raise ValueError(f"unknown image anomaly kind {kind!r}")
    return np.clip(img, 0.0, 1.0), mask


def generate_images(seed: int = 7, n_train: int = 256, n_test: int = 128,
                    extents: tuple[int, int] = (32, 32), anomaly_fraction: float = 0.5,
                    kinds: tuple[str, ...] = IMAGE_ANOMALIES) -> ImageDataset:
    h, w = (int(e) for e in extents)
    if h < 16 or w < 16:
        raise ValueError(f"extents must be at least 16 per axis, got {extents}")
    if not 0.0 < anomaly_fraction < 1.0:
        raise ValueError("anomaly_fraction must lie strictly between 0 and 1")
    if n_train < 1 or n_test < 2:
        raise ValueError("need n_train >= 1 and n_test >= 2")
    if not kinds or any(k not in IMAGE_ANOMALIES for k in kinds):
        raise ValueError(f"kinds must be a nonempty subset of {IMAGE_ANOMALIES}")
    rng = XorShift64Star(seed)
    train = np.stack([_normal_image(rng, h, w) for _ in range(n_train)])
    n_abn = min(max(1, round(anomaly_fraction * n_test)), n_test - 1)
    order = rng.shuffle(list(range(n_test)))
    abnormal = set(order[:n_abn])
    test, labels, masks, kind_list = [], [], [], []
    for i in range(n_test):
        img = _normal_image(rng, h, w)
        mask = np.zeros((h, w), dtype=bool)
        kind = ""
        if i in abnormal:
            kind = rng.choice(list(kinds))
            img, mask = _insert_anomaly(rng, img, kind)
        else:
            img = np.clip(img, 0.0, 1.0)
        test.append(img)
        masks.append(mask)
        labels.append(1.0 if i in abnormal else 0.0)
        kind_list.append(kind)
    generator = {"generator": "images", "seed": seed, "n_train": n_train, "n_test": n_test,
            "extents": [h, w], "anomaly_fraction": anomaly_fraction, "kinds": list(kinds)}
    return ImageDataset(
        train=np.clip(train, 0.0, 1.0)[..., None],
        test=np.stack(test)[..., None],
        labels=np.array(labels),
        masks=np.stack(masks).astype(np.float64),
        generator=generator,
        kinds=kind_list,
    )


# -- videos ------------------------------------------------------------------

def _torus_gauss(h: int, w: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    dy = (np.arange(h)[:, None] - cy + h / 2) % h - h / 2
    dx = (np.arange(w)[None, :] - cx + w / 2) % w - w / 2
    return np.exp(-(dy ** 2 + dx ** 2) / (2.0 * sigma ** 2))


def _random_blob(rng: XorShift64Star, h: int, w: int, sigma: float, amp_range=(0.6, 0.9)) -> dict:
    speed = rng.uniform(0.5, 1.0)
    angle = rng.uniform(-math.pi / 4, math.pi / 4)
    return {
        "y": rng.uniform(0.0, h), "x": rng.uniform(0.0, w),
        "vy": speed * math.sin(angle), "vx": speed * math.cos(angle),
        "sigma": sigma, "amp": rng.uniform(*amp_range),
    }


def _render_video(rng: XorShift64Star, name: str, t: int, h: int, w: int,
                  kind: str | None) -> Video:
    blobs = [_random_blob(rng, h, w, 2.0) for _ in range(2)]
    onset = duration = 0
    extra = None
    if kind:
        onset = rng.randint(t // 4, t // 2 + 1)
        duration = rng.randint(t // 8, t // 4 + 1)
        if kind == "new_blob":
            extra = _random_blob(rng, h, w, 3.0, (0.8, 1.0))
        elif kind not in VIDEO_ANOMALIES:
            raise ValueError(f"unknown video anomaly kind {kind!r}")
    frames = np.zeros((t, h, w))
    labels = np.zeros(t)
    masks = np.zeros((t, h, w))
    for f in range(t):
        active = kind is not None and kind != "" and onset <= f < onset + duration
        img = np.zeros((h, w))
        for bi, b in enumerate(blobs):
            g = b["amp"] * _torus_gauss(h, w, b["y"], b["x"], b["sigma"])
            img += g
            if active and bi == 0 and kind in ("speed", "reverse"):
                masks[f] = g > MASK_LEVEL * b["amp"]
        if active and extra is not None:
            g = extra["amp"] * _torus_gauss(h, w, extra["y"], extra["x"], extra["sigma"])
            img += g
            masks[f] = g > MASK_LEVEL * extra["amp"]
        if active:
            labels[f] = 1.0
        frames[f] = np.clip(img, 0.0, 1.0)
        # advance; the anomalous blob uses its altered velocity while the event lasts
        for bi, b in enumerate(blobs):
            vy, vx = b["vy"], b["vx"]
            nxt = onset <= f + 1 < onset + duration
            if kind and bi == 0 and nxt:
                if kind == "speed":
                    vy, vx = 2 * vy, 2 * vx
                elif kind == "reverse":
                    vy, vx = -vy, -vx
            b["y"] = (b["y"] + vy) % h
            b["x"] = (b["x"] + vx) % w
        if extra is not None:
            extra["y"] = (extra["y"] + extra["vy"]) % h
            extra["x"] = (extra["x"] + extra["vx"]) % w
    return Video(name=name, frames=frames[..., None], labels=labels, masks=masks,
                 track_ids=masks.copy(), anomaly=kind or "")


def generate_videos(seed: int = 7, n_videos: int = 8, frames_per_video: int = 64,
                    extents: tuple[int, int] = (32, 32),
                    kinds: tuple[str, ...] = VIDEO_ANOMALIES) -> VideoDataset:
    """``n_videos`` normal training videos and ``n_videos`` test videos.

    With ``kinds`` empty every test video is normal.
    """
    h, w = (int(e) for e in extents)
    if h < 16 or w < 16:
        raise ValueError(f"extents must be at least 16 per axis, got {extents}")
    if frames_per_video < 8:
        raise ValueError("frames_per_video must be at least 8")
    if n_videos < 1:
        raise ValueError("n_videos must be positive")
    if any(k not in VIDEO_ANOMALIES for k in kinds):
        raise ValueError(f"kinds must be a subset of {VIDEO_ANOMALIES}")
    rng = XorShift64Star(seed)
    train = [_render_video(rng, f"train_{i:03d}", frames_per_video, h, w, None) for i in range(n_videos)]
    test = []
    for i in range(n_videos):
        kind = rng.choice(list(kinds)) if kinds else None
        test.append(_render_video(rng, f"test_{i:03d}", frames_per_video, h, w, kind))
    generator = {"generator": "videos", "seed": seed, "n_videos": n_videos,
            "frames_per_video": frames_per_video, "extents": [h, w], "kinds": list(kinds)}
    return VideoDataset(train=train, test=test, generator=generator)


def clip_stack(frames: np.ndarray, length: int, stride: int) -> np.ndarray:
    """Stack each frame with its ``length - 1`` predecessors (``stride`` apart) on the channel axis.

    ``frames`` is ``(t, h, w, 1)``; the result is ``(t, h, w, length)`` with the
    current frame last.  Indices before the first frame clamp to frame 0.
    """
    t = frames.shape[0]
    idx = np.arange(t)[:, None] - stride * np.arange(length - 1, -1, -1)[None, :]
    idx = np.clip(idx, 0, t - 1)
    return np.ascontiguousarray(np.moveaxis(frames[idx, ..., 0], 1, -1))


# -- on-disk format ----------------------------------------------------------

def _dump_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_dataset(ds: ImageDataset | VideoDataset, directory: str | Path) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"kind": ds.kind, "generator": ds.generator}
    if isinstance(ds, ImageDataset):
        (d / "train").mkdir(exist_ok=True)
        (d / "test").mkdir(exist_ok=True)
        files = {"train/samples.sstb": ds.train, "test/samples.sstb": ds.test,
                 "test/labels.sstb": ds.labels, "test/masks.sstb": ds.masks}
        for rel, arr in files.items():
            write_sstb(d / rel, arr)
        manifest["splits"] = {
            "train": {"count": int(ds.train.shape[0]), "samples": "train/samples.sstb"},
            "test": {"count": int(ds.test.shape[0]), "samples": "test/samples.sstb",
                     "labels": "test/labels.sstb", "masks": "test/masks.sstb", "kinds": ds.kinds},
        }
    else:
        manifest["splits"] = {}
        for split, videos in (("train", ds.train), ("test", ds.test)):
            entries = []
            for v in videos:
                vd = d / split / v.name
                vd.mkdir(parents=True, exist_ok=True)
                entry = {"name": v.name, "anomaly": v.anomaly}
                for key, arr in (("frames", v.frames), ("labels", v.labels),
                                 ("masks", v.masks), ("track_ids", v.track_ids)):
                    rel = f"{split}/{v.name}/{key}.sstb"
                    write_sstb(d / rel, arr)
                    entry[key] = rel
                entries.append(entry)
            manifest["splits"][split] = {"videos": entries}
    _dump_json(d / "manifest.json", manifest)
    return d


def load_dataset(directory: str | Path) -> ImageDataset | VideoDataset:
    d = Path(directory)
    with open(d / "manifest.json", encoding="utf-8") as fh:
        m = json.load(fh)
    if m["kind"] == "images":
        tr, te = m["splits"]["train"], m["splits"]["test"]
        return ImageDataset(
            train=read_sstb(d / tr["samples"]), test=read_sstb(d / te["samples"]),
            labels=read_sstb(d / te["labels"]), masks=read_sstb(d / te["masks"]),
            generator=m["generator"], kinds=list(te.get("kinds", [])),
        )
    if m["kind"] == "videos":
        splits = {}
        for split in ("train", "test"):
            splits[split] = [
                Video(name=e["name"], frames=read_sstb(d / e["frames"]), labels=read_sstb(d / e["labels"]),
                      masks=read_sstb(d / e["masks"]), track_ids=read_sstb(d / e["track_ids"]),
                      anomaly=e.get("anomaly", ""))
                for e in m["splits"][split]["videos"]
            ]
        return VideoDataset(train=splits["train"], test=splits["test"], generator=m["generator"])
    raise ValueError(f"{d}: unknown dataset kind {m['kind']!r}")
