"""``ssmctb`` command line: gen-data, train, score, eval, grad-check, ablate.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical failure.
Logging verbosity comes from ``SSMCTB_LOG`` (error, info or debug).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import autoencoder as A
from . import block as B
from . import data as D
from . import metrics as M
from .config import ConfigError, RunConfig
from .params import ParameterStore
from .rng import numpy_rng
from .tensor import read_sstb, write_sstb
from .train import NumericalError, train, write_loss_log

log = logging.getLogger("ssmctb")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
METRIC_COLUMNS = ("auroc", "ap", "pixel_auroc", "pixel_ap", "micro_auc", "macro_auc", "rbdc", "tbdc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _meta() -> dict:
    return {"version": __version__, "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds")}


# -- model inputs per dataset kind -------------------------------------------

def video_inputs(video: D.Video, cfg: RunConfig) -> np.ndarray:
    clips = D.clip_stack(video.frames, cfg.video.clip_length, cfg.video.clip_stride)
    if cfg.video.mode == "volume":
        clips = clips[..., None]
    return clips


def training_samples(ds, cfg: RunConfig) -> np.ndarray:
    if isinstance(ds, D.ImageDataset):
        return ds.train
    return np.concatenate([video_inputs(v, cfg) for v in ds.train])


def model_config(ds, cfg: RunConfig) -> A.AutoencoderConfig:
    return cfg.autoencoder_config(training_samples_shape(ds, cfg))


def training_samples_shape(ds, cfg: RunConfig) -> tuple[int, ...]:
    if isinstance(ds, D.ImageDataset):
        return tuple(ds.train.shape[1:])
    h, w = ds.train[0].frames.shape[1:3]
    L = cfg.video.clip_length
    return (h, w, L, 1) if cfg.video.mode == "volume" else (h, w, L)


def _pixel_maps(maps: np.ndarray, cfg: RunConfig) -> np.ndarray:
    # volume mode: average the error over the clip depth
    return maps.mean(axis=-1) if maps.ndim == 4 else maps


# -- pipeline steps (also used by ablate) --------------------------------------

def run_training(cfg: RunConfig, ds) -> tuple[ParameterStore, list[dict], A.AutoencoderConfig]:
    acfg = model_config(ds, cfg)
    params, history = train(training_samples(ds, cfg), acfg, cfg.train_config())
    return params, history, acfg


def score_dataset(params, acfg: A.AutoencoderConfig, ds, cfg: RunConfig) -> list[M.VideoScores]:
    smooth = cfg.eval.smooth
    if isinstance(ds, D.ImageDataset):
        f, m = A.score(params, ds.test, acfg, smooth=smooth)
        return [M.VideoScores("images", f, ds.labels, m, ds.masks, None)]
    out = []
    for v in ds.test:
        f, m = A.score(params, video_inputs(v, cfg), acfg, smooth=smooth)
        out.append(M.VideoScores(v.name, f, v.labels, _pixel_maps(m, cfg), v.masks, v.track_ids))
    return out


def evaluate(kind: str, videos: list[M.VideoScores], cfg: RunConfig) -> M.EvalReport:
    if kind == "images":
        v = videos[0]
        return M.evaluate_images(v.scores, v.labels, v.pixel_maps, v.masks)
    return M.evaluate_videos(videos, cfg.eval.alpha, cfg.eval.beta, cfg.eval.max_thresholds)


def write_scores(videos: list[M.VideoScores], kind: str, out: Path, dataset: str | None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for v in videos:
        e = {"name": v.name}
        for key, arr in (("frame_scores", v.scores), ("frame_labels", v.labels), ("pixel_maps", v.pixel_maps),
                         ("masks", v.masks), ("track_ids", v.track_ids)):
            if arr is None:
                continue
            rel = f"{v.name}.{key}.sstb"
            write_sstb(out / rel, arr)
            e[key] = rel
        entries.append(e)
    path = out / "manifest.json"
    _write_json(path, {"kind": kind, "dataset": dataset, "videos": entries})
    return path


def read_scores(manifest: Path) -> tuple[str, list[M.VideoScores]]:
    with open(manifest, encoding="utf-8") as fh:
        m = json.load(fh)
    base = manifest.parent
    videos = []
    for e in m["videos"]:
        def opt(key):
            return read_sstb(base / e[key]) if key in e else None
        videos.append(M.VideoScores(e["name"], opt("frame_scores"), opt("frame_labels"),
                                    opt("pixel_maps"), opt("masks"), opt("track_ids")))
    return m["kind"], videos


def labels_from_dataset(ds, videos: list[M.VideoScores]) -> list[M.VideoScores]:
    if isinstance(ds, D.ImageDataset):
        v = videos[0]
        return [M.VideoScores(v.name, v.scores, ds.labels, v.pixel_maps, ds.masks, None)]
    by_name = {v.name: v for v in ds.test}
    return [M.VideoScores(v.name, v.scores, by_name[v.name].labels, v.pixel_maps,
                          by_name[v.name].masks, by_name[v.name].track_ids) for v in videos]


# -- commands -------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.kind == "images":
        ds = D.generate_images(args.seed, args.n_train, args.n_test, tuple(args.extents), args.anomaly_fraction)
    else:
        kinds = tuple(k for k in args.kinds.split(",") if k) if args.kinds is not None else D.VIDEO_ANOMALIES
        ds = D.generate_videos(args.seed, args.n_videos, args.frames, tuple(args.extents), kinds)
    D.save_dataset(ds, args.out)
    log.info("wrote %s dataset to %s", ds.kind, args.out)
    return EXIT_OK


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides = {
        "seed": getattr(args, "seed", None),
        "data_dir": getattr(args, "data", None),
        "out_dir": getattr(args, "out", None),
        "train.epochs": getattr(args, "epochs", None),
        "ssmctb.lambda": getattr(args, "lam", None),
    }
    pos = getattr(args, "position", None)
    if pos is not None:
        overrides["autoencoder.ssmctb_position"] = "none" if pos == "none" else int(pos)
    return cfg.updated(**overrides)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_dir or not cfg.out_dir:
        raise ConfigError("train needs data_dir and out_dir (config or --data/--out)")
    ds = D.load_dataset(cfg.data_dir)
    params, history, _ = run_training(cfg, ds)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    params.save(out / "checkpoint")
    write_loss_log(history, out / "loss_log.jsonl")
    cfg.dump(out / "run_config.json")
    return EXIT_OK


def cmd_score(args) -> int:
    run = Path(args.run)
    cfg = RunConfig.load(run / "run_config.json")
    ds = D.load_dataset(args.data or cfg.data_dir)
    params = ParameterStore.load(run / "checkpoint")
    acfg = model_config(ds, cfg)
    videos = score_dataset(params, acfg, ds, cfg)
    write_scores(videos, ds.kind, Path(args.out), str(args.data or cfg.data_dir))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kind, videos = read_scores(Path(args.scores))
    if args.data:
        ds = D.load_dataset(args.data)
        if ds.kind != kind:
            raise ConfigError(f"scores are for {kind} but dataset is {ds.kind}")
        videos = labels_from_dataset(ds, videos)
    report = evaluate(kind, videos, cfg)
    body = report.to_dict()
    body["meta"] = _meta()
    text = json.dumps(body, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def grad_check_report(cfg: RunConfig) -> ad.GradCheckReport:
    g = cfg.grad_check
    rng = numpy_rng(cfg.seed, "grad_check")
    if g.target == "block":
        dims = len(g.extents)
        bcfg = cfg.ssmctb_config(dims, g.channels)
        params = B.init_params(bcfg, rng)
        x = rng.normal(size=tuple(g.extents) + (g.channels,))
        f = lambda p: B.ssmctb_forward(x, p, bcfg)[1]
    else:
        shape = tuple(g.extents) + (g.channels,)
        acfg = cfg.autoencoder_config(shape)
        params = dict(A.build(acfg, cfg.seed))
        x = rng.uniform(size=(2,) + shape)

        def f(p):
            out, lb = A.forward(p, x, acfg)
            lh = A.host_loss(out, x)
            return lh if lb is None else B.total_loss(lh, lb, cfg.ssmctb.lam)
    return ad.grad_check(f, params, step=g.step, max_elements=g.max_elements, seed=cfg.seed)


def cmd_grad_check(args) -> int:
    cfg = _load_config(args)
    rep = grad_check_report(cfg)
    tol = cfg.grad_check.tolerance
    body = {"target": cfg.grad_check.target, "max_rel_error": rep.max_rel_error, "tolerance": tol,
            "worst_path": rep.worst_path, "worst_index": rep.worst_index, "checked": rep.checked,
            "failure": rep.failure, "passed": rep.passed(tol)}
    sys.stdout.write(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if rep.passed(tol) else EXIT_NUMERICAL


def _parse_list(text: str | None, cast) -> list | None:
    if text is None:
        return None
    return [cast(t) for t in text.split(",") if t.strip()]


def _position_value(p):
    return None if p in (None, "none") else int(p)


def ablation_cells(cfg: RunConfig, grid: dict) -> list[dict]:
    ds_ = grid.get("dilation") or [cfg.ssmctb.dilation]
    ks = grid.get("sub_kernel_size") or [cfg.ssmctb.sub_kernel_size]
    ps = grid.get("position") or [cfg.autoencoder.ssmctb_position]
    ls = grid.get("lambda") or [cfg.ssmctb.lam]
    cells = []
    for d in ds_:
        for k in ks:
            for p in ps:
                for lam in ls:
                    if not 0 <= int(d) <= 4 or not 1 <= int(k) <= 3:
                        raise ConfigError(f"grid cell d={d}, k'={k} outside d in 0..4, k' in 1..3")
                    if _position_value(p) is not None and not 1 <= int(p) <= 4:
                        raise ConfigError(f"grid position {p} outside 1..4")
                    cells.append({"d": int(d), "k": int(k), "position": p, "lambda": float(lam)})
    return cells


def run_cell(cfg_dict: dict, cell: dict) -> dict:
    cfg = RunConfig.from_dict(cfg_dict).updated(**{
        "ssmctb.dilation": cell["d"], "ssmctb.sub_kernel_size": cell["k"], "ssmctb.lambda": cell["lambda"],
    })
    pos = _position_value(cell["position"])
    cfg = cfg.updated(**{"autoencoder.ssmctb_position": "none" if pos is None else pos})
    ds = D.load_dataset(cfg.data_dir)
    params, _, acfg = run_training(cfg, ds)
    report = evaluate(ds.kind, score_dataset(params, acfg, ds, cfg), cfg).to_dict()
    row = {"d": cell["d"], "k_prime": cell["k"], "position": "none" if pos is None else pos,
           "lambda": cell["lambda"]}
    for col in METRIC_COLUMNS:
        row[col] = report.get(col, "")
    return row


def ablation_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["d", "k_prime", "position", "lambda", *METRIC_COLUMNS], lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    if not cfg.data_dir:
        raise ConfigError("ablate needs data_dir (config or --data)")
    grid = {}
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        unknown = set(grid) - {"dilation", "sub_kernel_size", "position", "lambda"}
        if unknown:
            raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    for key, text, cast in (("dilation", args.d, int), ("sub_kernel_size", args.k, int),
                            ("position", args.positions, str), ("lambda", args.lambdas, float)):
        vals = _parse_list(text, cast)
        if vals:
            grid[key] = vals
    cells = ablation_cells(cfg, grid)
    cfg_dict = cfg.to_dict()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_cell, [cfg_dict] * len(cells), cells))
    else:
        rows = [run_cell(cfg_dict, c) for c in cells]
    text = ablation_csv(rows)
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssmctb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--kind", choices=("images", "videos"), default="images")
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--out", required=True)
    g.add_argument("--extents", type=int, nargs=2, default=(32, 32), metavar=("H", "W"))
    g.add_argument("--n-train", type=int, default=256)
    g.add_argument("--n-test", type=int, default=128)
    g.add_argument("--anomaly-fraction", type=float, default=0.5)
    g.add_argument("--n-videos", type=int, default=8)
    g.add_argument("--frames", type=int, default=64)
    g.add_argument("--kinds", help="comma-separated video anomaly kinds (empty string for none)")
    g.set_defaults(func=cmd_gen_data)

    def common(sp, out=True):
        sp.add_argument("--config", help="run config JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--data")
        if out:
            sp.add_argument("--out")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--lambda", dest="lam", type=float)
        sp.add_argument("--position", choices=("1", "2", "3", "4", "none"))

    t = sub.add_parser("train", help="train the autoencoder on the normal split")
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("score", help="score the test split with a trained run")
    s.add_argument("--run", required=True, help="directory written by train")
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", help="compute metrics from a score manifest")
    e.add_argument("--scores", required=True, help="score manifest.json")
    e.add_argument("--data", help="dataset directory (labels, masks, tracks)")
    e.add_argument("--config")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("grad-check", help="finite-difference check of the gradients")
    common(c, out=False)
    c.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("ablate", help="sweep d, k', position and lambda")
    common(a, out=False)
    a.add_argument("--grid", help="JSON with lists under dilation/sub_kernel_size/position/lambda")
    a.add_argument("--d", help="comma-separated dilation rates")
    a.add_argument("--k", help="comma-separated sub-kernel sizes")
    a.add_argument("--positions", help="comma-separated positions (1..4 or none)")
    a.add_argument("--lambdas", help="comma-separated lambda values")
    a.add_argument("--jobs", type=int, default=1)
    a.add_argument("--csv", help="output CSV path (stdout if omitted)")
    a.set_defaults(func=cmd_ablate)
    return p


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("SSMCTB_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError, KeyError, FileNotFoundError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
