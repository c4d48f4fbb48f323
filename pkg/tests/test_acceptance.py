"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py`` and read the "acceptance criteria"
section at the end of the report.
"""
import itertools
import time

import numpy as np
import pytest

from ssmctb import autodiff as ad
from ssmctb import cli
from ssmctb import data as D
from ssmctb import metrics as M
from ssmctb import transformer as Tr
from ssmctb.autoencoder import AutoencoderConfig, build, forward
from ssmctb.block import SsmctbConfig, init_params as block_params, ssmctb_forward
from ssmctb.config import RunConfig
from ssmctb.masked_conv import MaskedConvConfig, init_params as conv_params, masked_conv_preact
from ssmctb.params import stores_equal
from ssmctb.transformer import TransformerConfig

from test_masked_conv import dense_conv, dense_kernel
from test_metrics import pairwise_auc, random_videos, rank_precision_ap, sweep_oracle


# 1 ---------------------------------------------------------------------------------------

def test_c1_masked_conv_matches_dense_oracle(verdict):
    t0 = time.process_time()
    worst = 0.0
    cases = 0
    rng = np.random.default_rng(1)
    for dims, kp, d in itertools.product((2, 3), (1, 2), (0, 1, 3)):
        cfg = MaskedConvConfig(dims, 2, kp, d)
        extent = 7 if dims == 2 else 5
        for _ in range(50):
            x = rng.normal(size=(extent,) * dims + (2,))
            params = {k: rng.normal(size=v.shape) for k, v in conv_params(cfg, rng).items()}
            z = masked_conv_preact(x, params, cfg)
            worst = max(worst, float(np.max(np.abs(z - dense_conv(x, dense_kernel(params, cfg))))))
            cases += 1
    secs = time.process_time() - t0
    ok = worst <= 1e-12 and secs < 30
    verdict(1, ok, f"{cases} cases, max |diff| {worst:.2e}, {secs:.1f} s CPU")
    assert ok


# 2 ---------------------------------------------------------------------------------------

def test_c2_output_blind_to_its_own_position(verdict):
    rng = np.random.default_rng(2)
    failures = 0
    probes = 0
    for case in range(20):
        dims = 2 if case % 2 == 0 else 3
        cfg = MaskedConvConfig(dims, 3, int(rng.integers(1, 3)), int(rng.integers(0, 4)))
        extent = 6 if dims == 2 else 4
        x = rng.normal(size=(extent,) * dims + (3,))
        params = conv_params(cfg, rng)
        z = masked_conv_preact(x, params, cfg)
        for pos in np.ndindex(*(extent,) * dims):
            x2 = x.copy()
            x2[pos] += rng.normal(size=3) * 100
            failures += masked_conv_preact(x2, params, cfg)[pos].tobytes() != z[pos].tobytes()
            probes += 1
    ok = failures == 0
    verdict(2, ok, f"{probes} single-position perturbations, {failures} changed the output there")
    assert ok


# 3 ---------------------------------------------------------------------------------------

def test_c3_block_gradients(verdict):
    cfg = SsmctbConfig(MaskedConvConfig(2, 2, 1, 1), TransformerConfig(4, 2, 1))
    rng = np.random.default_rng(3)
    params = block_params(cfg, rng)
    x = rng.normal(size=(8, 8, 2))
    t0 = time.process_time()
    rep = ad.grad_check(lambda p: ssmctb_forward(x, p, cfg)[1], params, step=1e-5)
    secs = time.process_time() - t0
    ok = rep.passed(1e-4) and secs < 60
    verdict(3, ok, f"max rel error {rep.max_rel_error:.2e} over {rep.checked} elements "
                   f"(worst {rep.worst_path}), {secs:.1f} s CPU")
    assert ok


# 4 ---------------------------------------------------------------------------------------

def test_c4_transformer_identities(verdict):
    rng = np.random.default_rng(4)
    cfg = TransformerConfig(token_dim=8, heads=2, blocks=2)
    # zero attention and MLP weights leave the token stack unchanged
    identity_ok = True
    for c in (1, 3, 7):
        p = Tr.init_params(cfg, c, rng)
        p = {k: (np.zeros_like(v) if ".head" in k or ".mlp." in k else v) for k, v in p.items()}
        tokens = rng.normal(size=(2, c, 8)) * 5
        identity_ok &= Tr.run_blocks(tokens, p, cfg).tobytes() == tokens.tobytes()
    # gates strictly inside (0, 1)
    gate_ok = True
    for _ in range(100):
        c = int(rng.integers(1, 9))
        p = Tr.init_params(cfg, c, rng)
        g = Tr.gate_weights(rng.normal(size=(1, 6, 6, c)) * rng.uniform(0.1, 20), p, cfg)
        gate_ok &= bool(np.all((g > 0) & (g < 1)))
    # channel permutation equivariance with zero positional embeddings
    perm_ok = True
    for _ in range(100):
        c = int(rng.integers(2, 10))
        p = Tr.init_params(cfg, c, rng)
        p["transformer.pos"] = np.zeros_like(p["transformer.pos"])
        z = rng.normal(size=(2, 6, 6, c))
        perm = rng.permutation(c)
        perm_ok &= Tr.gate_weights(z, p, cfg)[:, perm].tobytes() == Tr.gate_weights(z[..., perm], p, cfg).tobytes()
    ok = identity_ok and gate_ok and perm_ok
    verdict(4, ok, f"identity {identity_ok}, gate range {gate_ok}, permutation bit-exact {perm_ok}")
    assert ok


# 5 ---------------------------------------------------------------------------------------

def test_c5_metric_oracles(verdict):
    rng = np.random.default_rng(5)
    auc_err = ap_err = mm_err = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, size=n)
        y[:2] = (0, 1)
        s = rng.normal(size=n) if rng.random() < 0.5 else rng.integers(0, 6, size=n).astype(float)
        auc_err = max(auc_err, abs(M.roc_auc(s, y) - pairwise_auc(s, y)))
        distinct = rng.permutation(n) + rng.random()
        ap_err = max(ap_err, abs(M.average_precision(distinct, y) - rank_precision_ap(distinct, y)))
        cuts = np.sort(rng.choice(np.arange(2, n), size=min(2, max(0, n - 3)), replace=False)) if n > 4 else []
        vids = [M.VideoScores(f"v{i}", s[a:b], y[a:b])
                for i, (a, b) in enumerate(zip([0, *cuts], [*cuts, n]))]
        mm_err = max(mm_err, abs(M.micro_auc(vids) - pairwise_auc(s, y)))
        per = [pairwise_auc(v.scores, v.labels) for v in vids if 0 < v.labels.sum() < v.labels.size]
        if per:
            mm_err = max(mm_err, abs(M.macro_auc(vids) - float(np.mean(per))))
    det_err = 0.0
    monotone = True
    grid = [0.0, 0.1, 0.2, 0.5, 0.9]
    for _ in range(20):
        vids = random_videos(rng)
        got = M.rbdc_tbdc(vids, 0.1, 0.1, max_thresholds=None)
        want = sweep_oracle(vids, 0.1, 0.1)
        det_err = max(det_err, abs(got[0] - want[0]), abs(got[1] - want[1]))
        r = [M.rbdc(vids, alpha=a, max_thresholds=None) for a in grid]
        t = [M.tbdc(vids, beta=b, max_thresholds=None) for b in grid]
        monotone &= all(u >= v for u, v in zip(r, r[1:])) and all(u >= v for u, v in zip(t, t[1:]))
    ok = auc_err <= 1e-12 and ap_err <= 1e-12 and mm_err <= 1e-12 and det_err <= 1e-12 and monotone
    verdict(5, ok, f"auc {auc_err:.1e}, ap {ap_err:.1e}, micro/macro {mm_err:.1e}, "
                   f"rbdc/tbdc {det_err:.1e}, monotone {monotone}")
    assert ok


# 6 ---------------------------------------------------------------------------------------

def test_c6_shapes_and_build_determinism(verdict):
    small = SsmctbConfig(MaskedConvConfig(2, 1, 1, 3), TransformerConfig(8, 2, 1))
    bad = []
    for shape in ((16, 16, 1), (16, 16, 4), (8, 8, 4, 1)):
        x = np.random.default_rng(6).uniform(size=(2,) + shape)
        for pos in (None, 1, 2, 3, 4):
            cfg = AutoencoderConfig(shape, (8, 16), (16, 8, 8), pos, small)
            p = build(cfg, 11)
            out, _ = forward(p, x, cfg)
            if out.shape != x.shape or not stores_equal(p, build(cfg, 11)):
                bad.append((shape, pos))
    ok = not bad
    verdict(6, ok, "positions 1-4 and none, images and volumes" + (f"; failures {bad}" if bad else ""))
    assert ok


# 7 ---------------------------------------------------------------------------------------

@pytest.mark.slow
def test_c7_image_training_end_to_end(verdict):
    cfg = RunConfig().updated(**{"seed": 7, "train.epochs": 10})
    ds = D.generate_images(seed=7)
    t0 = time.process_time()
    params, hist, acfg = cli.run_training(cfg, ds)
    rep = cli.evaluate("images", cli.score_dataset(params, acfg, ds, cfg), cfg)
    secs = time.process_time() - t0
    host_down = hist[-1]["host_loss"] < hist[0]["host_loss"]
    block_down = hist[-1]["block_loss"] < hist[0]["block_loss"]
    ok = host_down and block_down and rep.auroc >= 0.85 and secs < 300
    verdict(7, ok, f"host {hist[0]['host_loss']:.4g}->{hist[-1]['host_loss']:.4g}, "
                   f"block {hist[0]['block_loss']:.4g}->{hist[-1]['block_loss']:.4g}, "
                   f"AUROC {rep.auroc:.4f}, {secs:.0f} s CPU")
    assert ok


# 8 ---------------------------------------------------------------------------------------

VIDEO_EPOCHS = 3


@pytest.mark.slow
def test_c8_ssmctb_is_not_destructive_on_video(verdict):
    with_block, baseline = [], []
    for seed in range(5):
        ds = D.generate_videos(seed=seed)
        base = RunConfig().updated(**{"seed": seed, "train.epochs": VIDEO_EPOCHS})
        for cfg, sink in ((base, with_block),
                          (base.updated(**{"autoencoder.ssmctb_position": "none", "ssmctb.lambda": 0.0}), baseline)):
            params, _, acfg = cli.run_training(cfg, ds)
            sink.append(M.micro_auc(cli.score_dataset(params, acfg, ds, cfg)))
    a, b = float(np.mean(with_block)), float(np.mean(baseline))
    ok = a >= b - 0.02
    verdict(8, ok, f"mean micro AUC with block {a:.4f} vs baseline {b:.4f} (margin 0.02); "
                   f"per seed {np.round(with_block, 3).tolist()} vs {np.round(baseline, 3).tolist()}")
    assert ok


# 9 ---------------------------------------------------------------------------------------

@pytest.mark.slow
def test_c9_ablation_grid_reproducible(verdict, tmp_path):
    D.save_dataset(D.generate_videos(seed=9, n_videos=2, frames_per_video=16), tmp_path / "vid")
    cfg = RunConfig.from_dict({
        "seed": 9,
        "autoencoder": {"encoder_widths": [4, 8], "decoder_widths": [8, 4, 4]},
        "ssmctb": {"token_dim": 4, "heads": 2, "blocks": 1},
        "train": {"epochs": 1, "batch_size": 16},
    })
    cfg.dump(tmp_path / "tiny.json")
    outs = []
    for name in ("a.csv", "b.csv"):
        code = cli.main(["ablate", "--config", str(tmp_path / "tiny.json"), "--data", str(tmp_path / "vid"),
                         "--d", "0,1,2,3", "--k", "1,2,3", "--csv", str(tmp_path / name)])
        assert code == 0
        outs.append((tmp_path / name).read_bytes())
    rows = outs[0].decode().splitlines()[1:]
    cells = {tuple(r.split(",")[:2]) for r in rows}
    ok = len(rows) == 12 and len(cells) == 12 and outs[0] == outs[1]
    verdict(9, ok, f"{len(rows)} rows for 12 cells, byte-identical reruns {outs[0] == outs[1]}")
    assert ok
