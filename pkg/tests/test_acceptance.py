"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the terminal summary. The overfit criterion trains four 500-step runs and
dominates the runtime (several minutes on one core).
"""

import csv
import math
import time

import numpy as np
import pytest

from pano_gin import cli
from pano_gin import losses as L
from pano_gin import tensor as T
from pano_gin.attention import (attend, cosine_similarity, extract_patches, patch_mask,
                                replace_patches)
from pano_gin.checkpoint import load_checkpoint, save_checkpoint
from pano_gin.cubemap import cmp_to_erp, erp_to_cmp, latitude_band, split_side_strip, \
    stitch_side_faces
from pano_gin.data import load_image, save_image
from pano_gin.layers import Generator, GeneratorConfig, InpaintModel, ModelConfig, face_generator
from pano_gin.metrics import PSNR_INF, psnr, ssim
from pano_gin.tensor import GradTape, Tensor
from pano_gin.train import TrainConfig, Trainer, forward_pipeline

import acceptance_log
from gradcheck import EPS, TOL, check_op, rel_error
from test_cubemap import smooth_panorama
from test_metrics import direct_ssim
from test_tensor import OPS


def verdict(number, title, checks):
    """``checks`` maps a short label to a bool; all must hold."""
    failed = [k for k, ok in checks.items() if not ok]
    detail = f"{len(checks) - len(failed)}/{len(checks)} checks"
    if failed:
        detail += "; failed: " + ", ".join(failed)
    acceptance_log.record(number, title, not failed, detail)
    assert not failed, failed


# ---------------------------------------------------------------- 1

def composed_face_generator_error(dtype, seed=0, per_tensor=4):
    """Relative error of sampled Face Generator gradients (S=8, C=4) against central differences."""
    rng = np.random.default_rng(seed)
    gen = Generator(GeneratorConfig(4, 3, 4, True, "circular"), rng)
    for _, p in gen.named_parameters():
        p.data = p.data.astype(dtype)
    with T.precision(dtype):
        strip = Tensor(rng.random((1, 3, 8, 32)), requires_grad=True)
        mask = Tensor((rng.random((1, 1, 8, 32)) < 0.3).astype(np.float64))
        weight = Tensor(rng.standard_normal((1, 3, 8, 32)))

        def loss(_=None):
            return T.tsum(T.mul(face_generator(gen, strip, mask), weight))

        sources = [strip] + [p for _, p in gen.named_parameters()]
        with GradTape() as tape:
            value = loss()
        grads = tape.gradient(value, sources)
        analytic, numeric = [], []
        for src, g in zip(sources, grads):
            idx = rng.choice(src.size, min(per_tensor * (4 if src is strip else 1), src.size),
                             replace=False)
            fd = T.finite_difference(loss, src, EPS, idx)
            analytic.append(g.data.reshape(-1)[idx])
            numeric.append(fd.data.reshape(-1)[idx])
    return rel_error(np.concatenate(analytic), np.concatenate(numeric))


def test_criterion_01_gradient_oracle():
    start = time.perf_counter()
    checks = {}
    worst = {np.float32: 0.0, np.float64: 0.0}
    for name, (fn, arrays) in OPS.items():
        for dtype in (np.float32, np.float64):
            err = check_op(fn, arrays, dtype)
            worst[dtype] = max(worst[dtype], err)
            if err > TOL[dtype]:
                checks[f"{name}/{dtype.__name__}"] = False
    checks["ops float32 <= 1e-2"] = worst[np.float32] <= TOL[np.float32]
    checks["ops float64 <= 1e-5"] = worst[np.float64] <= TOL[np.float64]
    gen32 = composed_face_generator_error(np.float32)
    gen64 = composed_face_generator_error(np.float64)
    checks[f"face generator float32 {gen32:.1e} <= 1e-2"] = gen32 <= TOL[np.float32]
    checks[f"face generator float64 {gen64:.1e} <= 1e-5"] = gen64 <= TOL[np.float64]
    elapsed = time.perf_counter() - start
    checks[f"runtime {elapsed:.0f}s < 120s"] = elapsed < 120
    verdict(1, "gradient oracle", checks)


# ---------------------------------------------------------------- 2

def test_criterion_02_loss_units():
    def t(v):
        return Tensor(np.asarray(v, np.float64))

    def const_critic(value):
        return lambda v: T.add(T.mul(T.tsum(v, tuple(range(1, v.ndim))), 0.0), value)

    def close(a, b):
        return abs(a - b) <= 1e-6

    x4 = t(np.zeros((1, 1, 2, 2)))
    xh = t([[[[2.0, 2.0], [0.0, 0.0]]]])
    m4 = t([[[[1.0, 1.0], [0.0, 0.0]]]])
    half = t(np.full((1, 3, 2, 2), 0.5))
    zero3 = t(np.zeros((1, 3, 2, 2)))
    cr1 = L.cr_loss(zero3, half, half, zero3, const_critic(0.0), 1.0).item()
    cr2 = L.cr_loss(zero3, half, half, zero3, const_critic(0.0), 2.0).item()
    weights = L.LossWeights()
    ones = {k: 1.0 for k in L.COMPONENTS}
    only_g = L.LossWeights(0, 0, 0, 0.001, 0, 0)
    checks = {
        "g [1,3] -> -2": close(L.wgan_g_loss(t([1.0, 3.0])).item(), -2.0),
        "g zeros -> 0": close(L.wgan_g_loss(t([0.0, 0.0])).item(), 0.0),
        "g [-5] -> 5": close(L.wgan_g_loss(t([-5.0])).item(), 5.0),
        "d equal -> 0": close(L.wgan_d_loss(t([0.3, 0.9]), t([0.3, 0.9])).item(), 0.0),
        "d [2],[1] -> -1": close(L.wgan_d_loss(t([2.0]), t([1.0])).item(), -1.0),
        "d [0,0],[3,1] -> 2": close(L.wgan_d_loss(t([0.0, 0.0]), t([3.0, 1.0])).item(), 2.0),
        "gp unit norm -> 0": close(L.gradient_penalty(
            lambda v: T.mul(T.tsum(v, (1, 2, 3)), 0.5), x4, x4).item(), 0.0),
        "gp constant -> 1": close(L.gradient_penalty(const_critic(1.0), x4, x4).item(), 1.0),
        "gp pixel sum -> 1": close(L.gradient_penalty(
            lambda v: T.tsum(v, (1, 2, 3)), x4, x4).item(), 1.0),
        "l1 equal -> 0": close(L.l1_mask(x4, x4, m4).item(), 0.0)
        and close(L.l1_non_mask(x4, x4, m4).item(), 0.0),
        "l1_non_mask all-ones mask -> 0": close(L.l1_non_mask(xh, x4, t(np.ones((1, 1, 2, 2)))).item(), 0.0),
        "l1_mask hand sum -> 1": close(L.l1_mask(xh, x4, m4).item(), 1.0),
        "cr vanishing -> 0": close(L.cr_loss(half, half, half, zero3, const_critic(2.0)).item(), 0.0),
        "cr -> 1.5": close(cr1, 1.5),
        "cr alpha doubles second term": close(cr2 - cr1, 0.5),
        "total published -> 23.001": close(L.total_loss(ones, weights), 23.001),
        "total zero weights -> 0": close(L.total_loss(ones, L.LossWeights(0, 0, 0, 0, 0, 0)), 0.0),
        "total only g": close(L.total_loss({**ones, "g_wgan": 3.0}, only_g), 0.003),
    }
    verdict(2, "loss unit suite", checks)


# ---------------------------------------------------------------- 3

def test_criterion_03_gradient_penalty_case():
    x = Tensor(np.random.default_rng(0).random((1, 1, 2, 2)))
    value = L.gradient_penalty(lambda v: T.tsum(v, (1, 2, 3)), x,
                               Tensor(np.zeros((1, 1, 2, 2)))).item()
    verdict(3, "gradient penalty analytic case", {f"penalty {value:.9f} == 1": abs(value - 1) <= 1e-6})


# ---------------------------------------------------------------- 4

def test_criterion_04_geometry():
    rng = np.random.default_rng(0)
    faces = rng.random((6, 3, 16, 16)).astype(np.float32)
    inverse = np.array_equal(split_side_strip(stitch_side_faces(faces)), faces[:4])
    h = 128
    erp = smooth_panorama(h)
    back = cmp_to_erp(erp_to_cmp(erp, 64), h)
    band_psnr = psnr(back, erp, where=np.broadcast_to(latitude_band(h, 75.0), erp.shape))
    pano = rng.random((3, 32, 64))
    a, b = erp_to_cmp(pano, 16), erp_to_cmp(np.roll(pano, -16, axis=2), 16)
    yaw = all(np.array_equal(b[k], a[(k + 1) % 4]) for k in range(4))
    verdict(4, "geometry", {"stitch/split inverse": inverse,
                            f"round trip {band_psnr:.1f} dB >= 30": band_psnr >= 30.0,
                            "yaw permutation": yaw})


# ---------------------------------------------------------------- 5

def test_criterion_05_gating():
    model = InpaintModel(ModelConfig(face_size=32, channels=16), np.random.default_rng(0))
    layers = model.gated_layers()
    for layer in layers:
        layer.record_gates = True
    rng = np.random.default_rng(1)
    lo, hi = 1.0, 0.0
    with T.no_grad():
        for _ in range(10):
            x = rng.random((10, 6, 3, 32, 32)).astype(np.float32)
            mask = (rng.random((10, 6, 1, 32, 32)) < rng.uniform(0, 0.5)).astype(np.float32)
            forward_pipeline(model, x, mask, with_side=True)
            for layer in layers:
                lo = min(lo, float(layer.last_gate.min()))
                hi = max(hi, float(layer.last_gate.max()))
    # float64 so the fused two-branch matmul and the lone feature matmul round alike
    worst = 0.0
    with T.precision(np.float64):
        for layer in layers:
            layer.record_gates = False
            for _, p in layer.named_parameters():
                p.data = p.data.astype(np.float64)
            layer.gate_weight.data[...] = 0.0
            layer.gate_bias.data[...] = 0.0
            x = Tensor(rng.standard_normal((2, layer.in_ch, 8, 8)))
            feature = layer._activate(layer._conv(x, layer.feature_weight, layer.feature_bias)).data
            worst = max(worst, float(np.max(np.abs(layer(x).data - 0.5 * feature))))
    verdict(5, "gating invariant", {f"gates in (0,1): [{lo:.3g}, {hi:.7g}]": 0.0 < lo and hi < 1.0,
                                    f"zero gate -> half feature, max dev {worst:.1e}": worst <= 1e-6,
                                    f"{len(layers)} gated layers": len(layers) == 30})


# ---------------------------------------------------------------- 6

def test_criterion_06_patch_attention():
    rng = np.random.default_rng(0)
    checks = {}
    with T.precision(np.float64):
        feat = Tensor(rng.standard_normal((4, 8, 8)))
        grid = extract_patches(feat, 3)
        sim = cosine_similarity(grid.subset(np.arange(10)), grid.subset(np.arange(10, 36))).data
        checks["cosine in [-1, 1]"] = bool(np.all(np.abs(sim) <= 1 + 1e-12))
        same = cosine_similarity(grid.subset([3]), grid.subset([3])).data.item()
        checks["identical -> 1"] = abs(same - 1) <= 1e-12
        weights = T.softmax(T.mul(Tensor(sim), 10.0), axis=1).data
        checks["softmax rows sum to 1"] = bool(np.all(np.abs(weights.sum(1) - 1) <= 1e-5))
        known = Tensor(rng.standard_normal((1, 36)))
        copied = attend(Tensor(rng.uniform(-1, 1, (5, 1))), known, 0.1).data
        checks["single known patch copied"] = bool(np.allclose(copied, known.data, atol=1e-12))
        mask = np.zeros((8, 8))
        mask[2:4, 5] = 1
        flags = patch_mask(mask, 3, 1)
        m_idx, k_idx = np.flatnonzero(flags), np.flatnonzero(~flags)
        out = replace_patches(feat, cosine_similarity(grid.subset(m_idx), grid.subset(k_idx)),
                              flags, 3, 1, 0.1).data
        cover = np.zeros((8, 8), bool)
        for r, c in grid.coords[m_idx]:
            cover[r:r + 3, c:c + 3] = True
        checks["known region untouched"] = bool(np.array_equal(out[:, ~cover], feat.data[:, ~cover]))
        checks["missing region rebuilt"] = not np.array_equal(out[:, cover], feat.data[:, cover])
        scaled = cosine_similarity(grid.subset(m_idx), grid.subset(k_idx))
        known_scaled = grid.subset(k_idx)
        known_scaled.patches = T.mul(known_scaled.patches, 37.5)
        rescaled = cosine_similarity(grid.subset(m_idx), known_scaled)
        checks["argmax scale invariant"] = bool(np.array_equal(scaled.data.argmax(1),
                                                               rescaled.data.argmax(1)))
    verdict(6, "patch attention", checks)


# ---------------------------------------------------------------- 7

def overfit_run(gated, use_cr):
    trainer = Trainer(TrainConfig(face_size=32, channels=16, num_images=4, batch_size=2,
                                  lr=4e-4, steps=500, gated=gated, use_cr=use_cr, seed=0))
    start = time.perf_counter()
    reports = trainer.run(500)
    elapsed = time.perf_counter() - start
    finite = all(np.all(np.isfinite(r.as_row())) for r in reports)
    l1 = np.array([r.l1_mask for r in reports])
    return l1[:10].mean(), l1[-10:].mean(), elapsed, finite and len(reports) == 500


def test_criterion_07_overfit_and_ablations():
    checks = {}
    first, last, elapsed, ok = overfit_run(True, True)
    ratio = last / first
    checks[f"l1_mask ratio {ratio:.2f} < 0.5"] = ratio < 0.5
    checks[f"gated+CR run {elapsed:.0f}s < 600s"] = elapsed < 600
    checks["gated+CR finite"] = ok
    for gated, use_cr in ((False, False), (False, True), (True, False)):
        name = f"{'gated' if gated else 'vanilla'}/{'CR' if use_cr else 'no-CR'}"
        f, l_, _, ok = overfit_run(gated, use_cr)
        checks[f"{name} finite (ratio {l_ / f:.2f})"] = ok
    verdict(7, "overfit smoke test and ablations", checks)


# ---------------------------------------------------------------- 8

def test_criterion_08_metrics():
    rng = np.random.default_rng(0)
    a = np.full((3, 16, 16), 0.5)
    p1 = psnr(a, a + 10 / 255)
    p2 = psnr(a, a + 5 / 255)
    img = rng.random((3, 24, 24)) * 0.8
    shifted = img + 0.1
    diff = abs(ssim(img, shifted) - direct_ssim(img, shifted))
    verdict(8, "metrics oracle", {
        f"uniform 10/255 -> {p1:.3f} dB": abs(p1 - 28.13) <= 0.01,
        f"halving adds {p2 - p1:.3f} dB": abs(p2 - p1 - 6.02) <= 0.01,
        f"ssim vs direct oracle {diff:.1e}": diff <= 1e-6,
        "psnr sentinel": psnr(img, img) == PSNR_INF,
        "ssim sentinel": abs(ssim(img, img) - 1.0) <= 1e-12,
    })


# ---------------------------------------------------------------- 9

def test_criterion_09_determinism_and_persistence(tmp_path):
    cfg = TrainConfig(face_size=32, channels=16, num_images=4, steps=20, seed=11)
    a = [r.as_row() for r in Trainer(cfg).run(10)]
    b = [r.as_row() for r in Trainer(cfg).run(10)]
    straight = [r.as_row() for r in Trainer(cfg).run(20)]
    first = Trainer(cfg)
    first.run(10)
    save_checkpoint(tmp_path / "ck", first)
    resumed = [r.as_row() for r in load_checkpoint(tmp_path / "ck").run(20)]
    verdict(9, "determinism and persistence", {
        "same seed, identical reports": a == b,
        "resume matches uninterrupted for 10 steps": resumed == straight[10:],
    })


# ---------------------------------------------------------------- 10

def test_criterion_10_cli_end_to_end(tmp_path):
    def run(*argv):
        try:
            return cli.main([str(v) for v in argv])
        except SystemExit as exc:
            return exc.code

    data = tmp_path / "data"
    codes = {}
    codes["synth"] = run("--seed", 0, "synth", "--out", data, "--count", 3, "--height", 64)
    codes["project"] = run("project", "--in", data / "pano_0000.png", "--out", tmp_path / "faces",
                           "--face-size", 32)
    codes["project --inverse"] = run("project", "--inverse", "--in", tmp_path / "faces",
                                     "--out", tmp_path / "back.png")
    codes["train"] = run("--seed", 0, "train", "--data", data, "--steps", 50,
                         "--out-dir", tmp_path / "run")
    ckpt = tmp_path / "run" / "final"
    save_image(tmp_path / "zero.png", np.zeros((64, 128)))
    codes["infer zero mask"] = run("infer", "--ckpt", ckpt, "--in", data / "pano_0001.png",
                                   "--mask", tmp_path / "zero.png", "--out", tmp_path / "same.png")
    codes["mask"] = run("--seed", 3, "mask", "--face-size", 32, "--out", tmp_path / "mask.png")
    codes["infer"] = run("infer", "--ckpt", ckpt, "--in", data / "pano_0001.png",
                         "--mask", tmp_path / "mask.png", "--out", tmp_path / "filled.png")
    codes["eval"] = run("eval", "--ckpt", ckpt, "--data", data, "--bins", "0.1,0.2,0.3",
                        "--out", tmp_path / "report.csv")
    checks = {f"{k} exit 0": v == 0 for k, v in codes.items()}
    rows = list(csv.reader(open(tmp_path / "report.csv"))) if codes["eval"] == 0 else []
    checks["three-bin report"] = (len(rows) == 4 and rows[0] == ["bin", "n", "psnr", "ssim"]
                                  and [r[0] for r in rows[1:]] == ["0-0.1", "0.1-0.2", "0.2-0.3"]
                                  and all(int(r[1]) > 0 and math.isfinite(float(r[2]))
                                          for r in rows[1:]))
    if codes["infer zero mask"] == 0:
        same = np.array_equal(load_image(tmp_path / "same.png"), load_image(data / "pano_0001.png"))
    else:
        same = False
    checks["zero-mask infer returns input"] = same
    verdict(10, "end-to-end CLI", checks)
