"""Acceptance gate: ten behavioral criteria, one verdict line each.

Every test prints a single "[PASS]/[FAIL] criterion N" line with the
measured numbers before asserting, so the run report carries a verdict
per criterion regardless of outcome.  Criteria 7 and 8 train real models
and dominate the suite's runtime.
"""

import math
import os
import time
from dataclasses import replace

import numpy as np

from fcfp import autodiff as ad
from fcfp.autodiff import Tensor, backward, grad_check, reset_tape
from fcfp.checkpoint import load_into, save_checkpoint
from fcfp.config import Config, parse_config_text
from fcfp.coords import axis_centers, flat_coords, nearest_index
from fcfp.losses import combined_loss
from fcfp.metrics import dice_per_class, hd95_pair
from fcfp.pipeline import Q2aModel
from fcfp.pyramid import Fcfp, pa_coordinate, pa_latent, subcell_factors, voting_weights
from fcfp.querygen import QueryGenerator
from fcfp.rng import Rng
from fcfp.synth import make_dataset
from fcfp.train import build_model, run_ablations, train_run
from fcfp.verify import _check_op_grads

GLAS_TAU = (-4.5 * math.log(2.0), 2.5 * math.log(2.0))

TINY_RUN = dict(
    channels=(4, 8, 8, 8),
    k=2,
    aligned_width=8,
    cell_width=2,
    fcfp_hidden=(16,),
    head_hidden=8,
    image_size=32,
    train_res=16,
    n_train=4,
    n_val=2,
    batch_size=4,
    epochs=2,
)


def _verdict(num: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


# ---------------------------------------------------------------- criterion 1


def test_criterion_01_gradient_oracle():
    t0 = time.perf_counter()
    worst_op = _check_op_grads()

    rng = Rng(101)
    model = Q2aModel(
        in_channels=1,
        n_classes=2,
        channels=(4, 8, 8, 8),
        k=2,
        s=2,
        enc_levels=2,
        cell_width=2,
        aligned_width=8,
        fcfp_hidden=(16,),
        head_hidden=8,
        rng=Rng(303).child(0),
        dtype=np.float64,
    )
    level_hw = [(8, 8), (4, 4), (2, 2), (1, 1)]
    maps = [
        Tensor(rng.uniform_array((1, c, h, w), -1.0, 1.0), requires_grad=True)
        for c, (h, w) in zip((4, 8, 8, 8), level_hw)
    ]
    coords = flat_coords(2, 2)
    labels = np.array([[0, 1, 1, 0]])
    decoder_params = [t for n, t in model.named_parameters() if not n.startswith("enc")]

    def fn():
        out = model.decode(maps, coords)
        return combined_loss(out["logits"], labels)[0]

    worst_full = grad_check(fn, [*maps, *decoder_params])
    elapsed = time.perf_counter() - t0
    _verdict(
        1,
        worst_full < 1e-4 and worst_op < 1e-8 and elapsed < 120.0,
        f"full-loss grad check worst rel err {worst_full:.2e} (< 1e-4), "
        f"per-op worst {worst_op:.2e} (< 1e-8), {elapsed:.0f}s (< 120s)",
    )


# ---------------------------------------------------------------- criterion 2


def test_criterion_02_aggregation_degeneracy():
    # 1000 random queries whose whole subcell box sits inside one
    # nearest-region of an 8x8 grid: aggregation must reduce to the plain
    # nearest lookup bitwise, in both the latent and the coordinate.
    rng = Rng(404)
    n, gh, gw = 1000, 8, 8
    half_pitch = 1.0 / gh
    ax = axis_centers(gw)
    ay = axis_centers(gh)

    cl = Tensor(rng.uniform_array((1, gh * gw, 6), -1.0, 1.0))
    ix = np.array([rng.randbelow(gw) for _ in range(n)])
    iy = np.array([rng.randbelow(gh) for _ in range(n)])
    wq = 2.0**-7 + rng.uniform_array((n,)) * (0.24 - 2.0**-7)
    hq = 2.0**-7 + rng.uniform_array((n,)) * (0.24 - 2.0**-7)
    jx = (rng.uniform_array((n,)) * 2 - 1) * (half_pitch - wq / 4) * 0.999
    jy = (rng.uniform_array((n,)) * 2 - 1) * (half_pitch - hq / 4) * 0.999
    px = ax[ix] + jx
    py = ay[iy] + jy

    idx_n = nearest_index(np.stack([px, py], axis=-1), gh, gw)
    codes, centers = [], []
    for fy, fx in subcell_factors(2):
        sub = np.stack([px + wq * fx, py + hq * fy], axis=-1)
        idx = nearest_index(sub, gh, gw)
        assert np.array_equal(idx, idx_n)  # in-region by construction
        codes.append(ad.gather_rows(cl, idx[None, :]))
        centers.append((ax[idx % gw][None, :, None], ay[idx // gw][None, :, None]))

    z_pa = pa_latent(codes)
    z_n = ad.gather_rows(cl, idx_n[None, :])
    weights, bad = voting_weights(codes)
    ppx, ppy = pa_coordinate(centers, weights)

    latent_ok = np.array_equal(z_pa.data, z_n.data)
    coord_ok = np.array_equal(ppx.data, ax[idx_n % gw][None, :, None]) and np.array_equal(
        ppy.data, ay[idx_n // gw][None, :, None]
    )
    _verdict(
        2,
        latent_ok and coord_ok and not bad.any(),
        f"{n} in-region queries: latent bitwise equal {latent_ok}, "
        f"coordinate bitwise equal {coord_ok}",
    )


# ---------------------------------------------------------------- criterion 3


def test_criterion_03_voting_normalization():
    n, c = 10_000, 8
    rng = Rng(77)
    codes = [Tensor(rng.uniform_array((n, c), -2.0, 2.0)) for _ in range(4)]
    centers = [(rng.uniform_array((n, 1), -1.0, 1.0), rng.uniform_array((n, 1), -1.0, 1.0)) for _ in range(4)]

    weights, bad = voting_weights(codes)
    total = sum(w.data for w in weights)
    norm_err = float(np.abs(total - 1.0).max())

    z = pa_latent(codes)
    ppx, ppy = pa_coordinate(centers, weights)
    drift = 0.0
    for perm in ([3, 2, 1, 0], [1, 2, 3, 0]):
        codes_p = [codes[j] for j in perm]
        centers_p = [centers[j] for j in perm]
        weights_p, _ = voting_weights(codes_p)
        for i, j in enumerate(perm):
            drift = max(drift, float(np.abs(weights_p[i].data - weights[j].data).max()))
        drift = max(drift, float(np.abs(pa_latent(codes_p).data - z.data).max()))
        qx, qy = pa_coordinate(centers_p, weights_p)
        drift = max(drift, float(np.abs(qx.data - ppx.data).max()))
        drift = max(drift, float(np.abs(qy.data - ppy.data).max()))

    _verdict(
        3,
        norm_err < 1e-12 and drift < 1e-9 and not bad.any(),
        f"max |sum(weights) - 1| {norm_err:.2e} (< 1e-12) over {n} code sets; "
        f"permutation drift {drift:.2e} (< 1e-9)",
    )


# ---------------------------------------------------------------- criterion 4


def test_criterion_04_stop_grad_separation():
    # randomized corner-straddling probes: the coordinate path must carry
    # zero map gradient by default and a nonzero one with the cut removed
    rng = Rng(909)
    f_stop = Fcfp((4,), s=2, hidden=(8,), rng=Rng(5).child(0), dtype=np.float64, stop_grad_coord=True)
    f_free = Fcfp((4,), s=2, hidden=(8,), rng=Rng(5).child(1), dtype=np.float64, stop_grad_coord=False)
    boundaries = np.array([-0.5, -0.25, 0.0, 0.25, 0.5])

    def scalar(v):
        return Tensor(np.full((1, 1, 1), float(v)))

    stop_zero = True
    min_free = np.inf
    for _ in range(20):
        wv = 0.16 + rng.uniform() * 0.08
        hv = 0.16 + rng.uniform() * 0.08
        sx = 1.0 if rng.uniform() < 0.5 else -1.0
        sy = 1.0 if rng.uniform() < 0.5 else -1.0
        pxv = boundaries[rng.randbelow(len(boundaries))] + sx * (0.002 + rng.uniform() * 0.008)
        pyv = boundaries[rng.randbelow(len(boundaries))] + sy * (0.002 + rng.uniform() * 0.008)

        grads = {}
        for tag, f in (("stop", f_stop), ("free", f_free)):
            fmap = Tensor(rng.uniform_array((1, 64, 4), -1.0, 1.0), requires_grad=True)
            reset_tape()
            _, relx, rely = f._pa_level(fmap, 8, 8, scalar(pxv), scalar(pyv), scalar(wv), scalar(hv))
            backward(ad.reduce_sum(relx * relx + rely * rely))
            grads[tag] = None if fmap.grad is None else fmap.grad.copy()

        stop_zero = stop_zero and (grads["stop"] is None or np.all(grads["stop"] == 0.0))
        free_mag = 0.0 if grads["free"] is None else float(np.abs(grads["free"]).max())
        min_free = min(min_free, free_mag)

    _verdict(
        4,
        stop_zero and min_free > 0.0,
        f"20 boundary-straddling probes: default coordinate-path map gradient exactly "
        f"zero {stop_zero}; without the cut, smallest max|grad| {min_free:.2e} > 0",
    )


# ---------------------------------------------------------------- criterion 5


def test_criterion_05_query_range_invariants():
    n, k = 100_000, 4
    lo, hi = 2.0**-7, 2.0**-2
    ok = True
    extremes = []
    for dtype in (np.float32, np.float64):
        gen = QueryGenerator((32, 64, 96, 128), k, *GLAS_TAU, Rng(8), dtype)
        rng = Rng(606)
        raw = rng.normal_array((n, 4 * k), 0.0, 50.0, dtype=dtype)
        spikes = np.array([[1e6, -1e6] * (2 * k), [-1e6, 1e6] * (2 * k)], dtype=dtype)
        raw = np.concatenate([raw, spikes, np.zeros((1, 4 * k), dtype=dtype)])
        dx, dy, wq, hq = gen.queries_from_raw(Tensor(raw[None]))
        for t in (dx, dy):
            ok = ok and bool(np.all(t.data > -1.0) and np.all(t.data < 1.0))
        for t in (wq, hq):
            ok = ok and bool(np.all(t.data > lo) and np.all(t.data < hi))
        extremes.append(
            (
                float(max(np.abs(dx.data).max(), np.abs(dy.data).max())),
                float(min(wq.data.min(), hq.data.min())),
                float(max(wq.data.max(), hq.data.max())),
            )
        )

    _verdict(
        5,
        ok,
        f"{n} random inputs per dtype plus saturation spikes: dx/dy strictly inside "
        f"(-1, 1) and w/h strictly inside (2^-7, 2^-2) is {ok}; f32 extremes "
        f"max|d| {extremes[0][0]:.10f}, w/h span [{extremes[0][1]:.10f}, {extremes[0][2]:.10f}]",
    )


# ---------------------------------------------------------------- criterion 6


def test_criterion_06_arbitrary_resolution_decode(tmp_path):
    cfg = replace(Config(), n_train=60, n_val=10, epochs=8)
    res = train_run(cfg, out_dir=str(tmp_path / "run"))
    model = build_model(cfg, Rng(cfg.seed).child(0))
    load_into(res["paths"]["best"], model.named_parameters())

    pool_x, _ = make_dataset(cfg.n_train + 1, cfg.image_size, cfg.n_classes, Rng(cfg.data_seed))
    x = Tensor(pool_x[cfg.n_train : cfg.n_train + 1])

    shapes_ok = True
    worst_sum = 0.0
    for hq, wq in ((17, 17), (64, 64), (100, 40)):
        out = model.infer_maps(x, (hq, wq))
        shapes_ok = shapes_ok and out["probs"].shape == (cfg.n_classes, hq, wq)
        shapes_ok = shapes_ok and out["pred"].shape == (hq, wq)
        shapes_ok = shapes_ok and out["queries"].shape == (4 * cfg.k, hq, wq)
        shapes_ok = shapes_ok and out["aligned"].shape == (cfg.k * cfg.aligned_width, hq, wq)
        worst_sum = max(worst_sum, float(np.abs(out["probs"].sum(axis=0) - 1.0).max()))

    _verdict(
        6,
        shapes_ok and worst_sum <= 1e-6,
        f"one checkpoint decoded at 17x17, 64x64, 100x40 with consistent map shapes "
        f"{shapes_ok}; max |softmax sum - 1| {worst_sum:.2e} (<= 1e-6)",
    )


# ---------------------------------------------------------------- criterion 7


def test_criterion_07_comparative_benchmark():
    t0 = time.perf_counter()
    q2a, base = [], []
    for seed in (1, 2, 3):
        q2a.append(train_run(replace(Config(), model="q2a", seed=seed))["val_dice"])
        base.append(
            train_run(replace(Config(), model="baseline", baseline_sample="nearest", seed=seed))["val_dice"]
        )
    elapsed = time.perf_counter() - t0
    mq, mb = float(np.mean(q2a)), float(np.mean(base))

    _verdict(
        7,
        all(d >= 0.85 for d in q2a + base) and mq >= mb and elapsed <= 2700.0,
        f"query decoder {q2a[0]:.4f}/{q2a[1]:.4f}/{q2a[2]:.4f} (mean {mq:.4f}) vs "
        f"nearest baseline {base[0]:.4f}/{base[1]:.4f}/{base[2]:.4f} (mean {mb:.4f}); "
        f"all >= 0.85, mean margin {mq - mb:+.4f}; {elapsed:.0f}s (<= 2700s)",
    )


# ---------------------------------------------------------------- criterion 8


def test_criterion_08_ablation_direction(tmp_path):
    out_csv = tmp_path / "ablation.csv"
    records = run_ablations(Config(), seeds=[1, 2, 3], out_csv=str(out_csv))

    emitted = out_csv.exists() and len(out_csv.read_text().strip().splitlines()) == 1 + 28
    means = {r["variant"]: r["dice"] for r in records if r["seed"] == "mean"}
    full, no_pa = means["full"], means["no_pa"]

    _verdict(
        8,
        emitted and len(records) == 28 and full >= no_pa,
        f"7-variant sweep over seeds 1-3 emitted ({len(records)} records); "
        f"full mean {full:.4f} >= no_pa mean {no_pa:.4f} (margin {full - no_pa:+.4f}); "
        f"all means: {', '.join(f'{k} {v:.4f}' for k, v in means.items())}",
    )


# ---------------------------------------------------------------- criterion 9


def _dice_oracle(p, g):
    p = np.asarray(p, dtype=bool)
    g = np.asarray(g, dtype=bool)
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def _boundary_oracle(mask):
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    pts = []
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    rr, cc = r + dy, c + dx
                    if rr < 0 or rr >= h or cc < 0 or cc >= w or not mask[rr, cc]:
                        pts.append((r, c))
                        break
                else:
                    continue
                break
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _hd95_oracle(pm, gm):
    pa = _boundary_oracle(pm)
    ga = _boundary_oracle(gm)
    if pa.size == 0 and ga.size == 0:
        return 0.0
    if pa.size == 0 or ga.size == 0:
        h, w = np.asarray(pm).shape
        return float(math.hypot(h, w))

    def directed(a, b):
        dmat = np.hypot(a[:, None, 0] - b[None, :, 0], a[:, None, 1] - b[None, :, 1])
        mins = sorted(dmat.min(axis=1).tolist())
        return mins[math.ceil(0.95 * len(mins)) - 1]

    return max(directed(pa, ga), directed(ga, pa))


def _blob(rng, h, w):
    m = np.zeros((h, w), dtype=bool)
    for _ in range(rng.randbelow(3)):
        cy, cx = rng.randbelow(h), rng.randbelow(w)
        rad = 1 + rng.randbelow(max(2, min(h, w) // 4))
        yy, xx = np.mgrid[0:h, 0:w]
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= rad * rad
    return m


def test_criterion_09_metric_oracles():
    rng = Rng(515)
    mismatches = []
    for i in range(500):
        h = 3 + rng.randbelow(62)
        w = 3 + rng.randbelow(62)
        p = _blob(rng.child(2 * i), h, w)
        g = _blob(rng.child(2 * i + 1), h, w)
        if dice_per_class(p.astype(np.int64), g.astype(np.int64), 2)[1] != _dice_oracle(p, g):
            mismatches.append(f"dice pair {i}")
        if hd95_pair(p, g) != _hd95_oracle(p, g):
            mismatches.append(f"hd95 pair {i}")

    _verdict(
        9,
        not mismatches,
        "dice and hd95 exactly match brute force on 500 random pairs up to 64x64"
        if not mismatches
        else f"{len(mismatches)} mismatches, first: {mismatches[0]}",
    )


# --------------------------------------------------------------- criterion 10


def test_criterion_10_determinism_and_presets(tmp_path):
    # fixed-seed training reruns byte-identically
    cfg = replace(Config(), **TINY_RUN)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    train_run(cfg, out_dir=str(d1))
    train_run(cfg, out_dir=str(d2))
    rerun_ok = all(
        (d1 / name).read_bytes() == (d2 / name).read_bytes() for name in ("metrics.csv", "last.ckpt")
    )

    # checkpoint save -> load -> save is byte-identical
    model_a = build_model(cfg, Rng(11).child(0))
    model_b = build_model(cfg, Rng(12).child(0))
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(str(p1), [(n, t.data) for n, t in model_a.named_parameters()])
    load_into(str(p1), model_b.named_parameters())
    save_checkpoint(str(p2), [(n, t.data) for n, t in model_b.named_parameters()])
    ckpt_ok = p1.read_bytes() == p2.read_bytes()

    # published presets parse into runnable models with the stated values
    glas = parse_config_text("preset = glas\n")
    syn = parse_config_text("preset = synapse\n")
    preset_ok = (
        glas.k == 4
        and syn.k == 3
        and glas.aligned_width == syn.aligned_width == 64
        and glas.cell_width == syn.cell_width == 2
        and glas.enc_levels == syn.enc_levels == 2
        and np.isclose(glas.tau1, GLAS_TAU[0])
        and np.isclose(glas.tau2, GLAS_TAU[1])
        and np.isclose(syn.tau1, math.log(2.0 / 51.0))
        and np.isclose(syn.tau2, 2.0 * math.log(2.0))
    )
    for cfg_p in (glas, syn):
        model = build_model(cfg_p, Rng(3).child(0))
        maps = [
            Tensor(np.zeros((1, c, 64 // st, 64 // st), dtype=np.float32))
            for c, st in zip(cfg_p.channels, (2, 4, 8, 16))
        ]
        with ad.no_grad():
            out = model.decode(maps, flat_coords(2, 2))
        preset_ok = preset_ok and out["logits"].data.shape == (1, 4, cfg_p.n_classes)
        preset_ok = preset_ok and bool(np.isfinite(out["logits"].data).all())

    _verdict(
        10,
        rerun_ok and ckpt_ok and preset_ok,
        f"fixed-seed rerun byte-identical {rerun_ok}; save/load/save byte-identical "
        f"{ckpt_ok}; glas/synapse presets parse, build and decode {preset_ok}",
    )
