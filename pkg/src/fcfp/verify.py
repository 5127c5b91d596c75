"""Built-in self verification: fast numeric checks runnable from the CLI.

Each check prints one status line; run_verification returns True only if
all pass.  The suite is intentionally sensitive to injected faults (see
autodiff.set_fault), which is how the verification machinery itself is
tested: arming a fault must turn the run red.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, grad_check, reset_tape
from .checkpoint import load_checkpoint, save_checkpoint
from .coords import axis_centers, flat_coords
from .losses import combined_loss
from .pipeline import Ablation, Q2aModel
from .pyramid import Fcfp, pa_latent, voting_weights
from .rng import Rng


def _check_op_grads() -> float:
    rng = Rng(101)
    worst = 0.0

    x = Tensor(rng.uniform_array((3, 4), -2.0, 2.0), requires_grad=True)
    for fn in (ad.tanh, ad.sin, ad.cos, ad.exp):
        worst = max(worst, grad_check(lambda f=fn: ad.reduce_mean(f(x)), x))
    xp = Tensor(rng.uniform_array((3, 4), 0.5, 3.0), requires_grad=True)
    worst = max(worst, grad_check(lambda: ad.reduce_mean(ad.log(xp)), xp))
    worst = max(worst, grad_check(lambda: ad.reduce_mean(ad.sqrt(xp)), xp))

    a = Tensor(rng.uniform_array((2, 5), -1.0, 1.0), requires_grad=True)
    b = Tensor(rng.uniform_array((5,), 0.5, 1.5), requires_grad=True)
    worst = max(worst, grad_check(lambda: ad.reduce_mean(a * b + a / b - b), [a, b]))

    m = Tensor(rng.uniform_array((4, 3), -1.0, 1.0), requires_grad=True)
    w = Tensor(rng.uniform_array((3, 2), -1.0, 1.0), requires_grad=True)
    worst = max(worst, grad_check(lambda: ad.reduce_mean(ad.matmul(m, w)), [m, w]))

    img = Tensor(rng.uniform_array((1, 2, 6, 6), -1.0, 1.0), requires_grad=True)
    ker = Tensor(rng.uniform_array((3, 2, 3, 3), -0.5, 0.5), requires_grad=True)
    bias = Tensor(rng.uniform_array((3,), -0.1, 0.1), requires_grad=True)
    worst = max(
        worst,
        grad_check(lambda: ad.reduce_mean(ad.conv2d(img, ker, bias, stride=2, padding=1)), [img, ker, bias]),
    )

    src = Tensor(rng.uniform_array((5, 3), -1.0, 1.0), requires_grad=True)
    idx = np.array([0, 2, 2, 4, 1])
    worst = max(worst, grad_check(lambda: ad.reduce_mean(ad.gather_rows(src, idx)), src))
    return worst


def _decode_setup(ablation: Ablation = Ablation()):
    """Tiny f64 model plus a synthetic feature pyramid (finest level 8x8)."""
    model = Q2aModel(
        in_channels=1, n_classes=2, channels=(4, 8, 8, 8), k=2, s=2,
        enc_levels=2, cell_width=2, aligned_width=8, fcfp_hidden=(16, 12),
        head_hidden=8, ablation=ablation, rng=Rng(42).child(0), dtype=np.float64,
    )
    fmaps = [
        Tensor(Rng(99).child(i).normal_array((1, c, h, w), std=0.5), requires_grad=True)
        for i, (c, (h, w)) in enumerate(zip((4, 8, 8, 8), [(8, 8), (4, 4), (2, 2), (1, 1)]))
    ]
    coords = flat_coords(6, 6)
    labels = (np.arange(36).reshape(1, 36) // 3) % 2
    return model, fmaps, coords, labels


def _check_decode_grad() -> float:
    """Full loss gradient through generator, pyramid and head vs central
    differences.  Probes the feature maps and the small decoder params."""
    model, fmaps, coords, labels = _decode_setup()
    probe = list(fmaps) + [t for _, t in model.named_parameters() if t.size <= 8][:4]

    def run():
        out = model.decode(fmaps, coords)
        loss, _, _ = combined_loss(out["logits"], labels)
        return loss

    return grad_check(run, probe)


def _check_voting() -> float:
    rng = Rng(202)
    worst = 0.0
    for _ in range(20):
        codes = [Tensor(rng.normal_array((1, 8, 6))) for _ in range(4)]
        weights, bad = voting_weights(codes)
        if bad.any():
            return float("inf")
        s = sum(w.data for w in weights)
        worst = max(worst, float(np.abs(s - 1.0).max()))
    return worst


def _check_permutation() -> float:
    """Reordering the subcells must not change the latent or the weights
    beyond f64 reassociation noise."""
    rng = Rng(505)
    worst = 0.0
    for _ in range(10):
        codes = [Tensor(rng.normal_array((1, 16, 6))) for _ in range(4)]
        perm = [int(i) for i in rng.uniform_array((4,)).argsort()]
        base_w, _ = voting_weights(codes)
        perm_w, _ = voting_weights([codes[i] for i in perm])
        for slot in range(4):
            worst = max(worst, float(np.abs(base_w[perm[slot]].data - perm_w[slot].data).max()))
        worst = max(worst, float(np.abs(pa_latent(codes).data - pa_latent([codes[i] for i in perm]).data).max()))
    return worst


def _check_degeneracy() -> bool:
    rng = Rng(303)
    f = Fcfp((8,), s=2, rng=rng.child(0), dtype=np.float64)
    h = w = 8
    cl = Tensor(rng.child(1).normal_array((1, h * w, 8)))
    cx = axis_centers(w)[3]
    cy = axis_centers(h)[5]
    px = Tensor(np.full((1, 4, 1), cx))
    py = Tensor(np.full((1, 4, 1), cy))
    tiny = Tensor(np.full((1, 4, 1), 2.0**-7))
    z, relx, rely = f._pa_level(cl, h, w, px, py, tiny, tiny)
    code_ok = np.array_equal(z.data[0, 0], cl.data[0, 5 * w + 3])
    coord_ok = bool(np.all(relx.data == 0.0) and np.all(rely.data == 0.0))
    return code_ok and coord_ok


def _check_stop_grad() -> bool:
    """Coordinate-path gradient is exactly zero by default, nonzero with
    the stop cut removed.

    The probing loss touches only the aggregated coordinate (via the
    query-to-coordinate offsets), and the query cell is centered near a
    pixel corner so its subcells hit four distinct pixels; one-axis
    straddles are useless here because they yield exactly uniform votes.
    """
    def coord_loss_grad(stop: bool):
        f = Fcfp((4,), s=2, enc_levels=2, cell_width=2, aligned_width=8,
                 hidden=(16,), rng=Rng(7).child(0), dtype=np.float64,
                 stop_grad_coord=stop)
        cl = Tensor(Rng(11).normal_array((1, 64, 4)), requires_grad=True)
        px = Tensor(np.full((1, 2, 1), 0.013))
        py = Tensor(np.full((1, 2, 1), -0.009))
        wq = Tensor(np.full((1, 2, 1), 0.22))
        hq = Tensor(np.full((1, 2, 1), 0.21))
        reset_tape()
        _, relx, rely = f._pa_level(cl, 8, 8, px, py, wq, hq)
        backward(ad.reduce_sum(relx * relx + rely * rely))
        return cl.grad

    g_default = coord_loss_grad(True)
    g_free = coord_loss_grad(False)
    default_zero = g_default is None or not np.any(g_default)
    free_nonzero = g_free is not None and float(np.abs(g_free).max()) > 1e-6
    return default_zero and free_nonzero


def _check_checkpoint_roundtrip() -> bool:
    rng = Rng(404)
    named = [
        ("a.w", rng.normal_array((3, 4), dtype=np.float32)),
        ("a.b", rng.normal_array((4,), dtype=np.float32)),
        ("deep.block.w", rng.normal_array((2, 2, 3, 3), dtype=np.float64)),
    ]
    with tempfile.TemporaryDirectory() as d:
        p1 = os.path.join(d, "one.ckpt")
        p2 = os.path.join(d, "two.ckpt")
        save_checkpoint(p1, named)
        loaded = load_checkpoint(p1)
        save_checkpoint(p2, loaded)
        with open(p1, "rb") as f1, open(p2, "rb") as f2:
            return f1.read() == f2.read()


def run_verification(out=None) -> bool:
    """Run all self checks; prints one line each; True if everything passed."""
    say = (lambda s: print(s, file=out)) if out is not None else print
    checks = []

    err = _check_op_grads()
    checks.append(("op gradients vs central differences", err < 1e-8, f"max rel err {err:.2e}"))

    err = _check_decode_grad()
    checks.append(("decode-path loss gradient", err < 1e-6, f"max rel err {err:.2e}"))

    err = _check_voting()
    checks.append(("vote weights sum to one", err < 1e-12, f"max |sum-1| {err:.2e}"))

    err = _check_permutation()
    checks.append(("subcell permutation invariance", err < 1e-9, f"max diff {err:.2e}"))

    ok = _check_degeneracy()
    checks.append(("aggregation degenerates to nearest lookup", ok, "bitwise" if ok else "MISMATCH"))

    ok = _check_stop_grad()
    checks.append(("coordinate stop-grad separation", ok, "zero cut / live bypass" if ok else "LEAK"))

    ok = _check_checkpoint_roundtrip()
    checks.append(("checkpoint round trip", ok, "byte-identical" if ok else "MISMATCH"))

    all_ok = True
    for name, ok, detail in checks:
        mark = "ok " if ok else "FAIL"
        say(f"[{mark}] {name}: {detail}")
        all_ok = all_ok and ok
    return all_ok
