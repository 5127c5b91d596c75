"""Training and evaluation harness for the synthetic benchmark.

A run is fully determined by its Config: the dataset comes from
`data_seed` (shared across training seeds so every seed sees the same
images), while model init and batch shuffling come from `seed`.  Training
decodes a coarse coordinate grid (`train_res`); evaluation decodes at the
native image resolution.  Per-epoch metric rows deliberately leave out
wall-clock timing so the CSV is byte-identical across reruns of a seed.
"""

from __future__ import annotations

import csv
import os
import time
from dataclasses import replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_into, save_checkpoint
from .config import Config, config_to_text
from .coords import flat_coords, nearest_index
from .losses import combined_loss
from .metrics import foreground_dice, foreground_hd95
from .optim import Adam, ReduceOnPlateau, Sgd, poly_lr
from .pipeline import ABLATION_ORDER, Ablation, BaselineModel, Q2aModel
from .rng import Rng
from .synth import make_dataset

METRICS_HEADER = ["epoch", "split", "dice", "hd95", "loss", "lr"]


def build_model(cfg: Config, rng: Rng, dtype=np.float32):
    if cfg.model == "q2a":
        return Q2aModel(
            in_channels=cfg.in_channels,
            n_classes=cfg.n_classes,
            channels=cfg.channels,
            k=cfg.k,
            s=cfg.s,
            enc_levels=cfg.enc_levels,
            cell_width=cfg.cell_width,
            aligned_width=cfg.aligned_width,
            fcfp_hidden=cfg.fcfp_hidden,
            head_hidden=cfg.head_hidden,
            tau1=cfg.tau1,
            tau2=cfg.tau2,
            ablation=Ablation.from_name(cfg.ablation),
            rng=rng,
            dtype=dtype,
        )
    # the baseline's decoder is sized against the matching query decoder
    ref = build_model(replace(cfg, model="q2a", ablation="none"), Rng(0), dtype)
    return BaselineModel(
        in_channels=cfg.in_channels,
        n_classes=cfg.n_classes,
        channels=cfg.channels,
        target_decoder_params=ref.decoder_param_count(),
        sample=cfg.baseline_sample,
        rng=rng,
        dtype=dtype,
    )


def _batches(n: int, batch_size: int, order=None):
    idx = list(range(n)) if order is None else list(order)
    for i in range(0, n, batch_size):
        yield idx[i : i + batch_size]


def eval_loss(model, images, masks, coords, label_idx, batch_size: int) -> float:
    total, count = 0.0, 0
    flat_masks = masks.reshape(masks.shape[0], -1)
    with ad.no_grad():
        for sel in _batches(images.shape[0], batch_size):
            x = Tensor(images[sel])
            labels = flat_masks[sel][:, label_idx]
            out = model.decode(model.encoder(x), coords)
            loss, _, _ = combined_loss(out["logits"], labels)
            total += loss.item() * len(sel)
            count += len(sel)
    return total / count


def eval_metrics(model, images, masks, n_classes: int, batch_size: int, out_res: int) -> tuple[float, float]:
    """Mean foreground dice and hd95 of argmax predictions at out_res."""
    coords = flat_coords(out_res, out_res)
    dices, hds = [], []
    with ad.no_grad():
        for sel in _batches(images.shape[0], batch_size):
            x = Tensor(images[sel])
            out = model.decode(model.encoder(x), coords)
            pred = out["logits"].data.argmax(axis=-1).reshape(len(sel), out_res, out_res)
            for j, i in enumerate(sel):
                gt = masks[i]
                if out_res != gt.shape[0]:
                    gidx = nearest_index(coords, gt.shape[0], gt.shape[1])
                    gt = gt.reshape(-1)[gidx].reshape(out_res, out_res)
                dices.append(foreground_dice(pred[j], gt, n_classes))
                hds.append(foreground_hd95(pred[j], gt, n_classes))
    return float(np.mean(dices)), float(np.mean(hds))


def _fallback_events(model) -> int:
    fcfp = getattr(model, "fcfp", None)
    return fcfp.fallback_events if fcfp is not None else 0


def _reset_fallback(model) -> None:
    fcfp = getattr(model, "fcfp", None)
    if fcfp is not None:
        fcfp.fallback_events = 0


def train_run(cfg: Config, out_dir: str | None = None, log=None) -> dict:
    """Train one model; returns summary metrics and (optionally) writes
    checkpoints, metrics.csv and the resolved config into out_dir."""
    t_start = time.perf_counter()
    say = log if log is not None else lambda *a: None

    # one pool, split by index: the first n_train images train, the rest validate
    pool_x, pool_y = make_dataset(cfg.n_train + cfg.n_val, cfg.image_size, cfg.n_classes, Rng(cfg.data_seed))
    train_x, train_y = pool_x[: cfg.n_train], pool_y[: cfg.n_train]
    val_x, val_y = pool_x[cfg.n_train :], pool_y[cfg.n_train :]

    root = Rng(cfg.seed)
    model = build_model(cfg, root.child(0))
    shuffle_rng = root.child(1)

    params = model.parameters()
    if cfg.optimizer == "adam":
        opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    else:
        opt = Sgd(params, lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)
    plateau = ReduceOnPlateau(opt, cfg.patience, cfg.factor) if cfg.scheduler == "plateau" else None

    coords = flat_coords(cfg.train_res, cfg.train_res)
    label_idx = nearest_index(coords, cfg.image_size, cfg.image_size)
    flat_train_y = train_y.reshape(cfg.n_train, -1)
    steps_per_epoch = (cfg.n_train + cfg.batch_size - 1) // cfg.batch_size
    total_iters = cfg.epochs * steps_per_epoch

    rows = []
    best = {"dice": -1.0, "epoch": 0}
    paths = {}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "best": os.path.join(out_dir, "best.ckpt"),
            "last": os.path.join(out_dir, "last.ckpt"),
            "metrics": os.path.join(out_dir, "metrics.csv"),
            "config": os.path.join(out_dir, "config.cfg"),
        }
        with open(paths["config"], "w", encoding="utf-8") as f:
            f.write(config_to_text(cfg))

    iteration = 0
    for epoch in range(1, cfg.epochs + 1):
        _reset_fallback(model)
        order = list(range(cfg.n_train))
        shuffle_rng.shuffle(order)
        loss_sum, seen = 0.0, 0
        for sel in _batches(cfg.n_train, cfg.batch_size, order):
            if cfg.scheduler == "poly":
                opt.lr = poly_lr(cfg.lr, iteration, total_iters, cfg.poly_power)
            ad.reset_tape()
            model.zero_grad()
            x = Tensor(train_x[sel])
            labels = flat_train_y[sel][:, label_idx]
            out = model.decode(model.encoder(x), coords)
            loss, _, _ = combined_loss(out["logits"], labels)
            if not np.isfinite(loss.item()):
                pmax = max(float(np.abs(t.data).max()) for t in params)
                raise RuntimeError(
                    f"non-finite loss {loss.item()!r} at epoch {epoch} iteration {iteration} "
                    f"(lr {opt.lr:g}, max |param| {pmax:.3e}); aborting before the update"
                )
            ad.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(sel)
            seen += len(sel)
            iteration += 1
        ad.reset_tape()

        train_loss = loss_sum / seen
        fallback = _fallback_events(model)
        n_probe = min(16, cfg.n_train)
        train_dice, train_hd = eval_metrics(model, train_x[:n_probe], train_y[:n_probe], cfg.n_classes, cfg.batch_size, cfg.train_res)
        val_loss = eval_loss(model, val_x, val_y, coords, label_idx, cfg.batch_size)
        val_dice, val_hd = eval_metrics(model, val_x, val_y, cfg.n_classes, cfg.batch_size, cfg.train_res)
        if plateau is not None:
            plateau.step(val_loss)

        rows.append([epoch, "train", train_dice, train_hd, train_loss, opt.lr])
        rows.append([epoch, "val", val_dice, val_hd, val_loss, opt.lr])
        say(
            f"epoch {epoch:3d}  train loss {train_loss:.4f}  val loss {val_loss:.4f}  "
            f"val dice {val_dice:.4f}  lr {opt.lr:g}  vote fallbacks {fallback}"
        )

        if val_dice > best["dice"]:
            best = {"dice": val_dice, "epoch": epoch}
            if out_dir is not None:
                save_checkpoint(paths["best"], [(n, t.data) for n, t in model.named_parameters()])

    # full-resolution evaluation: last weights, then the best checkpoint
    last_dice, last_hd = eval_metrics(model, val_x, val_y, cfg.n_classes, cfg.batch_size, cfg.image_size)
    if out_dir is not None:
        save_checkpoint(paths["last"], [(n, t.data) for n, t in model.named_parameters()])
        write_metrics_csv(paths["metrics"], rows)
        if best["epoch"] > 0 and os.path.exists(paths["best"]):
            load_into(paths["best"], model.named_parameters())
    best_dice, best_hd = eval_metrics(model, val_x, val_y, cfg.n_classes, cfg.batch_size, cfg.image_size)

    return {
        "rows": rows,
        "best_epoch": best["epoch"],
        "val_dice_last": last_dice,
        "val_hd95_last": last_hd,
        "val_dice_best": best_dice,
        "val_hd95_best": best_hd,
        "val_dice": max(last_dice, best_dice),
        "val_hd95": best_hd if best_dice >= last_dice else last_hd,
        "seconds": time.perf_counter() - t_start,
        "paths": paths,
        "model": model,
    }


def write_metrics_csv(path: str, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(METRICS_HEADER)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_ablations(cfg: Config, seeds, out_csv: str | None = None, log=None) -> list[dict]:
    """Train every decoder variant over the given seeds; returns one record
    per (variant, seed) plus per-variant means, in the fixed sweep order."""
    say = log if log is not None else lambda *a: None
    records = []
    for variant in ABLATION_ORDER:
        name = "none" if variant == "full" else variant
        dices, hds = [], []
        for seed in seeds:
            run_cfg = replace(cfg, ablation=name, seed=seed, model="q2a")
            try:
                res = train_run(run_cfg)
                dice, hd = res["val_dice"], res["val_hd95"]
                say(f"{variant:15s} seed {seed}: dice {dice:.4f}  ({res['seconds']:.0f}s)")
            except (FloatingPointError, RuntimeError) as exc:
                # a variant that diverges is a sweep result, not a sweep
                # failure: record it as nan and keep the study going
                if isinstance(exc, RuntimeError) and "non-finite" not in str(exc):
                    raise
                dice, hd = float("nan"), float("nan")
                say(f"{variant:15s} seed {seed}: diverged ({exc})")
            records.append({"variant": variant, "seed": seed, "dice": dice, "hd95": hd})
            dices.append(dice)
            hds.append(hd)
        records.append(
            {
                "variant": variant,
                "seed": "mean",
                "dice": float(np.mean(dices)),
                "hd95": float(np.mean(hds)),
            }
        )
    if out_csv is not None:
        with open(out_csv, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["variant", "seed", "dice", "hd95"])
            for r in records:
                writer.writerow([r["variant"], r["seed"], repr(float(r["dice"])), repr(float(r["hd95"]))])
    return records
