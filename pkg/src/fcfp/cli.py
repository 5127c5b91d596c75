"""Command line entry points.

Subcommands: train, infer, ablate, dataset-gen, verify.  All numeric work
runs with the BLAS thread pool pinned (default one thread) so results are
reproducible; raise --threads explicitly to trade determinism for speed on
machines where the BLAS vendor is deterministic under threading.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_into
from .config import Config, apply_overrides, config_to_text, load_config
from .coords import flat_coords
from .netpbm import read_pnm, to_unit_float, write_pgm, write_ppm
from .rng import Rng
from .synth import make_dataset
from .train import build_model, run_ablations, train_run
from .verify import run_verification

_PALETTE = [
    (40, 40, 40),
    (235, 80, 80),
    (80, 170, 235),
    (235, 210, 90),
    (130, 220, 120),
    (200, 110, 220),
    (240, 150, 60),
]


def _pin_threads(n: int) -> None:
    from threadpoolctl import threadpool_limits

    global _POOL_LIMIT
    _POOL_LIMIT = threadpool_limits(limits=max(1, n))


def _load_cfg(args) -> Config:
    cfg = load_config(args.config)
    if getattr(args, "set", None):
        cfg = apply_overrides(cfg, args.set)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    _pin_threads(args.threads if args.threads else cfg.threads)
    res = train_run(cfg, out_dir=args.out, log=print)
    print(
        f"done: best epoch {res['best_epoch']}, "
        f"val dice best {res['val_dice_best']:.4f} / last {res['val_dice_last']:.4f}, "
        f"hd95 {res['val_hd95']:.2f}, {res['seconds']:.0f}s"
    )
    if args.plot:
        _plot_curves(res["rows"], os.path.join(args.out, "curves.png"))
        print(f"wrote {os.path.join(args.out, 'curves.png')}")
    return 0


def _plot_curves(rows, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = sorted({r[0] for r in rows})
    by = lambda split, col: [r[col] for r in rows if r[1] == split]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.2))
    ax1.plot(epochs, by("train", 4), label="train")
    ax1.plot(epochs, by("val", 4), label="val")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax2.plot(epochs, by("val", 2), label="val dice")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("dice")
    ax2.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def cmd_infer(args) -> int:
    cfg_path = args.config or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), "config.cfg")
    if not os.path.exists(cfg_path):
        raise SystemExit(f"error: no config found at {cfg_path}; pass --config")
    cfg = load_config(cfg_path)
    _pin_threads(args.threads if args.threads else cfg.threads)
    model = build_model(cfg, Rng(cfg.seed).child(0))
    load_into(args.checkpoint, model.named_parameters())

    raw = read_pnm(args.image)
    if raw.ndim != 2:
        raise SystemExit("error: infer expects an 8-bit grayscale (P5) image")
    if raw.shape[0] % 32 or raw.shape[1] % 32:
        raise SystemExit(f"error: image size {raw.shape[0]}x{raw.shape[1]} must be divisible by 32")
    if cfg.in_channels != 1:
        raise SystemExit(f"error: model expects {cfg.in_channels}-channel input")
    img = to_unit_float(raw)[None, None]

    hq = args.hq if args.hq else raw.shape[0]
    wq = args.wq if args.wq else raw.shape[1]

    x = Tensor(img.astype(np.float32))
    with ad.no_grad():
        if hasattr(model, "infer_maps"):
            maps = model.infer_maps(x, (hq, wq))
            pred, probs = maps["pred"], maps["probs"]
        else:
            out = model.decode(model.encoder(x), flat_coords(hq, wq))
            logits = out["logits"].data[0]
            shifted = np.exp(logits - logits.max(axis=-1, keepdims=True))
            probs = (shifted / shifted.sum(axis=-1, keepdims=True)).T.reshape(-1, hq, wq)
            pred = logits.argmax(axis=-1).reshape(hq, wq)

    write_pgm(args.out, pred.astype(np.uint8))
    print(f"wrote {args.out} ({hq}x{wq}, classes 0..{int(pred.max())})")
    if args.prob:
        tints = np.array([_PALETTE[c % len(_PALETTE)] for c in range(probs.shape[0])], dtype=np.float64)
        blend = np.einsum("chw,cr->hwr", probs.astype(np.float64), tints)
        write_ppm(args.prob, np.clip(np.rint(blend), 0, 255).astype(np.uint8))
        print(f"wrote {args.prob}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    _pin_threads(args.threads if args.threads else cfg.threads)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, "ablation.csv")
    run_ablations(cfg, seeds, out_csv=out_csv, log=print)
    print(f"wrote {out_csv}")
    return 0


def cmd_dataset_gen(args) -> int:
    cfg = _load_cfg(args)
    count = cfg.n_train + cfg.n_val
    images, masks = make_dataset(count, cfg.image_size, cfg.n_classes, Rng(cfg.data_seed))
    os.makedirs(args.out, exist_ok=True)
    for i in range(count):
        write_pgm(os.path.join(args.out, f"img_{i:04d}.pgm"), np.clip(np.rint(images[i, 0] * 255), 0, 255).astype(np.uint8))
        write_pgm(os.path.join(args.out, f"msk_{i:04d}.pgm"), masks[i])
    with open(os.path.join(args.out, "dataset.cfg"), "w", encoding="utf-8") as f:
        f.write(config_to_text(cfg))
    print(f"{count} image/mask pairs in {args.out} (first {cfg.n_train} train, rest val); dataset.cfg written")
    return 0


def cmd_verify(args) -> int:
    _pin_threads(args.threads or 1)
    if args.fault:
        ad.set_fault(args.fault)
    ok = run_verification()
    print("verification PASSED" if ok else "verification FAILED")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="fcfp", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("config", help="key=value config file")
    p.add_argument("--out", required=True, help="output directory for checkpoints and metrics")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--threads", type=int, default=0)
    p.add_argument("--plot", action="store_true", help="write loss/dice curves (curves.png)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="segment one netpbm image with a trained checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("image", help="8-bit grayscale P5 image, dims divisible by 32")
    p.add_argument("--hq", type=int, default=0, help="output rows (default: image height)")
    p.add_argument("--wq", type=int, default=0, help="output cols (default: image width)")
    p.add_argument("--out", required=True, help="output P5 mask path (class ids as gray levels)")
    p.add_argument("--prob", default=None, help="optional P6 per-class probability visualization")
    p.add_argument("--config", default=None, help="config file (default: config.cfg next to the checkpoint)")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("ablate", help="sweep decoder component ablations")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="1,2,3")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("dataset-gen", help="write the synthetic dataset as numbered netpbm pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(fn=cmd_dataset_gen)

    p = sub.add_parser("verify", help="run built-in numeric self checks")
    p.add_argument("--fault", default=None, help="arm a known fault (e.g. tanh-backward); the run must fail")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
