"""Command-line interface.

Subcommands: train, eval, gan-train, generate, verify-moments, bench-scaling.
Exit codes: 0 success, 2 usage (argparse), 3 configuration, 4 data,
5 numeric failure, 1 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError, GmpropError, NumericError
from ..network import (
    NetworkConfig,
    insert_normalization,
    parse_config,
    preset,
    preset_names,
)
from .data import load_cifar10, load_mnist

EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5


def _resolve_config(token: str, norm: str) -> NetworkConfig:
    if Path(token).exists():
        cfg = parse_config(Path(token).read_text(), name=Path(token).stem)
    else:
        cfg = preset(token)
    # the config file wins over the flag when it already declares norm rows
    has_norm_rows = any(str(getattr(s.kind, "value", s.kind)).endswith("norm")
                        for s in cfg.layers)
    if norm != "none" and not has_norm_rows:
        cfg = insert_normalization(cfg, norm)
    return cfg


def _load_dataset(name: str, root: str):
    if name == "mnist":
        return load_mnist(root)
    if name == "cifar10":
        return load_cifar10(root)
    raise ConfigError(f"unknown dataset {name!r} (expected mnist or cifar10)")


def _add_common(p):
    p.add_argument("--config", default="mnist-cnn",
                   help="preset name or config table file "
                        f"(presets: {', '.join(preset_names())})")
    p.add_argument("--dataset-root", default="data/mnist")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--norm", default="none", choices=["none", "layer", "batch"])
    p.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="gmprop",
        description="Train networks by analytic Gaussian moment propagation "
                    "and layer-wise conditional inference (no gradients).")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classification network")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--sigma-v0", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=0.975)
    p.add_argument("--no-train-eval", action="store_true",
                   help="skip the per-epoch training-set evaluation")
    p.add_argument("--limit", type=int, default=None,
                   help="train on only the first N samples")
    p.add_argument("--test-limit", type=int, default=None,
                   help="evaluate on only the first N test samples")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gan-train", help="train the adversarial presets")
    _add_common(p)
    p.add_argument("--family", default="mnist", choices=["mnist", "celeba", "toy2d"])
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--sigma-v0-p", type=float, default=3.0)
    p.add_argument("--sigma-v0-q", type=float, default=3.0)
    p.add_argument("--eta", type=float, default=0.975)
    p.add_argument("--steps", type=int, default=500,
                   help="iterations for the toy2d family")

    p = sub.add_parser("generate", help="emit an image grid from a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rows", type=int, default=4)

    p = sub.add_parser("verify-moments", help="run the full oracle suite")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--seed", type=int, default=20240901)
    p.add_argument("--only", nargs="*", default=None,
                   help="restrict to named checks")

    p = sub.add_parser("bench-scaling", help="inference wall-time vs parameters")
    p.add_argument("--widths", type=int, nargs="*", default=[64, 128, 256, 512])
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--repeats", type=int, default=5)
    return ap


def _cmd_train(args) -> int:
    from .data import Dataset
    from .train import TrainConfig, train

    cfg = _resolve_config(args.config, args.norm)
    train_ds, test_ds = _load_dataset(args.dataset, args.dataset_root)
    if args.limit:
        train_ds = Dataset(train_ds.x[:args.limit], train_ds.y[:args.limit],
                           train_ds.num_classes, train_ds.preprocessing,
                           train_ds.name)
    if args.test_limit:
        test_ds = Dataset(test_ds.x[:args.test_limit], test_ds.y[:args.test_limit],
                          test_ds.num_classes, test_ds.preprocessing,
                          test_ds.name)
    tc = TrainConfig(config=cfg, epochs=args.epochs, batch=args.batch,
                     sigma_v0=args.sigma_v0, eta=args.eta, seed=args.seed,
                     out_dir=args.out, eval_train=not args.no_train_eval)
    result = train(tc, train_ds, test_ds, log=print)
    print(f"final\ttest_err\t{result.report.error_rate:.6f}")
    return 0


def _cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .metrics import evaluate

    from ..network import Network

    cfg = _resolve_config(args.config, args.norm)
    entries = load_checkpoint(args.checkpoint)
    if "net" not in entries:
        raise DataError("checkpoint has no 'net' entry")
    stored_hash, params = entries["net"]
    if stored_hash != cfg.config_hash():
        raise ConfigError("checkpoint config hash does not match --config")
    net = Network(cfg)
    _, test_ds = _load_dataset(args.dataset, args.dataset_root)
    rep = evaluate(net, params, test_ds, batch=args.batch)
    print(f"test_err\t{rep.error_rate:.6f}\tnll\t{rep.nll:.6f}\t"
          f"ece\t{rep.ece:.6f}\tauroc\t{rep.auroc:.6f}")
    return 0


def _cmd_gan_train(args) -> int:
    from ..gan import build_infogan, build_toy_gan, gan_train
    from ..gan import discriminator_step, generator_step
    from .checkpoint import save_checkpoint
    from .data import two_moons

    rng = np.random.default_rng(args.seed)
    if args.family == "toy2d":
        bundle = build_toy_gan(args.seed, sigma_v=args.sigma_v0_p)
        real = two_moons(args.steps * args.batch, rng)
        for i in range(args.steps):
            batch = real[i * args.batch:(i + 1) * args.batch]
            discriminator_step(bundle, batch, rng)
            generator_step(bundle, rng, args.batch)
        print(f"toy2d\tsteps\t{args.steps}\tdone")
    else:
        bundle = build_infogan(args.family, args.seed, args.sigma_v0_p,
                               args.sigma_v0_q, args.eta)
        if args.family == "mnist":
            train_ds, _ = load_mnist(args.dataset_root)
        else:
            raise ConfigError("celeba training requires a prepared image "
                              "directory; use the library API")
        bundle.preprocessing = train_ds.preprocessing
        gan_train(bundle, train_ds.x, args.epochs, args.batch, rng, log=print)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        entries = {name: (cfgn.config_hash(), store)
                   for (name, cfgn), store in
                   zip(bundle.configs().items(), bundle.stores().values())}
        save_checkpoint(out / "gan-checkpoint.gmp", entries)
        print(f"checkpoint\t{out / 'gan-checkpoint.gmp'}")
    return 0


def _grid_to_image(grid: np.ndarray, rows: int) -> np.ndarray:
    n, d, h, w = grid.shape
    cols = (n + rows - 1) // rows
    canvas = np.zeros((d, rows * h, cols * w), dtype=np.float64)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[:, r * h:(r + 1) * h, c * w:(c + 1) * w] = grid[i]
    return (canvas * 255).astype(np.uint8)


def write_image(path: Path, img: np.ndarray) -> Path:
    """Write (D, H, W) uint8 as PNG via Pillow, or PGM/PPM without it."""
    try:
        from PIL import Image
    except ImportError:
        suffix = ".pgm" if img.shape[0] == 1 else ".ppm"
        path = path.with_suffix(suffix)
        header = (b"P5" if img.shape[0] == 1 else b"P6")
        with open(path, "wb") as f:
            f.write(header + b"\n%d %d\n255\n" % (img.shape[2], img.shape[1]))
            f.write(img.transpose(1, 2, 0).tobytes())
        return path
    arr = img.transpose(1, 2, 0)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path.with_suffix(".png"))
    return path.with_suffix(".png")


def _cmd_generate(args) -> int:
    from ..gan import LatentCode, build_infogan, generate_grid
    from .checkpoint import load_checkpoint

    family = "mnist" if "mnist" in args.config else "celeba"
    bundle = build_infogan(family, args.seed, 3.0, 3.0)
    entries = load_checkpoint(args.checkpoint)
    for name, store_attr in (("gnet", "g_params"), ("dnet", "d_params"),
                             ("pnet", "p_params"), ("qnet", "q_params")):
        if name in entries:
            setattr(bundle, store_attr, entries[name][1])
    spec = bundle.latent
    rng = np.random.default_rng(args.seed)
    n = args.rows * max(spec.n_classes, 1)
    noise = np.repeat(rng.standard_normal((args.rows, spec.noise_dim)),
                      max(spec.n_classes, 1), axis=0)
    x_d = np.tile(np.arange(max(spec.n_classes, 1)),
                  args.rows)[:, None] * np.ones((1, max(spec.n_categorical, 1)),
                                                dtype=int)
    x_c = np.zeros((n, spec.n_continuous))
    codes = LatentCode(noise, x_d.astype(int), x_c)
    grid = generate_grid(bundle, codes)
    out = Path(args.out or ".") / "grid"
    Path(args.out or ".").mkdir(parents=True, exist_ok=True)
    written = write_image(out, _grid_to_image(grid, args.rows))
    print(f"grid\t{written}")
    return 0


def _cmd_verify(args) -> int:
    from ..verify import run_all

    _, ok = run_all(seed=args.seed, samples=args.samples, cases=args.cases,
                    subset=args.only, log=print)
    return 0 if ok else 1


def _cmd_bench(args) -> int:
    from ..bench import run_scaling

    rep = run_scaling(tuple(args.widths), batch=args.batch,
                      repeats=args.repeats)
    for p in rep.points:
        print(f"width\t{p.width}\tparams\t{p.param_count}\tseconds\t{p.seconds:.6f}")
    print(f"fit\tslope\t{rep.slope:.3e}\tintercept\t{rep.intercept:.3e}"
          f"\tr_squared\t{rep.r_squared:.6f}")
    return 0


_COMMANDS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "gan-train": _cmd_gan_train,
    "generate": _cmd_generate,
    "verify-moments": _cmd_verify,
    "bench-scaling": _cmd_bench,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GmpropError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
