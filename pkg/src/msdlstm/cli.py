"""Command line interface.

Subcommands: param-count, gradcheck, bench, gen, train, eval.  Flag values
override keys of an optional TOML config file (--config), which override
built-in defaults.  Every command is deterministic given --seed and never
mutates its input files.

Exit codes:
    0  success
    1  a requested check failed (count mismatch, gradient error, ordering)
    2  usage error
    3  invalid configuration / checkpoint-dataset mismatch
    4  numeric failure (non-finite values, divergence)
    5  malformed GRIDSEQ or checkpoint payload
    6  missing or unreadable/unwritable file
"""

import argparse
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

import numpy as np

from . import backend
from .bench import BENCH_FIELDS, bench_variants
from .cells import (Cell, CellConfig, CellState, CellVariant,
                    param_count_enumerated, param_count_formula)
from .data import (FIVE_CLASS_NAMES, SCHEMES, GeneratorParams,
                   generate_synthetic, read_gridseq, write_gridseq)
from .errors import (CheckpointMismatchError, FormatError, NumericError,
                     ValidationError)
from .gradcheck import gradcheck
from .metrics import accuracy, collapse_binary, mean_iou
from .model import Forecaster, ModelConfig
from .tensor import Tensor
from .training import (evaluate, evaluate_persistence, train_forecaster,
                       write_train_log)
from . import ops

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NUMERIC = 4
EXIT_FORMAT = 5
EXIT_IO = 6

# Published reference configuration and its per-variant weight counts.
REFERENCE_CONFIG = {"K": 3, "Cx": 608, "Ch": 128}
REFERENCE_COUNTS = {
    CellVariant.CONVLSTM: 3_391_488,
    CellVariant.FC: 1_130_496,
    CellVariant.SCONV: 867_744,
    CellVariant.DECONSTRUCTED: 1_150_368,
    CellVariant.MSD: 1_338_784,
}
# Count ordering checked by cmd_bench; the fc > sconv tail additionally
# needs Ch > K^2 and is skipped otherwise.
COUNT_ORDER = (CellVariant.CONVLSTM, CellVariant.MSD, CellVariant.DECONSTRUCTED,
               CellVariant.FC, CellVariant.SCONV)

VARIANT_CHOICES = tuple(v.value for v in CellVariant)


def _load_toml(args):
    path = getattr(args, "config", None)
    if not path:
        return {}
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ValidationError(f"bad config file {path}: {exc}") from exc


def _setting(args, toml_cfg, key, default):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in toml_cfg:
        return toml_cfg[key]
    return default


def _variant(name):
    try:
        return CellVariant(name)
    except ValueError:
        raise ValidationError(f"unknown variant {name!r}; choose from {VARIANT_CHOICES}")


# -- param-count -------------------------------------------------------------

def cmd_param_count(args):
    toml_cfg = _load_toml(args)
    if args.paper:
        k, cx, ch = REFERENCE_CONFIG["K"], REFERENCE_CONFIG["Cx"], REFERENCE_CONFIG["Ch"]
    else:
        k = _setting(args, toml_cfg, "K", 3)
        cx = _setting(args, toml_cfg, "Cx", 608)
        ch = _setting(args, toml_cfg, "Ch", 128)

    print(f"K={k} Cx={cx} Ch={ch}")
    print(f"{'variant':<15}{'formula':>12}{'enumerated':>12}{'biases':>8}")
    status = EXIT_OK
    rng = np.random.default_rng(0)
    for variant in CellVariant:
        formula = param_count_formula(variant, k, cx, ch)
        cell = Cell.create(CellConfig(variant, k, cx, ch, 1, 1), rng)
        enumerated, biases = param_count_enumerated(cell.params)
        print(f"{variant.value:<15}{formula:>12}{enumerated:>12}{biases:>8}")
        if enumerated != formula:
            print(f"error: {variant.value}: enumerated {enumerated} != formula {formula}",
                  file=sys.stderr)
            status = EXIT_CHECK_FAILED
        if args.paper and formula != REFERENCE_COUNTS[variant]:
            print(f"error: {variant.value}: {formula} != reference "
                  f"{REFERENCE_COUNTS[variant]}", file=sys.stderr)
            status = EXIT_CHECK_FAILED
    return status


# -- gradcheck ---------------------------------------------------------------

def _cell_check(variant, tol, eps, seed):
    cfg = CellConfig(variant, 3, 4, 8, 6, 6)
    cell = Cell.create(cfg, np.random.default_rng([seed, 1]))
    data_rng = np.random.default_rng([seed, 2])
    x = Tensor(data_rng.standard_normal((cfg.cx, cfg.height, cfg.width)))
    h0 = Tensor(0.5 * data_rng.standard_normal((cfg.ch, cfg.height, cfg.width)))
    c0 = Tensor(0.5 * data_rng.standard_normal((cfg.ch, cfg.height, cfg.width)))

    def f():
        out = cell.step(x, CellState(h=h0, c=c0))
        return ops.sum_all(out.h)

    return gradcheck(f, cell.named_parameters(), eps=eps, tol=tol,
                     rng=np.random.default_rng([seed, 3]))


def _model_check(tol, eps, seed):
    config = ModelConfig.build(12, 12, variant=CellVariant.MSD, ch=8, t=2,
                               num_classes=2)
    model = Forecaster.create(config, np.random.default_rng([seed, 4]))
    data_rng = np.random.default_rng([seed, 5])
    elements = data_rng.standard_normal((config.t, 4, 12, 12))
    labels = data_rng.integers(0, 2, size=(config.label_h, config.label_w))

    def f():
        return model.loss(elements, labels)

    return gradcheck(f, model.named_parameters(), eps=eps, tol=tol,
                     rng=np.random.default_rng([seed, 6]))


def cmd_gradcheck(args):
    toml_cfg = _load_toml(args)
    tol = _setting(args, toml_cfg, "tol", 1e-4)
    eps = _setting(args, toml_cfg, "eps", 1e-4)
    seed = _setting(args, toml_cfg, "seed", 0)
    variants = [_variant(args.variant)] if args.variant else list(CellVariant)

    status = EXIT_OK
    for variant in variants:
        report = _cell_check(variant, tol, eps, seed)
        verdict = "PASS" if report.passed else "FAIL"
        print(f"cell {variant.value:<15} max_rel_err={report.max_rel_err:.3e} {verdict}")
        if report.failure:
            print(f"  {report.failure}")
        if not report.passed:
            status = EXIT_CHECK_FAILED
    if args.variant is None:
        report = _model_check(tol, eps, seed)
        verdict = "PASS" if report.passed else "FAIL"
        print(f"model end-to-end      max_rel_err={report.max_rel_err:.3e} {verdict}")
        if report.failure:
            print(f"  {report.failure}")
        if not report.passed:
            status = EXIT_CHECK_FAILED
    return status


# -- bench -------------------------------------------------------------------

def cmd_bench(args):
    toml_cfg = _load_toml(args)
    k = _setting(args, toml_cfg, "K", 3)
    cx = _setting(args, toml_cfg, "Cx", 64)
    ch = _setting(args, toml_cfg, "Ch", 128)
    height = _setting(args, toml_cfg, "H", 32)
    width = _setting(args, toml_cfg, "W", 32)
    iters = _setting(args, toml_cfg, "iters", 30)
    warmup = _setting(args, toml_cfg, "warmup", 5)
    seed = _setting(args, toml_cfg, "seed", 0)
    if iters < 2:
        raise ValidationError("need at least 2 timed iterations")
    if args.backends == "both":
        names = backend.available_backends()
    else:
        names = (args.backends,)

    rows = bench_variants(k=k, cx=cx, ch=ch, height=height, width=width,
                          iters=iters, warmup=warmup, seed=seed, backends=names)
    print(",".join(BENCH_FIELDS))
    for row in rows:
        print(f"{row.variant},{row.backend},{row.param_count},"
              f"{row.mean_ms:.3f},{row.std_ms:.3f}")

    status = EXIT_OK
    counts = {CellVariant(r.variant): r.param_count for r in rows}
    order = list(COUNT_ORDER)
    if ch <= k * k:  # fc > sconv only holds for Ch > K^2; drop sconv then
        order.remove(CellVariant.SCONV)
    ordered = [counts[v] for v in order]
    if not all(a > b for a, b in zip(ordered, ordered[1:])):
        print("error: parameter counts violate the expected variant ordering",
              file=sys.stderr)
        status = EXIT_CHECK_FAILED
    if args.no_check_times:
        return status
    by_backend = {}
    for row in rows:
        by_backend.setdefault(row.backend, {})[row.variant] = row.mean_ms
    for name, times in by_backend.items():
        if times["msd"] >= times["convlstm"]:
            print(f"error: [{name}] msd step ({times['msd']:.3f} ms) not faster "
                  f"than convlstm ({times['convlstm']:.3f} ms)", file=sys.stderr)
            status = EXIT_CHECK_FAILED
    return status


# -- gen ---------------------------------------------------------------------

def _scheme_from_classes(classes):
    for scheme, n in SCHEMES.items():
        if n == classes:
            return scheme
    raise ValidationError(f"classes must be one of {sorted(SCHEMES.values())}, got {classes}")


def cmd_gen(args):
    toml_cfg = _load_toml(args)
    seed = _setting(args, toml_cfg, "seed", 0)
    samples = _setting(args, toml_cfg, "samples", 600)
    t = _setting(args, toml_cfg, "T", 4)
    height = _setting(args, toml_cfg, "H", 32)
    width = _setting(args, toml_cfg, "W", 32)
    classes = _setting(args, toml_cfg, "classes", 5)
    wind = _setting(args, toml_cfg, "wind_speed", None)

    params = GeneratorParams() if wind is None else GeneratorParams(wind_speed=wind)
    dataset = generate_synthetic(seed, samples, t=t, height=height, width=width,
                                 scheme=_scheme_from_classes(classes), params=params)
    write_gridseq(args.out, dataset)
    freq = np.bincount(dataset.labels.ravel(), minlength=dataset.num_classes)
    freq = freq / freq.sum()
    names = FIVE_CLASS_NAMES if dataset.num_classes == 5 else ("no_rain", "rain")
    print(f"wrote {args.out}: {samples} samples, T={t}, {height}x{width} grids, "
          f"{dataset.num_classes} classes")
    print("class frequencies: " + "  ".join(
        f"{n}={f:.3f}" for n, f in zip(names, freq)))
    return EXIT_OK


# -- train -------------------------------------------------------------------

def cmd_train(args):
    toml_cfg = _load_toml(args)
    seed = _setting(args, toml_cfg, "seed", 0)
    epochs = _setting(args, toml_cfg, "epochs", 20)
    # train-command default: the documented synthetic-task protocol rate
    # (the Adamax class default stays at 2e-3)
    lr = _setting(args, toml_cfg, "lr", 1e-2)
    ch = _setting(args, toml_cfg, "Ch", 16)
    k = _setting(args, toml_cfg, "K", 3)
    variant = _variant(_setting(args, toml_cfg, "variant", "msd"))
    val_frac = _setting(args, toml_cfg, "val_frac", 1.0 / 6.0)

    dataset = read_gridseq(args.data)
    n_val = int(round(len(dataset) * val_frac))
    train_set, val_set = dataset.split(n_val)
    h, w = dataset.elements.shape[3:]
    lab_h, lab_w = dataset.labels.shape[1:]
    config = ModelConfig.build(h, w, variant=variant, ch=ch, k=k, t=dataset.t,
                               num_classes=dataset.num_classes,
                               label_h=lab_h, label_w=lab_w)
    model = Forecaster.create(config, np.random.default_rng([seed, 0xC0]))
    print(f"training {variant.value} on {len(train_set)} samples "
          f"(validating on {len(val_set)}), {epochs} epochs, lr={lr}")

    def progress(row):
        print(f"epoch {row.epoch:>3}  loss={row.train_loss:.4f}  "
              f"val_acc={row.val_acc:.4f}  val_miou={row.val_miou:.4f}  "
              f"({row.wall_ms:.0f} ms)")

    log, best_bytes, best_epoch = train_forecaster(
        model, train_set, val_set, epochs=epochs, lr=lr, seed=seed,
        progress=progress)
    Path(args.out).write_bytes(best_bytes)
    print(f"best epoch {best_epoch} (val_miou={log[best_epoch].val_miou:.4f}) "
          f"-> {args.out}")
    if args.log:
        write_train_log(args.log, log)
        print(f"training log -> {args.log}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------

def _print_metrics(tag, cm):
    print(f"{tag:<22} acc={accuracy(cm):.4f}  miou={mean_iou(cm):.4f}")


def cmd_eval(args):
    ckpt = Path(args.ckpt).read_bytes()
    model = Forecaster.from_bytes(ckpt)
    dataset = read_gridseq(args.data)

    cfg = model.config
    shape = dataset.elements.shape
    if (cfg.t, cfg.input_h, cfg.input_w) != (shape[1], shape[3], shape[4]) \
            or cfg.num_classes != dataset.num_classes \
            or (cfg.label_h, cfg.label_w) != dataset.labels.shape[1:]:
        raise CheckpointMismatchError(
            f"checkpoint expects T={cfg.t} {cfg.input_h}x{cfg.input_w} grids, "
            f"{cfg.num_classes} classes, {cfg.label_h}x{cfg.label_w} labels; "
            f"dataset has T={shape[1]} {shape[3]}x{shape[4]}, "
            f"{dataset.num_classes} classes, "
            f"{dataset.labels.shape[1]}x{dataset.labels.shape[2]} labels")

    cm = evaluate(model, dataset)
    _print_metrics("model", cm)
    if dataset.num_classes > 2:
        _print_metrics("model (binary)", collapse_binary(cm))
    pcm = evaluate_persistence(dataset)
    _print_metrics("persistence", pcm)
    if dataset.num_classes > 2:
        _print_metrics("persistence (binary)", collapse_binary(pcm))

    if args.heatmap:
        from .data import export_heatmap
        out_dir = Path(args.heatmap)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i in range(len(dataset)):
            sample = dataset[i]
            pred = model.predict(sample.elements)
            export_heatmap(pred, out_dir / f"sample_{i:04d}_pred.ppm",
                           num_classes=dataset.num_classes)
            export_heatmap(sample.label, out_dir / f"sample_{i:04d}_true.ppm",
                           num_classes=dataset.num_classes)
        print(f"heatmaps -> {out_dir}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="msdlstm",
        description="Multi-scale deconstructed ConvLSTM toolkit: parameter "
                    "accounting, gradient checks, benchmarks, and a synthetic "
                    "rainfall forecasting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file; flags override it")
    common.add_argument("--seed", type=int, help="RNG seed (default 0)")

    p = sub.add_parser("param-count", parents=[common],
                       help="per-variant weight counts, formula vs enumeration")
    p.add_argument("--K", type=int, help="kernel size (odd, >= 3)")
    p.add_argument("--Cx", type=int, help="input channels")
    p.add_argument("--Ch", type=int, help="hidden channels")
    p.add_argument("--paper", action="store_true",
                   help="pin K=3 Cx=608 Ch=128 and verify the reference counts")
    p.set_defaults(func=cmd_param_count)

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference gradient verification")
    p.add_argument("--variant", choices=VARIANT_CHOICES,
                   help="check one cell variant (default: all plus the model)")
    p.add_argument("--tol", type=float, help="max relative error (default 1e-4)")
    p.add_argument("--eps", type=float, help="finite-difference step (default 1e-4)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common],
                       help="per-variant step timing (CSV on stdout)")
    p.add_argument("--K", type=int)
    p.add_argument("--Cx", type=int)
    p.add_argument("--Ch", type=int)
    p.add_argument("--H", type=int)
    p.add_argument("--W", type=int)
    p.add_argument("--iters", type=int, help="timed iterations (default 30)")
    p.add_argument("--warmup", type=int, help="warmup iterations (default 5)")
    p.add_argument("--backends", default="auto",
                   choices=("auto", "python", "compiled", "both"))
    p.add_argument("--no-check-times", action="store_true",
                   help="skip the msd-faster-than-convlstm check (timings at "
                        "toy configurations are dominated by call overhead)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen", parents=[common], help="generate a GRIDSEQ dataset")
    p.add_argument("--out", required=True, help="output GRIDSEQ path")
    p.add_argument("--samples", type=int, help="sample count (default 600)")
    p.add_argument("--T", type=int, help="time steps (default 4)")
    p.add_argument("--H", type=int, help="grid height (default 32)")
    p.add_argument("--W", type=int, help="grid width (default 32)")
    p.add_argument("--classes", type=int, help="5 (rain levels) or 2 (rain or not)")
    p.add_argument("--wind-speed", dest="wind_speed", type=float,
                   help="advection speed scale, cells/step")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", parents=[common], help="train a forecaster")
    p.add_argument("--data", required=True, help="GRIDSEQ dataset")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", help="CSV training log path")
    p.add_argument("--variant", choices=VARIANT_CHOICES)
    p.add_argument("--Ch", type=int, help="hidden channels (default 16)")
    p.add_argument("--K", type=int, help="kernel size (default 3)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--val-frac", dest="val_frac", type=float,
                   help="tail fraction held out for validation (default 1/6)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common],
                       help="evaluate a checkpoint against a dataset")
    p.add_argument("--data", required=True, help="GRIDSEQ dataset")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--heatmap", metavar="DIR",
                   help="write per-sample prediction/truth PPM images")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:  # includes checkpoint mismatch
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:  # includes training divergence
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
