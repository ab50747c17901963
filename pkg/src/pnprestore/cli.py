"""Command-line interface: degrade, train, restore, benchmark, generate data.

Conventions shared by every command:

* Config file: ``--config FILE`` reads flat ``key = value`` lines
  (``#`` comments allowed); keys are flag names without the leading
  dashes, dashes may be written as underscores. Explicit flags override
  the file. Unknown keys are rejected.
* The effective configuration is echoed to stdout before work starts.
* All file outputs are written atomically (temp file + rename).
* Exit codes: 0 success, 2 usage error, 3 I/O error, 4 numerical
  divergence. Failures print one line to stderr: ``error: <class>: <message>``.
* With a fixed ``--seed`` every command is byte-reproducible. Wall-time
  fields in written files are therefore zeroed unless ``--timing`` is
  given (timings are the one inherently non-reproducible quantity).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .admm import (
    Denoiser,
    IdentityDenoiser,
    MedianDenoiser,
    NetDenoiser,
    RestoreConfig,
    TraceEntry,
    export_trace,
    restore_deblur,
    restore_inpaint,
)
from .bench import (
    BenchmarkSpec,
    ConvergenceMethod,
    MethodSpec,
    compare_convergence,
    run_benchmark,
)
from .degrade import degrade_blur, degrade_inpaint
from .errors import DivergenceError
from .image import (
    atomic_write_text,
    read_kernel,
    read_pgm,
    write_kernel,
    write_pgm,
)
from .metrics import psnr, ssim
from .net import load_weights
from .solver import valid_slices
from .synthdata import generate_desk_data
from .training import TrainConfig, dataset_from_files, train_dae, train_map_denoiser


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems on one line via UsageError."""

    def error(self, message):
        raise UsageError(message)


# --- config file plumbing ----------------------------------------------------------

def parse_config_file(path) -> dict[str, str]:
    """Parse flat ``key = value`` text; '#' starts a comment anywhere."""
    out: dict[str, str] = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        if key in out:
            raise UsageError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _convert_config_value(action: argparse.Action, key: str, value: str):
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {key!r}: expected a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    convert = action.type if action.type is not None else str
    if action.nargs in ("+", "*"):
        parts = value.replace(",", " ").split()
        if action.nargs == "+" and not parts:
            raise UsageError(f"config key {key!r}: needs at least one value")
        try:
            items = [convert(p) for p in parts]
        except ValueError as exc:
            raise UsageError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and any(i not in action.choices for i in items):
            raise UsageError(f"config key {key!r}: invalid choice in {value!r}")
        return items
    try:
        converted = convert(value)
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: {exc}") from exc
    if action.choices is not None and converted not in action.choices:
        raise UsageError(
            f"config key {key!r}: invalid choice {value!r} (choose from {sorted(action.choices)})"
        )
    return converted


def _scan_argv(argv: list[str]) -> tuple[str | None, str | None]:
    """Find the subcommand name and any --config value without full parsing."""
    command = argv[0] if argv and not argv[0].startswith("-") else None
    config = None
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif tok.startswith("--config="):
            config = tok.split("=", 1)[1]
    return command, config


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    """Parse argv; if --config is present, use its values as defaults.

    Config values become the subcommand's defaults (required flags
    provided by the file stop being required), so explicit flags always
    win.
    """
    command, config_path = _scan_argv(argv)
    if config_path is None or command not in parser.sub_action.choices:
        return parser.parse_args(argv)
    sub = parser.sub_action.choices[command]
    known: dict[str, argparse.Action] = {}
    for action in sub._actions:
        known[action.dest] = action
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:].replace("-", "_")] = action
    try:
        raw = parse_config_file(config_path)
    except OSError as exc:
        raise UsageError(f"cannot read config {config_path}: {exc}") from exc
    defaults = {}
    for key, value in raw.items():
        if key not in known or key in ("help", "config"):
            raise UsageError(f"unknown config key {key!r} in {config_path}")
        action = known[key]
        defaults[action.dest] = _convert_config_value(action, key, value)
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _echo_config(args: argparse.Namespace) -> None:
    skip = {"func", "config"}
    print("# effective configuration")
    for key in sorted(vars(args)):
        if key in skip:
            continue
        print(f"{key} = {vars(args)[key]}")


# --- shared helpers -----------------------------------------------------------------

def _read_mask(path) -> np.ndarray:
    """Mask PGM convention: bright (>127) = observed, dark = missing."""
    return (read_pgm(path) > 127.0).astype(float)


def _write_mask(path, mask: np.ndarray) -> None:
    write_pgm(path, mask * 255.0)


def _zero_timing(trace: list[TraceEntry]) -> list[TraceEntry]:
    return [TraceEntry(e.iteration, e.primal_residual, e.psnr, 0.0) for e in trace]


def _make_denoiser(kind: str, weights) -> Denoiser:
    if kind == "net":
        if weights is None:
            raise UsageError("--denoiser net requires --weights")
        return NetDenoiser(load_weights(weights))
    if kind == "identity":
        return IdentityDenoiser()
    if kind == "median":
        return MedianDenoiser()
    raise UsageError(f"unknown denoiser {kind!r}")


def _collect_pgms(entries: list[str]) -> list[str]:
    """Expand each entry: a directory yields its sorted *.pgm files."""
    paths: list[str] = []
    for entry in entries:
        p = Path(entry)
        if p.is_dir():
            found = sorted(str(q) for q in p.glob("*.pgm"))
            if not found:
                raise FileNotFoundError(f"no .pgm files in directory {entry}")
            paths.extend(found)
        else:
            paths.append(str(p))
    return paths


def _write_summary(path, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _meta_text(pairs: list[tuple[str, object]]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in pairs)


# --- commands -----------------------------------------------------------------------

def cmd_degrade(args) -> int:
    x = read_pgm(args.input)
    if args.inpaint:
        y, mask = degrade_inpaint(x, args.missing, args.sigma, args.seed)
        write_pgm(args.out, y)
        mask_out = args.mask_out or f"{args.out}.mask.pgm"
        _write_mask(mask_out, mask)
        meta = [("variant", "inpaint"), ("input", args.input), ("sigma", args.sigma),
                ("missing", args.missing), ("seed", args.seed), ("mask", mask_out)]
    else:
        if args.kernel is None:
            raise UsageError("blur degradation requires --kernel (or pass --inpaint)")
        k = read_kernel(args.kernel)
        y = degrade_blur(x, k, args.sigma, args.seed)
        write_pgm(args.out, y)
        meta = [("variant", "blur"), ("input", args.input), ("sigma", args.sigma),
                ("kernel", args.kernel), ("seed", args.seed)]
    meta_path = args.meta or f"{args.out}.meta"
    atomic_write_text(meta_path, _meta_text(meta))
    print(f"wrote {args.out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(sigma_r=args.sigma_r, rho=args.rho, patch_size=args.patch,
                       batch_size=args.batch, steps=args.steps,
                       learning_rate=args.lr, seed=args.seed, layers=args.layers,
                       width=args.width, optimizer=args.optimizer)


def cmd_train_dae(args) -> int:
    paths = _collect_pgms(args.data)
    cfg = _train_config(args)
    ds = dataset_from_files(paths, cfg.patch_size, stride=args.stride)
    print(f"training DAE on {len(ds)} patches from {len(paths)} images")
    net = train_dae(ds, cfg, log_path=args.log,
                    checkpoint_every=args.checkpoint_every,
                    checkpoint_prefix=args.checkpoint_prefix or args.out)
    from .net import save_weights

    save_weights(args.out, net)
    print(f"wrote {args.out}")
    return 0


def cmd_train_map(args) -> int:
    if args.dae is None:
        raise UsageError("train-map requires --dae (trained DAE weights)")
    paths = _collect_pgms(args.data)
    cfg = _train_config(args)
    dae = load_weights(args.dae)
    ds = dataset_from_files(paths, cfg.patch_size, stride=args.stride)
    print(f"training MAP denoiser on {len(ds)} patches from {len(paths)} images")
    net = train_map_denoiser(ds, dae, cfg, log_path=args.log,
                             checkpoint_every=args.checkpoint_every,
                             checkpoint_prefix=args.checkpoint_prefix or args.out)
    from .net import save_weights

    save_weights(args.out, net)
    print(f"wrote {args.out}")
    return 0


def _restore_common(args, task: str) -> int:
    denoiser = _make_denoiser(args.denoiser, args.weights)
    truth = read_pgm(args.truth) if args.truth else None
    cfg = RestoreConfig(sigma_r=args.sigma_r, rho=args.rho, iterations=args.iterations,
                        denoiser=denoiser, track_truth=truth,
                        inpaint_solver=getattr(args, "solver", "gd"),
                        gd_steps=getattr(args, "gd_steps", 200))
    y = read_pgm(args.input)
    t0 = time.perf_counter()
    if task == "deblur":
        k = read_kernel(args.kernel)
        out, trace = restore_deblur(y, k, args.sigma, cfg)
        truth_cmp = truth[valid_slices(k, (truth.shape[0], truth.shape[1]))] \
            if truth is not None and truth.shape != y.shape else truth
    else:
        mask = _read_mask(args.mask)
        out, trace = restore_inpaint(y, mask, args.sigma, cfg)
        truth_cmp = truth
    wall_ms = (time.perf_counter() - t0) * 1e3
    write_pgm(args.out, out)
    if not args.timing:
        trace = _zero_timing(trace)
        wall_ms = 0.0
    if args.trace:
        atomic_write_text(args.trace, export_trace(trace))
    if args.summary:
        payload = {
            "command": task,
            "input": str(args.input),
            "output": str(args.out),
            "sigma": args.sigma,
            "iterations": args.iterations,
            "rho": args.rho,
            "denoiser": denoiser.descriptor,
            "wall_ms_total": wall_ms,
        }
        if task == "deblur":
            payload["kernel"] = str(args.kernel)
        else:
            payload["mask"] = str(args.mask)
            payload["solver"] = args.solver
        if truth_cmp is not None:
            payload["psnr"] = psnr(out, truth_cmp)
            payload["ssim"] = ssim(out, truth_cmp)
        _write_summary(args.summary, payload)
    print(f"wrote {args.out}")
    return 0


def cmd_deblur(args) -> int:
    return _restore_common(args, "deblur")


def cmd_inpaint(args) -> int:
    return _restore_common(args, "inpaint")


def cmd_bench(args) -> int:
    if args.mode == "table":
        images = tuple(_collect_pgms(args.images))
        kernels = tuple(_collect_pgms_like(args.kernels, ".txt")) if args.kernels else ()
        method = MethodSpec(name=args.method_name or args.denoiser,
                            denoiser=_make_denoiser(args.denoiser, args.weights),
                            iterations=args.iterations, rho=args.rho,
                            sigma_r=args.sigma_r, inpaint_solver=args.solver,
                            gd_steps=args.gd_steps)
        spec = BenchmarkSpec(dataset=args.dataset, images=images, kernels=kernels,
                             methods=(method,), sigmas=tuple(args.sigmas),
                             task=args.task, seed=args.seed,
                             missing_fraction=args.missing, workers=args.workers)
        table = run_benchmark(spec)
        if not args.timing:
            for cell in table.cells.values():
                cell.wall_ms_per_iter = 0.0
            for item in table.items:
                item.wall_ms_per_iter = 0.0 if item.error is None else item.wall_ms_per_iter
        atomic_write_text(args.out, table.to_csv())
        text = table.to_text()
        if args.text:
            atomic_write_text(args.text, text)
        print(text, end="")
        failures = sum(c.failures for c in table.cells.values())
        if failures:
            print(f"warning: {failures} item(s) failed; affected cells marked invalid")
        print(f"wrote {args.out}")
        return 0
    # convergence race: ADMM vs the gradient-descent MAP baseline
    if args.weights is None or args.dae is None:
        raise UsageError("--mode converge requires --weights (D) and --dae (R)")
    truth = read_pgm(args.image)
    k = read_kernel(args.kernel)
    d_net = load_weights(args.weights)
    r_net = load_weights(args.dae)
    sigma = args.sigmas[0]
    methods = [
        ConvergenceMethod(name="admm", kind="admm", iterations=args.iterations,
                          denoiser=NetDenoiser(d_net), rho=args.rho, sigma_r=args.sigma_r),
        ConvergenceMethod(name="gd", kind="gd", iterations=args.gd_iterations,
                          dae=r_net, rho=args.rho, sigma_r=args.sigma_r,
                          step_size=args.gd_step),
    ]
    result = compare_convergence(truth, k, sigma, methods, seed=args.seed)
    if not args.timing:
        for points in result.traces.values():
            for p in points:
                p.wall_ms = 0.0
                p.cum_wall_ms = 0.0
    atomic_write_text(args.out, result.to_csv())
    print(f"wrote {args.out}")
    return 0


def _collect_pgms_like(entries: list[str], suffix: str) -> list[str]:
    paths: list[str] = []
    for entry in entries:
        p = Path(entry)
        if p.is_dir():
            found = sorted(str(q) for q in p.glob(f"*{suffix}"))
            if not found:
                raise FileNotFoundError(f"no {suffix} files in directory {entry}")
            paths.extend(found)
        else:
            paths.append(str(p))
    return paths


def cmd_gen_data(args) -> int:
    manifests = generate_desk_data(args.out, n_train=args.train, n_test=args.test,
                                   size=args.size, seed=args.seed)
    for split, paths in manifests.items():
        print(f"{split}: {len(paths)} files under {Path(args.out) / split}")
    return 0


# --- parser construction ---------------------------------------------------------------

def _add_common(p: _Parser) -> None:
    p.add_argument("--config", help="flat key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    p.add_argument("--timing", action="store_true",
                   help="write real wall times (breaks byte-reproducibility)")


def _add_train_flags(p: _Parser) -> None:
    p.add_argument("--data", required=True, nargs="+",
                   help="training images: PGM files and/or directories of them")
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--steps", type=int, default=1000, help="training steps (default 1000)")
    p.add_argument("--sigma-r", type=float, default=7.0,
                   help="denoiser noise std (default 7)")
    p.add_argument("--rho", type=float, default=None,
                   help="penalty weight (default 1/sigma_r^2)")
    p.add_argument("--patch", type=int, default=40, help="patch size (default 40)")
    p.add_argument("--stride", type=int, default=None,
                   help="patch grid stride (default: patch size)")
    p.add_argument("--batch", type=int, default=16, help="batch size (default 16)")
    p.add_argument("--lr", type=float, default=1e-4, help="learning rate (default 1e-4)")
    p.add_argument("--layers", type=int, default=7, help="conv layers (default 7)")
    p.add_argument("--width", type=int, default=32, help="channels per hidden layer (default 32)")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd",
                   help="update rule (default sgd)")
    p.add_argument("--log", help="training-log CSV output path")
    p.add_argument("--checkpoint-every", type=int, default=0,
                   help="write checkpoints every N steps (0 = off)")
    p.add_argument("--checkpoint-prefix", help="checkpoint path prefix (default: --out)")


def _add_restore_flags(p: _Parser, iterations_default: int) -> None:
    p.add_argument("--in", dest="input", required=True, help="degraded input PGM")
    p.add_argument("--out", required=True, help="restored output PGM")
    p.add_argument("--sigma", type=float, required=True, help="noise std of the degradation")
    p.add_argument("--weights", help="trained denoiser weight file")
    p.add_argument("--denoiser", choices=("net", "identity", "median"), default="net",
                   help="prior step implementation (default net)")
    p.add_argument("--iterations", type=int, default=iterations_default,
                   help=f"iteration count (default {iterations_default})")
    p.add_argument("--rho", type=float, default=1.0 / 49.0,
                   help="penalty weight (default 1/49)")
    p.add_argument("--sigma-r", type=float, default=7.0,
                   help="denoiser design noise std (default 7)")
    p.add_argument("--trace", help="write per-iteration trace CSV here")
    p.add_argument("--truth", help="ground-truth PGM for PSNR/SSIM tracking")
    p.add_argument("--summary", help="write a JSON run summary here")


def build_parser() -> _Parser:
    parser = _Parser(prog="pnprestore",
                     description="Plug-and-play MAP image restoration toolkit")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("degrade", parents=[], help="simulate blur+noise or masked observations")
    p.add_argument("--in", dest="input", required=True, help="clean input PGM")
    p.add_argument("--out", required=True, help="degraded output PGM")
    p.add_argument("--sigma", type=float, required=True, help="noise std")
    p.add_argument("--kernel", help="blur kernel text file (blur variant)")
    p.add_argument("--inpaint", action="store_true", help="drop pixels instead of blurring")
    p.add_argument("--missing", type=float, default=0.8,
                   help="fraction of missing pixels for --inpaint (default 0.8)")
    p.add_argument("--mask-out", help="mask PGM output (default <out>.mask.pgm)")
    p.add_argument("--meta", help="metadata sidecar path (default <out>.meta)")
    _add_common(p)
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("train-dae", help="train the MMSE denoising autoencoder R")
    _add_train_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_train_dae)

    p = sub.add_parser("train-map", help="distill the MAP denoiser D from a trained R")
    _add_train_flags(p)
    p.add_argument("--dae", help="trained DAE weight file (required)")
    _add_common(p)
    p.set_defaults(func=cmd_train_map)

    p = sub.add_parser("deblur", help="non-blind deblurring via ADMM")
    _add_restore_flags(p, iterations_default=75)
    p.add_argument("--kernel", required=True, help="blur kernel text file")
    _add_common(p)
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("inpaint", help="masked restoration via ADMM")
    _add_restore_flags(p, iterations_default=300)
    p.add_argument("--mask", required=True, help="mask PGM (bright = observed)")
    p.add_argument("--solver", choices=("gd", "exact"), default="gd",
                   help="data-term solver (default gd)")
    p.add_argument("--gd-steps", type=int, default=200,
                   help="gradient-descent steps per iteration (default 200)")
    _add_common(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("bench", help="benchmark sweeps and convergence races")
    p.add_argument("--mode", choices=("table", "converge"), default="table")
    p.add_argument("--images", nargs="+", default=[],
                   help="test images (files/directories) for --mode table")
    p.add_argument("--kernels", nargs="+", default=[],
                   help="kernel files/directories for deblur benchmarks")
    p.add_argument("--dataset", default="desk", help="dataset label in the table")
    p.add_argument("--task", choices=("deblur", "inpaint"), default="deblur")
    p.add_argument("--sigmas", type=float, nargs="+", default=[2.55, 5.10, 7.65, 10.2],
                   help="noise levels (default: 2.55 5.10 7.65 10.2)")
    p.add_argument("--missing", type=float, default=0.8,
                   help="missing fraction for inpaint benchmarks (default 0.8)")
    p.add_argument("--weights", help="trained MAP denoiser weights")
    p.add_argument("--denoiser", choices=("net", "identity", "median"), default="net")
    p.add_argument("--method-name", help="method label (default: denoiser name)")
    p.add_argument("--iterations", type=int, default=75)
    p.add_argument("--rho", type=float, default=1.0 / 49.0)
    p.add_argument("--sigma-r", type=float, default=7.0)
    p.add_argument("--solver", choices=("gd", "exact"), default="gd")
    p.add_argument("--gd-steps", type=int, default=200)
    p.add_argument("--workers", type=int, default=1, help="parallel items (default 1)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--text", help="also write the aligned text table here")
    p.add_argument("--image", help="clean image for --mode converge")
    p.add_argument("--kernel", help="kernel file for --mode converge")
    p.add_argument("--dae", help="trained DAE weights (GD baseline) for --mode converge")
    p.add_argument("--gd-iterations", type=int, default=750,
                   help="GD baseline iterations for --mode converge (default 750)")
    p.add_argument("--gd-step", type=float, default=1e-1,
                   help="GD baseline step size (default 0.1)")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-data", help="generate the synthetic desk dataset")
    p.add_argument("--out", required=True, help="dataset root directory")
    p.add_argument("--train", type=int, default=20, help="training images (default 20)")
    p.add_argument("--test", type=int, default=10, help="test images (default 10)")
    p.add_argument("--size", type=int, default=128, help="image side length (default 128)")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    parser.sub_action = sub
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        _echo_config(args)
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"error: divergence: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
