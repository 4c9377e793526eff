"""Reproducible pipeline driver.

Subcommands generate-task, sample, estimate, and pipeline write their
artifacts (dataset CSVs, samples CSV + sidecar, bias JSON, histogram CSV,
run manifest) into one run directory, defaulting to $BIAS_METER_DATA_DIR.
Every seed and hyperparameter lands in the run manifest so a finished run
can be reproduced bit-for-bit with --from-manifest.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import DataError, NumericalError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

BIAS_JSON = "bias.json"
HISTOGRAM_CSV = "histogram.csv"
SAMPLES_CSV = "samples.csv"
SAMPLES_JSON = "samples.json"
RUN_MANIFEST = "run_manifest.json"

TASK_SIZE_DEFAULTS = {
    "pendulum": (10000, 100),
    "synthetic-gp": (256, 64),
    "mnist-subset": (500, 100),
}

KERNEL_PRESETS = {
    "desk": dict(lr_alpha=1e-3, lr_a=1e-4, batch=64, epochs=50, group=1024, samples=1000),
    "paper-pendulum": dict(lr_alpha=1e-3, lr_a=1e-4, batch=64, epochs=500, group=1024, samples=100000),
    "paper-mnist": dict(lr_alpha=1e-4, lr_a=1e-5, batch=128, epochs=20, group=2048, samples=100000),
}

NN_PRESETS = {
    "desk": dict(width=64, depth=3, adam_lr=1e-3, epochs=10, batch=128, samples=100),
    "paper-pendulum": dict(width=512, depth=10, adam_lr=1e-3, epochs=10, batch=128, samples=100),
    "paper-mnist": dict(width=512, depth=10, adam_lr=1e-3, epochs=10, batch=128, samples=100),
}


def _default_dir() -> str:
    return os.environ.get("BIAS_METER_DATA_DIR", "bias-meter-data")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _add_task_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--task", choices=sorted(TASK_SIZE_DEFAULTS), required=True)
    p.add_argument("--n-train", "--train", dest="n_train", type=int, default=None)
    p.add_argument("--n-test", "--test", dest="n_test", type=int, default=None)
    p.add_argument("--images", default=None, help="IDX image file (mnist-subset)")
    p.add_argument("--labels", default=None, help="IDX label file (mnist-subset)")
    p.add_argument("--features", type=int, default=4096, help="synthetic-gp feature count")
    p.add_argument("--input-dim", type=int, default=2, help="synthetic-gp input dimension")
    p.add_argument("--output-dim", type=int, default=1, help="synthetic-gp output channels")


def _add_sample_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--space", choices=("kernel", "nn"), default="kernel")
    p.add_argument("--preset", choices=sorted(KERNEL_PRESETS), default="desk")
    p.add_argument("--samples", type=int, default=None, help="number of hypotheses S")
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--lr-alpha", type=float, default=None)
    p.add_argument("--lr-a", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--group", type=int, default=None)
    p.add_argument("--method", choices=("sgd", "exact"), default="sgd",
                   help="kernel-space fit: SGD or the small-N dense solve")
    p.add_argument("--jitter", type=float, default=1e-10)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--adam-lr", type=float, default=None)


def _add_estimate_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--epsilon", type=float, default=None, help="target test error")
    group.add_argument("--accuracy", type=float, default=None,
                       help="model accuracy; uses epsilon = 1 - accuracy")
    p.add_argument("--fit", choices=("mom", "mle"), default="mle")
    p.add_argument("--tail", choices=("auto", "exact", "sankaran", "chernoff"), default="auto")
    p.add_argument("--bins", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bias-meter",
        description="Estimate the inductive bias (bits) a task requires at a target error.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = dict(dir_help="run directory (default: $BIAS_METER_DATA_DIR or ./bias-meter-data)")

    p_gen = sub.add_parser("generate-task", help="generate or load a task dataset")
    _add_task_flags(p_gen)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--dir", default=None, help=common["dir_help"])
    p_gen.set_defaults(func=cmd_generate_task)

    p_sample = sub.add_parser("sample", help="sample hypotheses and record predictions")
    _add_sample_flags(p_sample)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--threads", type=int, default=None,
                          help="BLAS thread cap; 1 forces fully deterministic mode")
    p_sample.add_argument("--dir", default=None, help=common["dir_help"])
    p_sample.set_defaults(func=cmd_sample)

    p_est = sub.add_parser("estimate", help="fit the loss distribution and report bias")
    _add_estimate_flags(p_est)
    p_est.add_argument("--dir", default=None, help=common["dir_help"])
    p_est.set_defaults(func=cmd_estimate)

    p_pipe = sub.add_parser("pipeline", help="generate-task + sample + estimate in one run")
    _add_task_flags(p_pipe)
    _add_sample_flags(p_pipe)
    _add_estimate_flags(p_pipe)
    p_pipe.add_argument("--seed", type=int, default=0)
    p_pipe.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap; 1 forces fully deterministic mode")
    p_pipe.add_argument("--from-manifest", default=None,
                        help="re-run the configuration recorded in a run manifest")
    p_pipe.add_argument("--dir", default=None, help=common["dir_help"])
    p_pipe.set_defaults(func=cmd_pipeline)
    return parser


def _apply_threads(threads: int | None) -> None:
    # Must happen before numpy is imported by the lazy command bodies.
    if threads is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _resolve_task_config(args: argparse.Namespace) -> dict:
    n_train, n_test = TASK_SIZE_DEFAULTS[args.task]
    cfg = {
        "name": args.task,
        "n_train": args.n_train if args.n_train is not None else n_train,
        "n_test": args.n_test if args.n_test is not None else n_test,
        "seed": args.seed,
    }
    if args.task == "synthetic-gp":
        cfg.update(
            features=args.features,
            input_dim=args.input_dim,
            output_dim=args.output_dim,
            bandwidth=getattr(args, "bandwidth", 1.0),
        )
    if args.task == "mnist-subset":
        if not args.images or not args.labels:
            raise DataError("mnist-subset requires --images and --labels IDX paths")
        cfg.update(images=args.images, labels=args.labels)
    return cfg


def _generate(cfg: dict, run_dir: Path):
    from . import datasets, tasks

    name = cfg["name"]
    if name == "pendulum":
        data = tasks.generate_pendulum_dataset(cfg["n_train"], cfg["n_test"], cfg["seed"])
    elif name == "synthetic-gp":
        spec = tasks.SyntheticGpSpec(
            num_features=cfg["features"],
            input_dim=cfg["input_dim"],
            output_dim=cfg["output_dim"],
            bandwidth=cfg["bandwidth"],
            seed=cfg["seed"],
        )
        data = tasks.generate_synthetic_gp_task(spec, cfg["n_train"], cfg["n_test"])
    elif name == "mnist-subset":
        data = tasks.load_mnist_subset(
            cfg["images"], cfg["labels"], cfg["n_train"], cfg["n_test"], cfg["seed"]
        )
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown task {name!r}")
    datasets.save_dataset(data, run_dir)
    return data


def _resolve_space_config(args: argparse.Namespace) -> dict:
    presets = KERNEL_PRESETS if args.space == "kernel" else NN_PRESETS
    preset = presets[args.preset]

    def pick(flag: str):
        val = getattr(args, flag, None)
        return preset[flag] if val is None else val

    cfg = {"kind": args.space, "preset": args.preset, "samples": pick("samples"),
           "seed": args.seed}
    if args.space == "kernel":
        cfg.update(
            bandwidth=args.bandwidth,
            lr_alpha=pick("lr_alpha"),
            lr_a=pick("lr_a"),
            batch=pick("batch"),
            epochs=pick("epochs"),
            group=pick("group"),
            method=args.method,
            jitter=args.jitter,
        )
    else:
        cfg.update(
            width=pick("width"),
            depth=pick("depth"),
            adam_lr=pick("adam_lr"),
            epochs=pick("epochs"),
            batch=pick("batch"),
        )
    return cfg


def _sample(cfg: dict, data, run_dir: Path) -> dict:
    from . import samples as samples_io

    extra: dict = {"space": {k: v for k, v in cfg.items() if k != "seed"}}
    if cfg["kind"] == "kernel":
        from .gp import SgdConfig, sample_kernel_hypotheses
        from .kernels import KernelSpec

        spec = KernelSpec(bandwidth=cfg["bandwidth"], output_dim=data.output_dim)
        sgd_cfg = SgdConfig(
            lr_alpha=cfg["lr_alpha"],
            lr_A=cfg["lr_a"],
            batch_size=cfg["batch"],
            epochs=cfg["epochs"],
            group_size=cfg["group"],
            seed=cfg["seed"],
        )
        hyp, solve = sample_kernel_hypotheses(
            data, spec, sgd_cfg, cfg["samples"], method=cfg["method"], jitter=cfg["jitter"]
        )
        extra.update(
            residual_alpha=solve.residual_alpha,
            residual_A=solve.residual_A,
            clamped_mass=solve.clamped_mass,
        )
    else:
        from .mlp import MlpArch, TrainConfig, sample_nn_hypotheses

        arch = MlpArch(
            input_dim=data.input_dim,
            output_dim=data.output_dim,
            hidden_width=cfg["width"],
            hidden_layers=cfg["depth"],
        )
        train_cfg = TrainConfig(
            lr=cfg["adam_lr"], epochs=cfg["epochs"], batch_size=cfg["batch"], seed=cfg["seed"]
        )
        hyp, train_losses = sample_nn_hypotheses(arch, data, cfg["samples"], train_cfg)
        extra.update(final_train_losses=train_losses)
    return samples_io.save_samples(
        hyp, run_dir / SAMPLES_CSV, run_dir / SAMPLES_JSON, extra
    )


def _resolve_estimate_config(args: argparse.Namespace, parser_error=None) -> dict:
    if args.epsilon is None and args.accuracy is None:
        msg = "one of --epsilon or --accuracy is required"
        if parser_error is not None:
            parser_error(msg)
        raise DataError(msg)
    return {
        "epsilon": args.epsilon,
        "accuracy": args.accuracy,
        "fit": args.fit,
        "tail": args.tail,
        "bins": args.bins,
    }


def _estimate(cfg: dict, run_dir: Path) -> dict:
    import numpy as np

    from . import lossdist
    from .datasets import load_dataset
    from .samples import load_samples

    data = load_dataset(run_dir)
    hyp = load_samples(run_dir / SAMPLES_CSV, run_dir / SAMPLES_JSON)
    losses = lossdist.test_losses(hyp, data)
    if losses.num_samples < 3:
        raise DataError(f"need at least 3 hypothesis samples, got {losses.num_samples}")
    fit = lossdist.fit_mom(losses)
    if cfg["fit"] == "mle":
        fit = lossdist.fit_mle(losses, fit)
    mode = {"chernoff": "sankaran_chernoff"}.get(cfg["tail"], cfg["tail"])
    if cfg["accuracy"] is not None:
        est = lossdist.bias_of_model(cfg["accuracy"], fit, mode)
    else:
        est = lossdist.inductive_bias(fit, cfg["epsilon"], mode)
    record = lossdist.bias_record(fit, est)
    _write_json(run_dir / BIAS_JSON, record)
    table = lossdist.histogram_table(losses, fit, cfg["bins"])
    np.savetxt(
        run_dir / HISTOGRAM_CSV,
        table,
        delimiter=",",
        header="bin_left,bin_right,count,fitted_pdf",
        comments="",
        fmt="%.17g",
    )
    return record


def _run_dir(args: argparse.Namespace) -> Path:
    run_dir = Path(args.dir if args.dir is not None else _default_dir())
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def cmd_generate_task(args: argparse.Namespace) -> int:
    cfg = _resolve_task_config(args)
    _generate(cfg, _run_dir(args))
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    _apply_threads(args.threads)
    run_dir = _run_dir(args)
    from .datasets import load_dataset

    data = load_dataset(run_dir)
    cfg = _resolve_space_config(args)
    _sample(cfg, data, run_dir)
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _resolve_estimate_config(args, parser_error=None)
    record = _estimate(cfg, _run_dir(args))
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args: argparse.Namespace) -> int:
    _apply_threads(args.threads)
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text())
        task_cfg = manifest["task"]
        space_cfg = manifest["space"]
        est_cfg = manifest["estimate"]
    else:
        # Usage problems (like a missing epsilon) must surface before any
        # compute runs.
        est_cfg = _resolve_estimate_config(args, parser_error=_USAGE_ERROR)
        task_cfg = _resolve_task_config(args)
        space_cfg = _resolve_space_config(args)
    run_dir = _run_dir(args)
    timings: dict[str, float] = {}
    phase = "generate-task"
    try:
        t0 = time.perf_counter()
        data = _generate(task_cfg, run_dir)
        timings["generate"] = time.perf_counter() - t0
        phase = "sample"
        t0 = time.perf_counter()
        sample_manifest = _sample(space_cfg, data, run_dir)
        timings["sample"] = time.perf_counter() - t0
        phase = "estimate"
        t0 = time.perf_counter()
        record = _estimate(est_cfg, run_dir)
        timings["estimate"] = time.perf_counter() - t0
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"pipeline failed in phase {phase}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"pipeline failed in phase {phase}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    manifest = {
        "tool_version": __version__,
        "command": "pipeline",
        "task": task_cfg,
        "space": space_cfg,
        "estimate": est_cfg,
        "sample_manifest": sample_manifest,
        "results": record,
        "timings_sec": timings,
    }
    _write_json(run_dir / RUN_MANIFEST, manifest)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


class _UsageExit(SystemExit):
    pass


def _USAGE_ERROR(msg: str) -> None:
    print(f"usage error: {msg}", file=sys.stderr)
    raise _UsageExit(EXIT_USAGE)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageExit:
        raise
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
