"""Command-line interface: ``dualfreq {train,eval,predict,inspect-spectrum,gradcheck}``.

Settings come from built-in defaults, then an optional JSON file
(``--config``, with ``model``, ``train`` and ``data`` sections), then
command-line flags; later sources win. The effective configuration is
logged before any work starts.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .data import Dataset, batch_tensor, load_cifake, load_records, read_image, synth_spectral_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    DataLoadError,
    DualFreqError,
    NumericError,
    ShapeError,
)
from .gradcheck import THRESHOLD, failures, run_gradcheck
from .model import DualBranchNet, ModelConfig, load_checkpoint, save_checkpoint
from .spectral import spectrum_image, write_pgm
from .train import Trainer, TrainConfig, evaluate

log = logging.getLogger("dualfreq")

THREADS_ENV = "DUALFREQ_THREADS"


@dataclass
class DataConfig:
    data_dir: str = None
    train_split: str = "train"
    test_split: str = "test"
    limit_per_class: int = None
    test_limit_per_class: int = None
    records: str = None
    test_records: str = None
    synthetic: bool = False
    n_per_class: int = 500
    test_n_per_class: int = 200


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    threads: int = None

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": dataclasses.asdict(self.data),
            "threads": self.threads,
        }


# flag name -> (section, field)
_OVERRIDES = {
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "lr": ("train", "lr_initial"),
    "seed": ("train", "seed"),
    "deterministic": ("train", "deterministic"),
    "no_augment": ("train", "augment"),
    "depth": ("model", "pyramid_depth"),
    "dropout": ("model", "dropout_rate"),
    "dft_input": ("model", "dft_input"),
    "ablate": ("model", "ablate_branch"),
    "data_dir": ("data", "data_dir"),
    "limit_per_class": ("data", "limit_per_class"),
    "test_limit_per_class": ("data", "test_limit_per_class"),
    "records": ("data", "records"),
    "test_records": ("data", "test_records"),
    "synthetic": ("data", "synthetic"),
    "n_per_class": ("data", "n_per_class"),
    "test_n_per_class": ("data", "test_n_per_class"),
}


def build_run_config(args):
    sections = {"model": {}, "train": {}, "data": {}}
    threads = None
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from None
        unknown = set(raw) - {"model", "train", "data", "threads"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        for name in sections:
            sections[name].update(raw.get(name, {}))
        threads = raw.get("threads")
    for flag, (section, name) in _OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is None or value is False:
            continue
        if flag == "no_augment":
            value = False
        sections[section][name] = value
    if getattr(args, "threads", None) is not None:
        threads = args.threads
    elif threads is None and os.environ.get(THREADS_ENV):
        threads = int(os.environ[THREADS_ENV])
    try:
        data_fields = {f.name for f in dataclasses.fields(DataConfig)}
        unknown = set(sections["data"]) - data_fields
        if unknown:
            raise ConfigError(f"unknown data config fields: {sorted(unknown)}")
        return RunConfig(
            ModelConfig.from_dict(sections["model"]),
            TrainConfig.from_dict(sections["train"]),
            DataConfig(**sections["data"]),
            threads,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _thread_limit(run):
    threads = 1 if run.train.deterministic else run.threads
    if threads is None:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(threads))


def load_datasets(run):
    """``(train, test)`` datasets per the data section; either may be ``None``."""
    d = run.data
    if d.synthetic:
        gen = rngmod.stream(run.train.seed, "synth")
        train = synth_spectral_dataset(d.n_per_class, gen, run.model.image_size, split="train")
        test = synth_spectral_dataset(d.test_n_per_class, gen, run.model.image_size, split="test")
        return train, test
    if d.records or d.test_records:
        train = load_records(d.records, "train") if d.records else None
        test = load_records(d.test_records, "test") if d.test_records else None
        return train, test
    if d.data_dir:
        train = load_cifake(d.data_dir, d.train_split, d.limit_per_class, run.model.image_size)
        test_dir = os.path.join(d.data_dir, d.test_split)
        test = None
        if os.path.isdir(test_dir):
            test = load_cifake(d.data_dir, d.test_split, d.test_limit_per_class, run.model.image_size)
        return train, test
    raise ConfigError("no data source: pass --data-dir, --records or --synthetic")


def load_eval_dataset(run, split):
    d = run.data
    if d.synthetic:
        train, test = load_datasets(run)
        return train if split == "train" else test
    if d.test_records or d.records:
        path = d.test_records if split == "test" and d.test_records else d.records
        return load_records(path, split)
    if d.data_dir:
        name = d.test_split if split == "test" else d.train_split
        limit = d.test_limit_per_class if split == "test" else d.limit_per_class
        return load_cifake(d.data_dir, name, limit, run.model.image_size)
    raise ConfigError("no data source: pass --data-dir, --records or --synthetic")


def _echo_config(run):
    log.info("effective config: %s", json.dumps(run.to_dict(), sort_keys=True))


def cmd_train(args):
    run = build_run_config(args)
    _echo_config(run)
    out = args.out
    log_path = args.log or os.path.splitext(out)[0] + ".csv"
    with _thread_limit(run):
        train, test = load_datasets(run)
        if train is None or len(train) == 0:
            raise ConfigError("training set is empty")
        net = DualBranchNet(run.model, rngmod.stream(run.train.seed, "init"))
        Trainer(net, run.train).fit(train, test, log_path)
        save_checkpoint(net, out)
        log.info("wrote checkpoint %s and log %s", out, log_path)
        if test is not None and len(test):
            metrics = evaluate(net, test, run.train.threshold, run.train.eval_batch_size)
            print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def _load_net(path):
    if not os.path.exists(path):
        raise DataLoadError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_eval(args):
    net = _load_net(args.checkpoint)
    # the data pipeline follows the checkpoint's architecture
    run = dataclasses.replace(build_run_config(args), model=net.config)
    _echo_config(run)
    threshold = run.train.threshold if args.threshold is None else args.threshold
    with _thread_limit(run):
        dataset = load_eval_dataset(run, args.split)
        metrics = evaluate(net, dataset, threshold, run.train.eval_batch_size)
    print(json.dumps(metrics.to_dict(), sort_keys=True))
    return 0


def cmd_predict(args):
    net = _load_net(args.checkpoint)
    size = net.config.image_size
    for path in args.images:
        img = read_image(path, size=None)
        if img.shape[1:] != (size, size):
            raise ShapeError(f"{path}: expected {size}x{size} image, found {img.shape[2]}x{img.shape[1]}")
        ds = Dataset(img[None], np.zeros(1, dtype=np.int64), [path], "test")
        x, _ = batch_tensor(ds, np.arange(1))
        p = float(net.forward(x)[0])
        word = "fake" if p >= args.threshold else "real"
        prefix = f"{path}\t" if len(args.images) > 1 else ""
        print(f"{prefix}{p:.4f}\t{word}")
    return 0


def cmd_inspect_spectrum(args):
    img = read_image(args.image, size=None)
    write_pgm(args.out, spectrum_image(img, args.epsilon))
    log.info("wrote %s", args.out)
    return 0


def cmd_gradcheck(args):
    report = run_gradcheck(args.seed)
    for name, err in report.items():
        status = "ok" if err <= args.threshold else "FAIL"
        print(f"{name:<14} max_rel_err={err:.3e} {status}")
    bad = failures(report, args.threshold)
    if bad:
        print(f"gradcheck failed: {', '.join(bad)}", file=sys.stderr)
        return 1
    return 0


def _add_common(p):
    p.add_argument("--config", help="JSON config file with model/train/data sections")
    p.add_argument("--seed", type=int, help="root seed for every random stream")
    p.add_argument("--deterministic", action="store_true", help="single-threaded, order-stable reductions")
    p.add_argument("--threads", type=int, help=f"BLAS threads (default: ${THREADS_ENV})")


def _add_data(p):
    p.add_argument("--data-dir", help="CIFAKE root with <split>/REAL and <split>/FAKE")
    p.add_argument("--limit-per-class", type=int)
    p.add_argument("--test-limit-per-class", type=int)
    p.add_argument("--records", help="binary record file for training")
    p.add_argument("--test-records", help="binary record file for testing")
    p.add_argument("--synthetic", action="store_true", help="use the planted-spectrum synthetic dataset")
    p.add_argument("--n-per-class", type=int)
    p.add_argument("--test-n-per-class", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="dualfreq", description="Detect AI-generated images with a dual-branch spatial + spectrum CNN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network")
    _add_common(p)
    _add_data(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--depth", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--dft-input", choices=("normalized", "raw"))
    p.add_argument("--ablate", choices=("frequency", "spatial"))
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--log", help="CSV training log (default: <out>.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="probability that images are AI-generated")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect-spectrum", help="write the centred log-magnitude spectrum as PGM")
    p.add_argument("image")
    p.add_argument("out")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=cmd_inspect_spectrum)

    p = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=THRESHOLD)
    p.set_defaults(func=cmd_gradcheck)
    return parser


_EXIT_CODES = (
    (ConfigError, 2),
    (NumericError, 3),
    (CheckpointError, 4),
    (DualFreqError, 1),
    (OSError, 1),
)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s" if args.verbose else "%(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except tuple(e for e, _ in _EXIT_CODES) as exc:
        msg = " ".join(str(exc).split())
        print(f"dualfreq {args.command}: error: {msg}", file=sys.stderr)
        for etype, code in _EXIT_CODES:
            if isinstance(exc, etype):
                return code
        return 1


if __name__ == "__main__":
    sys.exit(main())
