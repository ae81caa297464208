"""Command-line entry point: ``dvrm <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .container import Container, ContainerError, read_container, write_container
from .gradcheck import DEFAULT_TOLERANCE, format_report, gradient_check
from .metrics import ConfusionMatrix, evaluate, knn_predict
from .model import Architecture, ModelParams, NumericError, RdbConfig, miniature_architecture, posterior_means, reconstruct
from .preprocess import BASELINE_MS, DISCARD_PREFIX, TRIAL_LEN, RawRecording, design_fir_bandpass, preprocess
from .synth import COMBINATIONS, DEFAULT_NOISE_SIGMA, SignalSynthSpec, build_combination, get_combination, synth_recording
from .training import PairedArrays, TrainConfig, TrainingDiverged, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclasses.dataclass
class RunConfig:
    """Every tunable with its default; loadable from a JSON file."""

    # training
    epochs: int = 10
    iterations_per_epoch: int = 2000
    batch_size: int = 20
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    kl_weight: float = 1.0
    patience: int | None = 3
    image_dropout: float = 0.5
    # architecture
    latent_dim: int = 128
    num_rdb: int = 7
    base_channels: int = 32
    growth_channels: int = 16
    conv_layers_per_rdb: int = 4
    encoder_stride: int = 4
    learned_variance: bool = False
    # evaluation
    knn_k: int = 5
    psnr_max: float = 1.0

    @classmethod
    def from_mapping(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**data)

    def architecture(self) -> Architecture:
        rdb = RdbConfig(self.conv_layers_per_rdb, self.growth_channels, self.base_channels)
        return Architecture(rdb=rdb, num_rdb=self.num_rdb, latent_dim=self.latent_dim,
                            encoder_stride=self.encoder_stride, learned_variance=self.learned_variance)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            iterations_per_epoch=self.iterations_per_epoch, epochs=self.epochs, batch_size=self.batch_size,
            seed=seed, kl_weight=self.kl_weight, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            patience=self.patience, image_dropout=self.image_dropout,
        )


def _resolve_seed(value) -> int:
    if value is not None:
        return value
    env = os.environ.get("DVRM_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"DVRM_SEED must be an integer, got {env!r}") from None


def _run_config(args) -> RunConfig:
    """Built-in defaults, overridden by the config file, overridden by flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
    cfg = RunConfig.from_mapping(values)
    for f in dataclasses.fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, flag)
    if getattr(args, "no_patience", False):
        cfg.patience = None
    return cfg


def _load_split(data_dir: str, split: str) -> Container:
    path = os.path.join(data_dir, f"{split}.dvrm")
    if not os.path.exists(path):
        raise DataError(f"missing {path}")
    c = read_container(path)
    for key in ("signals", "images", "labels"):
        if key not in c.arrays:
            raise DataError(f"{path} lacks the {key!r} array")
    return c


# image files


def write_pgm(path: str, image: np.ndarray) -> None:
    px = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if blob[pos : pos + 1] == b"#":
            pos = blob.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(blob) and not blob[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(blob[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    data = blob[pos + 1 :]
    if maxval != 255 or len(data) != w * h:
        raise DataError(f"{path}: expected {w * h} 8-bit pixels, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


# commands


def cmd_gen_data(args) -> int:
    try:
        combo = get_combination(args.combo)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    seed = _resolve_seed(args.seed)
    synth = SignalSynthSpec(noise_sigma=args.noise_sigma, seed=seed)
    paths = build_combination(combo, synth, args.out)
    if args.raw:
        n = combo.trials_per_class
        cids = [c for _ in range(n) for c in combo.classes]
        tids = [t for t in range(n) for _ in combo.classes]
        rec = synth_recording(cids, tids, synth)
        raw = Container(
            {"samples": rec.samples, "event_onsets": rec.event_onsets, "labels": rec.labels},
            {"kind": "raw-recording", "sample_rate_hz": rec.sample_rate_hz, "combination": combo.name, "seed": seed},
        )
        write_container(os.path.join(args.out, "raw.dvrm"), raw)
    print(f"wrote {combo.name} ({'/'.join(map(str, combo.totals))}) to {args.out}")
    for name in ("train", "val", "test", "manifest"):
        print(f"  {paths[name]}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    c = read_container(args.input)
    if "samples" not in c.arrays or "event_onsets" not in c.arrays:
        raise DataError(f"{args.input} is not a raw recording (needs samples and event_onsets)")
    fs = float(c.meta.get("sample_rate_hz", 128.0))
    try:
        rec = RawRecording(c["samples"], fs, c["event_onsets"], c.arrays.get("labels"))
        fir = design_fir_bandpass(args.low_hz, args.high_hz, fs, args.num_taps)
        epochs = preprocess(rec, fir, args.baseline_ms, args.trial_len, args.discard)
    except (ValueError, IndexError) as exc:
        raise DataError(str(exc)) from None
    out = Container(
        {"signals": np.stack([e.data for e in epochs]).astype(np.float32),
         "labels": np.array([e.label for e in epochs], dtype=np.int64)},
        {"kind": "epochs", "source": os.path.basename(args.input)},
    )
    write_container(args.out, out)
    print(f"wrote {len(epochs)} epochs of shape {epochs[0].data.shape if epochs else ()} to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    seed = _resolve_seed(args.seed)
    tr = PairedArrays.from_container(_load_split(args.data, "train"))
    va_path = os.path.join(args.data, "val.dvrm")
    va = PairedArrays.from_container(_load_split(args.data, "val")) if os.path.exists(va_path) else None
    try:
        tcfg = cfg.train_config(seed)
        arch = cfg.architecture()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    params = ModelParams.init(arch, seed=seed)
    meta = {"seed": seed, "config": dataclasses.asdict(cfg)}
    loss_csv = args.loss_csv or os.path.join(os.path.dirname(os.path.abspath(args.out)), "loss.csv")
    try:
        result = train(tr, tcfg, params, va)
    except TrainingDiverged as exc:
        save_checkpoint(args.out, exc.result.params, {**meta, "status": "diverged"})
        with open(loss_csv, "w") as fh:
            fh.write(exc.result.curve.to_csv())
        print(f"error: {exc}; last good checkpoint written to {args.out}", file=sys.stderr)
        return EXIT_NUMERIC
    save_checkpoint(args.out, result.params, {**meta, "status": "ok", "best_epoch": result.best_epoch,
                                              "epochs_run": result.epochs_run})
    with open(loss_csv, "w") as fh:
        fh.write(result.curve.to_csv())
    print(f"trained {result.epochs_run} epoch(s), {len(result.curve)} iterations; checkpoint {args.out}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    c = _load_split(args.data, args.split)
    images = reconstruct(c["signals"], params)
    os.makedirs(args.out, exist_ok=True)
    if args.targets_out:
        os.makedirs(args.targets_out, exist_ok=True)
    group = str(c.meta.get("combination", "all"))
    rows = []
    for i, (img, label) in enumerate(zip(images, c["labels"])):
        name = f"{i:04d}.pgm"
        write_pgm(os.path.join(args.out, name), img)
        if args.targets_out:
            write_pgm(os.path.join(args.targets_out, name), c["images"][i])
        rows.append((f"{i:04d}", int(label), group))
    _write_index(args.out, rows)
    if args.targets_out:
        _write_index(args.targets_out, rows)
    print(f"wrote {len(images)} reconstructions to {args.out}")
    return EXIT_OK


def _write_index(directory: str, rows) -> None:
    with open(os.path.join(directory, "index.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "label", "group"])
        w.writerows(rows)


def _read_image_dir(directory: str) -> tuple[list[str], dict[str, np.ndarray], dict[str, str]]:
    if not os.path.isdir(directory):
        raise DataError(f"{directory} is not a directory")
    names = sorted(f[:-4] for f in os.listdir(directory) if f.endswith(".pgm"))
    images = {n: read_pgm(os.path.join(directory, f"{n}.pgm")) for n in names}
    groups = {}
    index = os.path.join(directory, "index.csv")
    if os.path.exists(index):
        with open(index, newline="") as fh:
            for row in csv.DictReader(fh):
                groups[row["pair_id"]] = row.get("group") or "all"
    return names, images, groups


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    names, recons, groups = _read_image_dir(args.reconstructions)
    if not names:
        raise DataError(f"no .pgm images in {args.reconstructions}")
    if os.path.isfile(args.targets):
        c = read_container(args.targets)
        if "images" not in c.arrays:
            raise DataError(f"{args.targets} has no images array")
        targets = {f"{i:04d}": img for i, img in enumerate(c["images"])}
    else:
        _, targets, _ = _read_image_dir(args.targets)
    missing = [n for n in names if n not in targets]
    if missing:
        raise DataError(f"no target for reconstruction(s) {', '.join(missing[:5])}")
    report = evaluate([(targets[n], recons[n]) for n in names], names,
                      [groups.get(n, "all") for n in names], max_val=cfg.psnr_max)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.csv"), "w") as fh:
        fh.write(report.to_csv())
    with open(os.path.join(args.out, "summary.csv"), "w") as fh:
        fh.write(report.summary_csv())
    table = report.to_table()
    with open(os.path.join(args.out, "table.txt"), "w") as fh:
        fh.write(table)
    print(table, end="")
    if args.checkpoint and args.data:
        params, _ = load_checkpoint(args.checkpoint)
        tr = _load_split(args.data, "train")
        te = _load_split(args.data, args.split)
        pred = knn_predict(posterior_means(tr["signals"], params), tr["labels"],
                           posterior_means(te["signals"], params), k=cfg.knn_k)
        cm = ConfusionMatrix.from_predictions(te["labels"], pred)
        with open(os.path.join(args.out, "confusion.csv"), "w") as fh:
            fh.write(cm.to_csv())
        with open(os.path.join(args.out, "knn.json"), "w") as fh:
            json.dump({"k": cfg.knn_k, "accuracy": cm.accuracy, "n": int(cm.counts.sum())}, fh, sort_keys=True)
            fh.write("\n")
        print(f"kNN (k={cfg.knn_k}) accuracy on posterior means: {cm.accuracy:.4f}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    if args.full:
        arch = _run_config(args).architecture()
        arch = dataclasses.replace(arch, learned_variance=True)
    else:
        arch = miniature_architecture(learned_variance=True)
    checks = gradient_check(arch, seed=_resolve_seed(args.seed), eps=args.eps, max_entries=args.max_entries,
                            corrupt=args.inject_bug)
    print(format_report(checks, args.tolerance), end="")
    return EXIT_OK if all(c.passed(args.tolerance) for c in checks) else EXIT_NUMERIC


def _add_run_flags(p: argparse.ArgumentParser, groups=("training", "architecture", "evaluation")) -> None:
    d = RunConfig()
    p.add_argument("--config", help="JSON file with RunConfig keys (flags override it)")
    if "training" in groups:
        _training_flags(p.add_argument_group("training"), d)
    if "architecture" in groups:
        _architecture_flags(p.add_argument_group("architecture"), d)
    if "evaluation" in groups:
        m = p.add_argument_group("evaluation")
        m.add_argument("--knn-k", type=int, help=f"neighbours for latent kNN (default {d.knn_k})")
        m.add_argument("--psnr-max", type=float, help=f"PSNR peak value (default {d.psnr_max}; 255 for 8-bit codes)")


def _training_flags(g, d: RunConfig) -> None:
    g.add_argument("--epochs", type=int, help=f"training epochs (default {d.epochs})")
    g.add_argument("--iterations-per-epoch", type=int, help=f"Adam steps per epoch (default {d.iterations_per_epoch})")
    g.add_argument("--batch-size", type=int, help=f"mini-batch size (default {d.batch_size})")
    g.add_argument("--lr", type=float, help=f"Adam learning rate (default {d.lr}; 1e-3 for encoder-only studies)")
    g.add_argument("--beta1", type=float, help=f"Adam beta1 (default {d.beta1})")
    g.add_argument("--beta2", type=float, help=f"Adam beta2 (default {d.beta2})")
    g.add_argument("--eps", type=float, help=f"Adam epsilon (default {d.eps})")
    g.add_argument("--kl-weight", type=float, help=f"weight of the KL term (default {d.kl_weight})")
    g.add_argument("--patience", type=int, help=f"early-stopping patience in epochs (default {d.patience})")
    g.add_argument("--no-patience", action="store_true", help="disable early stopping")
    g.add_argument("--image-dropout", type=float, help=f"probability of zeroing the encoder image channel (default {d.image_dropout})")


def _architecture_flags(a, d: RunConfig) -> None:
    a.add_argument("--latent-dim", type=int, help=f"latent dimension d (default {d.latent_dim})")
    a.add_argument("--num-rdb", type=int, help=f"dense blocks in the encoder (default {d.num_rdb})")
    a.add_argument("--base-channels", type=int, help=f"encoder feature channels (default {d.base_channels})")
    a.add_argument("--growth-channels", type=int, help=f"dense-block growth channels (default {d.growth_channels})")
    a.add_argument("--conv-layers-per-rdb", type=int, help=f"conv layers per dense block (default {d.conv_layers_per_rdb})")
    a.add_argument("--encoder-stride", type=int, help=f"stride of the first encoder conv (default {d.encoder_stride})")
    a.add_argument("--learned-variance", action="store_const", const=True, help="predict a per-pixel log-variance")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dvrm", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=f"dvrm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic character combination")
    p.add_argument("--combo", required=True, help=f"combination name, one of: {', '.join(COMBINATIONS)}")
    p.add_argument("--seed", type=int, help="generation seed (default: $DVRM_SEED or 0)")
    p.add_argument("--noise-sigma", type=float, default=DEFAULT_NOISE_SIGMA, help="signal noise level (default %(default)s)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--raw", action="store_true", help="also write the unprocessed recording as raw.dvrm")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("preprocess", help="baseline-correct, filter and epoch a raw recording")
    p.add_argument("--input", required=True, help="raw recording container")
    p.add_argument("--out", required=True, help="output epochs container")
    p.add_argument("--low-hz", type=float, default=1.0, help="passband lower edge (default %(default)s)")
    p.add_argument("--high-hz", type=float, default=63.9, help="passband upper edge (default %(default)s)")
    p.add_argument("--num-taps", type=int, default=129, help="FIR length, odd (default %(default)s)")
    p.add_argument("--baseline-ms", type=float, default=BASELINE_MS, help="baseline window (default %(default)s)")
    p.add_argument("--trial-len", type=int, default=TRIAL_LEN, help="samples per trial (default %(default)s)")
    p.add_argument("--discard", type=int, default=DISCARD_PREFIX, help="leading samples dropped (default %(default)s)")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, help="directory with train.dvrm (and val.dvrm)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-csv", help="loss curve path (default: loss.csv next to the checkpoint)")
    p.add_argument("--seed", type=int, help="training seed (default: $DVRM_SEED or 0)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="decode images from the signals of one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.add_argument("--out", required=True, help="directory for NNNN.pgm reconstructions")
    p.add_argument("--targets-out", help="also write the target images to this directory")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="score reconstructions against targets")
    p.add_argument("--targets", required=True, help="directory of target .pgm files or a split container")
    p.add_argument("--reconstructions", required=True, help="directory of reconstructed .pgm files")
    p.add_argument("--out", required=True, help="report directory")
    p.add_argument("--checkpoint", help="with --data, also run latent kNN classification")
    p.add_argument("--data", help="dataset directory for the kNN study")
    p.add_argument("--split", default="test", choices=["val", "test"], help="query split for kNN")
    _add_run_flags(p, ("evaluation",))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference check of all parameter gradients")
    p.add_argument("--seed", type=int, help="probe seed (default: $DVRM_SEED or 0)")
    p.add_argument("--eps", type=float, default=1e-5, help="central-difference step (default %(default)s)")
    p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE, help="max relative error (default %(default)s)")
    p.add_argument("--max-entries", type=int, default=24, help="probed entries per parameter (default %(default)s)")
    p.add_argument("--full", action="store_true", help="check the configured architecture instead of the miniature one")
    p.add_argument("--inject-bug", type=float, default=1.0, metavar="FACTOR",
                   help="scale analytic gradients by FACTOR to confirm the check fails")
    _add_run_flags(p, ("architecture",))
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"dvrm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ContainerError, OSError, ValueError, KeyError) as exc:
        print(f"dvrm {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"dvrm {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
