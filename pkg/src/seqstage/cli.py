"""Command-line interface.

Commands: synth, train, predict, evaluate, gradcheck, export-filters,
export-attention. Plotting commands save a PNG next to each delimited
output unless --no-plot is given. Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, report
from .autodiff import NumericalError
from .checks import gradient_suite
from .model import (ModelConfig, STAGES, load_model, make_predictor, save_model, train)

logger = logging.getLogger("seqstage")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_train_config(args) -> ModelConfig:
    if args.config:
        config = ModelConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        config = ModelConfig()
    if getattr(args, "seq_len", None) is not None:
        config = config.with_overrides(seq_len=args.seq_len)
    if getattr(args, "seed", None) is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _images_and_labels(recordings, config: ModelConfig):
    return [(dataset.recording_images(r, config.win_seconds, config.overlap_fraction,
                                      config.nfft), r.labels)
            for r in recordings]


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    config = dataset.SyntheticConfig.from_json(args.config) if args.config \
        else dataset.default_synthetic_config()
    if args.seed is not None:
        config.seed = args.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(config.num_recordings):
        recording = dataset.generate_synthetic(config, i)
        dataset.write_recording(recording, out_dir / f"{recording.name}.ssr")
    logger.info("wrote %d recordings to %s", config.num_recordings, out_dir)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_train_config(args)
    recordings = dataset.load_directory(args.data)
    train_recs, valid_recs, test_recs = dataset.split_dataset(
        recordings, config.split_fractions, config.seed)
    logger.info("split: %d train / %d valid / %d test recordings",
                len(train_recs), len(valid_recs), len(test_recs))
    result = train(_images_and_labels(train_recs, config),
                   _images_and_labels(valid_recs, config), config)
    save_model(args.out, result.best_arrays, config)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".log.csv")
    _write_csv(log_path, ["step", "train_loss", "valid_accuracy"],
               [[row["step"], row["train_loss"],
                 "" if row["valid_accuracy"] is None else row["valid_accuracy"]]
                for row in result.history])
    if not args.no_plot:
        report.save_training_figure(report.figure_path(log_path), result.history)
    logger.info("best validation accuracy %.4f at step %d; checkpoint %s",
                result.best_accuracy, result.best_step, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    params, config = load_model(args.ckpt)
    recording = dataset.read_recording(args.recording)
    images = dataset.recording_images(recording, config.win_seconds,
                                      config.overlap_fraction, config.nfft)
    result = evaluation.sliding_predict(images, make_predictor(params, config),
                                        config.seq_len, config.batch_size)
    rows = [[t, STAGES[int(recording.labels[t])], STAGES[int(result.labels[t])],
             *(result.log_scores[t].tolist())]
            for t in range(recording.n_epochs)]
    _write_csv(args.out, ["epoch_index", "reference_label", "predicted_label",
                          *(f"log_score_{s}" for s in STAGES)], rows)
    if not args.no_plot:
        report.save_hypnogram_figure(report.figure_path(args.out), result.labels,
                                     recording.labels, title=recording.name)
    accuracy = float((result.labels == recording.labels).mean())
    logger.info("predicted %d epochs of %s; accuracy vs sidecar labels %.4f",
                recording.n_epochs, recording.name, accuracy)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, config = load_model(args.ckpt)
    recordings = dataset.load_directory(args.data)
    _, _, test_recs = dataset.split_dataset(recordings, config.split_fractions, config.seed)
    if not test_recs:
        raise ValueError("the configured split leaves no test recordings")
    predict = make_predictor(params, config)
    cm = np.zeros((len(STAGES), len(STAGES)), dtype=np.int64)
    reference_all: list[np.ndarray] = []
    predicted_all: list[np.ndarray] = []
    per_recording = {}
    for rec in test_recs:
        images = dataset.recording_images(rec, config.win_seconds, config.overlap_fraction,
                                          config.nfft)
        result = evaluation.sliding_predict(images, predict, config.seq_len, config.batch_size)
        cm += evaluation.confusion_matrix(rec.labels, result.labels)
        reference_all.append(rec.labels)
        predicted_all.append(result.labels)
        per_recording[rec.name] = float((result.labels == rec.labels).mean())
    metrics = evaluation.compute_metrics(cm)
    transitions = evaluation.transition_split(np.concatenate(reference_all),
                                              np.concatenate(predicted_all))
    transitions.pop("flags")
    metrics["transition_analysis"] = transitions
    metrics["per_recording_accuracy"] = per_recording
    metrics["test_recordings"] = [rec.name for rec in test_recs]
    Path(args.out).write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    if args.cm:
        _write_csv(args.cm, ["reference\\predicted", *STAGES],
                   [[STAGES[i], *cm[i].tolist()] for i in range(len(STAGES))])
        if not args.no_plot:
            report.save_confusion_figure(report.figure_path(args.cm), cm)
    logger.info("test accuracy %.4f over %d epochs", metrics["accuracy"], metrics["n_epochs"])
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradient_suite(micro_only=args.micro, seed=args.seed)
    failed = False
    for res in results:
        status = "ok" if res.passed else "FAIL"
        print(f"{res.name}: max relative error {res.max_rel_error:.3e} "
              f"(tolerance {res.tolerance:.0e}) {status}")
        failed = failed or not res.passed
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_export_filters(args) -> int:
    params, config = load_model(args.ckpt)
    effective = [layer.effective_weights().data for layer in params.filterbanks]
    out = Path(args.out)
    header = [f"filter_{m:02d}" for m in range(config.n_filters)]
    paths = []
    for c, weights in enumerate(effective):
        path = out if len(effective) == 1 else out.with_name(f"{out.stem}_ch{c}{out.suffix}")
        _write_csv(path, header, weights.tolist())
        paths.append(path)
    if not args.no_plot:
        report.save_filterbank_figure(report.figure_path(out), effective)
    logger.info("exported %d filterbank(s): %s", len(paths), ", ".join(map(str, paths)))
    return EXIT_OK


def cmd_export_attention(args) -> int:
    from .model import attention_weights

    params, config = load_model(args.ckpt)
    recording = dataset.read_recording(args.recording)
    if not 0 <= args.epoch < recording.n_epochs:
        raise ValueError(f"epoch {args.epoch} outside recording of {recording.n_epochs} epochs")
    images = dataset.recording_images(recording, config.win_seconds,
                                      config.overlap_fraction, config.nfft)
    weights = attention_weights(images[args.epoch:args.epoch + 1][None, :], params, config)
    _write_csv(args.out, ["frame_index", "attention_weight"],
               [[t, float(w)] for t, w in enumerate(weights[0, 0])])
    logger.info("exported attention weights for epoch %d of %s", args.epoch, recording.name)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seqstage", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic recording corpus")
    p.add_argument("--config", help="synthetic config JSON (default: packaged corpus)")
    p.add_argument("--out", required=True, help="output directory for .ssr/.ssl files")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a recording directory")
    p.add_argument("--data", required=True, help="directory of .ssr recordings")
    p.add_argument("--config", help="training config JSON (ModelConfig fields)")
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--seq-len", type=int, dest="seq_len", help="override sequence length")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="aggregated hypnogram for one recording")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--out", required=True, help="hypnogram CSV path")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics on the held-out test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="directory of .ssr recordings")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--cm", help="confusion matrix CSV path")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--micro", action="store_true", help="only the composed micro model")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-filters", help="learned effective filterbanks as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True, help="CSV path (per-channel suffix added if C>1)")
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(func=cmd_export_filters)

    p = sub.add_parser("export-attention", help="attention weights of one epoch as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--recording", required=True)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attention)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"seqstage: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"seqstage: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
