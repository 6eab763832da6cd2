"""Batch command-line interface.

Subcommands: synth (generate a dataset), preprocess (recordings -> example
tensors), train (supervised baseline), adapt (one unsupervised algorithm on
one session), evaluate (full calibration experiment with report), report
(pretty-print a saved report). Exit status 0 on success, 1 on a diagnosed
error, 2 on usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .adapt import (
    AdaptConfig,
    adabn_adapt,
    dann_train,
    dirt_t_refine,
    mv_calibrate,
    scadann_calibrate,
    vada_train,
)
from .dataio import (
    load_model,
    load_report,
    load_session,
    save_dataset,
    save_manifest,
    save_model,
)
from .errors import DataError, SemgCalError
from .experiment import (
    BenchmarkConfig,
    HarnessConfig,
    benchmark_report,
    prepare_session,
)
from .relabel import HeuristicConfig
from .synth import SynthConfig, synth_generate
from .train import default_train_config, fit


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)


def _harness_from_args(args) -> HarnessConfig:
    kind = "tsd_dnn" if args.input_kind == "tsd" else "spectrogram_convnet"
    return HarnessConfig(
        input_kind=args.input_kind,
        gestures=args.gestures,
        train=default_train_config(kind, seed=args.seed),
    )


def _load_config_overrides(path: Path | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _write_run_manifest(args) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    save_manifest(args.out, args.seed, payload)


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        subjects=args.subjects, sessions=args.sessions, gestures=args.gestures,
        shift_scale=args.shift_scale, noise_scale=args.noise_scale, seed=args.seed,
        cycle_block_seconds=args.block_seconds, eval_blocks=args.eval_blocks,
        eval_block_seconds=args.eval_block_seconds,
    )
    dataset = synth_generate(cfg)
    save_dataset(dataset, args.out)
    save_manifest(args.out, args.seed, cfg)
    print(f"wrote {cfg.subjects} subjects x {cfg.sessions} sessions to {args.out}")
    return 0


def cmd_preprocess(args) -> int:
    session = load_session(args.data, args.subject, args.session)
    cfg = _harness_from_args(args)
    prep = prepare_session(session, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    out = args.out / f"subject{args.subject}_session{args.session}_{args.input_kind}.npz"
    arrays = {
        "train_x": prep.train_x, "train_y": prep.train_y,
        "test_x": prep.test_x, "test_y": prep.test_y,
    }
    if prep.stream_x is not None:
        arrays["stream_x"] = prep.stream_x
        arrays["stream_y"] = prep.stream_y
    np.savez(out, **arrays)
    _write_run_manifest(args)
    print(f"wrote {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _harness_from_args(args)
    session = load_session(args.data, args.subject, args.session)
    prep = prepare_session(session, cfg)
    from .experiment import _build_model  # shared builder

    model = _build_model(cfg, args.seed)
    fit(model, prep.train_x, prep.train_y, cfg.train)
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"model_subject{args.subject}_session{args.session}.bin"
    save_model(model, path)
    from .stats import accuracy

    acc = accuracy(model.predict(prep.test_x), prep.test_y)
    _write_run_manifest(args)
    print(f"wrote {path} (held-out cycle accuracy {acc:.4f})")
    return 0


def cmd_adapt(args) -> int:
    cfg = _harness_from_args(args)
    model = load_model(args.model)
    source = prepare_session(load_session(args.data, args.subject, args.source_session), cfg)
    target = prepare_session(load_session(args.data, args.subject, args.session), cfg)
    tcfg = dataclasses.replace(cfg.train, seed=args.seed)
    acfg = AdaptConfig()
    algo = args.algorithm
    if algo in ("dann", "vada", "dirtt", "adabn", "scadann", "mv"):
        if target.stream_x is None or len(target.stream_x) == 0:
            raise DataError(f"session {args.session} has no unlabeled evaluation data to adapt with")
    if algo == "dann":
        dann_train(model, source.train_x, source.train_y, target.stream_x,
                   lambda_d=acfg.dann_lambda_d, cfg=tcfg)
    elif algo == "vada":
        vada_train(model, source.train_x, source.train_y, target.stream_x, acfg, tcfg)
    elif algo == "dirtt":
        vada_train(model, source.train_x, source.train_y, target.stream_x, acfg, tcfg)
        dirt_t_refine(model, target.stream_x, acfg, tcfg)
    elif algo == "adabn":
        model = adabn_adapt(model, target.stream_x)
    elif algo == "mv":
        model, _ = mv_calibrate(model, source.train_x, source.train_y, [target.stream_x], cfg=tcfg)
    elif algo == "scadann":
        threshold = 0.85 if args.gestures == 7 else 0.65
        res = scadann_calibrate(model, source.train_x, source.train_y, [], target.stream_x,
                                acfg=acfg, hcfg=HeuristicConfig(threshold_stable=threshold), cfg=tcfg)
        model = res.model
    args.out.mkdir(parents=True, exist_ok=True)
    path = args.out / f"model_{algo}_subject{args.subject}_session{args.session}.bin"
    save_model(model, path)
    from .stats import accuracy

    acc = accuracy(model.predict(target.test_x), target.test_y)
    _write_run_manifest(args)
    print(f"wrote {path} (held-out cycle accuracy {acc:.4f})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = BenchmarkConfig(seed=args.seed)
    overrides = _load_config_overrides(args.config)
    if "synth" in overrides:
        cfg.synth = dataclasses.replace(cfg.synth, **overrides["synth"])
    if "harness" in overrides:
        h = overrides["harness"]
        for key in ("train", "adapt_train"):
            if key in h:
                setattr(cfg.harness, key, dataclasses.replace(getattr(cfg.harness, key), **h.pop(key)))
        if "adapt" in h:
            cfg.harness.adapt = dataclasses.replace(cfg.harness.adapt, **h.pop("adapt"))
        if "heuristic" in h:
            cfg.harness.heuristic = dataclasses.replace(cfg.harness.heuristic, **h.pop("heuristic"))
        if "algorithms" in h:
            cfg.harness.algorithms = tuple(h.pop("algorithms"))
        for key, value in h.items():
            if not hasattr(cfg.harness, key):
                raise DataError(f"unknown harness config key {key!r}")
            setattr(cfg.harness, key, value)
    if args.gestures is not None:
        cfg.synth = dataclasses.replace(cfg.synth, gestures=args.gestures)
        cfg.harness.gestures = args.gestures
        cfg.harness.heuristic = None
        cfg.harness.__post_init__()
    if args.input_kind is not None:
        cfg.harness.input_kind = args.input_kind
        kind = "tsd_dnn" if args.input_kind == "tsd" else "spectrogram_convnet"
        cfg.harness.train = dataclasses.replace(
            cfg.harness.train, learning_rate=default_train_config(kind).learning_rate)
    report = benchmark_report(cfg, args.out)
    best = {}
    for s, table in report["accuracy"].items():
        matrix = np.asarray(table["matrix"])
        means = matrix.mean(axis=0)
        best[s] = (table["algorithms"][int(np.argmax(means))], float(means.max()))
    print(f"report written to {args.out}")
    for s, (algo, acc) in sorted(best.items()):
        print(f"  session {s}: best mean accuracy {acc:.4f} ({algo})")
    return 0


def cmd_report(args) -> int:
    payload = load_report(Path(args.report) / "report.json" if Path(args.report).is_dir() else args.report)
    algorithms = payload["algorithms"]
    for s in sorted(payload["accuracy"]):
        table = payload["accuracy"][s]
        matrix = np.asarray(table["matrix"])
        print(f"session {s}:")
        means = matrix.mean(axis=0)
        stds = matrix.std(axis=0)
        for j, algo in enumerate(table["algorithms"]):
            line = f"  {algo:>14s}: {means[j] * 100:6.2f}% +- {stds[j] * 100:5.2f}%"
            st = payload.get("stats", {}).get(s)
            if st is not None:
                rank = st["friedman"]["avg_ranks"].get(algo)
                if rank is not None:
                    line += f"  rank {rank:.2f}"
                holm = st["holm"].get(algo)
                if holm is not None:
                    line += f"  H0={'0' if holm['reject'] else '1'} (p={holm['p_adjusted']:.5f})"
                dz = st["cohens_dz"].get(algo)
                if dz is not None:
                    line += f"  Dz={dz:.2f}"
            print(line)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgcal",
                                     description="Self-calibration of sEMG gesture classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic multi-session dataset")
    _add_common(p)
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--sessions", type=int, default=3)
    p.add_argument("--gestures", type=int, choices=(7, 11), default=11)
    p.add_argument("--shift-scale", type=float, default=0.35)
    p.add_argument("--noise-scale", type=float, default=0.15)
    p.add_argument("--block-seconds", type=float, default=5.0)
    p.add_argument("--eval-blocks", type=int, default=42)
    p.add_argument("--eval-block-seconds", type=float, default=5.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="recordings -> example tensors on disk")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--session", type=int, default=0)
    p.add_argument("--input-kind", choices=("spectrogram", "tsd"), default="tsd")
    p.add_argument("--gestures", type=int, choices=(7, 11), default=11)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the supervised baseline on one session")
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--session", type=int, default=0)
    p.add_argument("--input-kind", choices=("spectrogram", "tsd"), default="tsd")
    p.add_argument("--gestures", type=int, choices=(7, 11), default=11)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="adapt a trained model to one unlabeled session")
    p.add_argument("algorithm", choices=("dann", "vada", "dirtt", "adabn", "mv", "scadann"))
    _add_common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--subject", type=int, required=True)
    p.add_argument("--session", type=int, required=True)
    p.add_argument("--source-session", type=int, default=0)
    p.add_argument("--input-kind", choices=("spectrogram", "tsd"), default="tsd")
    p.add_argument("--gestures", type=int, choices=(7, 11), default=11)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="run the calibration experiment and write a report")
    _add_common(p)
    p.add_argument("--config", type=Path, default=None,
                   help="JSON file with synth/harness overrides")
    p.add_argument("--gestures", type=int, choices=(7, 11), default=None)
    p.add_argument("--input-kind", choices=("spectrogram", "tsd"), default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="pretty-print a saved report")
    p.add_argument("--report", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SemgCalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
