"""Calibration-setting experiment harness and the synthetic benchmark.

For every subject a base classifier is trained on the labels of session 0
only; later sessions are scored with no calibration, supervised recalibration,
or one of the six unsupervised adaptation algorithms fed that session's
unlabeled stream. Per-session accuracy tables feed the statistics battery.
All per-cell randomness derives from (master seed, subject, algorithm), so
results are independent of execution order and worker count.
"""

from __future__ import annotations

import dataclasses
import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .adapt import (
    AdaptConfig,
    adabn_adapt,
    dann_train,
    dirt_t_refine,
    mv_calibrate,
    scadann_calibrate,
    vada_train,
)
from .errors import DataError, NumericError, ParameterError
from .features import tsd_matrix
from .nn import Network, build_spectrogram_convnet, build_tsd_dnn
from .relabel import HeuristicConfig
from .signal import build_spectrogram_example, design_bandpass, segment_stream
from .stats import accuracy, cohens_dz, friedman_test, holm_posthoc, wilcoxon_signed_rank
from .synth import SubjectData, SynthConfig, synth_generate
from .train import TrainConfig, default_train_config, fit

ALGORITHMS = ("nocal", "recal", "dann", "vada", "dirtt", "adabn", "mv", "scadann", "recal_scadann")
UNSUPERVISED = ("dann", "vada", "dirtt", "adabn", "mv", "scadann")

SETTING_TO_ALGORITHM = {
    "NoCal": "nocal",
    "Recal": "recal",
    "RecalSCADANN": "recal_scadann",
}


@dataclass
class HarnessConfig:
    input_kind: str = "tsd"  # "tsd" or "spectrogram"
    gestures: int = 11
    algorithms: tuple[str, ...] = ("nocal", "dann", "vada", "adabn", "scadann")
    train: TrainConfig = field(default_factory=lambda: default_train_config("tsd_dnn"))
    adapt_train: TrainConfig | None = None  # defaults to `train`
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    heuristic: HeuristicConfig | None = None  # default depends on gesture count
    workers: int = 1

    def __post_init__(self):
        if self.input_kind not in ("tsd", "spectrogram"):
            raise ParameterError(f"unknown input kind {self.input_kind!r}")
        if self.gestures not in (7, 11):
            raise ParameterError(f"gestures must be 7 or 11, got {self.gestures}")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ParameterError(f"unknown algorithms: {sorted(unknown)}")
        if self.heuristic is None:
            threshold = 0.85 if self.gestures == 7 else 0.65
            self.heuristic = HeuristicConfig(threshold_stable=threshold)
        if self.adapt_train is None:
            self.adapt_train = self.train


def cell_seed(master_seed: int, *parts) -> int:
    key = f"{master_seed}|" + "|".join(str(p) for p in parts)
    return int.from_bytes(hashlib.blake2s(key.encode(), digest_size=4).digest(), "little") & 0x7FFFFFFF


def _filter_stack(segments) -> np.ndarray:
    """Band-pass a stack of segments in one vectorized call."""
    sos = design_bandpass()
    data = np.stack([s.data for s in segments])
    return sps.sosfilt(sos, data, axis=-1)


def featurize(segments, input_kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Segments -> (X, y) under the requested input kind; unlabeled y = -1."""
    filtered = _filter_stack(segments)
    if input_kind == "tsd":
        x = tsd_matrix(filtered).astype(np.float32)
    else:
        x = np.stack(
            [
                build_spectrogram_example(dataclasses.replace(seg, data=f)).tensor
                for seg, f in zip(segments, filtered)
            ]
        )
    y = np.array([-1 if s.label is None else s.label for s in segments], dtype=np.int64)
    return x, y


@dataclass
class PreparedSession:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    stream_x: np.ndarray | None  # first evaluation recording, time ordered
    stream_y: np.ndarray | None  # oracle labels of the stream (audit only)


def prepare_session(session, cfg: HarnessConfig) -> PreparedSession:
    if len(session.cycles) < 2:
        raise DataError(f"session {session.session} needs >= 2 cycles")
    train_segments = []
    for cycle in session.cycles[:-1]:
        for g in sorted(cycle):
            train_segments.extend(segment_stream(cycle[g]))
    test_segments = []
    for g in sorted(session.cycles[-1]):
        test_segments.extend(segment_stream(session.cycles[-1][g]))
    train_x, train_y = featurize(train_segments, cfg.input_kind)
    test_x, test_y = featurize(test_segments, cfg.input_kind)
    stream_x = stream_y = None
    if session.evals:
        stream_segments = segment_stream(session.evals[0])
        stream_x, stream_y = featurize(stream_segments, cfg.input_kind)
    return PreparedSession(train_x, train_y, test_x, test_y, stream_x, stream_y)


def _build_model(cfg: HarnessConfig, seed: int) -> Network:
    if cfg.input_kind == "tsd":
        return build_tsd_dnn(cfg.gestures, seed=seed)
    return build_spectrogram_convnet(cfg.gestures, seed=seed)


def _train_cfg(base: TrainConfig, seed: int) -> TrainConfig:
    return dataclasses.replace(base, seed=seed)


def _stream_or_fail(prep: PreparedSession, algo: str) -> np.ndarray:
    if prep.stream_x is None or len(prep.stream_x) == 0:
        raise DataError(f"{algo} needs a session with unlabeled evaluation data")
    return prep.stream_x


@dataclass
class SubjectResult:
    subject: int
    accuracies: dict[str, list[float]]  # algorithm -> per-session accuracy
    pseudo_audit: dict[str, dict[int, dict]] = field(default_factory=dict)


def run_subject(subject_data: SubjectData, cfg: HarnessConfig, master_seed: int) -> SubjectResult:
    preps = [prepare_session(s, cfg) for s in subject_data.sessions]
    sid = subject_data.subject
    n_sessions = len(preps)
    base_seed = cell_seed(master_seed, sid, "base")
    model0 = _build_model(cfg, base_seed)
    fit(model0, preps[0].train_x, preps[0].train_y, _train_cfg(cfg.train, base_seed))
    nocal = [accuracy(model0.predict(p.test_x), p.test_y) for p in preps]

    result = SubjectResult(subject=sid, accuracies={})
    for algo in cfg.algorithms:
        if algo == "nocal":
            result.accuracies[algo] = list(nocal)
        elif algo == "recal":
            accs = [nocal[0]]
            for s in range(1, n_sessions):
                seed = cell_seed(master_seed, sid, "recal", s)
                model = _build_model(cfg, seed)
                fit(model, preps[s].train_x, preps[s].train_y, _train_cfg(cfg.train, seed))
                accs.append(accuracy(model.predict(preps[s].test_x), preps[s].test_y))
            result.accuracies[algo] = accs
        elif algo in ("dann", "vada", "dirtt", "adabn"):
            accs = [nocal[0]]
            for s in range(1, n_sessions):
                seed = cell_seed(master_seed, sid, algo, s)
                tcfg = _train_cfg(cfg.adapt_train, seed)
                model = model0.clone()
                stream = _stream_or_fail(preps[s], algo)
                if algo == "dann":
                    dann_train(model, preps[0].train_x, preps[0].train_y, stream,
                               lambda_d=cfg.adapt.dann_lambda_d, cfg=tcfg)
                elif algo == "vada":
                    vada_train(model, preps[0].train_x, preps[0].train_y, stream,
                               acfg=cfg.adapt, cfg=tcfg)
                elif algo == "dirtt":
                    vada_train(model, preps[0].train_x, preps[0].train_y, stream,
                               acfg=cfg.adapt, cfg=tcfg)
                    dirt_t_refine(model, stream, acfg=cfg.adapt, cfg=tcfg)
                else:
                    model = adabn_adapt(model, stream)
                accs.append(accuracy(model.predict(preps[s].test_x), preps[s].test_y))
            result.accuracies[algo] = accs
        elif algo == "mv":
            accs = [nocal[0]]
            for s in range(1, n_sessions):
                seed = cell_seed(master_seed, sid, "mv", s)
                streams = [_stream_or_fail(preps[j], "mv") for j in range(1, s + 1)]
                model = model0.clone()
                mv_calibrate(model, preps[0].train_x, preps[0].train_y, streams,
                             cfg=_train_cfg(cfg.adapt_train, seed))
                accs.append(accuracy(model.predict(preps[s].test_x), preps[s].test_y))
            result.accuracies[algo] = accs
        elif algo == "scadann":
            accs = [nocal[0]]
            audit: dict[int, dict] = {}
            model = model0
            priors: list[tuple[np.ndarray, np.ndarray]] = []
            for s in range(1, n_sessions):
                seed = cell_seed(master_seed, sid, "scadann", s)
                stream = _stream_or_fail(preps[s], "scadann")
                res = scadann_calibrate(
                    model, preps[0].train_x, preps[0].train_y, priors, stream,
                    acfg=cfg.adapt, hcfg=cfg.heuristic, cfg=_train_cfg(cfg.adapt_train, seed),
                )
                model = res.model
                accs.append(accuracy(model.predict(preps[s].test_x), preps[s].test_y))
                audit[s] = _pseudo_audit(res.pseudo, preps[s].stream_y, res.status)
                if res.pseudo is not None and res.pseudo.kept_count > 0:
                    priors.append(res.pseudo.gather(stream))
            result.accuracies[algo] = accs
            result.pseudo_audit[algo] = audit
        elif algo == "recal_scadann":
            accs = []
            for s in range(n_sessions):
                seed = cell_seed(master_seed, sid, "recal_scadann", s)
                if s == 0:
                    base = model0.clone()
                else:
                    base = _build_model(cfg, seed)
                    fit(base, preps[s].train_x, preps[s].train_y, _train_cfg(cfg.train, seed))
                stream = _stream_or_fail(preps[s], "recal_scadann")
                res = scadann_calibrate(
                    base, preps[s].train_x, preps[s].train_y, [], stream,
                    acfg=cfg.adapt, hcfg=cfg.heuristic, cfg=_train_cfg(cfg.adapt_train, seed),
                )
                accs.append(accuracy(res.model.predict(preps[s].test_x), preps[s].test_y))
            result.accuracies[algo] = accs
        else:
            raise ParameterError(f"unhandled algorithm {algo!r}")
    return result


def _pseudo_audit(pseudo, stream_y, status) -> dict:
    if pseudo is None or stream_y is None:
        return {"status": status}
    out = {
        "status": status,
        "kept": int(pseudo.kept_count),
        "total": int(pseudo.length),
        "kept_fraction": float(pseudo.kept_count / max(1, pseudo.length)),
    }
    if pseudo.kept_count:
        out["pseudo_accuracy"] = float(np.mean(pseudo.labels == stream_y[pseudo.indices]))
    return out


def run_experiment(dataset: list[SubjectData], cfg: HarnessConfig, master_seed: int) -> list[SubjectResult]:
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda sd: run_subject(sd, cfg, master_seed), dataset))
    else:
        results = [run_subject(sd, cfg, master_seed) for sd in dataset]
    return sorted(results, key=lambda r: r.subject)


def run_calibration_experiment(dataset: list[SubjectData], algorithm: str, setting: str,
                               cfg: HarnessConfig, master_seed: int = 0) -> dict[int, np.ndarray]:
    """Accuracy column for one algorithm under one calibration setting.

    Settings: NoCal (train session 0, test everywhere), Recal (retrain with
    each session's labels), Unsup (adapt with the session's unlabeled data
    using `algorithm`), RecalSCADANN (SCADANN on top of the recalibrated
    model). Returns {session: per-subject accuracies}.
    """
    if setting == "Unsup":
        if algorithm not in UNSUPERVISED:
            raise ParameterError(f"{algorithm!r} is not an unsupervised algorithm")
        algo = algorithm
    elif setting in SETTING_TO_ALGORITHM:
        algo = SETTING_TO_ALGORITHM[setting]
    else:
        raise ParameterError(f"unknown setting {setting!r}")
    run_cfg = dataclasses.replace(cfg, algorithms=(algo,))
    results = run_experiment(dataset, run_cfg, master_seed)
    n_sessions = len(results[0].accuracies[algo])
    return {
        s: np.array([r.accuracies[algo][s] for r in results], dtype=np.float64)
        for s in range(n_sessions)
    }


# -- benchmark ----------------------------------------------------------------


@dataclass
class BenchmarkConfig:
    """Desk-scale synthetic benchmark: small recordings, trimmed schedules.

    The adaptation learning rate and VAT radius are calibrated to the TSD
    feature scale; the drift magnitude keeps the session-2 pseudo-labels
    informative while still degrading the uncalibrated model markedly.
    """

    seed: int = 0
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(
        subjects=20, sessions=3, gestures=11,
        shift_scale=0.25, noise_scale=0.15,
        cycles=3, cycle_block_seconds=2.0,
        eval_recordings=1, eval_blocks=36, eval_block_seconds=2.5,
    ))
    harness: HarnessConfig = field(default_factory=lambda: HarnessConfig(
        input_kind="tsd", gestures=11,
        algorithms=("nocal", "dann", "vada", "adabn", "scadann"),
        train=default_train_config("tsd_dnn", max_epochs=60, batch_size=256,
                                   early_stop_patience=10, anneal_patience=5),
        adapt_train=default_train_config(
            "tsd_dnn", learning_rate=5e-4, max_epochs=15, batch_size=256,
            early_stop_patience=4, anneal_patience=3),
        adapt=AdaptConfig(vat_epsilon=0.01),
        workers=1,
    ))


def run_benchmark(cfg: BenchmarkConfig) -> dict:
    """Full synthetic benchmark; returns a deterministic report dictionary."""
    synth_cfg = dataclasses.replace(cfg.synth, seed=cell_seed(cfg.seed, "synth"))
    dataset = synth_generate(synth_cfg)
    results = run_experiment(dataset, cfg.harness, cfg.seed)
    algorithms = list(cfg.harness.algorithms)
    n_sessions = cfg.synth.sessions

    accuracy_tables = {}
    stats = {}
    for s in range(n_sessions):
        matrix = np.array(
            [[r.accuracies[a][s] for a in algorithms] for r in results], dtype=np.float64
        )
        accuracy_tables[str(s)] = {"algorithms": algorithms, "matrix": matrix.tolist()}
        if s >= 1 and "nocal" in algorithms and len(algorithms) >= 2:
            stats[str(s)] = _session_stats(matrix, algorithms)

    audit = {}
    for r in results:
        for algo, sessions in r.pseudo_audit.items():
            for s, info in sessions.items():
                audit.setdefault(algo, {}).setdefault(str(s), {})[str(r.subject)] = info

    from .dataio import config_digest  # local import to avoid a cycle

    return {
        "seed": cfg.seed,
        "config_digest": config_digest(cfg),
        "subjects": cfg.synth.subjects,
        "sessions": n_sessions,
        "gestures": cfg.synth.gestures,
        "input_kind": cfg.harness.input_kind,
        "algorithms": algorithms,
        "accuracy": accuracy_tables,
        "stats": stats,
        "pseudo_audit": audit,
    }


def _session_stats(matrix: np.ndarray, algorithms: list[str]) -> dict:
    control = algorithms.index("nocal")
    fr = friedman_test(matrix)
    holm = holm_posthoc(fr.avg_ranks, n=matrix.shape[0], control=control)
    dz = {}
    wilcoxon = {}
    for j, algo in enumerate(algorithms):
        if j == control:
            continue
        try:
            dz[algo] = cohens_dz(matrix[:, j], matrix[:, control])
        except NumericError:
            dz[algo] = None
        wilcoxon[algo] = wilcoxon_signed_rank(matrix[:, j], matrix[:, control])
    return {
        "friedman": {
            "avg_ranks": {a: fr.avg_ranks[j] for j, a in enumerate(algorithms)},
            "statistic": fr.statistic,
            "p_value": fr.p_value,
        },
        "holm": {
            a: {
                "z": None if np.isnan(holm.z_values[j]) else holm.z_values[j],
                "p": None if np.isnan(holm.p_values[j]) else holm.p_values[j],
                "p_adjusted": None if np.isnan(holm.p_adjusted[j]) else holm.p_adjusted[j],
                "reject": bool(holm.reject[j]),
            }
            for j, a in enumerate(algorithms)
            if j != control
        },
        "cohens_dz": dz,
        "wilcoxon_p": wilcoxon,
    }


def benchmark_report(cfg: BenchmarkConfig, out_dir) -> dict:
    """Run the benchmark and persist report, tables and manifest."""
    from .dataio import save_manifest, save_report

    report = run_benchmark(cfg)
    save_report(report, out_dir, accuracy_tables=report["accuracy"])
    save_manifest(out_dir, cfg.seed, cfg)
    return report
