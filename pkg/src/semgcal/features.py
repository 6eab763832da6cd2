"""Handcrafted feature extraction (TD and TSD sets) and an LDA baseline.

TD is the classic four-feature time-domain set computed per channel. TSD
combines seven moment/energy descriptors of each channel signal (and of each
pairwise channel difference) with the descriptors of its cepstral
representation through a normalized similarity, yielding 385 values for ten
channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ShapeError
from .signal import NUM_CHANNELS, Segment

TSD_EPS = 1e-8
TD_LENGTH = 4 * NUM_CHANNELS  # 40
TSD_LENGTH = 7 * (NUM_CHANNELS + NUM_CHANNELS * (NUM_CHANNELS - 1) // 2)  # 385


@dataclass(frozen=True)
class FeatureExample:
    values: np.ndarray
    label: int | None = None
    kind: str = "TSD"  # "TD" or "TSD"

    def __post_init__(self):
        expected = {"TD": TD_LENGTH, "TSD": TSD_LENGTH}.get(self.kind)
        if expected is None:
            raise ShapeError(f"unknown feature kind {self.kind!r}")
        if self.values.shape != (expected,):
            raise ShapeError(f"{self.kind} vector must have length {expected}, got {self.values.shape}")


def td_features(seg: Segment, zc_threshold: float = 0.0, ssc_threshold: float = 0.0) -> FeatureExample:
    """Mean Absolute Value, Zero Crossings, Slope Sign Changes and Waveform Length.

    Computed per channel and concatenated channel-major:
    (MAV_0, ZC_0, SSC_0, WL_0, MAV_1, ...).
    """
    x = np.asarray(seg.data, dtype=np.float64)
    mav = np.mean(np.abs(x), axis=1)
    wl = np.sum(np.abs(np.diff(x, axis=1)), axis=1)
    zc = np.sum(
        (x[:, :-1] * x[:, 1:] < 0) & (np.abs(x[:, :-1] - x[:, 1:]) > zc_threshold), axis=1
    )
    ssc = np.sum((x[:, 1:-1] - x[:, :-2]) * (x[:, 1:-1] - x[:, 2:]) > ssc_threshold, axis=1)
    stacked = np.stack([mav, zc, ssc, wl], axis=1).reshape(-1)
    return FeatureExample(values=stacked.astype(np.float64), label=seg.label, kind="TD")


def _descriptors(x: np.ndarray) -> np.ndarray:
    """Seven log-scaled descriptors of signals along the last axis.

    Works on any leading batch shape. Rows that are identically zero fall back
    to log(eps) in every component. Radicands are made non-negative with an
    absolute value and zero denominators are floored at eps.
    """
    x = np.asarray(x, dtype=np.float64)
    d1 = x[..., 1:] - x[..., :-1]
    d2 = d1[..., 1:] - d1[..., :-1]
    m0 = np.sqrt(np.einsum("...i,...i->...", x, x))
    m2 = np.sqrt(np.einsum("...i,...i->...", d1, d1))
    m4 = np.sqrt(np.einsum("...i,...i->...", d2, d2))

    sparse_den = np.maximum(np.sqrt(np.abs((m0 - m2) * (m0 - m4))), TSD_EPS)
    sparseness = m0 / sparse_den
    irr_den = np.maximum(np.sqrt(np.abs(m0 * m4)), TSD_EPS)
    irregularity = m2 / irr_den

    mean_abs = np.mean(np.abs(x), axis=-1)
    cov = np.std(x, axis=-1) / np.maximum(mean_abs, TSD_EPS)
    tk = np.sum(np.abs(x[..., 1:-1] ** 2 - x[..., :-2] * x[..., 2:]), axis=-1)

    comps = np.stack(
        [m0, np.abs(m0 - m2), np.abs(m0 - m4), sparseness, irregularity, cov, tk], axis=-1
    )
    out = np.log(TSD_EPS + np.abs(comps))
    zero_rows = ~np.any(x != 0.0, axis=-1)
    out[zero_rows] = np.log(TSD_EPS)
    return out


def tsd_descriptor(x: np.ndarray) -> np.ndarray:
    """Seven descriptors of one signal: root-squared moments m0, m0-m2, m0-m4,
    sparseness, irregularity factor, coefficient of variation and the summed
    Teager-Kaiser energy, each passed through log(eps + |.|)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or len(x) < 3:
        raise ShapeError(f"descriptor needs a 1-D signal of length >= 3, got shape {x.shape}")
    return _descriptors(x)


def real_cepstrum(x: np.ndarray) -> np.ndarray:
    """Real cepstrum: inverse DFT of log(|DFT| + eps), along the last axis."""
    spec = np.abs(np.fft.rfft(x, axis=-1))
    return np.fft.irfft(np.log(spec + TSD_EPS), n=x.shape[-1], axis=-1)


def similarity_combine(a: np.ndarray, b: np.ndarray, eps: float = TSD_EPS) -> np.ndarray:
    """Element-wise normalized similarity 2ab / (a^2 + b^2 + eps), in [-1, 1]."""
    return 2.0 * a * b / (a * a + b * b + eps)


def _pair_indices(channels: int) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.triu_indices(channels, k=1)
    return i, j


def tsd_features(seg: Segment) -> FeatureExample:
    """TSD vector of a 10-channel segment: 7 x (10 channels + 45 channel pairs).

    Each block combines the descriptors of a signal (a channel, or the
    difference of a channel pair) with the descriptors of its cepstral
    representation. Blocks whose source signal is identically zero carry no
    information and are emitted as zeros.
    """
    x = np.asarray(seg.data, dtype=np.float64)
    if x.shape[0] != NUM_CHANNELS:
        raise ShapeError(f"expected {NUM_CHANNELS} channels, got {x.shape[0]}")
    values = tsd_matrix(x[None, :, :])[0]
    return FeatureExample(values=values, label=seg.label, kind="TSD")


def tsd_matrix(batch: np.ndarray, chunk: int = 96) -> np.ndarray:
    """Vectorized TSD extraction for a batch of segments (N, channels, samples).

    Processes `chunk` segments at a time so the per-signal temporaries stay
    cache-resident; the result is independent of the chunk size.
    """
    batch = np.asarray(batch, dtype=np.float64)
    n, c, _ = batch.shape
    pi, pj = _pair_indices(c)
    out = np.empty((n, 7 * (c + len(pi))), dtype=np.float64)
    for lo in range(0, n, chunk):
        part = batch[lo : lo + chunk]
        signals = np.concatenate([part, part[:, pi, :] - part[:, pj, :]], axis=1)
        a = _descriptors(signals)
        b = _descriptors(real_cepstrum(signals))
        combined = similarity_combine(a, b)  # (chunk, 55, 7)
        zero_rows = ~np.any(signals != 0.0, axis=-1)
        combined[zero_rows] = 0.0
        out[lo : lo + chunk] = combined.reshape(len(part), -1)
    return out


@dataclass(frozen=True)
class LdaModel:
    """Pooled-covariance linear discriminant classifier."""

    class_ids: np.ndarray  # (k,) sorted
    means: np.ndarray  # (k, d)
    cov_inv: np.ndarray  # (d, d)
    log_priors: np.ndarray  # (k,)


def lda_fit(examples: list[FeatureExample]) -> LdaModel:
    """Fit an LDA with ridge-regularized pooled covariance.

    The ridge is lam * I with lam = 1e-6 * trace / dim; a fully degenerate
    (zero-trace) covariance falls back to lam = 1e-6 so prediction reduces to
    the nearest class mean.
    """
    if not examples:
        raise DataError("no training examples")
    X = np.stack([np.asarray(e.values, dtype=np.float64) for e in examples])
    y = np.array([e.label for e in examples])
    if any(label is None for label in y):
        raise DataError("all examples must be labeled")
    return lda_fit_arrays(X, y.astype(np.int64))


def lda_fit_arrays(X: np.ndarray, y: np.ndarray) -> LdaModel:
    class_ids = np.unique(y)
    if len(class_ids) < 2:
        raise DataError(f"need >= 2 classes, got {len(class_ids)}")
    n, d = X.shape
    means = np.zeros((len(class_ids), d))
    scatter = np.zeros((d, d))
    priors = np.zeros(len(class_ids))
    for idx, cid in enumerate(class_ids):
        xc = X[y == cid]
        if len(xc) < 2:
            raise DataError(f"class {cid} has {len(xc)} examples, need >= 2")
        means[idx] = xc.mean(axis=0)
        centered = xc - means[idx]
        scatter += centered.T @ centered
        priors[idx] = len(xc) / n
    cov = scatter / (n - len(class_ids))
    trace = np.trace(cov)
    lam = 1e-6 * (trace / d) if trace > 0 else 1e-6
    cov = cov + lam * np.eye(d)
    try:
        np.linalg.cholesky(cov)
        cov_inv = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("pooled covariance singular after regularization") from exc
    return LdaModel(class_ids=class_ids, means=means, cov_inv=cov_inv, log_priors=np.log(priors))


def lda_discriminants(model: LdaModel, x: np.ndarray) -> np.ndarray:
    """Linear discriminant scores for one feature vector or a batch."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    proj = model.cov_inv @ model.means.T  # (d, k)
    scores = x @ proj - 0.5 * np.sum(model.means * proj.T, axis=1) + model.log_priors
    return scores


def lda_predict(model: LdaModel, x: np.ndarray) -> np.ndarray | int:
    """Predicted class id(s); a 1-D input yields a scalar."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    scores = lda_discriminants(model, x)
    picked = model.class_ids[np.argmax(scores, axis=1)]
    return int(picked[0]) if single else picked
