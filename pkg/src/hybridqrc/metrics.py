"""Evaluation functionals for tomography, equalization, closed loops, and memory."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .operators import fidelity_batch
from .readout import reconstruct_density, ridge_fit, vectorize_batch

DEGENERATE_VARIANCE = 1e-12


def _aligned(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) == 0:
        raise ValueError("empty sequences")
    return a, b


def fidelities(targets, predictions) -> np.ndarray:
    t, p = _aligned(targets, predictions)
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch {t.shape} vs {p.shape}")
    return fidelity_batch(p, t)


def rmsf(targets, predictions) -> float:
    """Root mean square of the fidelities."""
    f = fidelities(targets, predictions)
    return float(np.sqrt(np.mean(f ** 2)))


def ser(true_symbols, predicted_symbols) -> float:
    """Fraction of mismatched symbols."""
    t, p = _aligned(true_symbols, predicted_symbols)
    return float(np.mean(t != p))


def ef_error(targets, predictions) -> float:
    """sqrt(mean (1 - F)^2)."""
    f = fidelities(targets, predictions)
    return float(np.sqrt(np.mean((1.0 - f) ** 2)))


def ew_terms(target_grids, predicted_grids) -> np.ndarray:
    t, p = _aligned(target_grids, predicted_grids)
    if t.shape != p.shape:
        raise ValueError(f"grid shape mismatch {t.shape} vs {p.shape}")
    num = np.sum((t - p) ** 2, axis=(-2, -1))
    den = np.sum((t + p) ** 2, axis=(-2, -1))
    return num / den


def ew_error(target_grids, predicted_grids) -> float:
    """sqrt(mean_l [sum (W_t - W_p)^2 / sum (W_t + W_p)^2]) over grids of shape (L, nx, np)."""
    return float(np.sqrt(np.mean(ew_terms(target_grids, predicted_grids))))


def ew_curve(target_grids, predicted_grids) -> np.ndarray:
    """EW over the first t samples, for t = 1..L."""
    terms = ew_terms(target_grids, predicted_grids)
    return np.sqrt(np.cumsum(terms) / np.arange(1, len(terms) + 1))


def nrmse_curve(true_next, predicted, variance: float) -> np.ndarray:
    """sqrt((1/t) sum_{k<t} (true_k - pred_k)^2 / variance) for t = 1..L."""
    t, p = _aligned(true_next, predicted)
    sq = (t - p) ** 2 / variance
    return np.sqrt(np.cumsum(sq) / np.arange(1, len(sq) + 1))


def nrmse(true_next, predicted, variance: float) -> float:
    return float(nrmse_curve(true_next, predicted, variance)[-1])


def vpt(errors_by_horizon, epsilon: float) -> int:
    """Largest horizon T (1-based) with error(t) <= epsilon for all t <= T; 0 if the first fails."""
    e = np.asarray(errors_by_horizon, dtype=float)
    bad = np.nonzero(~(e <= epsilon))[0]
    return int(len(e) if len(bad) == 0 else bad[0])


# ---------------------------------------------------------------- memory


@dataclass
class MemoryProfile:
    values: np.ndarray
    d_max: int

    @property
    def capacity(self) -> float:
        return float(np.sum(self.values))


def _split_rows(n: int, split: float) -> int:
    n_train = int(round(split * n))
    if n_train < 2 or n - n_train < 2:
        raise ValueError("insufficient data for the requested split")
    return n_train


def memory_capacity_classical(features, u_seq, d_max: int, split: float = 0.8, eta=None) -> MemoryProfile:
    """Squared correlation between u_{l-d} and its ridge reconstruction, d = 0..d_max."""
    X = np.asarray(features, dtype=float)
    u = np.asarray(u_seq, dtype=float)
    if len(X) != len(u):
        raise ValueError("features and inputs are not aligned")
    if len(u) <= d_max + 4:
        raise ValueError("insufficient data beyond d_max")
    rows = np.arange(d_max, len(u))
    n_train = _split_rows(len(rows), split)
    tr, ev = rows[:n_train], rows[n_train:]
    vals = np.zeros(d_max + 1)
    for d in range(d_max + 1):
        w = ridge_fit(X[tr], u[tr - d], eta)
        pred = w.predict(X[ev])
        vals[d] = _corr_sq(u[ev - d], pred)
    return MemoryProfile(vals, d_max)


def _corr_sq(a, b) -> float:
    a = a - a.mean()
    b = b - b.mean()
    den = np.sum(a * a) * np.sum(b * b)
    if den < DEGENERATE_VARIANCE:
        return 0.0
    return float(min(1.0, np.sum(a * b) ** 2 / den))


def bures_distances(states) -> np.ndarray:
    """Symmetric matrix of pairwise Bures angles arccos F."""
    s = np.asarray(states)
    n = len(s)
    i, j = np.triu_indices(n, 1)
    out = np.zeros((n, n))
    if len(i):
        f = fidelity_batch(s[i], s[j])
        out[i, j] = np.arccos(np.clip(f, 0.0, 1.0))
        out[j, i] = out[i, j]
    return out


def double_center(dist: np.ndarray) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    return dist - dist.mean(axis=0, keepdims=True) - dist.mean(axis=1, keepdims=True) + dist.mean()


def distance_correlation_sq(dist_a: np.ndarray, dist_b: np.ndarray) -> float:
    """Squared distance correlation from two pairwise-distance matrices; 0 when degenerate."""
    if dist_a.shape != dist_b.shape:
        raise ValueError("distance matrices differ in shape")
    A = double_center(dist_a)
    B = double_center(dist_b)
    vab = np.mean(A * B)
    vaa = np.mean(A * A)
    vbb = np.mean(B * B)
    if vaa < DEGENERATE_VARIANCE or vbb < DEGENERATE_VARIANCE:
        return 0.0
    return float(vab / np.sqrt(vaa * vbb))


def state_distance_correlation(states_a, states_b) -> float:
    a, b = _aligned(states_a, states_b)
    return distance_correlation_sq(bures_distances(a), bures_distances(b))


def qmc_from_reconstructions(reconstructed_by_delay, targets_by_delay) -> MemoryProfile:
    """Profile of R^2(d) for already-reconstructed state sequences, one pair per delay."""
    vals = np.array(
        [state_distance_correlation(r, t) for r, t in zip(reconstructed_by_delay, targets_by_delay, strict=True)]
    )
    return MemoryProfile(vals, len(vals) - 1)


def quantum_memory_capacity(features, input_states, d_max: int, split: float = 0.8, eta=None) -> MemoryProfile:
    """For each delay, ridge-train a tomography readout for beta_{l-d} and score it by R^2(d)."""
    X = np.asarray(features, dtype=float)
    beta = np.asarray(input_states)
    if len(X) != len(beta):
        raise ValueError("features and inputs are not aligned")
    if len(beta) <= d_max + 4:
        raise ValueError("insufficient data beyond d_max")
    D = beta.shape[-1]
    vecs = vectorize_batch(beta)
    rows = np.arange(d_max, len(beta))
    n_train = _split_rows(len(rows), split)
    tr, ev = rows[:n_train], rows[n_train:]
    vals = np.zeros(d_max + 1)
    for d in range(d_max + 1):
        w = ridge_fit(X[tr], vecs[tr - d], eta)
        pred = w.predict(X[ev])
        recon = np.array([reconstruct_density(y, D) for y in pred])
        vals[d] = state_distance_correlation(recon, beta[ev - d])
    return MemoryProfile(vals, d_max)


# ---------------------------------------------------------------- timescales


@dataclass
class Autocorrelation:
    lags: np.ndarray
    curve: np.ndarray
    crossing: float
    crossed: bool


def autocorrelation_timescale(traces, dt: float = 1.0) -> Autocorrelation:
    """Site-averaged autocovariance of uniformly sampled traces (time x sites) and its first zero crossing.

    The crossing time is linearly interpolated between samples; if the curve
    never crosses zero, the trace length is reported with ``crossed=False``.
    """
    x = np.asarray(traces, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    T = x.shape[0]
    x = x - x.mean(axis=0)
    n = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, n=n, axis=0)
    ac = np.fft.irfft(f * np.conj(f), n=n, axis=0)[:T] / T
    curve = ac.mean(axis=1)
    lags = np.arange(T) * dt
    neg = np.nonzero(curve <= 0)[0]
    if len(neg) == 0:
        return Autocorrelation(lags, curve, T * dt, False)
    k = int(neg[0])
    if k == 0:
        return Autocorrelation(lags, curve, 0.0, True)
    c0, c1 = curve[k - 1], curve[k]
    frac = c0 / (c0 - c1)
    return Autocorrelation(lags, curve, (k - 1 + frac) * dt, True)
