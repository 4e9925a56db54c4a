"""Linear readouts: ridge regression, density-matrix reconstruction, closed-loop generation, ESN."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .operators import hermitize, project_spectrahedron
from .tasks import SYMBOLS


class ClosedLoopDivergence(RuntimeError):
    pass


@dataclass
class ReadoutWeights:
    """Linear map from feature rows (bias column included) to outputs."""

    w: np.ndarray
    eta: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X) @ self.w


def default_eta(X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    return 1e-6 * float(np.sum(X * X)) / X.shape[1]


def ridge_fit(X: np.ndarray, Y: np.ndarray, eta: float | None = None) -> ReadoutWeights:
    """Minimize ||X w - Y||^2 + eta ||w||^2 through the SVD of X."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("X must be a non-empty 2-D array")
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    if Y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    if eta is None:
        eta = default_eta(X)
    if eta < 0:
        raise ValueError("eta must be non-negative")
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    if eta == 0:
        tol = s.max(initial=0.0) * max(X.shape) * np.finfo(float).eps
        if len(s) < X.shape[1] or s.min() <= tol:
            raise np.linalg.LinAlgError("singular least-squares system; use eta > 0")
        filt = 1.0 / s
    else:
        filt = s / (s * s + eta)
    w = Vt.T @ (filt[:, None] * (U.T @ Y))
    return ReadoutWeights(w[:, 0] if squeeze else w, float(eta))


def vectorize_density(rho: np.ndarray) -> np.ndarray:
    """Real vector: all real parts row-major, then all imaginary parts row-major."""
    rho = np.asarray(rho)
    return np.concatenate([rho.real.reshape(-1), rho.imag.reshape(-1)])


def vectorize_batch(rhos: np.ndarray) -> np.ndarray:
    rhos = np.asarray(rhos)
    L = rhos.shape[0]
    return np.concatenate([rhos.real.reshape(L, -1), rhos.imag.reshape(L, -1)], axis=1)


def reconstruct_density(y: np.ndarray, D: int) -> np.ndarray:
    """Unstack, Hermitize, and project onto the unit-trace PSD cone."""
    y = np.asarray(y, dtype=float)
    if y.shape != (2 * D * D,):
        raise ValueError(f"expected {2 * D * D} entries, got {y.shape}")
    m = y[: D * D].reshape(D, D) + 1j * y[D * D :].reshape(D, D)
    return project_spectrahedron(hermitize(m))


def quantize_symbol(y):
    """Nearest of {-3, -1, 1, 3}; exact midpoints go to the smaller symbol."""
    y = np.asarray(y, dtype=float)
    # distances to each symbol; argmin picks the first (smallest) symbol on ties
    idx = np.argmin(np.abs(y[..., None] - SYMBOLS), axis=-1)
    out = SYMBOLS[idx]
    return float(out) if out.ndim == 0 else out


def closed_loop_generate(
    sim,
    weights: ReadoutWeights,
    beta_source: Callable[[int], np.ndarray] | None,
    steps: int,
    rho0: np.ndarray,
    u0: float,
    signal_column: int = 0,
    perturbation: tuple[int, float] | None = None,
    bound: float = 10.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Feed each prediction back as the next classical input.

    ``sim`` is a :class:`~hybridqrc.dynamics.Simulator`; ``rho0`` the reservoir
    state at the end of the open-loop run and ``u0`` the first closed-loop input.
    ``perturbation = (k, delta)`` adds ``delta`` to the input fed at closed-loop step ``k``.
    Returns the generated signal (prediction at each step) and the full output rows.
    """
    rho = rho0
    u = float(u0)
    gen = np.empty(steps)
    outs = []
    for k in range(steps):
        if perturbation is not None and k == perturbation[0]:
            u += perturbation[1]
        beta = None if beta_source is None else beta_source(k)
        rho, row = sim.step(rho, u, beta)
        y = weights.predict(np.append(row, 1.0))
        y = np.atleast_1d(y)
        nxt = float(y[signal_column])
        if not np.isfinite(nxt) or abs(nxt) > bound:
            raise ClosedLoopDivergence(f"closed loop diverged at step {k} (prediction {nxt:.3g})")
        gen[k] = nxt
        outs.append(y)
        u = nxt
    return gen, np.array(outs)


# ---------------------------------------------------------------- echo state network


@dataclass
class EsnConfig:
    nodes: int
    connection_probability: float = 0.1
    spectral_radius: float = 0.9
    input_scale: float = 1.0
    seed: int | None = None

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        """Input weights (nodes,) and recurrent matrix rescaled to the target spectral radius."""
        rng = np.random.default_rng(self.seed)
        w_in = rng.uniform(-1.0, 1.0, size=self.nodes) * self.input_scale
        for _ in range(1000):
            mask = rng.random((self.nodes, self.nodes)) < self.connection_probability
            W = np.where(mask, rng.uniform(-1.0, 1.0, size=mask.shape), 0.0)
            rad = np.max(np.abs(np.linalg.eigvals(W)))
            if rad > 1e-8:
                return w_in, W * (self.spectral_radius / rad)
        raise RuntimeError("could not draw a recurrent matrix with nonzero spectral radius")


def esn_run(cfg: EsnConfig, u_seq, x0: np.ndarray | None = None) -> np.ndarray:
    """States x_{l+1} = tanh(W_in u_{l+1} + W x_l) as rows, plus a bias column."""
    w_in, W = cfg.weights()
    u_seq = np.asarray(u_seq, dtype=float)
    x = np.zeros(cfg.nodes) if x0 is None else np.asarray(x0, dtype=float)
    out = np.ones((len(u_seq), cfg.nodes + 1))
    for l, u in enumerate(u_seq):
        x = np.tanh(w_in * u + W @ x)
        out[l, :-1] = x
    return out
