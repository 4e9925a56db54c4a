"""Quantum readout: passive linear-optics output modes trained by Nelder-Mead."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .dynamics import ReservoirConfig, Simulator
from .metrics import ef_error, ew_error
from .operators import HilbertSpace, embed_state, partial_trace, wigner_batch
from .tasks import HybridSequence

MODE_SETS = ("IN", "RV", "ALL")


class NonFiniteCostError(FloatingPointError):
    def __init__(self, theta, value):
        super().__init__(f"cost returned {value} at theta={np.array2string(np.asarray(theta), precision=6)}")
        self.theta = np.asarray(theta)


# ---------------------------------------------------------------- unitary parametrization


def hermitian_from_params(theta: np.ndarray, n: int) -> np.ndarray:
    """Hermitian n x n matrix from n^2 reals: diagonal first, then (re, im) per upper-triangle pair."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (n * n,):
        raise ValueError(f"expected {n * n} parameters, got {theta.shape}")
    G = np.diag(theta[:n]).astype(complex)
    pos = n
    for j in range(n):
        for k in range(j + 1, n):
            G[j, k] = theta[pos] + 1j * theta[pos + 1]
            G[k, j] = np.conj(G[j, k])
            pos += 2
    return G


def modes_from_params(theta, M: int, n_readout: int) -> np.ndarray:
    """First M rows of exp(iG(theta)); row m holds the coefficients of output mode m."""
    if not 1 <= M <= n_readout:
        raise ValueError("need 1 <= M <= N_R")
    G = hermitian_from_params(theta, n_readout)
    return la.expm(1j * G)[:M]


# ---------------------------------------------------------------- passive mixer


class PassiveMixer:
    """Exact action of a passive mode transformation on states of truncated modes.

    States on modes with cutoffs ``mode_dims`` are embedded in the space of all
    occupation tuples with total photon number <= n_max = sum(d - 1), where any
    number-conserving unitary acts without truncation. The output modes get
    cutoff n_max + 1, so nothing is lost when tracing down.
    """

    def __init__(self, mode_dims: Sequence[int], n_out: int = 1):
        self.mode_dims = tuple(int(d) for d in mode_dims)
        R = len(self.mode_dims)
        if not 1 <= n_out <= R:
            raise ValueError("need 1 <= n_out <= number of modes")
        self.n_modes = R
        self.n_out = n_out
        self.n_max = sum(d - 1 for d in self.mode_dims)
        self.out_cutoff = self.n_max + 1
        self.out_dim = self.out_cutoff ** n_out
        self.in_dim = int(np.prod(self.mode_dims))
        base = self.out_cutoff
        self.n_rest = base ** (R - n_out)
        self._sectors = []
        for n in range(self.n_max + 1):
            tuples = [t for t in itertools.product(range(n + 1), repeat=R) if sum(t) == n]
            index = {t: i for i, t in enumerate(tuples)}
            size = len(tuples)
            E = np.zeros((R, R, size, size))
            for col, t in enumerate(tuples):
                for k in range(R):
                    if t[k] == 0:
                        continue
                    low = list(t)
                    amp = math.sqrt(low[k])
                    low[k] -= 1
                    for j in range(R):
                        up = list(low)
                        up[j] += 1
                        E[j, k, index[tuple(up)], col] += amp * math.sqrt(up[j])
            cols = [i for i, t in enumerate(tuples) if all(t[m] < self.mode_dims[m] for m in range(R))]
            flat_in = [int(np.ravel_multi_index(tuples[i], self.mode_dims)) for i in cols]
            out_idx = [int(np.ravel_multi_index(t[:n_out], (base,) * n_out)) for t in tuples]
            rest_idx = [int(np.ravel_multi_index(t[n_out:], (base,) * (R - n_out))) if R > n_out else 0 for t in tuples]
            self._sectors.append(
                (E.reshape(R * R, size, size), np.array(cols), np.array(flat_in), np.array(out_idx), np.array(rest_idx))
            )

    def kraus(self, G: np.ndarray) -> np.ndarray:
        """Operators T_r (n_rest, out_dim, in_dim) with output state sum_r T_r rho T_r^dag."""
        R = self.n_modes
        T = np.zeros((self.n_rest, self.out_dim, self.in_dim), dtype=complex)
        g = np.asarray(G, dtype=complex).reshape(R * R)
        for E, cols, flat_in, out_idx, rest_idx in self._sectors:
            if len(cols) == 0:
                continue
            gen = np.tensordot(g, E, axes=(0, 0))
            w, v = np.linalg.eigh(0.5 * (gen + gen.conj().T))
            U = (v * np.exp(1j * w)) @ v[cols].conj().T
            T[rest_idx[:, None], out_idx[:, None], flat_in[None, :]] = U
        return T

    def superoperator(self, G: np.ndarray, out_block: int | None = None) -> np.ndarray:
        """Matrix acting on row-major vec(rho); optionally keep only the leading ``out_block`` output levels."""
        T = self.kraus(G)
        if out_block is not None:
            T = T[:, :out_block, :]
        d = T.shape[1]
        # sum over r as one GEMM, then reorder (a, i, b, j) -> (a, b, i, j)
        S = np.tensordot(T, T.conj(), axes=(0, 0))
        return S.transpose(0, 2, 1, 3).reshape(d * d, self.in_dim ** 2)

    def apply(self, rhos: np.ndarray, G: np.ndarray) -> np.ndarray:
        rhos = np.asarray(rhos)
        single = rhos.ndim == 2
        stack = rhos[None] if single else rhos
        S = self.superoperator(G)
        out = (stack.reshape(len(stack), -1) @ S.T).reshape(len(stack), self.out_dim, self.out_dim)
        return out[0] if single else out


@dataclass
class ModeMixer:
    theta: np.ndarray
    M: int
    n_readout: int
    mode_set: str = "ALL"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.mode_set not in MODE_SETS:
            raise ValueError(f"mode_set must be one of {MODE_SETS}")

    @property
    def coefficients(self) -> np.ndarray:
        return modes_from_params(self.theta, self.M, self.n_readout)

    @property
    def generator(self) -> np.ndarray:
        return hermitian_from_params(self.theta, self.n_readout)

    def candidate_modes(self, n_inputs: int, n_sites: int) -> list[int]:
        return candidate_modes(self.mode_set, n_inputs, n_sites, self.n_readout)


def candidate_modes(mode_set: str, n_inputs: int, n_sites: int, n_readout: int | None = None) -> list[int]:
    """Mode indices (inputs first) available to the mixer, truncated to the first ``n_readout``."""
    if mode_set == "IN":
        modes = list(range(n_inputs))
    elif mode_set == "RV":
        modes = list(range(n_inputs, n_inputs + n_sites))
    elif mode_set == "ALL":
        modes = list(range(n_inputs + n_sites))
    else:
        raise ValueError(f"mode_set must be one of {MODE_SETS}")
    if n_readout is None:
        return modes
    if n_readout > len(modes):
        raise ValueError(f"N_R = {n_readout} exceeds the {len(modes)} modes in set {mode_set}")
    return modes[:n_readout]


def output_state(rho: np.ndarray, mixer: ModeMixer, space: HilbertSpace, modes: Sequence[int] | None = None) -> np.ndarray:
    """State of the M output modes; ``modes`` are the mixer's candidate modes within ``space``."""
    if modes is None:
        modes = list(range(mixer.n_readout))
    modes = list(modes)
    if len(modes) != mixer.n_readout:
        raise ValueError("mixer width does not match the number of candidate modes")
    if sorted(modes) != modes:
        raise ValueError("candidate modes must be in ascending order")
    red = partial_trace(rho, space, modes)
    pm = _mixer_cache(tuple(space.mode_dims[m] for m in modes), mixer.M)
    return pm.apply(red, mixer.generator)


_MIXERS: dict = {}


def _mixer_cache(dims: tuple, M: int) -> PassiveMixer:
    key = (dims, M)
    if key not in _MIXERS:
        _MIXERS[key] = PassiveMixer(dims, M)
    return _MIXERS[key]


# ---------------------------------------------------------------- costs


def ef_cost(targets: np.ndarray, outputs: np.ndarray) -> float:
    return ef_error(targets, outputs)


def ew_cost(target_grids: np.ndarray, output_grids: np.ndarray) -> float:
    return ew_error(target_grids, output_grids)


# ---------------------------------------------------------------- Nelder-Mead


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    trace: list
    n_iter: int
    n_eval: int
    converged: bool


def nelder_mead(
    cost: Callable[[np.ndarray], float],
    theta0,
    max_iters: int = 1000,
    tol: float = 1e-8,
    initial_step: float | np.ndarray = 0.1,
    max_evals: int | None = None,
    ftol: float = 0.0,
) -> NelderMeadResult:
    """Simplex search with reflection 1, expansion 2, contraction 0.5, shrink 0.5.

    Stops when the simplex diameter (max vertex distance from the best vertex)
    drops below ``tol``, when the spread of vertex values is <= ``ftol``, or
    after ``max_iters`` iterations / ``max_evals`` evaluations. ``trace`` holds
    the best value after every iteration.
    """
    x0 = np.asarray(theta0, dtype=float).ravel()
    n = x0.size
    n_eval = 0

    def f(x):
        nonlocal n_eval
        n_eval += 1
        v = float(cost(x))
        if not np.isfinite(v):
            raise NonFiniteCostError(x, v)
        return v

    step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,))
    simplex = np.vstack([x0] + [x0 + step[i] * np.eye(n)[i] for i in range(n)])
    vals = np.array([f(x) for x in simplex])
    trace = []
    converged = False
    it = 0
    while it < max_iters:
        order = np.argsort(vals, kind="stable")
        simplex, vals = simplex[order], vals[order]
        diam = np.max(np.linalg.norm(simplex[1:] - simplex[0], axis=1)) if n else 0.0
        if diam < tol or (ftol > 0 and vals[-1] - vals[0] <= ftol):
            converged = True
            break
        if max_evals is not None and n_eval >= max_evals:
            break
        it += 1
        centroid = simplex[:-1].mean(axis=0)
        xr = centroid + (centroid - simplex[-1])
        fr = f(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - simplex[-1])
            fe = f(xe)
            if fe < fr:
                simplex[-1], vals[-1] = xe, fe
            else:
                simplex[-1], vals[-1] = xr, fr
        elif fr < vals[-2]:
            simplex[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (simplex[-1] - centroid)
                fc = f(xc)
                accept = fc < vals[-1]
            if accept:
                simplex[-1], vals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    vals[i] = f(simplex[i])
        trace.append(float(vals.min()))
    best = int(np.argmin(vals))
    return NelderMeadResult(simplex[best].copy(), float(vals[best]), trace, it, n_eval, converged)


# ---------------------------------------------------------------- training


@dataclass
class TrainSpec:
    trainable: str = "Wio"  # "Wo": mixer only, "Wio": mixer and input couplings
    cost: str = "EF"  # "EF" or "EW"
    mode_set: str = "ALL"
    n_readout: int | None = None
    n_outputs: int = 1
    n_train: int = 200
    max_iters: int = 1500
    tolerance: float = 1e-6
    outer_iters: int = 40
    inner_iters: int = 300
    seed: int | None = None
    reset: bool = False  # restart every instance from the warm state

    def __post_init__(self):
        if self.trainable not in ("Wo", "Wio"):
            raise ValueError("trainable must be 'Wo' or 'Wio'")
        if self.cost not in ("EF", "EW"):
            raise ValueError("cost must be 'EF' or 'EW'")
        if self.mode_set not in MODE_SETS:
            raise ValueError(f"mode_set must be one of {MODE_SETS}")


def squash(z: np.ndarray, gamma: float) -> np.ndarray:
    return gamma / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def unsquash(w: np.ndarray, gamma: float) -> np.ndarray:
    p = np.clip(np.asarray(w, dtype=float) / gamma, 1e-6, 1 - 1e-6)
    return np.log(p / (1 - p))


class ReadoutProblem:
    """Cost evaluation for a fixed task with dynamics reruns memoized on the input couplings."""

    def __init__(self, cfg: ReservoirConfig, data: HybridSequence, spec: TrainSpec):
        if data.targets is None:
            raise ValueError("data has no targets")
        self.cfg = cfg.with_(multiplexity=1)
        self.data = data
        self.spec = spec
        self.modes = candidate_modes(spec.mode_set, cfg.n_inputs, cfg.n_sites, spec.n_readout)
        self.n_readout = len(self.modes)
        space = cfg.space
        self.mixer = _mixer_cache(tuple(space.mode_dims[m] for m in self.modes), spec.n_outputs)
        self.targets = np.asarray(data.targets)
        self.target_dim = self.targets.shape[-1]
        if self.target_dim > self.mixer.out_dim:
            raise ValueError("target dimension exceeds the output-mode cutoff")
        self.offset = data.offset
        if spec.cost == "EW":
            if spec.n_outputs != 1:
                raise ValueError("the Wigner cost needs a single output mode")
            self.target_grids = wigner_batch(self.targets)
        self._memo: dict = {}
        self.reports = []
        self.n_dynamics = 0

    @property
    def n_theta(self) -> int:
        return self.n_readout ** 2

    @property
    def n_win(self) -> int:
        return self.cfg.w_in.size

    def states(self, w_in: np.ndarray) -> np.ndarray:
        """Flattened candidate-mode states at t_l + tau for every step with a target."""
        key = np.round(np.asarray(w_in, dtype=float), 12).tobytes()
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        cfg = self.cfg.with_(w_in=np.asarray(w_in, dtype=float).reshape(self.cfg.w_in.shape))
        sim = Simulator(cfg, check_eigenvalues=True)
        res = sim.run(self.data.u, self.data.beta, keep_states=True, reset=self.spec.reset)
        self.reports.append(res.report)
        self.n_dynamics += 1
        red = np.array([partial_trace(r, cfg.space, self.modes) for r in res.states[self.offset :]])
        flat = red.reshape(len(red), -1)
        if len(self._memo) > 256:
            self._memo.clear()
        self._memo[key] = flat
        return flat

    def outputs(self, theta: np.ndarray, w_in: np.ndarray, idx=slice(None)) -> np.ndarray:
        flat = self.states(w_in)[idx]
        G = hermitian_from_params(theta, self.n_readout)
        block = self.target_dim if self.spec.cost == "EF" else None
        S = self.mixer.superoperator(G, block)
        d = block or self.mixer.out_dim
        return (flat @ S.T).reshape(len(flat), d, d)

    def cost(self, theta: np.ndarray, w_in: np.ndarray, idx=slice(None)) -> float:
        out = self.outputs(theta, w_in, idx)
        if self.spec.cost == "EF":
            # the target lives in the leading block, so only that block of the output matters
            return ef_cost(self.targets[idx], out)
        return ew_cost(self.target_grids[idx], wigner_batch(out))

    def split(self):
        n = len(self.targets)
        tr = min(self.spec.n_train, n)
        return slice(0, tr), slice(tr, n)

    def unpack(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(params, dtype=float)
        theta = params[: self.n_theta]
        if self.spec.trainable == "Wio":
            w_in = squash(params[self.n_theta :], self.cfg.gamma).reshape(self.cfg.w_in.shape)
        else:
            w_in = self.cfg.w_in
        return theta, w_in

    def baseline(self, idx=slice(None)) -> float:
        """Error when the output is taken to be the input state itself."""
        beta = np.asarray(self.data.beta)[self.offset :][idx]
        targ = self.targets[idx]
        if beta.shape[-1] != targ.shape[-1]:
            beta = np.array([embed_state(b, targ.shape[-1]) for b in beta])
        if self.spec.cost == "EF":
            return ef_cost(targ, beta)
        return ew_cost(self.target_grids[idx], wigner_batch(beta))


def cost_eval(params, data: HybridSequence, spec: TrainSpec, cfg: ReservoirConfig, idx=slice(None)) -> float:
    """Run the dynamics for ``params`` and return the EF or EW error over ``data``."""
    prob = ReadoutProblem(cfg, data, spec)
    theta, w_in = prob.unpack(params)
    return prob.cost(theta, w_in, idx)


@dataclass
class QuantumReadoutResult:
    theta: np.ndarray
    w_in: np.ndarray
    train_error: float
    eval_error: float
    baseline_error: float
    history: list = field(default_factory=list)
    n_dynamics: int = 0
    reports: list = field(default_factory=list)

    @property
    def mixer_rows(self) -> np.ndarray:
        n = int(round(math.sqrt(len(self.theta))))
        return modes_from_params(self.theta, 1, n)


def train_quantum_readout(cfg: ReservoirConfig, data: HybridSequence, spec: TrainSpec) -> QuantumReadoutResult:
    """Fit the output-mode mixer (and, for ``Wio``, the input couplings) on the training split.

    The mixer is first optimized at the configured couplings. Under ``Wio`` an
    outer simplex then searches the squashed couplings, re-optimizing the mixer
    from the first-phase solution for each candidate.
    """
    prob = ReadoutProblem(cfg, data, spec)
    tr, ev = prob.split()
    rng = np.random.default_rng(spec.seed)
    history = []

    def fit_mixer(w_in, theta0, iters):
        res = nelder_mead(lambda th: prob.cost(th, w_in, tr), theta0, max_iters=iters, tol=spec.tolerance, initial_step=0.3)
        return res

    starts = [np.zeros(prob.n_theta)] + [rng.normal(0.0, 0.5, prob.n_theta) for _ in range(2)]
    best = None
    for x0 in starts:
        r = fit_mixer(cfg.w_in, x0, spec.max_iters)
        if best is None or r.fun < best.fun:
            best = r
    history.extend(("mixer", v) for v in best.trace)
    theta, w_in, train_err = best.x, cfg.w_in.copy(), best.fun

    if spec.trainable == "Wio":
        anchor = theta.copy()
        found = {"theta": theta, "w_in": w_in, "fun": train_err}

        def outer(z):
            w = squash(z, cfg.gamma).reshape(cfg.w_in.shape)
            r = fit_mixer(w, anchor, spec.inner_iters)
            if r.fun < found["fun"]:
                found.update(theta=r.x, w_in=w, fun=r.fun)
            return r.fun

        z0 = unsquash(cfg.w_in, cfg.gamma).ravel()
        res = nelder_mead(outer, z0, max_iters=spec.outer_iters, tol=1e-3, initial_step=1.0)
        history.extend(("couplings", v) for v in res.trace)
        theta, w_in, train_err = found["theta"], found["w_in"], found["fun"]
        # polish the mixer at the chosen couplings
        r = fit_mixer(w_in, theta, spec.max_iters)
        history.extend(("polish", v) for v in r.trace)
        if r.fun < train_err:
            theta, train_err = r.x, r.fun

    eval_err = prob.cost(theta, w_in, ev) if ev.stop > ev.start else float("nan")
    return QuantumReadoutResult(
        theta=theta,
        w_in=w_in,
        train_error=float(train_err),
        eval_error=float(eval_err),
        baseline_error=prob.baseline(ev) if ev.stop > ev.start else prob.baseline(tr),
        history=history,
        n_dynamics=prob.n_dynamics,
        reports=prob.reports,
    )
