"""Driven-dissipative bosonic lattice with cascaded input modes.

Mode layout is input modes first, then reservoir sites. Times are in units of
1/gamma when ``gamma = 1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import reduce
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .operators import HilbertSpace, annihilator, destroy, partial_trace


class IntegrationError(FloatingPointError):
    """The integrator produced non-finite entries (cutoff too small or step too large)."""


class CutoffError(RuntimeError):
    """Top Fock level of a site is populated beyond the monitor threshold."""


class SteadyStateWarning(RuntimeWarning):
    pass


def lattice_shape(n_sites: int) -> tuple[int, int]:
    """Most-square rows x cols factorization with rows <= cols."""
    rows = max(d for d in range(1, int(math.isqrt(n_sites)) + 1) if n_sites % d == 0)
    return rows, n_sites // rows


def lattice_edges(n_sites: int) -> list[tuple[int, int]]:
    """Nearest-neighbour pairs (i < j) on the most-square rectangular lattice, row-major sites."""
    rows, cols = lattice_shape(n_sites)
    edges = []
    for r in range(rows):
        for c in range(cols):
            i = r * cols + c
            if c + 1 < cols:
                edges.append((i, i + 1))
            if r + 1 < rows:
                edges.append((i, i + cols))
    return edges


@dataclass
class ReservoirConfig:
    """Physical parameters of the reservoir; every rate and energy is in units of ``gamma``.

    ``hopping`` is an (N, N) symmetric matrix, ``w_in`` is (N, n_inputs) with
    entry [j, k] coupling input mode k into site j.
    """

    n_sites: int
    hopping: np.ndarray
    w_in: np.ndarray
    site_cutoff: int = 3
    input_cutoffs: tuple[int, ...] = (2,)
    onsite_energies: np.ndarray | None = None
    nonlinearity: np.ndarray | float = 0.0
    drive: float = 0.1
    input_scale: float = 1.0
    gamma: float = 1.0
    tau: float = 1.0
    t_init: float = 5.0
    multiplexity: int = 8
    max_step: float = 0.01
    seed: int | None = None
    strict_cutoff: bool = False
    cutoff_threshold: float = 1e-3

    def __post_init__(self):
        n = int(self.n_sites)
        self.n_sites = n
        self.input_cutoffs = tuple(int(d) for d in self.input_cutoffs)
        self.hopping = np.asarray(self.hopping, dtype=float).reshape(n, n)
        self.w_in = np.asarray(self.w_in, dtype=float).reshape(n, len(self.input_cutoffs))
        if self.onsite_energies is None:
            self.onsite_energies = np.zeros(n)
        self.onsite_energies = np.broadcast_to(np.asarray(self.onsite_energies, dtype=float), (n,)).copy()
        self.nonlinearity = np.broadcast_to(np.asarray(self.nonlinearity, dtype=float), (n,)).copy()
        self.validate()

    def validate(self) -> None:
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if self.site_cutoff < 2 or any(d < 2 for d in self.input_cutoffs):
            raise ValueError("every Fock cutoff must be >= 2")
        if not np.allclose(self.hopping, self.hopping.T, atol=0, rtol=0):
            raise ValueError("hopping matrix must be symmetric")
        if self.gamma <= 0 or self.tau <= 0 or self.t_init < 0:
            raise ValueError("gamma and tau must be positive, t_init non-negative")
        if np.any(self.w_in < 0):
            raise ValueError("input couplings must be non-negative")
        if int(self.multiplexity) < 1:
            raise ValueError("multiplexity must be >= 1")
        if not 0 < self.max_step <= 0.01 / self.gamma + 1e-15:
            raise ValueError("max_step must be in (0, 0.01/gamma]")

    @property
    def input_decay(self) -> np.ndarray:
        """Input-mode decay rates, sum_j w_in[j, k]^2 / gamma."""
        return (self.w_in ** 2).sum(axis=0) / self.gamma

    @property
    def n_inputs(self) -> int:
        return len(self.input_cutoffs)

    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace(self.input_cutoffs + (self.site_cutoff,) * self.n_sites)

    @property
    def n_features(self) -> int:
        return self.n_sites * int(self.multiplexity)

    def site_mode(self, j: int) -> int:
        return self.n_inputs + j

    def with_(self, **changes) -> "ReservoirConfig":
        return replace(self, **changes)

    @classmethod
    def random(
        cls,
        n_sites: int,
        *,
        drive: float = 0.1,
        input_scale: float = 1.0,
        nonlinearity: float = 0.0,
        input_cutoffs: Sequence[int] = (2,),
        site_cutoff: int | None = None,
        multiplexity: int = 8,
        gamma: float = 1.0,
        seed=None,
        **kwargs,
    ) -> "ReservoirConfig":
        """Random lattice couplings and input couplings, both uniform on [0, gamma]."""
        rng = np.random.default_rng(seed)
        hop = np.zeros((n_sites, n_sites))
        for i, j in lattice_edges(n_sites):
            hop[i, j] = hop[j, i] = rng.uniform(0.0, gamma)
        w_in = rng.uniform(0.0, gamma, size=(n_sites, len(input_cutoffs)))
        if site_cutoff is None:
            site_cutoff = 3 if nonlinearity == 0 else 4
        return cls(
            n_sites=n_sites,
            hopping=hop,
            w_in=w_in,
            site_cutoff=site_cutoff,
            input_cutoffs=tuple(input_cutoffs),
            nonlinearity=nonlinearity,
            drive=drive,
            input_scale=input_scale,
            gamma=gamma,
            multiplexity=multiplexity,
            seed=None if seed is None or not np.isscalar(seed) else int(seed),
            **kwargs,
        )


# ---------------------------------------------------------------- operators


def _sparse_ladders(space: HilbertSpace) -> list[sp.csr_matrix]:
    out = []
    for m, dim in enumerate(space.mode_dims):
        factors = [sp.identity(d, format="csr") for d in space.mode_dims]
        factors[m] = sp.csr_matrix(destroy(dim).real)
        out.append(reduce(lambda x, y: sp.kron(x, y, format="csr"), factors).tocsr())
    return out


def _hamiltonian_parts(cfg: ReservoirConfig, ladders) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Static part and unit-drive part of the (real) Hamiltonian."""
    n = cfg.space.total_dim
    h0 = sp.csr_matrix((n, n))
    hd = sp.csr_matrix((n, n))
    cs = [ladders[cfg.site_mode(j)] for j in range(cfg.n_sites)]
    for j, c in enumerate(cs):
        cd = c.T.tocsr()
        if cfg.onsite_energies[j]:
            h0 = h0 + cfg.onsite_energies[j] * (cd @ c)
        if cfg.nonlinearity[j]:
            h0 = h0 + cfg.nonlinearity[j] * (cd @ cd @ c @ c)
        hd = hd + c + cd
        for i in range(j + 1, cfg.n_sites):
            if cfg.hopping[i, j]:
                hop = cs[i].T @ c
                h0 = h0 + cfg.hopping[i, j] * (hop + hop.T)
    return h0.tocsr(), hd.tocsr()


def build_hamiltonian(cfg: ReservoirConfig, u: float = 0.0) -> np.ndarray:
    """Dense Hamiltonian with drive amplitude ``drive + input_scale * u`` on every site."""
    h0, hd = _hamiltonian_parts(cfg, _sparse_ladders(cfg.space))
    amp = cfg.drive + cfg.input_scale * u
    return (h0 + amp * hd).toarray().astype(complex)


def _lindblad(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    Ld = L.conj().T
    return L @ rho @ Ld - 0.5 * (Ld @ L @ rho + rho @ Ld @ L)


def master_rhs(rho: np.ndarray, H: np.ndarray, cfg: ReservoirConfig, input_active: bool = True) -> np.ndarray:
    """Right-hand side of the cascaded master equation, evaluated term by term on dense matrices."""
    space = cfg.space
    if rho.shape != (space.total_dim,) * 2 or H.shape != rho.shape:
        raise ValueError(f"state/Hamiltonian shape does not match space {space.mode_dims}")
    out = -1j * (H @ rho - rho @ H)
    cs = [annihilator(space, cfg.site_mode(j)) for j in range(cfg.n_sites)]
    for c in cs:
        out += cfg.gamma * _lindblad(c, rho)
    if input_active:
        gk = cfg.input_decay
        for k in range(cfg.n_inputs):
            a = annihilator(space, k)
            ad = a.conj().T
            out += gk[k] * _lindblad(a, rho)
            for j, c in enumerate(cs):
                w = cfg.w_in[j, k]
                if w:
                    cd = c.conj().T
                    ar = a @ rho
                    rad = rho @ ad
                    out += w * ((ar @ cd - cd @ ar) + (c @ rad - rad @ c))
    return out


def liouvillian(cfg: ReservoirConfig, u: float = 0.0, input_active: bool = True) -> np.ndarray:
    """Dense superoperator acting on row-major vec(rho), built from the printed generator."""
    space = cfg.space
    n = space.total_dim
    eye = np.eye(n)
    H = build_hamiltonian(cfg, u)

    def left(X):
        return np.kron(X, eye)

    def right(X):
        return np.kron(eye, X.T)

    def diss(L):
        Ld = L.conj().T
        return np.kron(L, L.conj()) - 0.5 * (left(Ld @ L) + right(Ld @ L))

    sup = -1j * (left(H) - right(H))
    cs = [annihilator(space, cfg.site_mode(j)) for j in range(cfg.n_sites)]
    for c in cs:
        sup += cfg.gamma * diss(c)
    if input_active:
        gk = cfg.input_decay
        for k in range(cfg.n_inputs):
            a = annihilator(space, k)
            ad = a.conj().T
            sup += gk[k] * diss(a)
            for j, c in enumerate(cs):
                w = cfg.w_in[j, k]
                if w:
                    cd = c.conj().T
                    # [a rho, c^dag] + [c, rho a^dag]
                    sup += w * (left(a) @ right(cd) - left(cd @ a) + left(c) @ right(ad) - right(ad @ c))
    return sup


# ---------------------------------------------------------------- simulator


@dataclass
class PhysicalityReport:
    """Worst-case physicality diagnostics over a run."""

    elapsed: float = 0.0
    trace_drift: float = 0.0
    min_eigenvalue: float = 1.0
    max_top_population: float = 0.0
    checks: int = 0

    def merge(self, other: "PhysicalityReport") -> "PhysicalityReport":
        return PhysicalityReport(
            elapsed=self.elapsed + other.elapsed,
            trace_drift=self.trace_drift + other.trace_drift,
            min_eigenvalue=min(self.min_eigenvalue, other.min_eigenvalue),
            max_top_population=max(self.max_top_population, other.max_top_population),
            checks=self.checks + other.checks,
        )

    def ok(self, gamma: float = 1.0) -> bool:
        return self.trace_drift <= 1e-9 * gamma * max(self.elapsed, 1e-300) and self.min_eigenvalue >= -1e-7


def _pack_jumps(jumps: list[tuple[float, sp.csr_matrix]], n: int):
    if not jumps:
        return (np.zeros((0, n + 1), np.int64), np.zeros(0, np.int64), np.zeros(0), np.zeros(1, np.int64), np.zeros(0))
    ptrs, idx, dat, offs = [], [], [], [0]
    for _, L in jumps:
        L = L.tocsr()
        L.sort_indices()
        ptrs.append(L.indptr.astype(np.int64))
        idx.append(L.indices.astype(np.int64))
        dat.append(L.data.astype(float))
        offs.append(offs[-1] + L.nnz)
    return (
        np.stack(ptrs),
        np.concatenate(idx),
        np.concatenate(dat),
        np.asarray(offs, np.int64),
        np.asarray([c for c, _ in jumps], float),
    )


def _csr_triple(m: sp.csr_matrix):
    m = m.tocsr()
    m.sum_duplicates()
    m.eliminate_zeros()
    return m.indptr.astype(np.int64), m.indices.astype(np.int64), m.data.astype(float)


class Simulator:
    """Precomputed sparse generator pieces plus the warmup / inject / measure protocol."""

    def __init__(self, cfg: ReservoirConfig, check_eigenvalues: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.space = cfg.space
        self.dim = self.space.total_dim
        self.check_eigenvalues = check_eigenvalues
        ladders = _sparse_ladders(self.space)
        self._h0, self._hd = _hamiltonian_parts(cfg, ladders)
        cs = [ladders[cfg.site_mode(j)] for j in range(cfg.n_sites)]
        aks = ladders[: cfg.n_inputs]
        g = cfg.gamma
        site_loss = sum((c.T @ c for c in cs), sp.csr_matrix((self.dim, self.dim)))
        self._b_off = _csr_triple(-0.5 * g * site_loss)
        self._jumps_off = _pack_jumps([(1.0, math.sqrt(g) * c) for c in cs], self.dim)

        gk = cfg.input_decay
        b_on = -0.5 * g * site_loss
        for k, a in enumerate(aks):
            b_on = b_on - 0.5 * gk[k] * (a.T @ a)
            for j, c in enumerate(cs):
                if cfg.w_in[j, k]:
                    b_on = b_on - cfg.w_in[j, k] * (c.T @ a)
        self._b_on = _csr_triple(b_on)
        jumps = []
        for j, c in enumerate(cs):
            L = math.sqrt(g) * c
            for k, a in enumerate(aks):
                if cfg.w_in[j, k]:
                    L = L + (cfg.w_in[j, k] / math.sqrt(g)) * a
            jumps.append((1.0, L))
        resid = np.diag(gk) - cfg.w_in.T @ cfg.w_in / g
        if cfg.n_inputs and np.max(np.abs(resid)) > 0:
            lam, vec = np.linalg.eigh(resid)
            for s in range(len(lam)):
                if abs(lam[s]) > 1e-14:
                    L = sum((vec[k, s] * aks[k] for k in range(cfg.n_inputs)), sp.csr_matrix((self.dim, self.dim)))
                    jumps.append((float(lam[s]), L))
        self._jumps_on = _pack_jumps(jumps, self.dim)

        occ = self.space.occupations()
        self._site_occ = occ[:, cfg.n_inputs:].astype(float)
        self._top = (occ[:, cfg.n_inputs:] == cfg.site_cutoff - 1).astype(float)
        self._a_cache: dict[float, tuple] = {}
        self._warm: np.ndarray | None = None
        self.report = PhysicalityReport()

    # -- low level

    def _a_triple(self, amp: float):
        key = float(amp)
        t = self._a_cache.get(key)
        if t is None:
            t = _csr_triple(self._h0 + key * self._hd)
            if len(self._a_cache) > 64:
                self._a_cache.clear()
            self._a_cache[key] = t
        return t

    def _advance(self, R, I, duration: float, u: float, input_active: bool):
        if duration <= 0:
            return R, I
        drive = self.cfg.drive + self.cfg.input_scale * u
        # shrink the step under strong drive so RK4 error stays below the positivity tolerance
        nsteps = max(1, math.ceil(duration * max(1.0, abs(drive)) / self.cfg.max_step - 1e-9))
        h = duration / nsteps
        Ap, Ai, Ad = self._a_triple(drive)
        Bp, Bi, Bd = self._b_on if input_active else self._b_off
        jumps = self._jumps_on if input_active else self._jumps_off
        R, I = _kernels.rk4_real(R, I, Ap, Ai, Ad, Bp, Bi, Bd, *jumps, h, nsteps)
        if not (np.isfinite(R).all() and np.isfinite(I).all()):
            raise IntegrationError(
                f"non-finite state after integrating {duration} with drive {self.cfg.drive + self.cfg.input_scale * u}"
            )
        R = 0.5 * (R + R.T)
        I = 0.5 * (I - I.T)
        tr = np.trace(R)
        self.report.elapsed += duration
        self.report.trace_drift += abs(tr - 1.0)
        R /= tr
        I /= tr
        return R, I

    def _record(self, R, I):
        diag = np.diag(R)
        tops = self._top.T @ diag
        self.report.max_top_population = max(self.report.max_top_population, float(tops.max()))
        if self.check_eigenvalues:
            lo = float(np.linalg.eigvalsh(R + 1j * I).min())
            self.report.min_eigenvalue = min(self.report.min_eigenvalue, lo)
            self.report.checks += 1
        if self.cfg.strict_cutoff and tops.max() >= self.cfg.cutoff_threshold:
            raise CutoffError(
                f"top Fock level population {tops.max():.3g} >= {self.cfg.cutoff_threshold}; raise site_cutoff"
            )
        return self._site_occ.T @ diag

    # -- public

    def evolve(self, rho: np.ndarray, duration: float, u: float = 0.0, input_active: bool = True) -> np.ndarray:
        R, I = self._advance(np.ascontiguousarray(rho.real), np.ascontiguousarray(rho.imag), duration, u, input_active)
        return R + 1j * I

    def vacuum(self) -> np.ndarray:
        rho = np.zeros((self.dim, self.dim), dtype=complex)
        rho[0, 0] = 1.0
        return rho

    def warmup(self) -> np.ndarray:
        """Evolve the empty reservoir under the constant drive alone for ``t_init``."""
        if self._warm is None:
            cfg = self.cfg
            R = np.zeros((self.dim, self.dim))
            R[0, 0] = 1.0
            I = np.zeros_like(R)
            lead = max(cfg.t_init - 0.5 / cfg.gamma, 0.0)
            R, I = self._advance(R, I, lead, 0.0, False)
            R0, I0 = R.copy(), I.copy()
            R, I = self._advance(R, I, cfg.t_init - lead, 0.0, False)
            resid = float(np.sqrt(np.sum((R - R0) ** 2) + np.sum((I - I0) ** 2)))
            self.warmup_residual = resid
            if resid > 1e-3:
                warnings.warn(
                    f"reservoir not stationary after warmup (residual {resid:.3g})", SteadyStateWarning, stacklevel=2
                )
            self._record(R, I)
            self._warm = R + 1j * I
        return self._warm.copy()

    def inject(self, rho: np.ndarray, beta: np.ndarray) -> np.ndarray:
        return inject(rho, beta, self.space, self.cfg.n_inputs)

    def step(self, rho: np.ndarray, u: float, beta: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        """One input interval: inject, hold ``u`` for ``tau``, return (state, N*V readouts site-major)."""
        cfg = self.cfg
        if beta is not None:
            rho = self.inject(rho, beta)
        V = int(cfg.multiplexity)
        R = np.ascontiguousarray(rho.real)
        I = np.ascontiguousarray(rho.imag)
        reads = np.empty((cfg.n_sites, V))
        for v in range(V):
            R, I = self._advance(R, I, cfg.tau / V, u, True)
            reads[:, v] = self._record(R, I)
        return R + 1j * I, reads.reshape(-1)

    def run(
        self, u_seq, beta_seq, rho0: np.ndarray | None = None, keep_states: bool = False, reset: bool = False
    ) -> "RunResult":
        """Drive the reservoir through the sequence, one ``step`` per input.

        With ``reset`` every instance starts again from the initial state
        (warm state by default), so rows do not depend on earlier inputs.
        """
        u_seq = np.asarray(u_seq, dtype=float)
        if len(u_seq) == 0:
            raise ValueError("input sequence is empty")
        if beta_seq is not None and len(beta_seq) != len(u_seq):
            raise ValueError("classical and quantum input sequences differ in length")
        start = self.warmup() if rho0 is None else rho0
        rho = start
        feats = np.ones((len(u_seq), self.cfg.n_features + 1))
        states = [] if keep_states else None
        for l, u in enumerate(u_seq):
            if reset:
                rho = start
            rho, row = self.step(rho, u, None if beta_seq is None else beta_seq[l])
            feats[l, :-1] = row
            if keep_states:
                states.append(rho)
        return RunResult(feats, rho, None if states is None else np.asarray(states), self.report)


@dataclass
class RunResult:
    features: np.ndarray
    final_state: np.ndarray
    states: np.ndarray | None
    report: PhysicalityReport = field(default_factory=PhysicalityReport)


def integrate(
    rho0: np.ndarray,
    cfg: ReservoirConfig,
    u: float | Sequence[float] = 0.0,
    t_span: tuple[float, float] = (0.0, 1.0),
    input_active: bool = True,
) -> np.ndarray:
    """RK4 from ``t_span[0]`` to ``t_span[1]``; a sequence ``u`` is held piecewise constant on equal segments."""
    sim = Simulator(cfg, check_eigenvalues=False)
    us = np.atleast_1d(np.asarray(u, dtype=float))
    seg = (t_span[1] - t_span[0]) / len(us)
    rho = np.asarray(rho0, dtype=complex)
    for val in us:
        rho = sim.evolve(rho, seg, float(val), input_active)
    return rho


def warmup(cfg: ReservoirConfig) -> np.ndarray:
    return Simulator(cfg, check_eigenvalues=False).warmup()


def inject(rho: np.ndarray, beta: np.ndarray, space: HilbertSpace, n_inputs: int = 1) -> np.ndarray:
    """Replace the input-mode marginal of ``rho`` by ``beta`` (inputs are the leading modes)."""
    d_in = int(np.prod(space.mode_dims[:n_inputs]))
    if beta.shape != (d_in, d_in):
        raise ValueError(f"input state has shape {beta.shape}, expected {(d_in, d_in)}")
    if rho.shape != (space.total_dim,) * 2:
        raise ValueError("state does not match the space")
    d_res = space.total_dim // d_in
    res = np.einsum("ijik->jk", rho.reshape(d_in, d_res, d_in, d_res))
    return np.kron(beta, res)


def run_sequence(cfg: ReservoirConfig, u_seq, beta_seq) -> np.ndarray:
    """Feature matrix (L, N*V + 1) with a trailing bias column of ones."""
    return Simulator(cfg).run(u_seq, beta_seq).features


def reservoir_marginal(rho: np.ndarray, cfg: ReservoirConfig) -> np.ndarray:
    return partial_trace(rho, cfg.space, range(cfg.n_inputs, cfg.space.n_modes))
