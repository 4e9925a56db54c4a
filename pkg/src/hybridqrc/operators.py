"""Dense state and operator algebra on composite truncated Fock spaces.

Every matrix here is a plain complex ``numpy`` array. Mode layout metadata lives
in :class:`HilbertSpace`; operators are built by tensoring single-mode pieces in
the order given by ``mode_dims``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache, reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as la
from scipy.special import eval_genlaguerre, gammaln

HERMITIAN_TOL = 1e-9
TRACE_TOL = 1e-9
PSD_TOL = 1e-9
# Inputs to fidelity may come straight out of an integrator.
FIDELITY_PSD_TOL = 1e-7

WIGNER_GRID = np.linspace(-3.0, 3.0, 61)


class DimensionError(ValueError):
    """Raised when operands live on incompatible spaces."""


class NotPhysicalError(ValueError):
    """Raised when a matrix fails the density-matrix invariants."""


@dataclass(frozen=True)
class HilbertSpace:
    """Ordered product of truncated bosonic modes."""

    mode_dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims:
            raise ValueError("a HilbertSpace needs at least one mode")
        if any(d < 2 for d in dims):
            raise ValueError(f"every mode dimension must be >= 2, got {dims}")
        object.__setattr__(self, "mode_dims", dims)

    @property
    def n_modes(self) -> int:
        return len(self.mode_dims)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.mode_dims))

    def occupations(self) -> np.ndarray:
        """Occupation number of every mode for each basis index, shape (total_dim, n_modes)."""
        grids = np.indices(self.mode_dims).reshape(self.n_modes, -1)
        return grids.T.copy()


def _as_space(space: HilbertSpace | Sequence[int]) -> HilbertSpace:
    return space if isinstance(space, HilbertSpace) else HilbertSpace(tuple(space))


def destroy(dim: int) -> np.ndarray:
    """Single-mode lowering operator truncated at ``dim`` levels."""
    return np.diag(np.sqrt(np.arange(1, dim, dtype=float)), 1).astype(complex)


def embed(op: np.ndarray, space: HilbertSpace | Sequence[int], mode: int) -> np.ndarray:
    """Tensor a single-mode operator into ``space`` at position ``mode``."""
    space = _as_space(space)
    if not 0 <= mode < space.n_modes:
        raise IndexError(f"mode {mode} out of range for {space.n_modes} modes")
    if op.shape != (space.mode_dims[mode],) * 2:
        raise DimensionError("operator does not match the mode dimension")
    factors = [np.eye(d, dtype=complex) for d in space.mode_dims]
    factors[mode] = op
    return reduce(np.kron, factors)


def annihilator(space: HilbertSpace | Sequence[int], mode: int) -> np.ndarray:
    """Lowering operator of ``mode``, identity on every other mode."""
    space = _as_space(space)
    if not 0 <= mode < space.n_modes:
        raise IndexError(f"mode {mode} out of range for {space.n_modes} modes")
    return embed(destroy(space.mode_dims[mode]), space, mode)


def number_operator(space: HilbertSpace | Sequence[int], mode: int) -> np.ndarray:
    a = annihilator(space, mode)
    return a.conj().T @ a


def dag(op: np.ndarray) -> np.ndarray:
    return op.conj().T


def hermitize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.conj().T)


def check_density(rho: np.ndarray, tol: float = 1e-9) -> None:
    """Raise :class:`NotPhysicalError` unless ``rho`` is a density matrix within ``tol``."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise NotPhysicalError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if herm > tol:
        raise NotPhysicalError(f"not Hermitian (max deviation {herm:.3g})")
    tr = np.trace(rho)
    if abs(tr - 1) > tol:
        raise NotPhysicalError(f"trace {tr.real:.12g} != 1")
    lo = np.linalg.eigvalsh(hermitize(rho)).min()
    if lo < -tol:
        raise NotPhysicalError(f"negative eigenvalue {lo:.3g}")


def is_density(rho: np.ndarray, tol: float = 1e-9) -> bool:
    try:
        check_density(rho, tol)
    except NotPhysicalError:
        return False
    return True


def partial_trace(rho: np.ndarray, dims: HilbertSpace | Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Reduced state on the modes in ``keep`` (returned in ascending mode order)."""
    space = _as_space(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep must name at least one mode")
    if keep[0] < 0 or keep[-1] >= space.n_modes:
        raise IndexError(f"keep {keep} out of range for {space.n_modes} modes")
    if rho.shape != (space.total_dim,) * 2:
        raise DimensionError(f"state of shape {rho.shape} does not match space {space.mode_dims}")
    n = space.n_modes
    if len(keep) == n:
        return rho.copy()
    t = rho.reshape(space.mode_dims * 2)
    # einsum labels: ket axes 0..n-1, bra axes n..2n-1; traced modes share a label
    ket = list(range(n))
    bra = [n + i if i in keep else i for i in range(n)]
    out = [i for i in keep] + [n + i for i in keep]
    red = np.einsum(t, ket + bra, out)
    d = int(np.prod([space.mode_dims[i] for i in keep]))
    return red.reshape(d, d)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(hermitize(mat))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray, *, tol: float = FIDELITY_PSD_TOL) -> float:
    """Uhlmann root fidelity ``Tr sqrt(sqrt(sigma) rho sqrt(sigma))`` clipped to [0, 1]."""
    rho = np.asarray(rho)
    sigma = np.asarray(sigma)
    if rho.shape != sigma.shape:
        raise DimensionError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    for m in (rho, sigma):
        lo = np.linalg.eigvalsh(hermitize(m)).min()
        if lo < -tol:
            raise NotPhysicalError(f"fidelity input has eigenvalue {lo:.3g}")
    s = _psd_sqrt(sigma)
    w = np.linalg.eigvalsh(hermitize(s @ rho @ s))
    return float(min(1.0, np.sqrt(np.clip(w, 0.0, None)).sum()))


def fidelity_batch(rhos: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    """Vectorized :func:`fidelity` over stacks of shape (L, d, d); no PSD validation."""
    rhos = np.asarray(rhos)
    sigmas = np.asarray(sigmas)
    if rhos.shape != sigmas.shape:
        raise DimensionError(f"shape mismatch {rhos.shape} vs {sigmas.shape}")
    sh = 0.5 * (sigmas + np.conj(np.swapaxes(sigmas, -1, -2)))
    w, v = np.linalg.eigh(sh)
    s = (v * np.sqrt(np.clip(w, 0.0, None))[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    m = s @ rhos @ s
    m = 0.5 * (m + np.conj(np.swapaxes(m, -1, -2)))
    f = np.sqrt(np.clip(np.linalg.eigvalsh(m), 0.0, None)).sum(axis=-1)
    return np.minimum(f, 1.0)


def bures_angle(rho: np.ndarray, sigma: np.ndarray) -> float:
    return float(np.arccos(fidelity(rho, sigma)))


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex (sort and threshold)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def project_spectrahedron(mat: np.ndarray) -> np.ndarray:
    """Nearest (Frobenius) unit-trace positive semidefinite matrix to a Hermitian input."""
    w, v = np.linalg.eigh(hermitize(np.asarray(mat, dtype=complex)))
    p = project_simplex(w)
    out = (v * p) @ v.conj().T
    return hermitize(out)


def thermal_state(mean_photons: float, cutoff: int) -> np.ndarray:
    """Geometric photon distribution with the given mean, renormalized on ``cutoff`` levels."""
    if mean_photons < 0:
        raise ValueError("mean photon number must be non-negative")
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    if mean_photons == 0:
        p = np.zeros(cutoff)
        p[0] = 1.0
    else:
        ratio = mean_photons / (1.0 + mean_photons)
        p = ratio ** np.arange(cutoff)
        p /= p.sum()
    return np.diag(p).astype(complex)


def squeeze_operator(xi: complex, cutoff: int) -> np.ndarray:
    """``exp(xi a^dag a^dag - conj(xi) a a)`` on a truncated mode (no factor 1/2)."""
    if cutoff < 2:
        raise ValueError("cutoff must be >= 2")
    a = destroy(cutoff)
    gen = xi * (a.conj().T @ a.conj().T) - np.conj(xi) * (a @ a)
    return la.expm(gen)


def displace_operator(alpha: complex, cutoff: int) -> np.ndarray:
    a = destroy(cutoff)
    return la.expm(alpha * a.conj().T - np.conj(alpha) * a)


def coherent_state(alpha: complex, cutoff: int) -> np.ndarray:
    """Coherent state from its Fock amplitudes, renormalized on the truncated space."""
    n = np.arange(cutoff)
    amp = np.exp(n * np.log(alpha + 0j) - 0.5 * gammaln(n + 1)) if alpha != 0 else (n == 0).astype(complex)
    amp = amp / np.linalg.norm(amp)
    return np.outer(amp, amp.conj())


def random_state(dim: int, seed=None, kind: str = "pure") -> np.ndarray:
    """Haar-random pure state or Hilbert-Schmidt (Ginibre/Wishart) random mixed state."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    rng = np.random.default_rng(seed)
    if kind == "pure":
        v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
        v /= np.linalg.norm(v)
        return np.outer(v, v.conj())
    if kind == "mixed":
        g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
        r = g @ g.conj().T
        return hermitize(r / np.trace(r).real)
    raise ValueError(f"unknown kind {kind!r}; expected 'pure' or 'mixed'")


def basis_state(dim: int, n: int) -> np.ndarray:
    rho = np.zeros((dim, dim), dtype=complex)
    rho[n, n] = 1.0
    return rho


def embed_state(rho: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad a single-mode state onto a larger Fock truncation."""
    d = rho.shape[0]
    if d > dim:
        raise DimensionError(f"cannot embed dimension {d} into {dim}")
    out = np.zeros((dim, dim), dtype=complex)
    out[:d, :d] = rho
    return out


@lru_cache(maxsize=32)
def _wigner_basis_cached(dim: int, xs: tuple, ps: tuple) -> np.ndarray:
    x = np.asarray(xs)[:, None]
    p = np.asarray(ps)[None, :]
    alpha = (x + 1j * p) / np.sqrt(2.0)
    r2 = 4.0 * np.abs(alpha) ** 2
    gauss = np.exp(-0.5 * r2) / np.pi
    basis = np.zeros((dim, dim) + r2.shape, dtype=complex)
    for m in range(dim):
        for n in range(m + 1):
            k = m - n
            pref = (-1) ** n * np.exp(0.5 * (gammaln(n + 1) - gammaln(m + 1)))
            val = pref * (2.0 * np.conj(alpha)) ** k * eval_genlaguerre(n, k, r2) * gauss
            basis[m, n] = val
            basis[n, m] = np.conj(val)
    basis.setflags(write=False)
    return basis


def wigner_basis(dim: int, xvec=WIGNER_GRID, pvec=WIGNER_GRID) -> np.ndarray:
    """Wigner functions of every Fock dyad ``|m><n|`` on the grid, shape (dim, dim, nx, np)."""
    return _wigner_basis_cached(int(dim), tuple(np.asarray(xvec, float)), tuple(np.asarray(pvec, float)))


def wigner(rho: np.ndarray, xvec=WIGNER_GRID, pvec=WIGNER_GRID) -> np.ndarray:
    """Wigner function of a single-mode state, indexed ``[x_i, p_j]``.

    Uses x = (a + a^dag)/sqrt(2) and the normalization that integrates to one
    over dx dp, so the vacuum peaks at 1/pi.
    """
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError("wigner expects a single-mode density matrix")
    basis = wigner_basis(rho.shape[0], xvec, pvec)
    # W = sum_mn rho_mn W_mn  (W_mn is the Wigner function of |m><n|)
    return np.real(np.tensordot(rho, basis, axes=([0, 1], [0, 1])))


def wigner_batch(rhos: np.ndarray, xvec=WIGNER_GRID, pvec=WIGNER_GRID) -> np.ndarray:
    rhos = np.asarray(rhos)
    basis = wigner_basis(rhos.shape[-1], xvec, pvec)
    return np.real(np.tensordot(rhos, basis, axes=([-2, -1], [0, 1])))


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    return complex(np.trace(op @ rho))
