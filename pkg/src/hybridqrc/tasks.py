"""Input/target generators: equalizer symbols, quantum switch, squeezing targets, controls."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .operators import hermitize, random_state, squeeze_operator, thermal_state

SYMBOLS = np.array([-3.0, -1.0, 1.0, 3.0])
# taps for s_{l+2}, s_{l+1}, s_l, s_{l-1}, ..., s_{l-7}
EQUALIZER_TAPS = np.array([0.08, -0.12, 1.0, 0.18, -0.1, 0.09, -0.05, 0.04, 0.03, 0.01])


@dataclass
class HybridSequence:
    """Aligned classical/quantum inputs plus targets.

    ``targets[i]`` and ``symbol_targets[i]`` belong to input step ``offset + i``.
    """

    u: np.ndarray
    beta: np.ndarray
    targets: np.ndarray | None = None
    symbols: np.ndarray | None = None
    symbol_targets: np.ndarray | None = None
    offset: int = 0
    delay: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.u) != len(self.beta):
            raise ValueError("classical and quantum inputs must have the same length")

    def __len__(self):
        return len(self.u)


# ---------------------------------------------------------------- equalizer


def equalizer_filter(s: np.ndarray) -> np.ndarray:
    """Linear channel part; symbols outside the sequence are taken as 0."""
    s = np.asarray(s, dtype=float)
    n = len(s)
    pad = np.concatenate([np.zeros(7), s, np.zeros(2)])
    q = np.zeros(n)
    for t, c in enumerate(EQUALIZER_TAPS):
        # tap t multiplies s_{l + 2 - t}
        q += c * pad[7 + 2 - t : 7 + 2 - t + n]
    return q


def equalizer_nonlinearity(q: np.ndarray) -> np.ndarray:
    return q + 0.036 * q ** 2 - 0.011 * q ** 3


def distort(s: np.ndarray, snr_db: float | None = 24.0, seed=None) -> np.ndarray:
    """Pass symbols through the linear filter, the cubic nonlinearity, and additive Gaussian noise."""
    q = equalizer_filter(s)
    u = equalizer_nonlinearity(q)
    if snr_db is not None and np.isfinite(snr_db):
        rng = np.random.default_rng(seed)
        std = np.sqrt(np.var(q) / 10 ** (snr_db / 10))
        u = u + rng.normal(0.0, std, size=len(u))
    return u


def gen_equalizer_data(length: int, seed=None, snr_db: float | None = 24.0) -> tuple[np.ndarray, np.ndarray]:
    """Random symbols from {-3, -1, 1, 3} and their distorted channel outputs."""
    if length < 10:
        raise ValueError("length must be >= 10 (filter support)")
    rng = np.random.default_rng(seed)
    s = rng.choice(SYMBOLS, size=length)
    return s, distort(s, snr_db, rng)


# ---------------------------------------------------------------- channels


@lru_cache(maxsize=16)
def weyl_basis(D: int) -> np.ndarray:
    """Clock-and-shift operators X^a Z^b, a, b in [0, D), normalized to Tr U^dag U = D."""
    X = np.roll(np.eye(D), 1, axis=0).astype(complex)
    Z = np.diag(np.exp(2j * np.pi * np.arange(D) / D))
    ops = [np.linalg.matrix_power(X, a) @ np.linalg.matrix_power(Z, b) for a in range(D) for b in range(D)]
    out = np.array(ops)
    out.setflags(write=False)
    return out


@dataclass
class KrausChannel:
    kraus_ops: np.ndarray

    def __post_init__(self):
        self.kraus_ops = np.asarray(self.kraus_ops, dtype=complex)

    @property
    def dim(self) -> int:
        return self.kraus_ops.shape[-1]

    def completeness_error(self) -> float:
        s = np.einsum("kji,kjl->il", self.kraus_ops.conj(), self.kraus_ops)
        return float(np.abs(s - np.eye(self.dim)).max())

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        K = self.kraus_ops
        return np.einsum("kij,jl,kml->im", K, rho, K.conj())


def depolarizing_channel(q: float, D: int) -> KrausChannel:
    """(1 - q) rho + q I/D as sqrt(1 - q) I plus sqrt(q)/D times each Weyl operator."""
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"depolarizing parameter {q} outside [0, 1]")
    ops = [np.sqrt(1.0 - q) * np.eye(D, dtype=complex)]
    ops.extend(np.sqrt(q) / D * weyl_basis(D))
    return KrausChannel(np.array(ops))


def switch_control_state(s: float) -> np.ndarray:
    psi = np.array([np.sqrt(s), np.sqrt(1.0 - s)], dtype=complex)
    return np.outer(psi, psi.conj())


def quantum_switch(rho: np.ndarray, s: float, ch_a: KrausChannel, ch_b: KrausChannel) -> np.ndarray:
    """Joint (system x control) output of the switch, by explicit double Kraus summation."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("switch parameter must be in [0, 1]")
    D = rho.shape[0]
    if ch_a.dim != D or ch_b.dim != D:
        raise ValueError("channels and state have different dimensions")
    joint = np.kron(rho, switch_control_state(s))
    p0 = np.diag([1.0, 0.0]).astype(complex)
    p1 = np.diag([0.0, 1.0]).astype(complex)
    out = np.zeros_like(joint)
    for ka in ch_a.kraus_ops:
        for kb in ch_b.kraus_ops:
            W = np.kron(ka @ kb, p0) + np.kron(kb @ ka, p1)
            out += W @ joint @ W.conj().T
    return hermitize(out)


def switch_blocks(rho: np.ndarray, s: float, q_a: float, q_b: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Closed-form (A00, A01, A11) blocks of the switch output for two depolarizing channels."""
    D = rho.shape[0]
    eye = np.eye(D) / D
    dep_a = (1 - q_a) * rho + q_a * eye
    ab = (1 - q_b) * dep_a + q_b * eye
    dep_b = (1 - q_b) * rho + q_b * eye
    ba = (1 - q_a) * dep_b + q_a * eye
    cross = q_a * q_b / D ** 2 * rho + q_a * (1 - q_b) * eye + q_b * (1 - q_a) * eye + (1 - q_a) * (1 - q_b) * rho
    return s * ab, np.sqrt(s * (1 - s)) * cross, (1 - s) * ba


def joint_blocks(joint: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Split a (system x qubit) matrix into its control-qubit blocks A00, A01, A10, A11."""
    D = joint.shape[0] // 2
    t = joint.reshape(D, 2, D, 2)
    return t[:, 0, :, 0], t[:, 0, :, 1], t[:, 1, :, 0], t[:, 1, :, 1]


def switch_targets(beta, s, d: int, offset: int, q_a: float = 0.5, q_b: float = 0.5, target: str = "joint") -> np.ndarray:
    """Switch outputs for inputs delayed by ``d``, for steps ``offset .. len(beta) - 1``."""
    if offset < d:
        raise ValueError("offset must be >= delay")
    D = beta[0].shape[0]
    ch_a = depolarizing_channel(q_a, D)
    ch_b = depolarizing_channel(q_b, D)
    out = []
    for l in range(offset, len(beta)):
        joint = quantum_switch(beta[l - d], (3.0 + s[l - d]) / 6.0, ch_a, ch_b)
        if target == "system":
            a00, _, _, a11 = joint_blocks(joint)
            joint = a00 + a11
        elif target != "joint":
            raise ValueError("target must be 'joint' or 'system'")
        out.append(joint)
    return np.array(out)


def switch_task_sequence(
    length: int,
    seed=None,
    q_a: float = 0.5,
    q_b: float = 0.5,
    d: int = 0,
    snr_db: float | None = 24.0,
    input_kind: str = "pure",
    target: str = "joint",
    offset: int | None = None,
) -> HybridSequence:
    """Random qubits plus equalizer symbols; targets are the delayed switch outputs and symbols.

    Targets start at step ``offset`` (default max(d, 2)).
    """
    if length <= d + 7:
        raise ValueError("length must exceed d + 7")
    rng = np.random.default_rng(seed)
    s, u = gen_equalizer_data(length, rng, snr_db)
    beta = np.array([random_state(2, rng, input_kind) for _ in range(length)])
    offset = max(d, 2) if offset is None else int(offset)
    return HybridSequence(
        u=u,
        beta=beta,
        targets=switch_targets(beta, s, d, offset, q_a, q_b, target),
        symbols=s,
        symbol_targets=s[offset - d : length - d].copy(),
        offset=offset,
        delay=d,
        meta={"q_a": q_a, "q_b": q_b, "snr_db": snr_db},
    )


# ---------------------------------------------------------------- continuous-variable targets


def squeeze_parameter(s: float, encoding: str = "amp") -> complex:
    if encoding == "amp":
        return s * np.exp(1j * np.pi / 4)
    if encoding == "phase":
        return 0.3 * np.exp(2j * np.pi * s)
    raise ValueError(f"unknown encoding {encoding!r}; expected 'amp' or 'phase'")


def cv_target(beta: np.ndarray, s: float, encoding: str = "amp") -> np.ndarray:
    """Squeeze ``beta`` by the parameter that encodes ``s``."""
    if beta.ndim != 2 or beta.shape[0] != beta.shape[1]:
        raise ValueError("cv_target expects a single-mode density matrix")
    S = squeeze_operator(squeeze_parameter(s, encoding), beta.shape[0])
    return hermitize(S @ beta @ S.conj().T)


def random_thermal(cutoff: int, seed=None, r_max: float = 0.3) -> np.ndarray:
    """Thermal state with mean photon number (r cos phi)^2, r ~ U[0, r_max], phi ~ U[0, pi]."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.0, r_max)
    phi = rng.uniform(0.0, np.pi)
    return thermal_state((r * np.cos(phi)) ** 2, cutoff)


def random_squeezed_thermal(cutoff: int, seed=None, r_max: float = 0.3) -> np.ndarray:
    """Thermal state of mean (r cos phi)^2 squeezed by xi = r sin phi."""
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.0, r_max)
    phi = rng.uniform(0.0, np.pi)
    sigma = thermal_state((r * np.cos(phi)) ** 2, cutoff)
    S = squeeze_operator(r * np.sin(phi), cutoff)
    return hermitize(S @ sigma @ S.conj().T)


def control_signal(l, f: float) -> np.ndarray | float:
    """Sinusoidal control 0.5 + 0.5 sin(l pi f / 510)."""
    return 0.5 + 0.5 * np.sin(np.asarray(l, dtype=float) * np.pi * f / 510.0)


def depolarizing_target(s_seq, beta_seq, D: int, d_c: int = 0, d_q: int = 0) -> np.ndarray:
    """s_{l-d_c} I/D + (1 - s_{l-d_c}) beta_{l-d_q} for l >= max(d_c, d_q)."""
    s_seq = np.asarray(s_seq, dtype=float)
    if np.any((s_seq < 0) | (s_seq > 1)):
        raise ValueError("mixing weights must lie in [0, 1]")
    if len(s_seq) != len(beta_seq):
        raise ValueError("sequences are not aligned")
    start = max(d_c, d_q)
    eye = np.eye(D) / D
    out = []
    for l in range(start, len(s_seq)):
        b = np.asarray(beta_seq[l - d_q])
        if b.shape != (D, D):
            raise ValueError(f"input state has shape {b.shape}, expected {(D, D)}")
        out.append(s_seq[l - d_c] * eye + (1 - s_seq[l - d_c]) * b)
    return np.array(out)
