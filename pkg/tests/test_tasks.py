import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridqrc.operators import check_density, expect, number_operator, random_state, squeeze_operator, thermal_state
from hybridqrc.tasks import (
    SYMBOLS,
    KrausChannel,
    control_signal,
    cv_target,
    depolarizing_channel,
    depolarizing_target,
    distort,
    equalizer_filter,
    gen_equalizer_data,
    joint_blocks,
    quantum_switch,
    random_squeezed_thermal,
    random_thermal,
    switch_blocks,
    switch_control_state,
    switch_task_sequence,
    weyl_basis,
)

# ---------------------------------------------------------------- equalizer


def test_constant_symbols_interior_values():
    s = np.ones(20)
    q = equalizer_filter(s)
    u = distort(s, snr_db=None)
    assert q[10] == pytest.approx(1.16, abs=1e-12)
    assert u[10] == pytest.approx(1.19127, abs=1e-5)


def test_filter_against_loop():
    rng = np.random.default_rng(0)
    s = rng.choice(SYMBOLS, 30)
    taps = {2: 0.08, 1: -0.12, 0: 1.0, -1: 0.18, -2: -0.1, -3: 0.09, -4: -0.05, -5: 0.04, -6: 0.03, -7: 0.01}
    expected = [sum(c * (s[l + k] if 0 <= l + k < 30 else 0.0) for k, c in taps.items()) for l in range(30)]
    assert np.allclose(equalizer_filter(s), expected, atol=1e-14)


def test_zero_symbols_leave_noise_only():
    s = np.zeros(50)
    assert np.all(equalizer_filter(s) == 0)
    assert np.all(distort(s, snr_db=None) == 0)


def test_empirical_snr():
    s, u = gen_equalizer_data(100_000, seed=1)
    q = equalizer_filter(s)
    clean = q + 0.036 * q ** 2 - 0.011 * q ** 3
    snr = 10 * np.log10(np.var(q) / np.var(u - clean))
    assert abs(snr - 24) < 0.5


def test_symbol_marginals_uniform():
    s, _ = gen_equalizer_data(10_000, seed=2)
    counts = np.array([(s == v).sum() for v in SYMBOLS])
    sigma = np.sqrt(10_000 * 0.25 * 0.75)
    assert np.all(np.abs(counts - 2500) < 3 * sigma)


def test_equalizer_determinism_and_errors():
    a = gen_equalizer_data(40, seed=3)
    b = gen_equalizer_data(40, seed=3)
    assert np.array_equal(a[1], b[1])
    with pytest.raises(ValueError):
        gen_equalizer_data(9)


# ---------------------------------------------------------------- channels


@pytest.mark.parametrize("D", [2, 3, 4])
def test_weyl_basis_orthogonal(D):
    U = weyl_basis(D)
    gram = np.einsum("aji,bjk->abik", U.conj(), U).trace(axis1=2, axis2=3)
    assert np.allclose(gram, D * np.eye(D * D))


@pytest.mark.parametrize("D", [2, 3])
def test_depolarizing_examples(D):
    rho = random_state(D, 0, "mixed")
    assert np.allclose(depolarizing_channel(0.0, D)(rho), rho)
    assert np.allclose(depolarizing_channel(1.0, D)(rho), np.eye(D) / D, atol=1e-14)


def test_depolarizing_half():
    out = depolarizing_channel(0.5, 2)(np.diag([1.0, 0.0]))
    assert np.allclose(out, np.diag([0.75, 0.25]), atol=1e-14)
    with pytest.raises(ValueError):
        depolarizing_channel(1.2, 2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 1), st.integers(2, 4), st.integers(0, 2**31))
def test_depolarizing_completeness_and_positivity(q, D, seed):
    ch = depolarizing_channel(q, D)
    assert ch.completeness_error() < 1e-9
    rho = random_state(D, seed, "mixed")
    out = ch(rho)
    check_density(out)
    assert np.allclose(out, (1 - q) * rho + q * np.eye(D) / D, atol=1e-12)


def test_channel_preserves_trace_positivity_on_100_states():
    ch = depolarizing_channel(0.37, 3)
    rng = np.random.default_rng(4)
    for _ in range(100):
        out = ch(random_state(3, rng, "mixed"))
        assert abs(np.trace(out) - 1) < 1e-12
        assert np.linalg.eigvalsh(out).min() > -1e-12


def test_switch_extremes():
    rho = random_state(2, 1, "mixed")
    A, B = depolarizing_channel(0.3, 2), depolarizing_channel(0.6, 2)
    p0, p1 = np.diag([1.0, 0]), np.diag([0, 1.0])
    assert np.allclose(quantum_switch(rho, 1.0, A, B), np.kron(A(B(rho)), p0), atol=1e-12)
    assert np.allclose(quantum_switch(rho, 0.0, A, B), np.kron(B(A(rho)), p1), atol=1e-12)


@pytest.mark.parametrize("D", [2, 3])
def test_switch_full_depolarizing_coherence(D):
    rho = random_state(D, 5, "mixed")
    one = depolarizing_channel(1.0, D)
    _, a01, _, _ = joint_blocks(quantum_switch(rho, 0.5, one, one))
    assert np.allclose(a01, rho / (2 * D ** 2), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**31))
def test_switch_blocks_match_kraus_sum(s, qa, qb, seed):
    rho = random_state(2, seed, "mixed")
    joint = quantum_switch(rho, s, depolarizing_channel(qa, 2), depolarizing_channel(qb, 2))
    a00, a01, a10, a11 = joint_blocks(joint)
    c00, c01, c11 = switch_blocks(rho, s, qa, qb)
    for got, want in ((a00, c00), (a01, c01), (a10, c01.conj().T), (a11, c11)):
        assert np.abs(got - want).max() < 1e-10
    assert abs(np.trace(joint) - 1) < 1e-12


def test_switch_rejects_mismatch():
    with pytest.raises(ValueError):
        quantum_switch(np.eye(2) / 2, 0.5, depolarizing_channel(0.1, 3), depolarizing_channel(0.1, 3))
    with pytest.raises(ValueError):
        quantum_switch(np.eye(2) / 2, 1.5, depolarizing_channel(0.1, 2), depolarizing_channel(0.1, 2))


def test_kraus_channel_shape():
    ch = KrausChannel([np.eye(2)])
    assert ch.dim == 2 and ch.completeness_error() == 0


# ---------------------------------------------------------------- switch sequence


def test_switch_sequence_identity_channels():
    seq = switch_task_sequence(30, seed=0, q_a=0.0, q_b=0.0, d=0)
    for i, sigma in enumerate(seq.targets):
        l = seq.offset + i
        assert np.allclose(sigma, np.kron(seq.beta[l], switch_control_state((3 + seq.symbols[l]) / 6)), atol=1e-12)


@pytest.mark.parametrize("d", [0, 1, 3])
def test_switch_sequence_alignment(d):
    seq = switch_task_sequence(40, seed=1, d=d)
    assert len(seq.targets) == 40 - max(d, 2)
    assert len(seq.symbol_targets) == len(seq.targets)
    assert np.array_equal(seq.symbol_targets, seq.symbols[seq.offset - d : 40 - d])
    for sigma in seq.targets:
        check_density(sigma)
        assert sigma.shape == (4, 4)
    # pure qubit inputs
    assert np.allclose(np.trace(seq.beta[0] @ seq.beta[0]), 1)


def test_switch_sequence_system_target():
    seq = switch_task_sequence(20, seed=2, d=1, target="system")
    assert seq.targets.shape[1:] == (2, 2)
    with pytest.raises(ValueError):
        switch_task_sequence(8, d=1)


# ---------------------------------------------------------------- continuous variables


def test_cv_target_identity_and_purity():
    beta = thermal_state(0.2, 9)
    assert np.allclose(cv_target(beta, 0.0), beta)
    for enc in ("amp", "phase"):
        out = cv_target(beta, 0.7, enc)
        assert abs(np.trace(out @ out) - np.trace(beta @ beta)) < 1e-6
    with pytest.raises(ValueError):
        cv_target(beta, 0.2, "neither")


def test_cv_target_photon_number():
    beta = thermal_state(0.09, 9)
    S = squeeze_operator(0.3 * np.exp(1j * np.pi / 4), 9)
    n = number_operator([9], 0)
    direct = np.trace(n @ S @ beta @ S.conj().T).real
    assert expect(n, cv_target(beta, 0.3)) == pytest.approx(direct, abs=1e-12)


def test_random_cv_states():
    rng = np.random.default_rng(0)
    for _ in range(20):
        check_density(random_thermal(9, rng))
        check_density(random_squeezed_thermal(9, rng))
    # mean photon number bounded by r_max^2 for the thermal draw
    assert np.trace(np.diag(np.arange(9)) @ random_thermal(9, 1)).real <= 0.09 + 1e-12


def test_control_signal():
    assert control_signal(0, 60) == 0.5
    l = np.arange(0, 200)
    s = control_signal(l, 60)
    assert np.allclose(s, control_signal(l + 17, 60))
    assert s.min() >= 0 and s.max() <= 1
    assert s.min() < 0.01 and s.max() > 0.99


def test_depolarizing_target_examples():
    beta = [np.diag([1.0, 0.0])]
    assert np.allclose(depolarizing_target([0.0], beta, 2)[0], beta[0])
    assert np.allclose(depolarizing_target([1.0], beta, 2)[0], np.eye(2) / 2)
    assert np.allclose(depolarizing_target([0.5], beta, 2)[0], np.diag([0.75, 0.25]))
    with pytest.raises(ValueError):
        depolarizing_target([1.5], beta, 2)


def test_depolarizing_target_delays():
    rng = np.random.default_rng(3)
    s = rng.uniform(size=10)
    beta = [random_state(2, rng) for _ in s]
    out = depolarizing_target(s, beta, 2, d_c=1, d_q=3)
    assert len(out) == 7
    l = 5
    assert np.allclose(out[l - 3], s[l - 1] * np.eye(2) / 2 + (1 - s[l - 1]) * beta[l - 3])
