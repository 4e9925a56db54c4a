import warnings

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridqrc.dynamics import (
    ReservoirConfig,
    Simulator,
    SteadyStateWarning,
    build_hamiltonian,
    inject,
    integrate,
    lattice_edges,
    lattice_shape,
    liouvillian,
    master_rhs,
    reservoir_marginal,
    run_sequence,
    warmup,
)
from hybridqrc.operators import partial_trace, random_state


def small_cfg(seed=0, n_sites=2, **kw):
    kw.setdefault("site_cutoff", 2)
    kw.setdefault("drive", 0.3)
    return ReservoirConfig.random(n_sites, seed=seed, **kw)


def expm_oracle(cfg, rho0, t, u=0.0, input_active=True):
    L = liouvillian(cfg, u, input_active)
    vec = sla.expm(L * t) @ rho0.reshape(-1)
    return vec.reshape(rho0.shape)


def trace_distance(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(a - b)).sum()


# ---------------------------------------------------------------- config


def test_lattice():
    assert lattice_shape(4) == (2, 2)
    assert lattice_shape(3) == (1, 3)
    assert lattice_edges(3) == [(0, 1), (1, 2)]
    assert sorted(lattice_edges(4)) == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_config_invariants():
    cfg = ReservoirConfig.random(3, seed=4)
    assert np.allclose(cfg.hopping, cfg.hopping.T)
    assert np.all((cfg.w_in >= 0) & (cfg.w_in <= 1))
    assert cfg.input_decay[0] == (cfg.w_in[:, 0] ** 2).sum()
    assert cfg.site_cutoff == 3
    assert ReservoirConfig.random(2, nonlinearity=1.0).site_cutoff == 4
    with pytest.raises(ValueError):
        cfg.with_(multiplexity=0)
    with pytest.raises(ValueError):
        ReservoirConfig(2, hopping=[[0, 1], [0, 0]], w_in=[1, 1])
    with pytest.raises(ValueError):
        cfg.with_(max_step=0.02)


# ---------------------------------------------------------------- Hamiltonian and generator


def test_hamiltonian_zero_without_couplings():
    cfg = ReservoirConfig(2, hopping=np.zeros((2, 2)), w_in=[0.5, 0.5], drive=0.0, site_cutoff=3)
    assert np.count_nonzero(build_hamiltonian(cfg, 0.0)) == 0


def test_hamiltonian_hermitian():
    cfg = ReservoirConfig.random(3, seed=2, nonlinearity=0.7, onsite_energies=0.3)
    H = build_hamiltonian(cfg, 0.4)
    assert np.allclose(H, H.conj().T)


def test_single_site_drive_elements():
    cfg = ReservoirConfig(1, hopping=[[0.0]], w_in=[0.0], drive=1.0, site_cutoff=3)
    H = build_hamiltonian(cfg, 0.0)
    # input mode (dim 2) leads, so the site block repeats for each input level
    site = H[:3, :3]
    for n in range(2):
        assert site[n, n + 1] == pytest.approx(np.sqrt(n + 1))
    assert np.allclose(H, np.kron(np.eye(2), site))


def test_drive_follows_input():
    cfg = ReservoirConfig(1, hopping=[[0.0]], w_in=[0.0], drive=0.1, input_scale=2.0, site_cutoff=2)
    assert build_hamiltonian(cfg, 0.5)[0, 1] == pytest.approx(1.1)


def test_rhs_single_decay():
    cfg = ReservoirConfig(1, hopping=[[0.0]], w_in=[0.0], drive=0.0, site_cutoff=2, gamma=1.0)
    rho = np.kron(np.diag([1.0, 0]), np.diag([0.0, 1.0])).astype(complex)
    H = build_hamiltonian(cfg)
    expected = np.kron(np.diag([1.0, 0]), np.diag([1.0, -1.0]))
    assert np.allclose(master_rhs(rho, H, cfg), expected, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_rhs_traceless_hermitian(seed, active):
    cfg = small_cfg(seed, drive=0.2)
    rho = random_state(cfg.space.total_dim, seed, "mixed")
    out = master_rhs(rho, build_hamiltonian(cfg, 0.3), cfg, active)
    assert abs(np.trace(out)) < 1e-12
    assert np.allclose(out, out.conj().T, atol=1e-12)


def test_cascaded_term_traceless():
    cfg = small_cfg(5)
    rho = random_state(cfg.space.total_dim, 9, "mixed")
    H = build_hamiltonian(cfg)
    cascade = master_rhs(rho, H, cfg, True) - master_rhs(rho, H, cfg, False)
    # remove the input-mode decay to isolate the coupling terms
    a = np.kron(np.array([[0, 1], [0, 0]]), np.eye(cfg.space.total_dim // 2))
    decay = cfg.input_decay[0] * (a @ rho @ a.T - 0.5 * (a.T @ a @ rho + rho @ a.T @ a))
    assert abs(np.trace(cascade - decay)) < 1e-12


def test_liouvillian_matches_rhs():
    cfg = small_cfg(3, n_sites=2, site_cutoff=3)
    rho = random_state(cfg.space.total_dim, 1, "mixed")
    for active in (True, False):
        L = liouvillian(cfg, 0.2, active)
        got = (L @ rho.reshape(-1)).reshape(rho.shape)
        assert np.allclose(got, master_rhs(rho, build_hamiltonian(cfg, 0.2), cfg, active), atol=1e-12)


def test_simulator_rhs_matches_dense():
    # a tiny RK4 step agrees with the dense generator to second order
    cfg = small_cfg(8, n_sites=2, site_cutoff=3)
    sim = Simulator(cfg, check_eigenvalues=False)
    rho = random_state(cfg.space.total_dim, 2, "mixed")
    dt = 1e-6
    fd = (sim.evolve(rho, dt, 0.3) - rho) / dt
    assert np.allclose(fd, master_rhs(rho, build_hamiltonian(cfg, 0.3), cfg), atol=1e-4)


# ---------------------------------------------------------------- integrator


def test_vacuum_fixed_point():
    cfg = small_cfg(0, drive=0.0)
    cfg.w_in[:] = 0.3
    rho = Simulator(cfg).vacuum()
    assert np.allclose(integrate(rho, cfg, 0.0, (0, 2)), rho, atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_integrator_matches_exponential(seed):
    cfg = small_cfg(seed, n_sites=2, site_cutoff=3, drive=0.2)
    assert cfg.space.total_dim <= 18
    rho0 = random_state(cfg.space.total_dim, seed, "mixed")
    got = integrate(rho0, cfg, 0.5, (0, 5))
    assert trace_distance(got, expm_oracle(cfg, rho0, 5.0, 0.5)) < 1e-8
    assert abs(np.trace(got) - 1) < 1e-9


def test_integrator_fourth_order():
    # strong couplings so the truncation error sits well above roundoff
    cfg = ReservoirConfig(2, hopping=[[0, 4.0], [4.0, 0]], w_in=[1.0, 1.0], drive=3.0, site_cutoff=3)
    rho0 = random_state(cfg.space.total_dim, 0, "mixed")
    ref = expm_oracle(cfg, rho0, 1.0)
    errs = [np.abs(integrate(rho0, cfg.with_(max_step=h), 0.0, (0, 1)) - ref).max() for h in (0.01, 0.005)]
    assert errs[0] > 1e-12
    assert errs[0] / errs[1] >= 8


def test_piecewise_input():
    cfg = small_cfg(1)
    rho0 = Simulator(cfg).vacuum()
    both = integrate(rho0, cfg, [0.1, 0.7], (0, 2))
    first = expm_oracle(cfg, rho0, 1.0, 0.1)
    assert trace_distance(both, expm_oracle(cfg, first, 1.0, 0.7)) < 1e-8


# ---------------------------------------------------------------- warmup and injection


def test_warmup_vacuum_without_drive():
    cfg = small_cfg(0, drive=0.0)
    rho = warmup(cfg)
    assert rho[0, 0] == pytest.approx(1.0) and np.abs(rho).sum() == pytest.approx(1.0)


def warm_residual(cfg):
    sim = Simulator(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SteadyStateWarning)
        sim.warmup()
    return sim.warmup_residual


def test_warmup_relaxes_at_half_gamma():
    # coherent amplitudes relax at gamma/2, so 2/gamma more warmup shrinks the residual by e^-1
    cfg = ReservoirConfig.random(3, seed=0, drive=0.1)
    r5, r7 = warm_residual(cfg), warm_residual(cfg.with_(t_init=7.0))
    assert r7 / r5 == pytest.approx(np.exp(-1.0), rel=0.02)
    assert warm_residual(cfg.with_(t_init=10.0)) < 1e-3


def test_warmup_step_refinement():
    cfg = ReservoirConfig.random(2, seed=3, drive=0.1)
    a = warmup(cfg)
    b = warmup(cfg.with_(max_step=0.005))
    assert np.abs(a - b).max() < 1e-7


def test_warmup_warns_when_not_steady():
    cfg = ReservoirConfig.random(2, seed=3, drive=0.1, t_init=0.6, gamma=0.2, max_step=0.01)
    with pytest.warns(SteadyStateWarning):
        warmup(cfg)


def test_inject_properties():
    cfg = small_cfg(2, n_sites=2, site_cutoff=3)
    rho = random_state(cfg.space.total_dim, 4, "mixed")
    beta = random_state(2, 5, "mixed")
    out = inject(rho, beta, cfg.space)
    assert np.allclose(reservoir_marginal(out, cfg), reservoir_marginal(rho, cfg), atol=1e-12)
    assert np.allclose(partial_trace(out, cfg.space, [0]), beta, atol=1e-14)
    assert np.trace(out).real == pytest.approx(1.0)
    with pytest.raises(ValueError):
        inject(rho, np.eye(3) / 3, cfg.space)


# ---------------------------------------------------------------- feature runs


def test_feature_shape_and_bias():
    cfg = ReservoirConfig.random(2, seed=1, multiplexity=4)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, 6)
    beta = [random_state(2, rng) for _ in u]
    X = run_sequence(cfg, u, beta)
    assert X.shape == (6, 2 * 4 + 1)
    assert np.all(X[:, -1] == 1) and np.isfinite(X).all()
    assert np.array_equal(X, run_sequence(cfg, u, beta))


def test_feature_ordering_site_major():
    cfg = ReservoirConfig.random(2, seed=1, multiplexity=3)
    sim = Simulator(cfg)
    rho = sim.warmup()
    beta = random_state(2, 0)
    _, row = sim.step(rho, 0.2, beta)
    rho = sim.inject(rho, beta)
    n1 = np.kron(np.eye(2), np.kron(np.diag(np.arange(3.0)), np.eye(3)))
    for v in range(3):
        rho = sim.evolve(rho, 1 / 3, 0.2)
        assert row[v] == pytest.approx(np.trace(n1 @ rho).real, abs=1e-12)


def test_constant_input_periodic_rows():
    cfg = ReservoirConfig.random(2, seed=2, multiplexity=4)
    vac = np.diag([1.0, 0.0])
    X = run_sequence(cfg, np.zeros(30), [vac] * 30)
    assert np.abs(X[-1] - X[-2]).max() < 1e-6


def test_echo_state_property():
    cfg = ReservoirConfig.random(3, seed=7, drive=0.1, input_scale=1.0, multiplexity=4)
    sim = Simulator(cfg)
    rng = np.random.default_rng(1)
    u = rng.uniform(-1, 1, 50)
    beta = [random_state(2, rng) for _ in u]
    warm = sim.warmup()
    other = 0.5 * warm + 0.5 * random_state(cfg.space.total_dim, 3, "mixed")
    a = sim.run(u, beta, rho0=warm).features
    b = sim.run(u, beta, rho0=other).features
    assert np.abs(a[20:] - b[20:]).max() < 1e-4


def test_reset_rows_independent_of_history():
    cfg = ReservoirConfig.random(2, seed=2, multiplexity=2)
    sim = Simulator(cfg)
    beta = [random_state(2, k) for k in range(3)]
    full = sim.run([0.1, 0.5, 0.9], beta, reset=True).features
    single = sim.run([0.9], beta[2:]).features
    assert np.array_equal(full[2], single[0])


def test_physicality_report():
    cfg = ReservoirConfig.random(2, seed=0, drive=0.5, input_scale=1.0)
    sim = Simulator(cfg)
    rng = np.random.default_rng(0)
    u = rng.uniform(-1, 1, 10)
    res = sim.run(u, [random_state(2, rng) for _ in u])
    rep = res.report
    assert rep.elapsed > 0 and rep.checks > 0
    assert rep.ok()
    assert rep.min_eigenvalue >= -1e-7
