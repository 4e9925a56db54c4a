"""Task runners: one call evaluates one (sweep point, trial) cell and returns its metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .dynamics import PhysicalityReport, ReservoirConfig, Simulator
from .metrics import (
    ew_curve,
    ew_error,
    memory_capacity_classical,
    nrmse_curve,
    quantum_memory_capacity,
    rmsf,
    ser,
    vpt,
)
from .operators import random_state, wigner_batch
from .quantum_readout import TrainSpec, train_quantum_readout
from .readout import (
    EsnConfig,
    closed_loop_generate,
    esn_run,
    quantize_symbol,
    reconstruct_density,
    ridge_fit,
    vectorize_batch,
)
from .tasks import (
    HybridSequence,
    control_signal,
    cv_target,
    depolarizing_target,
    gen_equalizer_data,
    random_squeezed_thermal,
    random_thermal,
    switch_targets,
)


@dataclass
class CellResult:
    metrics: dict[str, float]
    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    report: PhysicalityReport | None = None
    history: list = field(default_factory=list)


def child_seed(seed, *path: int) -> np.random.SeedSequence:
    """Deterministic sub-seed; the same (seed, path) always gives the same stream."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(path))


def _rng(seed, *path) -> np.random.Generator:
    return np.random.default_rng(child_seed(seed, *path))


def _delays(value) -> list[int]:
    ds = [int(v) for v in np.atleast_1d(value)]
    if any(d < 0 for d in ds):
        raise ValueError("delays must be non-negative")
    return ds


def _suffix(name: str, d: int, many: bool) -> str:
    return f"{name}_d{d}" if many else name


def reservoir(p: dict, seed, input_cutoffs=(2,)) -> ReservoirConfig:
    """Random reservoir for a cell; couplings come from their own sub-seed."""
    return ReservoirConfig.random(
        int(p["n_sites"]),
        drive=float(p["drive"]),
        input_scale=float(p["input_scale"]),
        nonlinearity=float(p.get("nonlinearity", 0.0)),
        input_cutoffs=input_cutoffs,
        site_cutoff=p.get("site_cutoff"),
        multiplexity=int(p["multiplexity"]),
        seed=_rng(seed, 1),
        max_step=float(p.get("max_step", 0.01)),
        tau=float(p.get("tau", 1.0)),
        t_init=float(p.get("t_init", 5.0)),
    )


# ---------------------------------------------------------------- switch tomography + equalization


def switch_data(p: dict, seed) -> tuple[HybridSequence, dict[int, np.ndarray]]:
    """Equalizer symbols and qubit inputs with switch targets for every requested delay."""
    delays = _delays(p["delay"])
    offset = max(max(delays), 2)
    length = offset + int(p["train_length"]) + int(p["eval_length"])
    rng = _rng(seed, 0)
    s, u = gen_equalizer_data(length, rng, p["snr_db"])
    beta = np.array([random_state(2, rng, p.get("input_kind", "pure")) for _ in range(length)])
    targets = {d: switch_targets(beta, s, d, offset, p["q_a"], p["q_b"], p["target"]) for d in delays}
    seq = HybridSequence(u=u, beta=beta, symbols=s, offset=offset, meta={"length": length})
    return seq, targets


def _split(p: dict) -> tuple[slice, slice]:
    L = int(p["train_length"])
    return slice(0, L), slice(L, L + int(p["eval_length"]))


def switch_equalizer(p: dict, seed) -> CellResult:
    """Multitask classical readout: joint switch-output tomography plus symbol recovery."""
    seq, targets = switch_data(p, seed)
    cfg = reservoir(p, seed)
    u = float(p.get("input_gain", 1.0)) * seq.u + float(p.get("input_shift", 0.0))
    res = Simulator(cfg).run(u, seq.beta)
    X = res.features[seq.offset :]
    tr, ev = _split(p)
    many = len(targets) > 1
    metrics, arrays = {}, {}
    for d, targ in targets.items():
        D = targ.shape[-1]
        sym = seq.symbols[seq.offset - d : len(seq) - d]
        # separate heads, shared features
        w_rho = ridge_fit(X[tr], vectorize_batch(targ[tr]), p.get("eta"))
        w_sym = ridge_fit(X[tr], sym[tr], p.get("eta"))
        recon = np.array([reconstruct_density(y, D) for y in w_rho.predict(X[ev])])
        metrics[_suffix("rmsf", d, many)] = rmsf(targ[ev], recon)
        metrics[_suffix("ser", d, many)] = ser(sym[ev], quantize_symbol(w_sym.predict(X[ev])))
        n_keep = int(p.get("keep_samples", 0))
        if n_keep:
            arrays[_suffix("reconstructed", d, many)] = recon[:n_keep]
            arrays[_suffix("target", d, many)] = targ[ev][:n_keep]
    return CellResult(metrics, arrays, res.report)


def esn_baseline(p: dict, seed) -> CellResult:
    """Symbol recovery by an echo state network on the same equalizer data as ``switch_equalizer``."""
    seq, _ = switch_data(p, seed)
    delays = _delays(p["delay"])
    esn = EsnConfig(
        nodes=int(p["nodes"]),
        connection_probability=float(p["connection_probability"]),
        spectral_radius=float(p["spectral_radius"]),
        input_scale=float(p["esn_input_scale"]),
        seed=child_seed(seed, 3),
    )
    X = esn_run(esn, seq.u)[seq.offset :]
    tr, ev = _split(p)
    many = len(delays) > 1
    metrics = {}
    for d in delays:
        sym = seq.symbols[seq.offset - d : len(seq) - d]
        w = ridge_fit(X[tr], sym[tr], p.get("eta"))
        metrics[_suffix("ser", d, many)] = ser(sym[ev], quantize_symbol(w.predict(X[ev])))
    return CellResult(metrics)


# ---------------------------------------------------------------- continuous-variable tomography


def cv_nontemporal(p: dict, seed) -> CellResult:
    """Squeezing-map tomography with each instance processed from the warm state."""
    D = int(p["d_eff"])
    n = int(p["train_length"]) + int(p["eval_length"])
    rng = _rng(seed, 0)
    s = rng.uniform(0.0, 1.0, n)
    beta = np.array([random_thermal(D, rng) for _ in range(n)])
    grids = wigner_batch(np.array([cv_target(b, x, p["encoding"]) for b, x in zip(beta, s)]))
    cfg = reservoir(p, seed, (D,))
    res = Simulator(cfg).run(s, beta, reset=True)
    tr, ev = _split(p)
    X = res.features
    w = ridge_fit(X[tr], grids[tr].reshape(int(p["train_length"]), -1), p.get("eta"))
    pred = w.predict(X[ev]).reshape(-1, *grids.shape[1:])
    arrays = {}
    n_keep = int(p.get("keep_samples", 0))
    if n_keep:
        arrays = {"wigner_target": grids[ev][:n_keep], "wigner_reconstructed": pred[:n_keep]}
    return CellResult({"ew": ew_error(grids[ev], pred)}, arrays, res.report)


def cv_closed_loop(p: dict, seed) -> CellResult:
    """Open-loop training on a sinusoidal control, then autonomous generation with Wigner tomography.

    The readout predicts s_{l+1} and the Wigner grid of the squeezed input at
    step l. In closed loop each prediction is fed back as the next classical
    input while fresh thermal states keep arriving.
    """
    D = int(p["d_eff"])
    L = int(p["train_length"])
    T = int(p["closed_steps"])
    f = float(p["frequency"])
    rng = _rng(seed, 0)
    n_total = L + T + 1
    s = control_signal(np.arange(n_total + 1), f)
    beta = np.array([random_thermal(D, rng) for _ in range(n_total)])
    grids = wigner_batch(np.array([cv_target(beta[l], s[l], p["encoding"]) for l in range(n_total)]))
    cfg = reservoir(p, seed, (D,))
    sim = Simulator(cfg)
    res = sim.run(s[:L], beta[:L])
    Y = np.column_stack([s[1 : L + 1], grids[:L].reshape(L, -1)])
    w = ridge_fit(res.features, Y, p.get("eta"))
    last = float(w.predict(res.features[-1])[0])

    def source(k):
        return beta[L + k]

    gen, outs = closed_loop_generate(sim, w, source, T, res.final_state, last)
    # NRMSE(t) pairs each prediction with the value it predicts, starting from the last training step
    v = np.concatenate([[last], gen[:-1]])
    var = float(np.var(s[: L + 1]))
    c_curve = nrmse_curve(s[L : L + T], v, var)
    pred_grids = outs[:, 1:].reshape(T, *grids.shape[1:])
    q_curve = ew_curve(grids[L : L + T], pred_grids)
    eps_c, eps_q = float(p["epsilon_c"]), float(p["epsilon_q"])
    horizon = min(int(p["nrmse_horizon"]), T)
    metrics = {
        "nrmse": float(c_curve[horizon - 1]),
        "ew": float(q_curve[-1]),
        "c_vpt": vpt(c_curve, eps_c),
        "q_vpt": vpt(q_curve, eps_q),
        "gen_min": float(gen.min()),
        "gen_max": float(gen.max()),
    }
    arrays = {"generated": gen, "control": s[L + 1 : L + 1 + T], "nrmse_curve": c_curve, "ew_curve": q_curve}
    k, delta = int(p["perturb_step"]), float(p["perturbation"])
    if 0 <= k < T and delta:
        gen_p, _ = closed_loop_generate(sim, w, source, T, res.final_state, last, perturbation=(k, delta))
        diff = np.abs(gen_p - gen)
        window = int(p["recovery_steps"])
        metrics["perturbation_deviation"] = float(diff[k + window :].max()) if k + window < T else float("nan")
        arrays["perturbed"] = gen_p
    n_keep = int(p.get("keep_samples", 0))
    if n_keep:
        arrays["wigner_target"] = grids[L : L + n_keep]
        arrays["wigner_reconstructed"] = pred_grids[:n_keep]
    return CellResult(metrics, arrays, sim.report)


# ---------------------------------------------------------------- quantum readout


def depolarizing_data(p: dict, seed) -> HybridSequence:
    """Random mixing weights and inputs with (delayed) depolarized targets."""
    kind = p["input_kind"]
    d_c, d_q = int(p["d_c"]), int(p["d_q"])
    offset = max(d_c, d_q)
    n = offset + int(p["train_length"]) + int(p["eval_length"])
    rng = _rng(seed, 0)
    s = rng.uniform(0.0, 1.0, n)
    if kind == "qubit":
        D = 2
        beta = np.array([random_state(2, rng, p.get("state_kind", "mixed")) for _ in range(n)])
    elif kind == "cv":
        D = int(p["d_eff"])
        beta = np.array([random_squeezed_thermal(D, rng) for _ in range(n)])
    else:
        raise ValueError("input_kind must be 'qubit' or 'cv'")
    targets = depolarizing_target(s, beta, D, d_c, d_q)
    return HybridSequence(u=s, beta=beta, targets=targets, offset=offset, meta={"D": D})


def depolarizing_prep(p: dict, seed) -> CellResult:
    """Train a passive output-mode readout to emit the depolarized input."""
    data = depolarizing_data(p, seed)
    D = data.meta["D"]
    d_c, d_q = int(p["d_c"]), int(p["d_q"])
    p = dict(p)
    cfg = reservoir(p, seed, (D,)).with_(multiplexity=1)
    spec = TrainSpec(
        trainable=p["trainable"],
        cost="EF" if p["input_kind"] == "qubit" else "EW",
        mode_set=p["mode_set"],
        n_readout=p.get("n_readout"),
        n_train=int(p["train_length"]),
        max_iters=int(p["max_iters"]),
        tolerance=float(p["tolerance"]),
        outer_iters=int(p["outer_iters"]),
        inner_iters=int(p["inner_iters"]),
        seed=child_seed(seed, 2),
        reset=(d_c == 0 and d_q == 0) if p.get("reset") is None else bool(p["reset"]),
    )
    out = train_quantum_readout(cfg, data, spec)
    report = PhysicalityReport()
    for r in out.reports:
        report = report.merge(r)
    name = spec.cost.lower()
    metrics = {
        name: out.eval_error,
        f"{name}_train": out.train_error,
        f"{name}_baseline": out.baseline_error,
        "dynamics_runs": float(out.n_dynamics),
    }
    arrays = {"w_in": out.w_in, "theta": out.theta, "trace": np.array([v for _, v in out.history])}
    return CellResult(metrics, arrays, report, out.history)


# ---------------------------------------------------------------- memory


def memory_capacity(p: dict, seed) -> CellResult:
    """Classical MC for uniform u and quantum MC for random qubit inputs from one run."""
    d_max = int(p["d_max"])
    tr, ev = int(p["train_length"]), int(p["eval_length"])
    n = d_max + tr + ev
    rng = _rng(seed, 0)
    u = rng.uniform(0.0, 1.0, n)
    beta = np.array([random_state(2, rng, p.get("state_kind", "pure")) for _ in range(n)])
    cfg = reservoir(p, seed)
    res = Simulator(cfg).run(u, beta)
    X = res.features
    split = tr / (tr + ev)
    metrics, arrays = {}, {}
    if p["measure"] in ("mc", "both"):
        mc = memory_capacity_classical(X, u, d_max, split, p.get("eta"))
        metrics["mc"] = mc.capacity
        arrays["mc_profile"] = mc.values
    if p["measure"] in ("qmc", "both"):
        qmc = quantum_memory_capacity(X, beta, d_max, split, p.get("eta"))
        metrics["qmc"] = qmc.capacity
        arrays["qmc_profile"] = qmc.values
    return CellResult(metrics, arrays, res.report)


# ---------------------------------------------------------------- registry

_RESERVOIR = {
    "n_sites": 3,
    "multiplexity": 8,
    "drive": 0.1,
    "input_scale": 1.0,
    "nonlinearity": 0.0,
    "site_cutoff": None,
    "max_step": 0.01,
    "tau": 1.0,
    "t_init": 5.0,
}
_SWITCH = {
    "delay": 1,
    "train_length": 800,
    "eval_length": 200,
    "q_a": 0.5,
    "q_b": 0.5,
    "snr_db": 24.0,
    "target": "joint",
    "input_kind": "pure",
    # affine map of the distorted signal before it enters the drive; (u + 3) / 4 keeps
    # the nominal symbol range on one side of zero drive
    "input_gain": 0.25,
    "input_shift": 0.75,
    "eta": None,
    "keep_samples": 0,
}

TASK_DEFAULTS: dict[str, dict] = {
    "switch-equalizer": {**_RESERVOIR, **_SWITCH},
    "esn-baseline": {
        **_SWITCH,
        "nodes": 24,
        "connection_probability": 0.1,
        "spectral_radius": 0.9,
        "esn_input_scale": 1.0,
    },
    "cv-closed-loop": {
        **_RESERVOIR,
        "multiplexity": 10,
        "drive": 1.0,
        "input_scale": 0.8,
        "d_eff": 9,
        "frequency": 60.0,
        "encoding": "amp",
        "train_length": 300,
        "closed_steps": 200,
        "nrmse_horizon": 100,
        "epsilon_c": 0.5,
        "epsilon_q": 0.1,
        "perturb_step": 50,
        "perturbation": 0.05,
        "recovery_steps": 30,
        "eta": None,
        "keep_samples": 0,
    },
    "cv-nontemporal": {
        **_RESERVOIR,
        "n_sites": 2,
        "multiplexity": 10,
        "drive": 1.0,
        "d_eff": 9,
        "encoding": "amp",
        "train_length": 100,
        "eval_length": 100,
        "eta": None,
        "keep_samples": 0,
    },
    "depolarizing-prep": {
        **_RESERVOIR,
        "n_sites": 2,
        "multiplexity": 1,
        "drive": 1.0,
        "input_scale": 2.0,
        "nonlinearity": 1.0,
        "input_kind": "qubit",
        "state_kind": "mixed",
        "d_eff": 3,
        "d_c": 0,
        "d_q": 0,
        "train_length": 200,
        "eval_length": 100,
        "trainable": "Wio",
        "mode_set": "ALL",
        "n_readout": 3,
        "max_iters": 1500,
        "tolerance": 1e-6,
        "outer_iters": 40,
        "inner_iters": 300,
        "reset": None,  # None: reset per instance when both delays are zero
    },
    "memory-capacity": {
        **_RESERVOIR,
        "n_sites": 2,
        "multiplexity": 5,
        "d_max": 40,
        "train_length": 400,
        "eval_length": 100,
        "measure": "both",
        "state_kind": "pure",
        "eta": None,
    },
}

RUNNERS: dict[str, Callable[[dict, object], CellResult]] = {
    "switch-equalizer": switch_equalizer,
    "esn-baseline": esn_baseline,
    "cv-closed-loop": cv_closed_loop,
    "cv-nontemporal": cv_nontemporal,
    "depolarizing-prep": depolarizing_prep,
    "memory-capacity": memory_capacity,
}


def run_cell(task: str, params: dict, seed) -> CellResult:
    """Fill task defaults, then evaluate one cell."""
    if task not in RUNNERS:
        raise KeyError(f"unknown task {task!r}; known: {sorted(RUNNERS)}")
    unknown = set(params) - set(TASK_DEFAULTS[task])
    if unknown:
        raise KeyError(f"unknown parameters for {task}: {sorted(unknown)}")
    return RUNNERS[task]({**TASK_DEFAULTS[task], **params}, seed)
