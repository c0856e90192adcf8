"""
Reproduction experiments. Each returns its rows and, given an output
directory, writes them as CSV (config-hash comment line, then header).
"""

from __future__ import annotations

import logging
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import microcircuits as mc
from .config import RunConfig
from .errors import ConfigurationError, TraceMismatch
from .neuron import EXCITATORY, PV, PYR, SOM, NeuronParams, PopulationState, step_psc
from .rng import STIMULATION, substream
from .train import train, write_csv
from .weights import DaleMatrix, doubly_normalize

log = logging.getLogger(__name__)

GOLDEN_CIRCUITS = ("exc", "mc1", "mc2")


def _params(cfg: RunConfig, defaults: dict) -> dict:
    unknown = set(cfg.experiment) - set(defaults)
    if unknown:
        raise ConfigurationError(f"[experiment] unknown keys: {', '.join(sorted(unknown))}")
    return {**defaults, **cfg.experiment}


def _emit(cfg, out_dir, name, header, rows):
    if out_dir is not None:
        write_csv(Path(out_dir) / name, header, rows, cfg.hash())


# -- apical slope -------------------------------------------------------------

SLOPE_DEFAULTS = dict(
    ratios=[0.02, 0.05, 0.1, 0.2], repeats=1000, timesteps=200, n_inputs=50, basal_scale=0.35,
    rate_low=0.05, rate_high=0.5, bin_width=0.25, min_samples=50, tau_m=4.0, tau_s=2.0, threshold=1.0,
)


def _psc_trains(rng, shape, T, lo, hi, tau_s):
    """``(T, *shape)`` PSC traces of Bernoulli trains with per-train rates U(lo, hi)."""
    rates = rng.uniform(lo, hi, shape)
    a = np.zeros(shape)
    out = np.empty((T, *shape))
    for t in range(T):
        a = step_psc(a, (rng.random(shape) < rates).astype(float), tau_s)
        out[t] = a
    return out


def apical_slope_samples(seed, ratio, repeats, p: dict):
    """Paired basal-only / basal+apical runs; returns ``(u_half, I_a, dPSC)`` of shape (T, repeats)."""
    rng = substream(seed, STIMULATION, int(round(ratio * 1e6)))
    n, T = p["n_inputs"], p["timesteps"]
    params = NeuronParams(p["tau_m"], p["tau_s"], p["threshold"])
    w_basal = rng.uniform(0, 1, (repeats, n)) * rng.choice([-1.0, 1.0], (repeats, n)) * p["basal_scale"]
    w_apical = rng.uniform(0, 1, (repeats, n)) * rng.choice([-1.0, 1.0], (repeats, n))
    i_b = np.einsum("trn,rn->tr", _psc_trains(rng, (repeats, n), T, p["rate_low"], p["rate_high"], p["tau_s"]), w_basal)
    i_a = np.einsum("trn,rn->tr", _psc_trains(rng, (repeats, n), T, p["rate_low"], p["rate_high"], p["tau_s"]), w_apical)
    i_a -= i_a.mean(axis=0)
    norm_a = np.linalg.norm(i_a, axis=0)
    scale = np.divide(ratio * np.linalg.norm(i_b, axis=0), norm_a, out=np.zeros(repeats), where=norm_a > 0)
    i_a *= scale
    base = PopulationState.zeros((repeats,), params)
    both = PopulationState.zeros((repeats,), params)
    u = np.empty((T, repeats))
    d = np.empty((T, repeats))
    for t in range(T):
        base.step(i_b[t])
        both.step(i_b[t] + i_a[t])
        u[t] = base.u_half
        d[t] = both.a - base.a
    return u, i_a, d


def bin_slopes(u, x, y, edges, min_samples):
    """Least-squares slope through the origin of ``y`` on ``x`` per ``u`` bin.

    Returns ``(slope, per-repeat variance, count)`` arrays; bins with too
    few samples or no apical signal are NaN. ``u``, ``x``, ``y`` are (T, repeats).
    """
    idx = np.digitize(u, edges) - 1
    nb = len(edges) - 1
    slope = np.full(nb, np.nan)
    var = np.full(nb, np.nan)
    count = np.zeros(nb, dtype=int)
    for b in range(nb):
        m = idx == b
        count[b] = m.sum()
        sxx = np.where(m, x * x, 0).sum(axis=0)
        sxy = np.where(m, x * y, 0).sum(axis=0)
        if count[b] <= min_samples or sxx.sum() == 0:
            continue
        slope[b] = sxy.sum() / sxx.sum()
        ok = sxx > 0
        if ok.sum() > 1:
            var[b] = np.var(sxy[ok] / sxx[ok], ddof=1)
    return slope, var, count


def experiment_apical_slope(cfg: RunConfig, out_dir=None):
    p = _params(cfg, SLOPE_DEFAULTS)
    th, w = p["threshold"], p["bin_width"]
    edges = th + w * (np.arange(-14, 8) - 0.5)
    centers = 0.5 * (edges[:-1] + edges[1:])
    rows, zero_frac = [], {}
    for ratio in p["ratios"]:
        u, x, y = apical_slope_samples(cfg.seed, ratio, p["repeats"], p)
        zero_frac[ratio] = float(np.mean(y == 0))
        slope, var, count = bin_slopes(u, x, y, edges, p["min_samples"])
        for c, k, v, n in zip(centers, slope, var, count):
            if np.isfinite(k):
                rows.append([repr(float(c)), repr(float(ratio)), repr(float(k)), repr(float(v)), int(n)])
    _emit(cfg, out_dir, "apical_slope.csv", ["u_bin", "norm_ratio", "slope", "variance", "n_samples"], rows)
    return rows, zero_frac


def slope_peaks(rows, threshold=1.0, bin_width=0.25):
    """Per norm ratio: (bin centre of the max slope, True if that bin contains threshold)."""
    out = {}
    for ratio in sorted({float(r[1]) for r in rows}):
        sub = [(float(r[0]), float(r[2])) for r in rows if float(r[1]) == ratio]
        c, _ = max(sub, key=lambda t: t[1])
        out[ratio] = (c, c - bin_width / 2 <= threshold < c + bin_width / 2)
    return out


# -- anti-Hebbian alignment -------------------------------------------------

ANTI_DEFAULTS = dict(
    stds=[0.0, 0.01, 0.1, 1.0], repeats=50, steps=30000, eta=0.02, n=50, p_fire=0.02, record_every=500,
)


def anti_hebbian_run(seed, std, p: dict):
    """Vectorized over repeats; returns (steps recorded, gaps (k, repeats), initial gaps)."""
    rng = substream(seed, STIMULATION, int(round(std * 1e6)))
    R, n, eta = p["repeats"], p["n"], p["eta"]
    w_pyr = rng.uniform(0, 1, (R, n, n))
    w_som = rng.uniform(0, 1, (R, n, n))
    gap0 = np.linalg.norm(w_pyr - w_som, axis=(1, 2))
    steps, gaps = [0], [gap0]
    for t in range(1, p["steps"] + 1):
        s = (rng.random((R, n)) < p["p_fire"]).astype(float)
        a_pyr = s + std * rng.standard_normal((R, n))
        a_som = -s
        i_a = np.einsum("rij,rj->ri", w_pyr, a_pyr) + np.einsum("rij,rj->ri", w_som, a_som)
        w_pyr -= eta * i_a[:, :, None] * a_pyr[:, None, :]
        w_som -= eta * i_a[:, :, None] * a_som[:, None, :]
        np.maximum(w_pyr, 0.0, out=w_pyr)
        np.maximum(w_som, 0.0, out=w_som)
        if t % p["record_every"] == 0 or t == p["steps"]:
            steps.append(t)
            gaps.append(np.linalg.norm(w_pyr - w_som, axis=(1, 2)))
    return np.array(steps), np.array(gaps), gap0


def experiment_anti_hebbian(cfg: RunConfig, out_dir=None):
    p = _params(cfg, ANTI_DEFAULTS)
    rows, final = [], {}
    for std in p["stds"]:
        steps, gaps, gap0 = anti_hebbian_run(cfg.seed, std, p)
        rel = gaps / gap0
        for t, g, r in zip(steps, gaps, rel):
            rows.append([int(t), repr(float(std)), repr(float(g.mean())), repr(float(g.std())),
                         repr(float(r.mean())), repr(float(r.std()))])
        final[std] = float(rel[-1].mean())
    _emit(cfg, out_dir, "anti_hebbian.csv",
          ["step", "std", "gap_mean", "gap_std", "rel_gap_mean", "rel_gap_std"], rows)
    return rows, final


# -- assembly competition ------------------------------------------------------

ASSEMBLY_DEFAULTS = dict(n=50, steps=5000, runs=20, w_max=1.0, eta=0.1, p_fire=0.02, threshold=1.0,
                         snapshot_every=1000)


def assembly_run(seed, p: dict, snapshots=None):
    """One competition run; returns (final matrix, max row/col-sum error seen, sum-error trace)."""
    cfg = mc.AssemblyCompetitionConfig(eta=p["eta"], w_max=p["w_max"], p_fire=p["p_fire"], threshold=p["threshold"])
    rng = substream(seed, STIMULATION)
    n = p["n"]
    w = doubly_normalize(DaleMatrix(rng.uniform(0, cfg.w_max, (n, n)), EXCITATORY, "w_pys"), cfg.target,
                         cfg.sinkhorn_iters, cfg.sinkhorn_tol)
    worst, trace = 0.0, []
    for t in range(1, p["steps"] + 1):
        pyr = (rng.random(n) < cfg.p_fire).astype(float)
        som = mc.som_drive_spikes(w, pyr, cfg.threshold)
        w = mc.assembly_competition_update(w, pyr, som, cfg)
        err = max(np.abs(w.values.sum(0) - cfg.target).max(), np.abs(w.values.sum(1) - cfg.target).max())
        worst = max(worst, err)
        if snapshots is not None and (t % p["snapshot_every"] == 0 or t == p["steps"]):
            snapshots[f"step{t}"] = w.values.copy()
            trace.append((t, err, mc.is_permutation(w.values, cfg.w_max / 2)))
    return w, worst, trace


def experiment_assembly(cfg: RunConfig, out_dir=None):
    p = _params(cfg, ASSEMBLY_DEFAULTS)
    rows, verdicts = [], []
    for run in range(p["runs"]):
        snaps = {}
        w, worst, trace = assembly_run(cfg.seed * 1000 + run, p, snaps)
        perm = mc.is_permutation(w.values, p["w_max"] / 2)
        verdicts.append((perm, worst))
        for t, err, ok in trace:
            rows.append([run, t, repr(float(err)), int(ok)])
        if out_dir is not None:
            np.savez(Path(out_dir) / f"assembly_run{run}.npz", **snaps)
    _emit(cfg, out_dir, "assembly.csv", ["run", "step", "sum_error", "is_permutation"], rows)
    return rows, verdicts


# -- alignment angle -----------------------------------------------------------

def experiment_angle(cfg: RunConfig, out_dir=None, train_data=None, test_data=None):
    """Train per ``cfg`` and report the per-layer angle at every epoch."""
    if out_dir is not None:
        cfg = replace(cfg, output_dir=str(out_dir))
    history = train(cfg, train_data, test_data)
    keys = sorted(k for k in history[0] if k.startswith("angle_"))
    rows = [[h["epoch"], int(k.split("_")[1]), repr(float(h[k]))] for h in history for k in keys]
    _emit(cfg, out_dir, "angle.csv", ["epoch", "layer", "angle_deg"], rows)
    return rows


# -- microcircuit waveforms --------------------------------------------------

TRACE_DEFAULTS = dict(timesteps=20, n_cells=3, drive_low=0.2, drive_high=0.9, sine_amplitude=0.1,
                      sine_period=10.0, correlation_repeats=100, correlation_timesteps=200)


def _drive(rng, T, n, lo, hi):
    return rng.uniform(lo, hi, (T, n))


def trace_exc(seed=0, p=None):
    p = {**TRACE_DEFAULTS, **(p or {})}
    rng = substream(seed, STIMULATION, 1)
    T, n = p["timesteps"], p["n_cells"]
    params = NeuronParams(4.0, 2.0, 1.0)
    circuit = mc.ExcBackwardCircuit.paired(DaleMatrix(np.ones((1, n))), out_tau_s=params.tau_s)
    circuit.check()
    pyr = PopulationState.zeros((n,), params)
    som = mc.som_population((n,), circuit)
    drive = _drive(rng, T, n, p["drive_low"], p["drive_high"])
    rows = []
    for t in range(T):
        pyr.step(drive[t])
        mc.som_pointwise_step(pyr.spikes, circuit, som, check=False)
        rows += mc.trace_rows(t, "pyr", PYR, pyr, 0.0) + mc.trace_rows(t, "som", SOM, som, 0.0)
    return rows


def trace_mc1(seed=0, p=None):
    p = {**TRACE_DEFAULTS, **(p or {})}
    rng = substream(seed, STIMULATION, 2)
    T, n = p["timesteps"], p["n_cells"]
    circuit = mc.InhBackwardCircuit(mc.MC1)
    circuit.check()
    pv = PopulationState.zeros((n,), NeuronParams(4.0, 2.0, 1.0), -1)
    aux = mc.MC1State((n,), circuit)
    drive = _drive(rng, T, n, p["drive_low"], p["drive_high"])
    rows = []
    for t in range(T):
        pv.step(drive[t])
        mc.inh_mc1_step(pv.spikes, circuit, aux)
        rows += (mc.trace_rows(t, "pv", PV, pv, 0.0) + mc.trace_rows(t, "som", SOM, aux.som, 0.0)
                 + mc.trace_rows(t, "pyrpv", PYR, aux.pyr, 0.0))
    return rows


def _mc2_pair(rng, T, n, p):
    """Pyr/PV pair with and without a sinusoidal current on the PV membrane."""
    circuit = mc.InhBackwardCircuit(mc.MC2)
    circuit.check()
    pyr = PopulationState.zeros((n,), NeuronParams(4.0, 2.0, 1.0))
    clean = mc.PairedPV((n,), circuit)
    noisy = mc.PairedPV((n,), circuit)
    drive = _drive(rng, T, n, p["drive_low"], p["drive_high"])
    phase = rng.uniform(0, 2 * np.pi, n)
    sine = p["sine_amplitude"] * np.sin(2 * np.pi * np.arange(T)[:, None] / p["sine_period"] + phase)
    return circuit, pyr, clean, noisy, drive, sine


def trace_mc2(seed=0, p=None):
    p = {**TRACE_DEFAULTS, **(p or {})}
    rng = substream(seed, STIMULATION, 3)
    T, n = p["timesteps"], p["n_cells"]
    _, pyr, clean, noisy, drive, sine = _mc2_pair(rng, T, n, p)
    rows = []
    for t in range(T):
        pyr.step(drive[t])
        clean.step(pyr.spikes)
        noisy.step(pyr.spikes, sine[t])
        rows += (mc.trace_rows(t, "pyr", PYR, pyr, 0.0) + mc.trace_rows(t, "pv", PV, clean.pop, 0.0)
                 + mc.trace_rows(t, "pvinj", PV, noisy.pop, sine[t]))
    return rows


def mc2_correlation(seed=0, p=None):
    """Correlation of the injected sine with the change of the PV's signed output PSC.

    Returns ``(pearson r, u_PV per sample, sine per sample, dPSC per sample)``.
    """
    p = {**TRACE_DEFAULTS, **(p or {})}
    rng = substream(seed, STIMULATION, 4)
    T, n = p["correlation_timesteps"], p["correlation_repeats"]
    _, pyr, clean, noisy, drive, sine = _mc2_pair(rng, T, n, p)
    u = np.empty((T, n))
    d = np.empty((T, n))
    for t in range(T):
        pyr.step(drive[t])
        clean.step(pyr.spikes)
        u[t] = noisy.pop.u
        noisy.step(pyr.spikes, sine[t])
        d[t] = noisy.pop.psc - clean.pop.psc
    r = float(np.corrcoef(sine.ravel(), d.ravel())[0, 1])
    return r, u, sine, d


TRACE_BUILDERS = {"exc": trace_exc, "mc1": trace_mc1, "mc2": trace_mc2}


def golden_path(circuit: str):
    return resources.files("dalebp") / "golden" / f"{circuit}.csv"


def compare_traces(circuit, rows, golden_rows):
    """Raise TraceMismatch at the first differing (step, cell, column)."""
    fresh = [tuple(mc._fmt(v) for v in r) for r in rows]
    for i in range(max(len(fresh), len(golden_rows))):
        if i >= len(fresh) or i >= len(golden_rows):
            ref = golden_rows[i] if i < len(golden_rows) else fresh[i]
            raise TraceMismatch(circuit, ref[0], ref[1], "<row count>")
        a, b = fresh[i], golden_rows[i]
        if a != b:
            col = next(c for c, x, y in zip(mc.TRACE_COLUMNS, a, b) if x != y)
            raise TraceMismatch(circuit, b[0], b[1], col)


def verify_traces(golden_dir=None):
    """Regenerate every golden circuit and compare bit-exactly; returns the circuits checked."""
    for name in GOLDEN_CIRCUITS:
        path = Path(golden_dir) / f"{name}.csv" if golden_dir else golden_path(name)
        compare_traces(name, TRACE_BUILDERS[name](), mc.read_trace_csv(path))
    return list(GOLDEN_CIRCUITS)


def write_golden(directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in GOLDEN_CIRCUITS:
        mc.write_trace_csv(directory / f"{name}.csv", TRACE_BUILDERS[name](),
                           f"{name} waveform, 20 steps, tau_s=2, seed 0")


def experiment_microcircuit_traces(cfg: RunConfig, out_dir=None):
    p = _params(cfg, TRACE_DEFAULTS)
    out = {}
    for name, build in TRACE_BUILDERS.items():
        rows = build(cfg.seed, p)
        out[name] = rows
        if out_dir is not None:
            mc.write_trace_csv(Path(out_dir) / f"trace_{name}.csv", rows, f"config-hash: {cfg.hash()}")
    r, *_ = mc2_correlation(cfg.seed, p)
    out["mc2_correlation"] = r
    _emit(cfg, out_dir, "mc2_correlation.csv", ["pearson_r"], [[repr(r)]])
    return out


EXPERIMENTS = {
    "apical-slope": experiment_apical_slope,
    "anti-hebbian": experiment_anti_hebbian,
    "assembly": experiment_assembly,
    "angle": experiment_angle,
    "microcircuit-traces": experiment_microcircuit_traces,
}
