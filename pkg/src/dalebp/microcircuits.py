"""
Backward microcircuits and the Pyr-SOM assembly competition.

Four building blocks carry errors from a layer back onto the apical
dendrites of the layer below:

* the excitatory circuit, where each Pyr cell drives one paired SOM cell
  whose inhibitory PSC cancels the Pyr base PSC on the apical target;
* inhibitory microcircuit 1 (disinhibition): PV silences a tonically
  active SOM cell, releasing an auxiliary Pyr(PV) cell;
* inhibitory microcircuit 2 (autapse): a PV cell slaved to its paired Pyr
  folds its error into the Pyr apical dendrite, the autapse cancelling the
  base PSC;
* inhibitory microcircuit 3 (direct pairing): the slaved Pyr/PV pair
  cancel each other's base PSCs directly on the downstream targets.

Within a step, cells are evaluated in topological order (driver first,
followers after), so a follower responds on the same step as its driver.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ContractError
from .neuron import (
    EXCITATORY,
    INHIBITORY,
    PV,
    PYR,
    NeuronParams,
    PopulationState,
    apical_error,
    backward_psc,
    step_psc,
    surrogate_slope,
)
from .weights import DaleMatrix, doubly_normalize

MC1, MC2, MC3 = "MC1", "MC2", "MC3"
VARIANTS = (MC1, MC2, MC3)

TRACE_COLUMNS = ("step", "cell_id", "cell_type", "u", "spike", "psc", "I_a")


class DesynchronizationWarning(RuntimeWarning):
    """A slaved PV cell did not fire on exactly the steps of its paired Pyr."""


def _som_params():
    return NeuronParams(tau_m=1.0, tau_s=1.0, threshold=0.5)


@dataclass
class ExcBackwardCircuit:
    """Pyr -> SOM pairing plus the two backward projections onto the layer below.

    ``w_back_pyr`` and ``w_back_som`` have shape ``(n_below, n_pyr)``.
    The pairing synapse has ``pairing_tau_s`` (1 gives a single-step
    pulse of height 1); SOM output synapses use ``out_tau_s``, which must
    equal the Pyr backward synapse time constant for exact cancellation.
    """

    w_pys: DaleMatrix
    w_back_pyr: DaleMatrix
    w_back_som: DaleMatrix
    som_params: NeuronParams = field(default_factory=_som_params)
    pairing_tau_s: float = 1.0
    out_tau_s: float = 2.0

    def __post_init__(self):
        if self.w_back_pyr.shape != self.w_back_som.shape:
            raise ContractError(
                f"W_<-Pyr {self.w_back_pyr.shape} and W_<-SOM {self.w_back_som.shape} must share shape"
            )
        n = self.w_pys.shape
        if n[0] != n[1] or n[1] != self.w_back_pyr.shape[1]:
            raise ContractError(f"w_pys {n} must be square over {self.w_back_pyr.shape[1]} Pyr cells")

    @classmethod
    def paired(cls, w_back_pyr: DaleMatrix, w_back_som: DaleMatrix | None = None, w_pair: float = 1.0, **kw):
        """Circuit with an already-formed one-to-one pairing (identity ``w_pys``)."""
        n = w_back_pyr.shape[1]
        if w_back_som is None:
            w_back_som = w_back_pyr.copy(name="w_back_som")
        w_pys = DaleMatrix(w_pair * np.eye(n), EXCITATORY, "w_pys")
        return cls(w_pys, w_back_pyr, w_back_som, **kw)

    @property
    def pulse(self) -> float:
        return 1.0 / self.pairing_tau_s

    def check(self):
        """Raise unless one Pyr spike forces exactly one spike in its paired SOM."""
        w = self.w_pys.values
        paired = w.max(axis=1)
        off = w.sum(axis=1) - paired
        theta = self.som_params.threshold
        if not (theta > 0 and (paired * self.pulse > theta).all()):
            raise ConfigurationError(
                f"SOM threshold {theta} outside (0, w_pys*a_pulse={paired.min() * self.pulse:g})"
            )
        if self.som_params.tau_m == 1.0 and (off * self.pulse >= theta).any():
            raise ConfigurationError("off-pair Pyr->SOM weights can drive SOM spikes on their own")
        if self.som_params.tau_m != 1.0 and (off > 0).any():
            raise ConfigurationError("leaky SOM cells integrate off-pair drive; use tau_m=1 or a diagonal w_pys")


def som_pointwise_step(pyr_spikes, circuit: ExcBackwardCircuit, som: PopulationState | None = None, check=True):
    """One step of the paired SOM cells; returns their spike record.

    If ``som`` is given it is advanced in place (its ``a`` is filtered with
    ``circuit.out_tau_s`` and read with sign -1). Callers stepping the
    same circuit repeatedly may validate once and pass ``check=False``.
    """
    if check:
        circuit.check()
    pyr_spikes = np.asarray(pyr_spikes, dtype=float)
    if som is None:
        som = PopulationState.zeros(pyr_spikes.shape, _som_out_params(circuit), INHIBITORY)
    drive = step_psc(np.zeros_like(pyr_spikes), pyr_spikes, circuit.pairing_tau_s) @ circuit.w_pys.values.T
    return som.step(drive)


def som_population(shape, circuit: ExcBackwardCircuit) -> PopulationState:
    """Fresh SOM population whose output trace uses the circuit's ``out_tau_s``."""
    return PopulationState.zeros(shape, _som_out_params(circuit), INHIBITORY)


def _som_out_params(circuit):
    p = circuit.som_params
    return NeuronParams(p.tau_m, circuit.out_tau_s, p.threshold, p.is_integrate_and_fire)


def som_mirror(pyr_train, circuit: ExcBackwardCircuit):
    """Run the SOM cells over a ``(T, ..., n)`` Pyr spike train; returns the SOM train."""
    pyr_train = np.asarray(pyr_train, dtype=float)
    circuit.check()
    som = PopulationState.zeros(pyr_train.shape[1:], _som_out_params(circuit), INHIBITORY)
    return np.stack([som_pointwise_step(s, circuit, som, check=False) for s in pyr_train])


def exc_backward_current(circuit: ExcBackwardCircuit, a_back_pyr, a_som):
    """Top-down current ``W_<-Pyr a_<-+ + W_<-SOM a_SOM`` onto the layer below.

    ``a_som`` is the signed (non-positive) SOM PSC.
    """
    a_back_pyr = np.asarray(a_back_pyr, dtype=float)
    a_som = np.asarray(a_som, dtype=float)
    if a_back_pyr.shape != a_som.shape:
        raise ContractError(f"a_<-+ {a_back_pyr.shape} and a_SOM {a_som.shape} differ")
    return a_back_pyr @ circuit.w_back_pyr.values.T + a_som @ circuit.w_back_som.values.T


@dataclass
class InhBackwardCircuit:
    """Inhibitory backward path for the PV cells of one layer.

    MC1 uses ``w_back_pv`` and ``w_back_pair`` (= W_<-Pyr(PV)) with the
    disinhibition constants; MC3 uses ``w_back_pv`` against the Pyr
    partner's own backward weights; MC2 has no backward projection of its
    own and routes PV errors through the autapse (``w_au``).

    ``pv_slope`` is the constant small-signal slope of an integrate-and-fire
    PV cell (used by MC2/MC3 instead of the membrane-dependent surrogate).
    """

    variant: str = MC2
    w_back_pv: DaleMatrix | None = None
    w_back_pair: DaleMatrix | None = None
    # MC1
    w_pvs: float = 1.0
    w_spy: float = 1.0
    i_bias_som: float = 1.0
    i_bias_pyr: float = 1.0
    aux_params: NeuronParams = field(default_factory=_som_params)
    aux_out_tau_s: float = 2.0
    # MC2 / MC3
    w_pypv: float = 1.0
    pairing_tau_s: float = 1.0
    pv_params: NeuronParams = field(
        default_factory=lambda: NeuronParams(tau_m=1.0, tau_s=2.0, threshold=0.9, is_integrate_and_fire=True)
    )
    w_au: float = 1.0
    pv_slope: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown inhibitory microcircuit {self.variant!r}")
        if self.variant == MC1 and (self.w_back_pv is None) != (self.w_back_pair is None):
            raise ContractError("MC1 needs both W_<-PV and W_<-Pyr(PV)")
        if self.variant in (MC1, MC3) and self.w_back_pv is not None and self.w_back_pair is not None \
                and self.w_back_pv.shape != self.w_back_pair.shape:
            raise ContractError("W_<-PV and its paired backward matrix must share shape")

    @property
    def pulse(self) -> float:
        return 1.0 / self.pairing_tau_s

    def check(self):
        if self.variant == MC1:
            a = -self.pulse
            theta = self.aux_params.threshold
            if not (self.w_pvs * a + self.i_bias_som < theta < self.i_bias_som):
                raise ConfigurationError(
                    f"MC1 SOM window violated: {self.w_pvs * a + self.i_bias_som:g} < {theta:g} < {self.i_bias_som:g}"
                )
            if not (self.w_spy * a + self.i_bias_pyr < theta < self.i_bias_pyr):
                raise ConfigurationError(
                    f"MC1 Pyr window violated: {self.w_spy * a + self.i_bias_pyr:g} < {theta:g} < {self.i_bias_pyr:g}"
                )
            if self.aux_params.tau_m != 1.0:
                raise ConfigurationError("MC1 auxiliary cells need tau_m=1 (bias must not accumulate)")
        else:
            if not self.pv_params.is_integrate_and_fire:
                raise ConfigurationError(f"{self.variant}: PV cells must use integrate-and-fire dynamics")
            if not self.w_pypv * self.pulse >= self.pv_params.threshold:
                raise ConfigurationError(
                    f"{self.variant}: w_pypv*a_pulse={self.w_pypv * self.pulse:g} cannot synchronize PV "
                    f"(threshold {self.pv_params.threshold:g})"
                )

    def pv_error(self, pv: PopulationState):
        """PV error ``-slope * I_a``, with the constant IF slope."""
        return -self.pv_slope * np.asarray(pv.apical_current, dtype=float)


class MC1Spikes(NamedTuple):
    pyr: np.ndarray
    som: np.ndarray


class MC1State:
    """Auxiliary SOM(PV) and Pyr(PV) cells of a disinhibition circuit."""

    def __init__(self, shape, circuit: InhBackwardCircuit):
        p = circuit.aux_params
        out = NeuronParams(p.tau_m, circuit.aux_out_tau_s, p.threshold, p.is_integrate_and_fire)
        self.som = PopulationState.zeros(shape, out, INHIBITORY)
        self.pyr = PopulationState.zeros(shape, out, EXCITATORY)


def inh_mc1_step(pv_spikes, circuit: InhBackwardCircuit, state: MC1State | None = None) -> MC1Spikes:
    """One step of disinhibition: PV -> SOM(PV) -> Pyr(PV), all on the same step."""
    if circuit.variant != MC1:
        raise ConfigurationError(f"inh_mc1_step called on a {circuit.variant} circuit")
    circuit.check()
    pv_spikes = np.asarray(pv_spikes, dtype=float)
    if state is None:
        state = MC1State(pv_spikes.shape, circuit)
    pv_pulse = -step_psc(np.zeros_like(pv_spikes), pv_spikes, circuit.pairing_tau_s)
    som_s = state.som.step(circuit.w_pvs * pv_pulse + circuit.i_bias_som)
    som_pulse = -step_psc(np.zeros_like(som_s), som_s, circuit.pairing_tau_s)
    pyr_s = state.pyr.step(circuit.w_spy * som_pulse + circuit.i_bias_pyr)
    return MC1Spikes(pyr_s, som_s)


def inh_mc1_backward(pv: PopulationState, aux: MC1State, circuit: InhBackwardCircuit, threshold=None):
    """Top-down current of the MC1 path: ``W_<-PV a_<-- + W_<-Pyr(PV) a_Pyr(PV)``."""
    th = pv.params.threshold if threshold is None else threshold
    a_back = backward_psc(pv.psc, pv.u_half, pv.apical_current, PV, th)
    return a_back @ circuit.w_back_pv.values.T + aux.pyr.psc @ circuit.w_back_pair.values.T


class PairedPV:
    """PV cells slaved to their paired Pyr cells through ``w_pypv`` (MC2/MC3)."""

    def __init__(self, shape, circuit: InhBackwardCircuit):
        self.circuit = circuit
        self.pop = PopulationState.zeros(shape, circuit.pv_params, INHIBITORY)

    def step(self, pyr_spikes, inject=0.0):
        """Advance the PV cells; ``inject`` is an extra current onto their membranes."""
        c = self.circuit
        pulse = step_psc(np.zeros_like(pyr_spikes), pyr_spikes, c.pairing_tau_s)
        return self.pop.step(c.w_pypv * pulse + inject)


def inh_mc2_backward(pyr: PopulationState, pv: PopulationState, circuit: InhBackwardCircuit, threshold=None):
    """Backward PSC of a Pyr cell carrying its paired PV cell's error.

    The Pyr apical dendrite receives its own top-down current plus the
    autapse (``w_au * a_Pyr``) and the PV backward PSC (``w_au * (a_PV + e_PV)``).
    When the pair fires in synchrony the base PSCs cancel and the merged
    apical current is ``I_a - w_au * slope_PV * I_a(PV)``.

    Returns ``(pyr_backward_psc, apical_merge)``.
    """
    if circuit.variant != MC2:
        raise ConfigurationError(f"inh_mc2_backward called on a {circuit.variant} circuit")
    th = pyr.params.threshold if threshold is None else threshold
    a_pvpy = pv.psc + circuit.pv_error(pv)
    merge = np.asarray(pyr.apical_current, dtype=float) + circuit.w_au * pyr.psc + circuit.w_au * a_pvpy
    return backward_psc(pyr.psc, pyr.u_half, merge, PYR, th), merge


def inh_mc3_backward(pyr: PopulationState, pv: PopulationState, circuit: InhBackwardCircuit, threshold=None):
    """Downstream apical current of a directly paired Pyr/PV couple.

    ``circuit.w_back_pair`` holds the Pyr partner's backward weights and
    ``circuit.w_back_pv`` the PV's. Returns ``(current, e_pyr)``; only
    ``e_pyr`` drives plasticity of the pair's input synapses.
    """
    if circuit.variant != MC3:
        raise ConfigurationError(f"inh_mc3_backward called on a {circuit.variant} circuit")
    th = pyr.params.threshold if threshold is None else threshold
    e_pyr = apical_error(pyr.u_half, pyr.apical_current, PYR, th)
    a_back_pyr = pyr.psc + e_pyr
    a_back_pv = pv.psc + circuit.pv_error(pv)
    current = a_back_pyr @ circuit.w_back_pair.values.T + a_back_pv @ circuit.w_back_pv.values.T
    return current, e_pyr


def check_synchrony(pyr_train, pv_train, label="PV"):
    """Warn if a slaved PV train deviates from its Pyr train; returns True when synchronized."""
    pyr_train = np.asarray(pyr_train)
    pv_train = np.asarray(pv_train)
    if pyr_train.shape != pv_train.shape:
        raise ContractError(f"train shapes differ: {pyr_train.shape} vs {pv_train.shape}")
    bad = np.argwhere(pyr_train != pv_train)
    if len(bad):
        warnings.warn(
            f"{label} desynchronized from paired Pyr at {len(bad)} (step, cell) entries, first {tuple(bad[0])}",
            DesynchronizationWarning,
            stacklevel=2,
        )
        return False
    return True


@dataclass(frozen=True)
class AssemblyCompetitionConfig:
    """Parameters of the Pyr -> SOM assembly competition.

    ``a_plus``/``a_minus`` default to ``+eta/2``/``-eta/2``, which is the
    co-firing indicator shifted by 0.5 and scaled by the learning rate.
    """

    eta: float = 0.1
    a_plus: float | None = None
    a_minus: float | None = None
    w_max: float = 1.0
    p_fire: float = 0.02
    threshold: float = 1.0
    target_sum: float | None = None
    sinkhorn_iters: int = 200
    sinkhorn_tol: float = 1e-9

    def __post_init__(self):
        if not self.eta > 0:
            raise ConfigurationError(f"eta must be > 0, got {self.eta}")
        if not 0 < self.p_fire < 1:
            raise ConfigurationError(f"p_fire must lie in (0, 1), got {self.p_fire}")
        if not self.w_max >= self.threshold:
            raise ConfigurationError(f"w_max={self.w_max} must be >= threshold={self.threshold}")

    @property
    def plus(self) -> float:
        return 0.5 * self.eta if self.a_plus is None else self.a_plus

    @property
    def minus(self) -> float:
        return -0.5 * self.eta if self.a_minus is None else self.a_minus

    @property
    def target(self) -> float:
        return self.w_max if self.target_sum is None else self.target_sum


def assembly_competition_update(w_pys: DaleMatrix, pyr_spikes, som_spikes, cfg: AssemblyCompetitionConfig):
    """Soft-bounded Hebbian step on ``w_pys`` (SOM x Pyr) followed by dual-sum normalization.

    ``pyr_spikes`` is encoded {0, 1}; ``som_spikes`` is either {0, 1} or the
    signed {0, -1} encoding, only firing matters.
    """
    w = w_pys.values
    pyr = np.asarray(pyr_spikes) != 0
    som = np.asarray(som_spikes) != 0
    if pyr.shape != (w.shape[1],) or som.shape != (w.shape[0],):
        raise ContractError(f"spike vectors {pyr.shape}/{som.shape} do not match w_pys {w.shape}")
    together = np.outer(som, pyr)
    coef = np.where(together, cfg.plus, cfg.minus)
    delta = coef * w * (cfg.w_max - w) / cfg.w_max
    updated = DaleMatrix(np.clip(w + delta, 0.0, cfg.w_max), w_pys.pre_sign, w_pys.name)
    return doubly_normalize(updated, cfg.target, cfg.sinkhorn_iters, cfg.sinkhorn_tol)


def som_drive_spikes(w_pys: DaleMatrix, pyr_spikes, threshold: float):
    """SOM firing for single-step pulses (tau_m = tau_s = 1)."""
    return (w_pys.values @ np.asarray(pyr_spikes, dtype=float) >= threshold).astype(float)


def is_permutation(m, cut):
    b = np.asarray(m) > cut
    return bool(b.shape[0] == b.shape[1] and (b.sum(axis=0) == 1).all() and (b.sum(axis=1) == 1).all())


# -- waveform traces ---------------------------------------------------------


def trace_rows(step, cell_prefix, cell_type, pop: PopulationState, apical=None):
    """Rows in TRACE_COLUMNS order for one population at one step."""
    apical = pop.apical_current if apical is None else apical
    apical = np.broadcast_to(np.asarray(apical, dtype=float), pop.u.shape)
    rows = []
    for i in range(pop.size):
        rows.append(
            (step, f"{cell_prefix}{i}", cell_type, float(pop.u_half[i]), int(pop.spikes[i]),
             float(pop.psc[i]), float(apical[i]))
        )
    return rows


def write_trace_csv(path, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    if tuple(header) != TRACE_COLUMNS:
        raise ContractError(f"{path}: unexpected trace header {header}")
    return [tuple(r) for r in reader]


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


__all__ = [
    "MC1", "MC2", "MC3", "ExcBackwardCircuit", "InhBackwardCircuit", "AssemblyCompetitionConfig",
    "som_pointwise_step", "som_mirror", "exc_backward_current", "inh_mc1_step", "inh_mc1_backward",
    "inh_mc2_backward", "inh_mc3_backward", "assembly_competition_update", "check_synchrony",
    "MC1State", "PairedPV", "surrogate_slope", "is_permutation", "write_trace_csv", "read_trace_csv",
]
