"""
Discrete-time LIF neuron and synapse primitives.

Every update uses a forward Euler step of one time unit:

    u_half = (1 - 1/tau_m) * u + I          (leak disabled for IF cells)
    s      = H(u_half - threshold)
    u      = u_half * (1 - s)                (reset to zero)
    a      = (1 - 1/tau_s) * a + s / tau_s

PSC traces are stored unsigned; the population's sign (+1 excitatory,
-1 inhibitory) is applied when a consumer reads the trace.

All functions are elementwise over the last axis and broadcast over any
leading (batch) axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError

PYR = "Pyr"
PV = "PV"
SOM = "SOM"
EXCITATORY = 1
INHIBITORY = -1


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 4.0
    tau_s: float = 2.0
    threshold: float = 1.0
    is_integrate_and_fire: bool = False

    def __post_init__(self):
        if not self.tau_m >= 1.0:
            raise ContractError(f"tau_m must be >= 1, got {self.tau_m}")
        if not self.tau_s >= 1.0:
            raise ContractError(f"tau_s must be >= 1, got {self.tau_s}")
        if not self.threshold > 0.0:
            raise ContractError(f"threshold must be > 0, got {self.threshold}")

    @property
    def leak(self) -> float:
        """Multiplicative membrane retention per step."""
        return 1.0 if self.is_integrate_and_fire else 1.0 - 1.0 / self.tau_m


@dataclass
class PopulationState:
    """Mutable state of one cell group.

    ``u`` is the post-reset membrane potential, ``u_half`` the pre-reset
    value of the most recent step (the point at which the surrogate slope
    is evaluated), ``a`` the unsigned PSC trace.
    """

    u: np.ndarray
    a: np.ndarray
    spikes: np.ndarray
    u_half: np.ndarray
    apical_current: np.ndarray
    sign: int = EXCITATORY
    params: NeuronParams = field(default_factory=NeuronParams)

    @classmethod
    def zeros(cls, shape, params: NeuronParams | None = None, sign: int = EXCITATORY):
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        z = lambda: np.zeros(shape)  # noqa: E731
        return cls(z(), z(), z(), z(), z(), sign, params or NeuronParams())

    @property
    def size(self) -> int:
        return self.u.shape[-1]

    @property
    def psc(self) -> np.ndarray:
        """Signed PSC as seen by downstream synapses."""
        return self.sign * self.a

    def step(self, input_current) -> np.ndarray:
        """Advance one step in place and return the spike record."""
        u_half, s, u = _membrane(self.u, input_current, self.params)
        self.u_half, self.spikes, self.u = u_half, s, u
        self.a = step_psc(self.a, s, self.params.tau_s)
        return s

    def copy(self) -> PopulationState:
        return replace(
            self,
            u=self.u.copy(),
            a=self.a.copy(),
            spikes=self.spikes.copy(),
            u_half=self.u_half.copy(),
            apical_current=self.apical_current.copy(),
        )


def _check_same(name_a, x, name_b, y):
    if np.shape(x)[-1:] != np.shape(y)[-1:]:
        raise ContractError(
            f"{name_a} has {np.shape(x)[-1:]} neurons but {name_b} has {np.shape(y)[-1:]}"
        )


def _membrane(u, input_current, params):
    u = np.asarray(u, dtype=float)
    input_current = np.asarray(input_current, dtype=float)
    _check_same("state", u, "input_current", input_current)
    u_half = params.leak * u + input_current
    s = (u_half >= params.threshold).astype(float)
    return u_half, s, u_half * (1.0 - s)


def step_membrane(state: PopulationState, input_current, params: NeuronParams | None = None):
    """Functional Euler update; returns ``(new_state, spikes)`` and leaves ``state`` untouched.

    The new state's ``a`` is advanced with the same spikes so the returned
    state is consistent as a whole.
    """
    params = params or state.params
    u_half, s, u = _membrane(state.u, input_current, params)
    new = replace(
        state,
        u=u,
        u_half=u_half,
        spikes=s,
        a=step_psc(state.a, s, params.tau_s),
        apical_current=np.array(state.apical_current, dtype=float, copy=True),
        params=params,
    )
    return new, s


def step_psc(a, spikes, tau_s: float, cell_sign: int | None = None):
    """Exponential synaptic filter.

    Returns the unsigned trace, or the emitted (signed) PSC when
    ``cell_sign`` is given.
    """
    a = np.asarray(a, dtype=float)
    spikes = np.asarray(spikes, dtype=float)
    _check_same("trace", a, "spikes", spikes)
    out = (1.0 - 1.0 / tau_s) * a + spikes / tau_s
    if cell_sign is None:
        return out
    if cell_sign not in (EXCITATORY, INHIBITORY):
        raise ContractError(f"cell_sign must be +1 or -1, got {cell_sign}")
    return cell_sign * out


def surrogate_slope(u, threshold: float = 1.0):
    """sigma'(u) = 1 / (1 + |u - threshold|)^2, peaking at 1 on threshold."""
    u = np.asarray(u, dtype=float)
    return 1.0 / (1.0 + np.abs(u - threshold)) ** 2


def apical_error(u, apical_current, cell_type: str, threshold: float = 1.0):
    """Error carried on top of the base PSC: +sigma'(u) I_a for Pyr, -sigma'(u) I_a for PV."""
    _check_same("u", u, "I_a", apical_current)
    e = surrogate_slope(u, threshold) * np.asarray(apical_current, dtype=float)
    if cell_type == PYR:
        return e
    if cell_type == PV:
        return -e
    raise ContractError(f"cell_type must be {PYR!r} or {PV!r}, got {cell_type!r}")


def backward_psc(a_b, u, apical_current, cell_type: str, threshold: float = 1.0):
    """Backward PSC ``a_b + e`` of a two-compartment cell."""
    _check_same("a_b", a_b, "u", u)
    return np.asarray(a_b, dtype=float) + apical_error(u, apical_current, cell_type, threshold)
