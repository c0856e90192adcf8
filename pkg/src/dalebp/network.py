"""
Layered Dale network with spike-based error routing.

A network is ``[n_in, hidden..., n_out]``. Each hidden layer is split
half-half into Pyr and PV cells; the output layer is Pyr-only. The first
layer reads the input channels through a mixed-sign matrix; every other
forward matrix is a non-negative DaleMatrix, one from the presynaptic Pyr
cells and one from the presynaptic PV cells.

With the MC2/MC3 inhibitory variants a hidden PV cell receives only its
paired Pyr cell (and so fires in lock-step with it); with MC1 it is an
independent forward neuron.

Every simulated step runs, in order: the forward sweep (layer by layer,
same-step propagation), the output error, and the top-down error sweep.
Two backward modes share the forward dynamics:

``idealized``
    apical currents are ``B_+ e_+ + B_- e_-`` computed directly;
``microcircuit``
    apical currents are produced by SOM / PV / auxiliary cells whose base
    PSCs cancel through the backward weights.

With aligned backward weights the two agree to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import microcircuits as mc
from .errors import ConfigurationError, ContractError, NumericFault
from .microcircuits import MC1, MC2, MC3, ExcBackwardCircuit, InhBackwardCircuit
from .neuron import (
    EXCITATORY,
    INHIBITORY,
    PV,
    PYR,
    NeuronParams,
    PopulationState,
    apical_error,
)
from .rng import INIT, substream
from .weights import MIXED, DaleMatrix, init_kaiming

IDEALIZED = "idealized"
MICROCIRCUIT = "microcircuit"


@dataclass
class NetworkConfig:
    layer_sizes: tuple = (784, 200, 10)
    timesteps: int = 5
    backward_mode: str = IDEALIZED
    inh_variant: str = MC2
    tau_m: float = 4.0
    tau_s: float = 2.0
    threshold: float = 1.0
    init: str = "uniform"
    seed: int = 0
    live_alignment: bool = False
    w_au: float = 1.0
    pv_slope: float = 1.0

    def __post_init__(self):
        self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ConfigurationError(f"layer_sizes needs an input and an output size, got {self.layer_sizes}")
        for n in self.layer_sizes[1:-1]:
            if n % 2:
                raise ConfigurationError(f"hidden layer size {n} is odd; layers split half Pyr, half PV")
        if self.timesteps < 1:
            raise ConfigurationError("timesteps must be >= 1")
        if self.backward_mode not in (IDEALIZED, MICROCIRCUIT):
            raise ConfigurationError(f"unknown backward_mode {self.backward_mode!r}")
        if self.inh_variant not in mc.VARIANTS:
            raise ConfigurationError(f"unknown inh_variant {self.inh_variant!r}")
        if self.live_alignment and self.backward_mode != MICROCIRCUIT:
            raise ConfigurationError("live_alignment needs backward_mode='microcircuit'")

    @property
    def neuron(self) -> NeuronParams:
        return NeuronParams(self.tau_m, self.tau_s, self.threshold)


@dataclass
class LayerAssembly:
    """One non-input layer.

    ``w_pyr`` maps presynaptic Pyr PSCs (or, for the first layer, input
    channels) onto this layer's forward targets; ``w_pv`` maps presynaptic
    PV PSCs (None for the first layer and when the layer below has no PV).
    Forward targets are the Pyr cells, plus the PV cells under MC1.
    """

    index: int
    n_pyr: int
    n_pv: int
    w_pyr: DaleMatrix
    w_pv: DaleMatrix | None
    exc_circuit: ExcBackwardCircuit | None = None
    inh_circuit: InhBackwardCircuit | None = None
    is_input_layer: bool = False
    is_output: bool = False
    variant: str = MC2

    def __post_init__(self):
        if not self.is_output and self.n_pyr != self.n_pv:
            raise ContractError(f"layer {self.index}: hidden layers need n_pyr == n_pv")
        for m in self.forward_matrices:
            if m.is_dale and (m.values < 0).any():
                raise ContractError(f"{m.name}: Dale invariant violated")

    @property
    def size(self) -> int:
        return self.n_pyr + self.n_pv

    @property
    def pv_is_forward(self) -> bool:
        return self.n_pv > 0 and self.variant == MC1

    @property
    def n_targets(self) -> int:
        return self.n_pyr + (self.n_pv if self.pv_is_forward else 0)

    @property
    def has_som(self) -> bool:
        """True when the Pyr cells project back through the Pyr/SOM circuit."""
        return self.exc_circuit is not None

    @property
    def forward_matrices(self):
        return [m for m in (self.w_pyr, self.w_pv) if m is not None]

    @property
    def b_plus(self) -> DaleMatrix | None:
        if self.exc_circuit is not None:
            return self.exc_circuit.w_back_pyr
        if self.inh_circuit is not None and self.inh_circuit.variant == MC3:
            return self.inh_circuit.w_back_pair
        return None

    @property
    def b_minus(self) -> DaleMatrix | None:
        if self.inh_circuit is not None and self.inh_circuit.variant in (MC1, MC3):
            return self.inh_circuit.w_back_pv
        return None

    @property
    def backward_matrices(self):
        out = []
        if self.exc_circuit is not None:
            out += [self.exc_circuit.w_back_pyr, self.exc_circuit.w_back_som]
        if self.inh_circuit is not None:
            out += [m for m in (self.inh_circuit.w_back_pv, self.inh_circuit.w_back_pair) if m is not None]
        # MC3 shares w_back_pair with no exc circuit; drop duplicates by identity
        seen, uniq = set(), []
        for m in out:
            if id(m) not in seen:
                seen.add(id(m))
                uniq.append(m)
        return uniq

    def forward_matrix(self) -> np.ndarray:
        """Concatenated magnitudes ``[W_Pyr | W_PV]`` (targets x presynaptic cells)."""
        return np.hstack([m.values for m in self.forward_matrices])

    def backward_matrix(self) -> np.ndarray | None:
        """Backward weights matched to the forward targets, shape (presynaptic cells, targets)."""
        if self.b_plus is None:
            return None
        if self.pv_is_forward:
            return np.hstack([self.b_plus.values, self.b_minus.values])
        return self.b_plus.values


def forward_step(layer: LayerAssembly, a_plus_prev, a_minus_prev=None):
    """Basal input current ``W_Pyr a_+ + W_PV a_-`` onto the layer's forward targets.

    ``a_minus_prev`` carries its sign already (entries <= 0).
    """
    a_plus_prev = np.asarray(a_plus_prev, dtype=float)
    if a_plus_prev.shape[-1] != layer.w_pyr.shape[1]:
        raise ContractError(
            f"layer {layer.index}: a_+ has {a_plus_prev.shape[-1]} entries, W_Pyr expects {layer.w_pyr.shape[1]}"
        )
    current = a_plus_prev @ layer.w_pyr.values.T
    if layer.w_pv is not None:
        if a_minus_prev is None:
            raise ContractError(f"layer {layer.index}: missing a_- for W_PV")
        a_minus_prev = np.asarray(a_minus_prev, dtype=float)
        if a_minus_prev.shape[-1] != layer.w_pv.shape[1]:
            raise ContractError(
                f"layer {layer.index}: a_- has {a_minus_prev.shape[-1]} entries, W_PV expects {layer.w_pv.shape[1]}"
            )
        if (a_minus_prev > 0).any():
            raise ContractError("a_- must be signed (non-positive)")
        current = current + a_minus_prev @ layer.w_pv.values.T
    return current


def output_error(a_out, target_class, n_classes=None):
    """Per-step loss ``0.5 * ||a_out - y||^2`` and injected apical current ``y - a_out``.

    ``a_out`` has shape ``(..., n_out)`` or ``(T, ..., n_out)``; ``target_class``
    is an int or an integer array matching the batch axes. Returns
    ``(loss, I_a)`` where ``loss`` sums over the output axis only.
    """
    a_out = np.asarray(a_out, dtype=float)
    n = a_out.shape[-1] if n_classes is None else n_classes
    target = np.asarray(target_class)
    if target.dtype.kind not in "iu" or (target < 0).any() or (target >= n).any():
        raise ContractError(f"target class {target_class!r} outside [0, {n})")
    y = np.eye(n)[target]
    i_a = y - a_out
    return 0.5 * np.sum(i_a * i_a, axis=-1), i_a


def alignment_angle(w_forward, b_backward) -> float:
    """Angle in degrees between flattened ``W^T`` and ``B``."""
    w = w_forward.values if isinstance(w_forward, DaleMatrix) else np.asarray(w_forward, dtype=float)
    b = b_backward.values if isinstance(b_backward, DaleMatrix) else np.asarray(b_backward, dtype=float)
    if w.T.shape != b.shape:
        raise ContractError(f"W^T {w.T.shape} and B {b.shape} are not shape-compatible")
    x, y = w.T.ravel(), b.ravel()
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0 or ny == 0:
        raise ContractError("angle undefined for a zero matrix")
    cos = np.clip(x @ y / (nx * ny), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


@dataclass
class TrialTrace:
    """Per-step record of one simulation (leading axis = step).

    Entries of ``spikes``, ``psc`` and ``apical`` are lists over layers of
    arrays shaped ``(T, ..., n_cells)`` with Pyr cells first, then PV.
    """

    spikes: list
    psc: list
    apical: list
    u: list
    loss: np.ndarray
    output_psc: np.ndarray

    @property
    def timesteps(self) -> int:
        return self.output_psc.shape[0]


@dataclass
class SimResult:
    loss: np.ndarray
    output_sum: np.ndarray
    basal: list = field(default_factory=list)
    apical: dict = field(default_factory=dict)
    trace: TrialTrace | None = None

    @property
    def prediction(self) -> np.ndarray:
        return np.argmax(self.output_sum, axis=-1)


class _LayerState:
    """Populations of one layer for one batch of trials."""

    def __init__(self, layer: LayerAssembly, batch, cfg: NetworkConfig, mode: str):
        shape = lambda n: (batch, n)  # noqa: E731
        self.pyr = PopulationState.zeros(shape(layer.n_pyr), cfg.neuron, EXCITATORY)
        self.pv = None
        self.pair = None
        self.som = None
        self.mc1 = None
        if layer.n_pv:
            if layer.pv_is_forward:
                self.pv = PopulationState.zeros(shape(layer.n_pv), cfg.neuron, INHIBITORY)
            else:
                self.pair = mc.PairedPV(shape(layer.n_pv), layer.inh_circuit)
                self.pv = self.pair.pop
        if mode == MICROCIRCUIT:
            if layer.has_som:
                self.som = mc.som_population(shape(layer.n_pyr), layer.exc_circuit)
            if layer.inh_circuit is not None and layer.inh_circuit.variant == MC1:
                self.mc1 = mc.MC1State(shape(layer.n_pv), layer.inh_circuit)


class Network:
    def __init__(self, config: NetworkConfig, layers: list[LayerAssembly]):
        self.config = config
        self.layers = layers

    @classmethod
    def build(cls, config: NetworkConfig, rng: np.random.Generator | None = None) -> Network:
        rng = rng if rng is not None else substream(config.seed, INIT)
        sizes = config.layer_sizes
        n_layers = len(sizes) - 1
        variant = config.inh_variant
        layers = []
        prev_pyr = prev_pv = None
        for l in range(n_layers):
            is_output = l == n_layers - 1
            n_pyr = sizes[l + 1] if is_output else sizes[l + 1] // 2
            n_pv = 0 if is_output else sizes[l + 1] // 2
            n_targets = n_pyr + (n_pv if variant == MC1 else 0)
            if l == 0:
                w_pyr = init_kaiming((n_targets, sizes[0]), config.init, rng, MIXED, f"L{l}.w_in")
                w_pv = None
            else:
                w_pyr = init_kaiming((n_targets, prev_pyr), config.init, rng, EXCITATORY, f"L{l}.w_pyr")
                w_pv = init_kaiming((n_targets, prev_pv), config.init, rng, INHIBITORY, f"L{l}.w_pv")
            exc = inh = None
            below = (prev_pyr or 0) + (prev_pv or 0)
            som_out = config.tau_s
            if l > 0 and (is_output or variant in (MC1, MC2)):
                b = init_kaiming((below, n_pyr), config.init, rng, EXCITATORY, f"L{l}.w_back_pyr")
                if config.live_alignment:
                    b_som = init_kaiming((below, n_pyr), config.init, rng, INHIBITORY, f"L{l}.w_back_som")
                else:
                    b_som = DaleMatrix(b.values.copy(), INHIBITORY, f"L{l}.w_back_som")
                exc = ExcBackwardCircuit.paired(b, b_som, out_tau_s=som_out)
            if n_pv:
                inh = InhBackwardCircuit(
                    variant=variant,
                    aux_out_tau_s=config.tau_s,
                    pv_params=NeuronParams(1.0, config.tau_s, 0.9, True),
                    w_au=config.w_au,
                    pv_slope=config.pv_slope,
                )
                if l > 0 and variant == MC1:
                    inh.w_back_pv = init_kaiming((below, n_pv), config.init, rng, INHIBITORY, f"L{l}.w_back_pv")
                    inh.w_back_pair = (
                        init_kaiming((below, n_pv), config.init, rng, EXCITATORY, f"L{l}.w_back_pyrpv")
                        if config.live_alignment
                        else DaleMatrix(inh.w_back_pv.values.copy(), EXCITATORY, f"L{l}.w_back_pyrpv")
                    )
                elif l > 0 and variant == MC3:
                    inh.w_back_pair = init_kaiming((below, n_pyr), config.init, rng, EXCITATORY, f"L{l}.w_back_pyr")
                    inh.w_back_pv = (
                        init_kaiming((below, n_pv), config.init, rng, INHIBITORY, f"L{l}.w_back_pv")
                        if config.live_alignment
                        else DaleMatrix(inh.w_back_pair.values.copy(), INHIBITORY, f"L{l}.w_back_pv")
                    )
                inh.check()
            if exc is not None:
                exc.check()
            layers.append(
                LayerAssembly(l, n_pyr, n_pv, w_pyr, w_pv, exc, inh, is_input_layer=l == 0,
                              is_output=is_output, variant=variant)
            )
            prev_pyr, prev_pv = n_pyr, n_pv
        return cls(config, layers)

    # -- parameters -------------------------------------------------------

    def forward_parameters(self) -> dict[str, DaleMatrix]:
        return {m.name: m for layer in self.layers for m in layer.forward_matrices}

    def backward_parameters(self) -> dict[str, DaleMatrix]:
        return {m.name: m for layer in self.layers for m in layer.backward_matrices}

    def parameters(self) -> dict[str, DaleMatrix]:
        return {**self.forward_parameters(), **self.backward_parameters()}

    def copy(self) -> Network:
        import copy as _copy

        return _copy.deepcopy(self)

    def angles(self) -> list[float]:
        """Alignment angle of every layer that has a backward projection."""
        out = []
        for layer in self.layers:
            b = layer.backward_matrix()
            if b is not None:
                out.append(alignment_angle(layer.forward_matrix(), b))
        return out

    def align_backward(self):
        """Copy the excitatory backward weights onto their cancelling partners."""
        for layer in self.layers:
            if layer.exc_circuit is not None:
                layer.exc_circuit.w_back_som.values[...] = layer.exc_circuit.w_back_pyr.values
            inh = layer.inh_circuit
            if inh is not None and inh.w_back_pv is not None:
                if inh.variant == MC1:
                    inh.w_back_pair.values[...] = inh.w_back_pv.values
                else:
                    inh.w_back_pv.values[...] = inh.w_back_pair.values

    # -- simulation -------------------------------------------------------

    def simulate(self, inputs, targets=None, *, learn=False, record=False, mode=None, check_finite=True):
        """Simulate a batch of trials.

        ``inputs`` is ``(B, n_in)`` (held constant for all steps) or
        ``(B, T, n_in)``. With ``targets`` the output error is injected and
        errors are routed top-down every step; ``learn`` additionally
        accumulates the basal Hebbian terms (and, under live alignment,
        the apical anti-Hebbian terms) summed over the batch.
        """
        cfg = self.config
        mode = cfg.backward_mode if mode is None else mode
        if mode == MICROCIRCUIT and any(
            l.index > 0 and l.exc_circuit is None and l.inh_circuit is None for l in self.layers
        ):
            raise ConfigurationError("microcircuit mode needs backward circuits on every upper layer")
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim not in (2, 3) or inputs.shape[-1] != cfg.layer_sizes[0]:
            raise ContractError(f"inputs must be (B, {cfg.layer_sizes[0]}) or (B, T, {cfg.layer_sizes[0]})")
        T = cfg.timesteps if inputs.ndim == 2 else inputs.shape[1]
        batch = inputs.shape[0]
        th = cfg.threshold
        layers = self.layers
        n_layers = len(layers)
        states = [_LayerState(layer, batch, cfg, mode) for layer in layers]
        n_out = layers[-1].n_pyr
        if targets is not None:
            targets = np.asarray(targets)
            y = np.eye(n_out)[targets] if targets.ndim == 1 else np.asarray(targets, dtype=float)
        if learn and targets is None:
            raise ContractError("learning needs targets")
        basal = [[np.zeros(m.shape) for m in layer.forward_matrices] for layer in layers] if learn else []
        apical = {}
        live = learn and cfg.live_alignment
        if live:
            apical = {m.name: np.zeros(m.shape) for layer in layers for m in layer.backward_matrices}
        loss = np.zeros(batch)
        out_sum = np.zeros((batch, n_out))
        rec = None
        if record:
            rec = {k: [[] for _ in layers] for k in ("spikes", "psc", "apical", "u")}
            rec["loss"], rec["out"] = [], []

        for t in range(T):
            x_t = inputs if inputs.ndim == 2 else inputs[:, t]
            pres = []
            # forward sweep
            for layer, st in zip(layers, states):
                if layer.index == 0:
                    pre = (x_t,)
                    current = forward_step(layer, x_t)
                else:
                    below = states[layer.index - 1]
                    pre = (below.pyr.psc,) if below.pv is None else (below.pyr.psc, below.pv.psc)
                    current = forward_step(layer, *pre)
                pres.append(pre)
                st.pyr.step(current[:, : layer.n_pyr])
                if layer.pv_is_forward:
                    st.pv.step(current[:, layer.n_pyr:])
                elif st.pair is not None:
                    st.pair.step(st.pyr.spikes)
                if st.som is not None:
                    mc.som_pointwise_step(st.pyr.spikes, layer.exc_circuit, st.som, check=False)
                if st.mc1 is not None:
                    mc.inh_mc1_step(st.pv.spikes, layer.inh_circuit, st.mc1)
            if check_finite and not all(np.isfinite(st.pyr.u_half).all() for st in states):
                raise NumericFault("non-finite membrane potential", step=t)
            a_out = states[-1].pyr.a
            out_sum += a_out
            if targets is not None:
                i_a = y - a_out
                step_loss = 0.5 * np.sum(i_a * i_a, axis=-1)
                if check_finite and not np.isfinite(step_loss).all():
                    raise NumericFault("non-finite output", step=t)
                loss += step_loss
                states[-1].pyr.apical_current = i_a
                # top-down sweep
                for l in range(n_layers - 1, -1, -1):
                    layer, st = layers[l], states[l]
                    e_pyr, e_pv = _layer_errors(layer, st, mode, th)
                    if learn:
                        e_t = e_pyr if not layer.pv_is_forward else np.hstack([e_pyr, e_pv])
                        for acc, p in zip(basal[l], pres[l]):
                            acc += e_t.T @ p
                    if l > 0:
                        below = states[l - 1]
                        current = self._backward(layer, st, e_pyr, e_pv, mode, th, apical if live else None)
                        below.pyr.apical_current = current[:, : layers[l - 1].n_pyr]
                        if below.pv is not None:
                            below.pv.apical_current = current[:, layers[l - 1].n_pyr:]
            if record:
                for l, st in enumerate(states):
                    pops = [st.pyr] + ([st.pv] if st.pv is not None else [])
                    rec["spikes"][l].append(np.hstack([p.spikes for p in pops]))
                    rec["psc"][l].append(np.hstack([p.psc for p in pops]))
                    rec["apical"][l].append(np.hstack([p.apical_current for p in pops]))
                    rec["u"][l].append(np.hstack([p.u_half for p in pops]))
                rec["out"].append(a_out.copy())
                rec["loss"].append(loss.copy())

        result = SimResult(loss=loss, output_sum=out_sum, basal=basal, apical=apical)
        if record:
            stack = lambda xs: [np.stack(v) for v in xs]  # noqa: E731
            result.trace = TrialTrace(
                spikes=stack(rec["spikes"]),
                psc=stack(rec["psc"]),
                apical=stack(rec["apical"]),
                u=stack(rec["u"]),
                loss=np.stack(rec["loss"]),
                output_psc=np.stack(rec["out"]),
            )
        return result

    def _backward(self, layer, st, e_pyr, e_pv, mode, th, apical_acc):
        """Top-down current from ``layer`` onto the layer below."""
        inh = layer.inh_circuit
        if mode == IDEALIZED:
            current = e_pyr @ layer.b_plus.values.T
            if layer.b_minus is not None:
                current = current + e_pv @ layer.b_minus.values.T
            return current
        current = 0.0
        if layer.exc_circuit is not None:
            a_back_pyr = st.pyr.psc + e_pyr
            current = mc.exc_backward_current(layer.exc_circuit, a_back_pyr, st.som.psc)
        if inh is not None and inh.variant == MC1:
            current = current + mc.inh_mc1_backward(st.pv, st.mc1, inh, th)
        elif inh is not None and inh.variant == MC3:
            current = current + mc.inh_mc3_backward(st.pyr, st.pv, inh, th)[0]
        if apical_acc is not None:
            _anti_hebbian_accumulate(layer, st, e_pyr, e_pv, current, apical_acc)
        return current

    def predict(self, inputs, batch_size=1000):
        inputs = np.asarray(inputs, dtype=float)
        out = [self.simulate(inputs[i:i + batch_size]).prediction for i in range(0, len(inputs), batch_size)]
        return np.concatenate(out) if out else np.zeros(0, dtype=int)


def _layer_errors(layer: LayerAssembly, st: _LayerState, mode: str, th: float):
    """Apical errors ``(e_pyr, e_pv)`` of one layer from its current apical inputs."""
    inh = layer.inh_circuit
    if layer.n_pv == 0 or inh is None:
        return apical_error(st.pyr.u_half, st.pyr.apical_current, PYR, th), None
    if inh.variant == MC2:
        if mode == MICROCIRCUIT:
            a_back, merge = mc.inh_mc2_backward(st.pyr, st.pv, inh, th)
            return a_back - st.pyr.psc, None
        merge = st.pyr.apical_current - inh.w_au * inh.pv_slope * st.pv.apical_current
        return apical_error(st.pyr.u_half, merge, PYR, th), None
    e_pyr = apical_error(st.pyr.u_half, st.pyr.apical_current, PYR, th)
    if inh.variant == MC3:
        return e_pyr, inh.pv_error(st.pv)
    return e_pyr, apical_error(st.pv.u_half, st.pv.apical_current, PV, th)


def _anti_hebbian_accumulate(layer, st, e_pyr, e_pv, current, acc):
    """Accumulate ``-I_a (x) a`` for every backward synapse of ``layer`` (summed over batch)."""
    inh = layer.inh_circuit
    if layer.exc_circuit is not None:
        c = layer.exc_circuit
        acc[c.w_back_pyr.name] -= current.T @ (st.pyr.psc + e_pyr)
        acc[c.w_back_som.name] -= current.T @ st.som.psc
    if inh is not None and inh.variant == MC1:
        acc[inh.w_back_pv.name] -= current.T @ (st.pv.psc + e_pv)
        acc[inh.w_back_pair.name] -= current.T @ st.mc1.pyr.psc
    elif inh is not None and inh.variant == MC3:
        acc[inh.w_back_pair.name] -= current.T @ (st.pyr.psc + e_pyr)
        acc[inh.w_back_pv.name] -= current.T @ (st.pv.psc + e_pv)


def backward_step(network: Network, layer_index: int, states=None, mode=None):
    """Apical current delivered by layer ``layer_index`` onto the layer below, for given states.

    Convenience wrapper over one top-down step; ``states`` are the
    per-layer populations from :meth:`Network.simulate`'s bookkeeping.
    """
    layer = network.layers[layer_index]
    if layer_index == 0:
        raise ContractError("the first layer has no backward projection")
    st = states[layer_index]
    mode = network.config.backward_mode if mode is None else mode
    e_pyr, e_pv = _layer_errors(layer, st, mode, network.config.threshold)
    return network._backward(layer, st, e_pyr, e_pv, mode, network.config.threshold, None)


def run_trial(network: Network, input_currents, target, mode=None) -> TrialTrace:
    """Simulate one presentation and return its full trace (batch axis removed)."""
    x = np.asarray(input_currents, dtype=float)
    if x.ndim == 1:
        x = np.broadcast_to(x, (network.config.timesteps, x.shape[0]))
    if x.ndim != 2:
        raise ContractError("input_currents must be (T, n_in) or (n_in,)")
    res = network.simulate(x[None], np.array([target]), record=True, mode=mode)
    tr = res.trace
    sq = lambda xs: [v[:, 0] for v in xs]  # noqa: E731
    return TrialTrace(sq(tr.spikes), sq(tr.psc), sq(tr.apical), sq(tr.u), tr.loss[:, 0], tr.output_psc[:, 0])


def fa_quadratic_form(layer: LayerAssembly, delta) -> np.ndarray:
    """``delta^T W B delta`` per trial for target-error rows ``delta`` of shape (..., n_targets).

    Positive values mean the backward weights deliver an error with a
    positive projection on the true backpropagated one.
    """
    b = layer.backward_matrix()
    if b is None:
        raise ContractError(f"layer {layer.index} has no backward projection")
    m = layer.forward_matrix() @ b
    delta = np.asarray(delta, dtype=float)
    return np.einsum("...i,ij,...j->...", delta, m, delta)
