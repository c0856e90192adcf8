"""Local plasticity rules and the optimizer that applies them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractError, NumericFault
from .weights import DaleMatrix


def hebbian_basal(e_post, a_pre, eta: float = 1.0):
    """Basal update ``eta * sum_t e_t (x) a_t``.

    ``e_post`` is ``(T, n_post)`` or ``(n_post,)`` and ``a_pre`` the
    matching signed presynaptic PSC. Returns ``(n_post, n_pre)``.
    """
    e = np.asarray(e_post, dtype=float)
    a = np.asarray(a_pre, dtype=float)
    if e.ndim == 1:
        e, a = e[None], a[None]
    if e.shape[:-1] != a.shape[:-1]:
        raise ContractError(f"e {e.shape} and a {a.shape} have different leading axes")
    e = e.reshape(-1, e.shape[-1])
    a = a.reshape(-1, a.shape[-1])
    return eta * (e.T @ a)


def anti_hebbian_apical(i_apical, a_pre, eta: float = 1.0):
    """Apical update ``-eta * sum_t I_a,t (x) a_t`` for a backward synapse."""
    return -hebbian_basal(i_apical, a_pre, eta)


@dataclass
class OptimizerState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_dict(self) -> dict:
        return {"step": self.step, "m": self.m, "v": self.v}


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    kind: str = "adamw"  # or "sgd": W += lr * update

    def __post_init__(self):
        if self.kind not in ("adamw", "sgd"):
            raise ConfigurationError(f"unknown optimizer {self.kind!r}")
        if self.lr <= 0 or not 0 <= self.betas[0] < 1 or not 0 <= self.betas[1] < 1 or self.eps <= 0:
            raise ConfigurationError("invalid optimizer hyper-parameters")


def adamw_step(params: dict[str, DaleMatrix], updates: dict[str, np.ndarray], state: OptimizerState,
               cfg: AdamWConfig = AdamWConfig()):
    """Apply local updates through AdamW, then project every Dale matrix.

    ``updates`` are ascent directions (the plasticity terms); AdamW sees
    their negation as its gradient. Raises NumericFault before touching any
    weight if an update is non-finite.
    """
    for name, u in updates.items():
        if name not in params:
            raise ContractError(f"update for unknown parameter {name!r}")
        if u.shape != params[name].shape:
            raise ContractError(f"{name}: update {u.shape} vs weights {params[name].shape}")
        if not np.isfinite(u).all():
            raise NumericFault(f"non-finite update for {name}", step=state.step)
    state.step += 1
    t = state.step
    b1, b2 = cfg.betas
    for name in sorted(updates):
        w = params[name]
        if cfg.kind == "sgd":
            w.values += cfg.lr * updates[name]
        else:
            g = -updates[name]
            m = state.m.setdefault(name, np.zeros_like(g))
            v = state.v.setdefault(name, np.zeros_like(g))
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            if cfg.weight_decay:
                w.values *= 1 - cfg.lr * cfg.weight_decay
            w.values -= cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        w.project_()
        if not np.isfinite(w.values).all():
            raise NumericFault(f"non-finite weights in {name}", step=t)


class PlasticityAccumulator:
    """Sums per-trial updates and returns their batch mean."""

    def __init__(self):
        self.total: dict[str, np.ndarray] = {}
        self.count = 0

    def add(self, updates: dict[str, np.ndarray], n_trials: int = 1):
        for k, u in updates.items():
            if k in self.total:
                self.total[k] += u
            else:
                self.total[k] = np.array(u, dtype=float)
        self.count += n_trials

    def mean(self) -> dict[str, np.ndarray]:
        if not self.count:
            raise ContractError("no trials accumulated")
        return {k: v / self.count for k, v in self.total.items()}

    def reset(self):
        self.total.clear()
        self.count = 0


def collect_updates(network, result) -> dict[str, np.ndarray]:
    """Name the basal and apical terms of a simulation result by parameter."""
    out = {}
    for layer, terms in zip(network.layers, result.basal):
        for m, u in zip(layer.forward_matrices, terms):
            out[m.name] = u
    out.update(result.apical)
    return out


def apply_batch(network, inputs, targets, indices, state: OptimizerState, cfg: AdamWConfig = AdamWConfig()):
    """One learning step on a mini-batch; returns the simulation result.

    Trials are reordered by dataset index before simulation so the update
    does not depend on presentation order within the batch.
    """
    inputs = np.asarray(inputs, dtype=float)
    targets = np.asarray(targets)
    indices = np.asarray(indices)
    if len(inputs) == 0:
        raise ContractError("empty batch")
    if not len(inputs) == len(targets) == len(indices):
        raise ContractError("inputs, targets and indices differ in length")
    order = np.argsort(indices, kind="stable")
    result = network.simulate(inputs[order], targets[order], learn=True)
    acc = PlasticityAccumulator()
    acc.add(collect_updates(network, result), len(order))
    adamw_step(network.parameters(), acc.mean(), state, cfg)
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    result.loss = result.loss[inv]
    result.output_sum = result.output_sum[inv]
    return result
