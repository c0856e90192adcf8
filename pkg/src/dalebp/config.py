"""TOML run configuration.

A file has one table per concern; every key is optional::

    seed = 0
    output_dir = "runs/fc1"

    [network]
    layer_sizes = [784, 200, 10]
    timesteps = 5
    backward_mode = "idealized"

    [train]
    epochs = 20
    batch_size = 64

    [optimizer]
    lr = 5e-4

    [augment]
    enabled = false

    [experiment]          # free-form parameters of the experiment command
    ratios = [0.02, 0.05, 0.1, 0.2]
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .data import Augmentation
from .errors import ConfigurationError
from .learning import AdamWConfig
from .network import NetworkConfig


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    train_limit: int | None = None
    test_limit: int | None = None
    eval_batch: int = 1000
    checkpoint_every: int = 1


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    data_dir: str | None = None
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    augment: Augmentation = field(default_factory=Augmentation)
    experiment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"]["layer_sizes"] = list(self.network.layer_sizes)
        d["optimizer"]["betas"] = list(self.optimizer.betas)
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _build(cls, table: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(table) - known
    if unknown:
        raise ConfigurationError(f"[{where}] unknown keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**table)
    except TypeError as exc:
        raise ConfigurationError(f"[{where}] {exc}") from None


def from_dict(d: dict) -> RunConfig:
    d = dict(d)
    top = {k: d.pop(k) for k in ("seed", "output_dir", "data_dir") if k in d}
    net = dict(d.pop("network", {}))
    net.setdefault("seed", top.get("seed", 0))
    opt = dict(d.pop("optimizer", {}))
    if "betas" in opt:
        opt["betas"] = tuple(opt["betas"])
    cfg = RunConfig(
        **top,
        network=_build(NetworkConfig, net, "network"),
        train=_build(TrainConfig, d.pop("train", {}), "train"),
        optimizer=_build(AdamWConfig, opt, "optimizer"),
        augment=_build(Augmentation, d.pop("augment", {}), "augment"),
        experiment=dict(d.pop("experiment", {})),
    )
    if d:
        raise ConfigurationError(f"unknown top-level keys: {', '.join(sorted(d))}")
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    cfg = from_dict(raw)
    return cfg


def ensure_output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise ConfigurationError(f"output directory {out} is not writable: {exc}") from None
    return out
