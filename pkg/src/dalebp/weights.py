"""
Weight matrices under Dale's principle.

A :class:`DaleMatrix` stores non-negative magnitudes, shape ``(post, pre)``,
and records the sign of the presynaptic population. The only exemption is
the input projection, whose entries may take either sign (``MIXED``).
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError

log = logging.getLogger(__name__)

EXCITATORY = 1
INHIBITORY = -1
MIXED = 0

_SIGNS = {EXCITATORY: "+", INHIBITORY: "-", MIXED: "mixed"}


@dataclass
class DaleMatrix:
    values: np.ndarray
    pre_sign: int = EXCITATORY
    name: str = ""

    def __post_init__(self):
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ContractError(f"{self.name or 'matrix'}: expected 2-D values, got {self.values.ndim}-D")
        if self.pre_sign not in _SIGNS:
            raise ContractError(f"pre_sign must be +1, -1 or 0 (mixed), got {self.pre_sign!r}")
        if self.is_dale and (self.values < 0).any():
            raise ContractError(f"{self.name or 'matrix'}: negative entry in a Dale matrix")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def is_dale(self) -> bool:
        return self.pre_sign != MIXED

    @property
    def signed(self) -> np.ndarray:
        """Effective signed weights: magnitude times presynaptic sign."""
        if self.pre_sign == MIXED:
            return self.values
        return self.pre_sign * self.values

    def copy(self, name: str | None = None) -> DaleMatrix:
        return DaleMatrix(self.values.copy(), self.pre_sign, self.name if name is None else name)

    def add_(self, delta) -> DaleMatrix:
        """In-place ``values += delta`` followed by the Dale projection."""
        delta = np.asarray(delta, dtype=float)
        if delta.shape != self.shape:
            raise ContractError(f"{self.name}: update shape {delta.shape} != {self.shape}")
        self.values += delta
        return self.project_()

    def project_(self) -> DaleMatrix:
        if self.is_dale:
            np.maximum(self.values, 0.0, out=self.values)
        return self

    def to_bytes(self) -> bytes:
        name = self.name.encode()
        head = struct.pack("<H", len(name)) + name
        head += struct.pack("<bB", self.pre_sign, 2) + struct.pack("<2Q", *self.shape)
        return head + np.ascontiguousarray(self.values, dtype="<f8").tobytes()

    @classmethod
    def from_buffer(cls, buf: bytes, offset: int = 0) -> tuple[DaleMatrix, int]:
        """Decode one matrix at ``offset``; returns it and the offset just past it."""
        try:
            (n,) = struct.unpack_from("<H", buf, offset)
            offset += 2
            name = bytes(buf[offset:offset + n]).decode()
            offset += n
            sign, ndim = struct.unpack_from("<bB", buf, offset)
            offset += 2
            if ndim != 2:
                raise ParseError(f"matrix {name!r}: ndim {ndim} != 2", offset - 1)
            rows, cols = struct.unpack_from("<2Q", buf, offset)
            offset += 16
        except struct.error as exc:
            raise ParseError(f"truncated matrix header: {exc}", offset) from None
        nbytes = rows * cols * 8
        if offset + nbytes > len(buf):
            raise ParseError(
                f"matrix {name!r}: need {nbytes} data bytes, {len(buf) - offset} available", offset
            )
        values = np.frombuffer(buf, dtype="<f8", count=rows * cols, offset=offset).reshape(rows, cols)
        return cls(values.astype(float), sign, name), offset + nbytes

    def __repr__(self):
        return f"DaleMatrix(name={self.name!r}, shape={self.shape}, pre_sign={_SIGNS[self.pre_sign]})"


def init_kaiming(shape, variant: str = "uniform", seed=None, pre_sign: int = EXCITATORY, name: str = ""):
    """He initialization with fan-in scaling.

    ``seed`` may be an int or a ``numpy.random.Generator``. For Dale
    matrices the absolute value of the draw is kept, so the scale of the
    initializer survives the positivity constraint.
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 2 or min(shape) < 0:
        raise ContractError(f"shape must be (post, pre) with non-negative sizes, got {shape}")
    fan_in = shape[1]
    if fan_in == 0:
        raise ContractError("zero fan-in: cannot scale the initializer")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if variant == "uniform":
        bound = np.sqrt(6.0 / fan_in)
        values = rng.uniform(-bound, bound, size=shape)
    elif variant == "normal":
        values = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    else:
        raise ContractError(f"unknown kaiming variant {variant!r}")
    if pre_sign != MIXED:
        values = np.abs(values)
    return DaleMatrix(values, pre_sign, name)


def project_dale(m: DaleMatrix) -> DaleMatrix:
    """Clamp negative entries to zero (identity for mixed-sign matrices)."""
    v = np.maximum(m.values, 0.0) if m.is_dale else m.values.copy()
    return DaleMatrix(v, m.pre_sign, m.name)


def doubly_normalize(m: DaleMatrix, target_sum: float = 1.0, iters: int = 50, tol: float = 1e-6) -> DaleMatrix:
    """Alternate row and column rescaling until all sums sit within ``tol`` of ``target_sum``.

    Only positive per-row/per-column factors are applied, so the zero
    pattern and every cross-ratio ``w_ij w_kl / (w_il w_kj)`` are preserved.
    """
    w = np.array(m.values, dtype=float)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ContractError(f"doubly_normalize needs a square matrix, got {w.shape}")
    if (w < 0).any():
        raise ContractError("doubly_normalize needs non-negative entries")
    if (w.sum(axis=1) <= 0).any() or (w.sum(axis=0) <= 0).any():
        raise ContractError("zero row or column: matrix cannot be normalized")
    for _ in range(iters):
        w *= (target_sum / w.sum(axis=1))[:, None]
        w *= (target_sum / w.sum(axis=0))[None, :]
        if np.abs(w.sum(axis=1) - target_sum).max() <= tol:
            break
    else:
        log.debug("doubly_normalize: %d iterations without reaching tol %g", iters, tol)
    return DaleMatrix(w, m.pre_sign, m.name)
