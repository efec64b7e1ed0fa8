"""Truncated tensor series: the graded coefficient container and its algebra."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import engine, lyndon


class ShapeMismatchError(ValueError):
    """Operands disagree on channels, depth, or block sizes."""


class DomainError(ValueError):
    """Input violates a mathematical precondition (unit scalar, path shape)."""


@dataclass(frozen=True)
class TruncatedTensorSeries:
    """Graded coefficients of a tensor series truncated at a fixed depth.

    ``levels[k-1]`` holds the ``channels**k`` level-``k`` coefficients in
    lexicographic multi-index order.  ``unit`` is the level-0 scalar: 1 for
    group-like series (signatures), 0 for Lie-like ones (logarithms).
    """

    channels: int
    depth: int
    unit: float
    levels: tuple

    def __post_init__(self):
        if self.channels < 1 or self.depth < 1:
            raise ShapeMismatchError(
                f"channels and depth must be positive, got ({self.channels}, {self.depth})")
        if len(self.levels) != self.depth:
            raise ShapeMismatchError(
                f"expected {self.depth} level blocks, got {len(self.levels)}")
        for k, block in enumerate(self.levels, start=1):
            if block.shape != (self.channels ** k,):
                raise ShapeMismatchError(
                    f"level {k} block has shape {block.shape}, "
                    f"expected ({self.channels ** k},)")
            if not np.all(np.isfinite(block)):
                raise DomainError(f"level {k} block contains non-finite coefficients")

    @classmethod
    def identity(cls, channels: int, depth: int) -> "TruncatedTensorSeries":
        """The multiplicative unit: signature of a single-point path."""
        return cls(channels, depth, 1.0,
                   tuple(engine.identity_levels((), channels, depth)))

    @classmethod
    def zero(cls, channels: int, depth: int) -> "TruncatedTensorSeries":
        """The additive zero (Lie-like)."""
        return cls(channels, depth, 0.0,
                   tuple(engine.identity_levels((), channels, depth)))

    @classmethod
    def from_levels(cls, unit: float, levels) -> "TruncatedTensorSeries":
        levels = tuple(np.asarray(lvl, dtype=float) for lvl in levels)
        channels = int(levels[0].shape[-1])
        return cls(channels, len(levels), float(unit), levels)

    def flatten(self) -> np.ndarray:
        """All stored coefficients as one vector (unit excluded)."""
        return np.concatenate(self.levels)

    def level(self, k: int) -> np.ndarray:
        return self.levels[k - 1]

    def allclose(self, other: "TruncatedTensorSeries",
                 rtol: float = 1e-12, atol: float = 1e-14) -> bool:
        if (self.channels, self.depth) != (other.channels, other.depth):
            return False
        if not math.isclose(self.unit, other.unit, rel_tol=rtol, abs_tol=atol):
            return False
        return all(np.allclose(a, b, rtol=rtol, atol=atol)
                   for a, b in zip(self.levels, other.levels))


def sig_dim(channels: int, depth: int) -> int:
    """Coefficient count of a truncated signature, unit excluded.

    ``(d**(m+1) - d) / (d - 1)`` for ``d > 1`` channels; ``m`` for ``d = 1``.
    """
    return engine.sig_width(channels, depth)


def _check_compatible(a: TruncatedTensorSeries, b: TruncatedTensorSeries):
    if (a.channels, a.depth) != (b.channels, b.depth):
        raise ShapeMismatchError(
            f"operands have (channels, depth) = ({a.channels}, {a.depth}) "
            f"vs ({b.channels}, {b.depth})")


def truncated_product(a: TruncatedTensorSeries,
                      b: TruncatedTensorSeries) -> TruncatedTensorSeries:
    """Truncated tensor product; concatenation of signatures when both are group-like."""
    _check_compatible(a, b)
    levels = engine.product(list(a.levels), list(b.levels), a.unit, b.unit)
    return TruncatedTensorSeries(a.channels, a.depth, a.unit * b.unit, tuple(levels))


def truncated_exp(v: TruncatedTensorSeries) -> TruncatedTensorSeries:
    """Tensor exponential of a Lie-like series."""
    if v.unit != 0.0:
        raise DomainError(f"exponential expects unit 0, got {v.unit}")
    levels = engine.exp_of_lie(list(v.levels))
    return TruncatedTensorSeries(v.channels, v.depth, 1.0, tuple(levels))


def truncated_log(s: TruncatedTensorSeries) -> TruncatedTensorSeries:
    """Tensor logarithm of a group-like series."""
    if s.unit != 1.0:
        raise DomainError(f"logarithm expects unit 1, got {s.unit}")
    levels = engine.log_of_group(list(s.levels))
    return TruncatedTensorSeries(s.channels, s.depth, 0.0, tuple(levels))


def segment_signature(start, end, depth: int) -> TruncatedTensorSeries:
    """Signature of the straight segment from ``start`` to ``end``."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    if start.shape != end.shape or start.ndim != 1:
        raise ShapeMismatchError(
            f"segment endpoints must be equal-length vectors, got {start.shape} and {end.shape}")
    levels = engine.segment_exp(end - start, depth)
    return TruncatedTensorSeries(start.shape[0], depth, 1.0, tuple(levels))
