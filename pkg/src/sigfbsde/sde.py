"""Batch simulation of state paths on a fine grid with coarse snapshots.

Brownian increments come from counter-based per-path streams (Philox keyed
by ``(seed, path index)``), so a path is bit-identical for a given key no
matter the batch size or the order paths are generated in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """Grid parameters are inconsistent."""


class ModelError(ValueError):
    """Model parameters are invalid."""


MODEL_KINDS = ("geometric", "arithmetic-unit")


@dataclass(frozen=True)
class GridSpec:
    """Dual simulation grid: ``n_fine`` Euler steps, ``n_coarse`` segments."""

    horizon: float
    n_fine: int
    n_coarse: int

    def __post_init__(self):
        if self.horizon <= 0:
            raise GridError(f"horizon must be positive, got {self.horizon}")
        if self.n_fine < 1 or self.n_coarse < 1:
            raise GridError(
                f"step counts must be positive, got n_fine={self.n_fine}, "
                f"n_coarse={self.n_coarse}")
        if self.n_fine % self.n_coarse != 0:
            raise GridError(
                f"n_coarse={self.n_coarse} does not divide n_fine={self.n_fine}")

    @property
    def h(self) -> float:
        return self.horizon / self.n_fine

    @property
    def fine_per_segment(self) -> int:
        return self.n_fine // self.n_coarse

    @property
    def dt(self) -> float:
        return self.horizon / self.n_coarse


@dataclass(frozen=True)
class ModelSpec:
    """State dynamics: per-asset geometric Brownian motion or unit-diffusion.

    ``geometric``: dX_i = rate * X_i dt + sigma_i * X_i dW_i.
    ``arithmetic-unit``: dX = dW (rate and sigma ignored).
    Brownian components are independent, one per asset.
    """

    kind: str
    x0: tuple
    rate: float = 0.0
    sigma: tuple = ()

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ModelError(f"unknown model kind {self.kind!r}; expected {MODEL_KINDS}")
        if len(self.x0) < 1:
            raise ModelError("x0 must have at least one component")
        if self.kind == "geometric":
            if len(self.sigma) != len(self.x0):
                raise ModelError(
                    f"need one sigma per asset: got {len(self.sigma)} "
                    f"for {len(self.x0)} assets")
            if any(s < 0 for s in self.sigma):
                raise ModelError("volatilities must be nonnegative")

    @classmethod
    def geometric(cls, x0, rate, sigma, dim: int = 1) -> "ModelSpec":
        """Equal-parameter basket helper; scalars broadcast to ``dim`` assets."""
        x0s = tuple(float(x0) for _ in range(dim)) if np.isscalar(x0) else tuple(x0)
        sig = tuple(float(sigma) for _ in range(len(x0s))) if np.isscalar(sigma) else tuple(sigma)
        return cls("geometric", x0s, float(rate), sig)

    @classmethod
    def arithmetic_unit(cls, x0, dim: int = 1) -> "ModelSpec":
        x0s = tuple(float(x0) for _ in range(dim)) if np.isscalar(x0) else tuple(x0)
        return cls("arithmetic-unit", x0s)

    @property
    def dim(self) -> int:
        return len(self.x0)


@dataclass
class PathBatch:
    """Simulated fine-grid states plus the Brownian increments that drove them."""

    states: np.ndarray         # (B, n_fine+1, d)
    brownian_fine: np.ndarray  # (B, n_fine, d)
    grid: GridSpec
    seed: int
    path_ids: np.ndarray = field(default=None)

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]


def _euler_states(model: ModelSpec, h: float, increments: np.ndarray) -> np.ndarray:
    """Run the explicit Euler recursion for a block of paths."""
    batch, n, d = increments.shape
    states = np.empty((batch, n + 1, d))
    states[:, 0, :] = np.asarray(model.x0, dtype=float)
    if model.kind == "arithmetic-unit":
        for i in range(n):
            states[:, i + 1, :] = states[:, i, :] + increments[:, i, :]
    else:
        r = model.rate
        sig = np.asarray(model.sigma, dtype=float)
        for i in range(n):
            x = states[:, i, :]
            states[:, i + 1, :] = x + r * x * h + sig * x * increments[:, i, :]
    return states


def brownian_increments(grid: GridSpec, dim: int, seed: int,
                        path_ids: np.ndarray) -> np.ndarray:
    """Draw N(0, h) increments from one Philox stream per path id.

    The stream key is ``(seed, path_id)``, so a path's increments are
    bit-identical however the batch is sliced or ordered.  One bit
    generator is recycled by resetting its counter state, which matches a
    freshly keyed generator bit for bit.
    """
    out = np.empty((len(path_ids), grid.n_fine, dim))
    scale = np.sqrt(grid.h)
    bit_gen = np.random.Philox(key=[0, 0])
    gen = np.random.Generator(bit_gen)
    template = bit_gen.state
    for row, pid in enumerate(path_ids):
        fresh = dict(template)
        fresh["state"] = {"counter": np.zeros(4, dtype=np.uint64),
                          "key": np.array([seed, pid], dtype=np.uint64)}
        bit_gen.state = fresh
        out[row] = gen.standard_normal((grid.n_fine, dim))
    out *= scale
    return out


def simulate_batch(model: ModelSpec, grid: GridSpec, batch_size: int,
                   seed: int, path_offset: int = 0) -> PathBatch:
    """Simulate ``batch_size`` paths with ids ``path_offset..path_offset+B-1``."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    path_ids = np.arange(path_offset, path_offset + batch_size)
    increments = brownian_increments(grid, model.dim, seed, path_ids)
    states = _euler_states(model, grid.h, increments)
    return PathBatch(states, increments, grid, seed, path_ids)


def coarsen(batch: PathBatch, grid: GridSpec | None = None):
    """Snapshot states at coarse dates and aggregate increments per segment.

    Returns ``(coarse_states, coarse_increments)`` of shapes
    ``(B, N+1, d)`` and ``(B, N, d)``.
    """
    grid = grid or batch.grid
    if grid.n_fine != batch.grid.n_fine or grid.horizon != batch.grid.horizon:
        raise GridError("grid does not match the batch's simulation grid")
    m = grid.fine_per_segment
    coarse_states = batch.states[:, ::m, :]
    b, n, d = batch.brownian_fine.shape
    coarse_increments = batch.brownian_fine.reshape(b, grid.n_coarse, m, d).sum(axis=2)
    return coarse_states, coarse_increments


def _states_of(batch) -> np.ndarray:
    return batch.states if isinstance(batch, PathBatch) else np.asarray(batch)


def running_integral(batch, weights) -> np.ndarray:
    """Left-endpoint Riemann sums of ``sum_i w_i X^i`` along the fine grid.

    Entry 0 is 0; entry ``n_fine`` approximates the integral over the full
    horizon.  Shape ``(B, n_fine+1)``.
    """
    states = _states_of(batch)
    h = batch.grid.h if isinstance(batch, PathBatch) else None
    if h is None:
        raise ValueError("running_integral needs a PathBatch (for the step size)")
    weighted = states @ np.asarray(weights, dtype=float)
    out = np.zeros(weighted.shape)
    np.cumsum(weighted[:, :-1] * h, axis=1, out=out[:, 1:])
    return out


def running_min(batch) -> np.ndarray:
    """Prefix minimum over fine-grid nodes, per channel."""
    return np.minimum.accumulate(_states_of(batch), axis=1)
