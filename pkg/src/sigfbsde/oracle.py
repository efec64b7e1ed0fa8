"""Analytic and brute-force reference values, independent of the solvers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sde


class OracleDomainError(ValueError):
    """Inputs leave the validity region of a closed-form reference."""


def norm_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


@dataclass(frozen=True)
class LookbackParams:
    """State of a floating-strike lookback claim at valuation time."""

    spot: float
    running_min: float
    rate: float
    sigma: float
    remaining: float  # time to maturity

    def __post_init__(self):
        if not 0.0 < self.running_min <= self.spot:
            raise OracleDomainError(
                f"need 0 < running_min <= spot, got ({self.running_min}, {self.spot})")
        if self.sigma <= 0 or self.rate <= 0:
            raise OracleDomainError("rate and sigma must be positive")
        if self.remaining < 0:
            raise OracleDomainError(f"remaining time {self.remaining} is negative")


def lookback_price(p: LookbackParams) -> float:
    """Closed-form value of the floating-strike lookback call.

    At zero remaining time the payoff ``spot - running_min`` is returned.
    """
    if p.remaining == 0.0:
        return p.spot - p.running_min
    x, m, r, sig, tau = p.spot, p.running_min, p.rate, p.sigma, p.remaining
    root = math.sqrt(tau)
    p1 = (math.log(x / m) + (r + sig * sig / 2.0) * tau) / (sig * root)
    p2 = p1 - sig * root
    p3 = p1 - 2.0 * r * root / sig
    disc = math.exp(-r * tau)
    return (x * norm_cdf(p1) - m * disc * norm_cdf(p2)
            - x * (sig * sig / (2.0 * r))
            * (norm_cdf(-p1) - disc * (m / x) ** (2.0 * r / sig ** 2) * norm_cdf(-p3)))


def quadratic_pde_solution(t: float, prefix_values: np.ndarray,
                           horizon: float) -> float:
    """Exact value of the squared-integral claim given the path so far.

    ``prefix_values`` holds the state on a uniform fine grid over ``[0, t]``
    (a single row when ``t = 0``); the running integral uses the same
    left-endpoint rule as the simulator.
    """
    prefix = np.atleast_2d(np.asarray(prefix_values, dtype=float))
    if t < 0 or t > horizon:
        raise OracleDomainError(f"need 0 <= t <= horizon, got t={t}")
    d = prefix.shape[1]
    basket = prefix.sum(axis=1)
    if t == 0.0:
        integral = 0.0
    else:
        h = t / (prefix.shape[0] - 1)
        integral = float(np.sum(basket[:-1]) * h)
    tail = horizon - t
    spot = float(basket[-1])
    return (integral ** 2 + spot ** 2 * tail ** 2 + 2.0 * tail * spot * integral
            + d / 3.0 * tail ** 3)


def asian_european_mc(model: sde.ModelSpec, grid: sde.GridSpec, strike: float,
                      weights, n_paths: int, seed: int,
                      chunk: int = 20000) -> tuple[float, float]:
    """Monte Carlo value of the European average-price call.

    Discounted positive part of the weighted running average at maturity,
    using the same fine-grid quadrature as the solvers.  Returns
    ``(estimate, standard_error)``.
    """
    if n_paths < 1000:
        raise ValueError(f"n_paths must be >= 1000, got {n_paths}")
    w = np.asarray(weights, dtype=float)
    disc = math.exp(-model.rate * grid.horizon)
    total, total_sq, done = 0.0, 0.0, 0
    while done < n_paths:
        b = min(chunk, n_paths - done)
        batch = sde.simulate_batch(model, grid, b, seed, path_offset=done)
        avg = sde.running_integral(batch, w)[:, -1] / grid.horizon
        pay = disc * np.maximum(avg - strike, 0.0)
        total += float(pay.sum())
        total_sq += float((pay * pay).sum())
        done += b
    mean = total / n_paths
    var = max(total_sq / n_paths - mean * mean, 0.0)
    return mean, math.sqrt(var / n_paths)


def jensen_lower_bound(model: sde.ModelSpec, strike: float,
                       horizon: float = 1.0, weights=None) -> float:
    """Discounted positive part of the expected average: a price floor.

    Also the large-basket limit of the equally-weighted average-price call.
    """
    if model.kind != "geometric":
        raise OracleDomainError("the bound is stated for the geometric model")
    r, t = model.rate, horizon
    w = (np.full(model.dim, 1.0 / model.dim) if weights is None
         else np.asarray(weights, dtype=float))
    basket0 = float(np.asarray(model.x0) @ w)
    growth = (math.exp(r * t) - 1.0) / (r * t) if r > 0 else 1.0
    return math.exp(-r * t) * max(basket0 * growth - strike, 0.0)


def bermudan_deterministic_dp(exercise_values, rate: float, dt: float) -> float:
    """Backward induction over exercise dates on a deterministic path.

    ``exercise_values[n]`` is the payoff of exercising at coarse date ``n``.
    Continuation discounts one step with the same explicit factor
    ``(1 - rate * dt)`` the backward scheme applies, so a zero-volatility
    reflected run reproduces this value exactly.
    """
    g = np.asarray(exercise_values, dtype=float)
    value = g[-1]
    for n in range(len(g) - 2, -1, -1):
        value = max(g[n], value * (1.0 - rate * dt))
    return float(value)
