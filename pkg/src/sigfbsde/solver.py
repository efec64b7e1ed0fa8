"""Training procedures for path-dependent FBSDEs on signature features.

Three schemes share one feature pipeline (simulate, optionally embed,
time-augment, stream prefix signatures at the coarse dates):

* ``forward``  — a trainable initial value is propagated to maturity and
  fitted by matching the terminal payoff in mean square;
* ``backward`` — the payoff is rolled backwards and the batch variance of
  the reconstructed initial values is minimised (their mean is the price);
* ``reflected`` — the backward scheme with an early-exercise floor applied
  at every coarse date.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import net, sde
from .sigcore import engine, lyndon
from .sigcore.tensor import sig_dim

METHODS = ("forward", "backward", "reflected")
FEATURE_KINDS = ("signature", "log-signature")


class SolverAbort(RuntimeError):
    """Training hit a non-finite loss; carries run metadata."""

    def __init__(self, message: str, method: str, iteration: int, seed: int):
        super().__init__(message)
        self.method = method
        self.iteration = iteration
        self.seed = seed


class SpecError(ValueError):
    """Experiment description is internally inconsistent."""


def derive_seed(seed: int, *parts: int) -> int:
    """Deterministic child seed from a master seed and integer tags."""
    ss = np.random.SeedSequence((int(seed),) + tuple(int(p) for p in parts))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DriverKind:
    """Backward-equation driver: ``f = 0`` or the discounting ``f = -rate * y``."""

    kind: str = "zero"
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "discount"):
            raise SpecError(f"unknown driver kind {self.kind!r}")
        if self.rate < 0:
            raise SpecError(f"driver rate must be nonnegative, got {self.rate}")

    def f(self, t, x, y, z):
        if self.kind == "discount":
            return -self.rate * y
        return np.zeros_like(y)

    def dy(self) -> float:
        """``∂f/∂y`` (constant for both supported drivers)."""
        return -self.rate if self.kind == "discount" else 0.0

    def dz(self) -> float:
        """``∂f/∂z`` (identically zero for both supported drivers)."""
        return 0.0


@dataclass(frozen=True)
class PayoffKind:
    """Terminal payoff evaluated on the fine-grid path functionals."""

    kind: str
    strike: float = 0.0
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in ("lookback", "quadratic-integral", "asian-basket-call"):
            raise SpecError(f"unknown payoff kind {self.kind!r}")
        if self.strike < 0:
            raise SpecError(f"strike must be nonnegative, got {self.strike}")

    @property
    def supports_exercise(self) -> bool:
        return self.kind == "asian-basket-call"

    def _weights(self, dim: int) -> np.ndarray:
        if self.weights:
            if len(self.weights) != dim:
                raise SpecError(
                    f"{len(self.weights)} payoff weights for {dim} assets")
            return np.asarray(self.weights, dtype=float)
        return np.full(dim, 1.0 / dim) if self.kind == "asian-basket-call" \
            else np.ones(dim)

    def terminal(self, batch: sde.PathBatch) -> np.ndarray:
        d = batch.states.shape[-1]
        if self.kind == "lookback":
            if d != 1:
                raise SpecError("lookback payoff is defined for a single asset")
            return batch.states[:, -1, 0] - batch.states[:, :, 0].min(axis=1)
        if self.kind == "quadratic-integral":
            return sde.running_integral(batch, self._weights(d))[:, -1] ** 2
        avg = sde.running_integral(batch, self._weights(d))[:, -1] / batch.grid.horizon
        return np.maximum(avg - self.strike, 0.0)

    def exercise_values(self, batch: sde.PathBatch) -> np.ndarray:
        """Early-exercise payoff at every coarse date, shape ``(B, N+1)``.

        The running average over ``[0, t_n]`` replaces the full-horizon
        average; at ``t_0`` the spot basket value stands in for it.
        """
        if not self.supports_exercise:
            raise SpecError(f"{self.kind!r} payoff has no early-exercise value")
        grid = batch.grid
        w = self._weights(batch.states.shape[-1])
        integral = sde.running_integral(batch, w)[:, ::grid.fine_per_segment]
        t = np.arange(grid.n_coarse + 1) * grid.dt
        avg = np.empty_like(integral)
        avg[:, 0] = batch.states[:, 0, :] @ w
        avg[:, 1:] = integral[:, 1:] / t[1:]
        return np.maximum(avg - self.strike, 0.0)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything needed to train one solver configuration."""

    method: str
    model: sde.ModelSpec
    grid: sde.GridSpec
    driver: DriverKind
    payoff: PayoffKind
    depth: int
    feature: str = "signature"
    embed_dim: int | None = None
    batch_size: int = 100
    iterations: int = 1000
    learning_rate: float = 1e-3
    runs: int = 1
    seed: int = 0
    hidden: tuple = (64, 64)
    loss_margin: float = 0.0
    y0_init: float | None = None
    tail_fraction: float = 0.25
    pilot_paths: int = 4096

    def __post_init__(self):
        if self.method not in METHODS:
            raise SpecError(f"unknown method {self.method!r}; expected {METHODS}")
        if self.feature not in FEATURE_KINDS:
            raise SpecError(f"unknown feature kind {self.feature!r}")
        if self.depth < 1:
            raise SpecError(f"signature depth must be >= 1, got {self.depth}")
        if self.method == "reflected" and not self.payoff.supports_exercise:
            raise SpecError(
                f"reflected method needs an early-exercise payoff, "
                f"got {self.payoff.kind!r}")
        if self.embed_dim is not None and not 0 < self.embed_dim < self.model.dim:
            raise SpecError(
                f"embedding dimension {self.embed_dim} must lie in "
                f"(0, {self.model.dim})")
        if self.batch_size < 1 or self.iterations < 0 or self.runs < 1:
            raise SpecError("batch_size/iterations/runs out of range")

    @property
    def stream_channels(self) -> int:
        """Signature alphabet size: state (or embedded) channels plus time."""
        return (self.embed_dim or self.model.dim) + 1

    @property
    def feature_width(self) -> int:
        if self.feature == "signature":
            return sig_dim(self.stream_channels, self.depth)
        return lyndon.lyndon_count(self.stream_channels, self.depth)


@dataclass
class TrainState:
    """Per-date approximators plus optional trainable scalar and embedding."""

    nets: list
    net_adams: list
    y0: np.ndarray | None = None
    y0_adam: net.AdamState | None = None
    embedding: net.EmbeddingParams | None = None
    embed_adam: net.AdamState | None = None
    iteration: int = 0


@dataclass
class RunReport:
    """Loss and estimate trajectory of one training run."""

    method: str
    seed: int
    losses: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    elapsed: list = field(default_factory=list)
    final_estimate: float = float("nan")

    @property
    def iterations(self) -> int:
        return len(self.losses)


def pilot_estimate(spec: ExperimentSpec) -> float:
    """Plain Monte Carlo estimate of the discounted terminal payoff.

    Used to seed the forward method's trainable initial value close to the
    answer; the discount matches the per-step growth of the forward scheme.
    """
    seed = derive_seed(spec.seed, 2)
    total, count = 0.0, 0
    chunk = 2048
    remaining = spec.pilot_paths
    offset = 0
    while remaining > 0:
        b = min(chunk, remaining)
        batch = sde.simulate_batch(spec.model, spec.grid, b, seed, path_offset=offset)
        total += float(np.sum(spec.payoff.terminal(batch)))
        count += b
        remaining -= b
        offset += b
    growth = (1.0 - spec.driver.dy() * spec.grid.dt) ** spec.grid.n_coarse
    return total / count / growth


def init_state(spec: ExperimentSpec) -> TrainState:
    nets, adams = [], []
    # each approximator maps features to a row vector against the Brownian motion
    mlp_spec = net.MlpSpec(spec.feature_width, spec.model.dim, hidden=spec.hidden)
    for n in range(spec.grid.n_coarse):
        params = net.init_mlp(mlp_spec, derive_seed(spec.seed, 1, n))
        nets.append(params)
        adams.append(net.init_adam(params.parameters(), spec.learning_rate))
    state = TrainState(nets=nets, net_adams=adams)
    if spec.method == "forward":
        y0 = spec.y0_init if spec.y0_init is not None else pilot_estimate(spec)
        state.y0 = np.asarray(float(y0))
        state.y0_adam = net.init_adam([state.y0], spec.learning_rate)
    if spec.embed_dim is not None:
        state.embedding = net.init_embedding(spec.model.dim, spec.embed_dim,
                                             derive_seed(spec.seed, 3))
        state.embed_adam = net.init_adam(state.embedding.parameters(),
                                         spec.learning_rate)
    return state


@dataclass
class FeatureCache:
    """Intermediates kept for the reverse pass through the embedding."""

    stream_cache: np.ndarray
    increments: np.ndarray
    sigs: list
    fine_per_segment: int


def feature_scale(model: sde.ModelSpec) -> np.ndarray:
    """Per-channel divisor applied to states before signatures are taken.

    Keeps level-``k`` coefficients from growing like ``|x0|**k``, which
    would swamp the approximators; a fixed diagonal map of the stream, so
    the feature family is unchanged up to a linear reparametrisation.
    """
    scale = np.abs(np.asarray(model.x0, dtype=float))
    scale[scale == 0.0] = 1.0
    return scale


def features_for_batch(state: TrainState, batch: sde.PathBatch,
                       spec: ExperimentSpec):
    """Per-date feature vectors for every path, shape ``(N, B, F)``.

    Feature ``n`` is the (log-)signature of the time-augmented
    (and optionally embedded) path up to coarse date ``n``, with state
    channels pre-divided by :func:`feature_scale`; feature 0 is
    identically zero.  Returns ``(features, cache)`` where ``cache`` is
    ``None`` unless an embedding is being trained.
    """
    grid = batch.grid
    values = batch.states / feature_scale(spec.model)
    cache = None
    stream_cache = None
    if state.embedding is not None:
        values, stream_cache = net.embed_stream(state.embedding, values)
    times = np.arange(grid.n_fine + 1) * grid.h
    nodes = np.concatenate(
        [np.broadcast_to(times[None, :, None], values.shape[:-1] + (1,)), values],
        axis=-1)
    increments = np.diff(nodes, axis=-2)
    d_hat = spec.stream_channels
    if increments.shape[-1] != d_hat:
        raise SpecError(
            f"stream has {increments.shape[-1]} channels, expected {d_hat}")

    if state.embedding is None:
        stacked = engine.checkpoint_scan(increments, grid.fine_per_segment, spec.depth)
    else:
        sigs = engine.stream_with_cache(increments, spec.depth)
        cache = FeatureCache(stream_cache, increments, sigs, grid.fine_per_segment)
        m = grid.fine_per_segment
        stacked = [np.stack([sigs[n * m][k] for n in range(grid.n_coarse + 1)], axis=1)
                   for k in range(spec.depth)]

    if spec.feature == "signature":
        flat = engine.flatten_levels(stacked)
    else:
        log_levels = engine.log_of_group(stacked)
        flat = lyndon.project(log_levels, d_hat, spec.depth)
    features = np.moveaxis(flat[:, :grid.n_coarse, :], 0, 1)
    if features.shape[-1] != spec.feature_width:
        raise SpecError(
            f"feature width {features.shape[-1]} != expected {spec.feature_width}")
    return features, cache


def features_backward(state: TrainState, spec: ExperimentSpec,
                      cache: FeatureCache, feature_cots: np.ndarray):
    """Pull feature cotangents back to embedding-parameter gradients."""
    grid_m = cache.fine_per_segment
    d_hat = spec.stream_channels
    taps: dict[int, list] = {}
    for n in range(1, feature_cots.shape[0]):
        cot = feature_cots[n]
        if not np.any(cot):
            continue
        if spec.feature == "signature":
            levels = engine.split_flat(cot, d_hat, spec.depth)
        else:
            tensor_cot = lyndon.project_vjp(cot, d_hat, spec.depth)
            levels = engine.log_of_group_vjp(cache.sigs[n * grid_m], tensor_cot)
        taps[n * grid_m] = levels
    grad_inc = engine.stream_pullback(cache.sigs, cache.increments, taps)
    node_grads = engine.increments_to_nodes_grad(grad_inc)[..., 1:]
    grads, _ = net.embed_backward(state.embedding, cache.stream_cache, node_grads)
    return grads


def _check_finite(loss: float, spec: ExperimentSpec, state: TrainState, seed: int):
    if not np.isfinite(loss):
        raise SolverAbort(
            f"non-finite loss at iteration {state.iteration} (seed {seed})",
            spec.method, state.iteration, seed)


def forward_rollout(state: TrainState, spec: ExperimentSpec,
                    batch: sde.PathBatch, features: np.ndarray):
    """Propagate the trainable initial value through the coarse recursion.

    Returns ``(ys, zs, caches)`` where ``ys[:, n]`` is the value at coarse
    date ``n`` (so ``ys[:, -1]`` faces the terminal payoff).
    """
    coarse_states, coarse_incs = sde.coarsen(batch)
    n_seg, dt = spec.grid.n_coarse, spec.grid.dt
    ys = np.empty((batch.batch_size, n_seg + 1))
    ys[:, 0] = float(state.y0)
    zs, caches = [], []
    for n in range(n_seg):
        z, c = net.mlp_forward(state.nets[n], features[n])
        zs.append(z)
        caches.append(c)
        y = ys[:, n]
        ys[:, n + 1] = y - spec.driver.f(n * dt, coarse_states[:, n, :], y, z) * dt \
            + np.sum(z * coarse_incs[:, n, :], axis=1)
    return ys, zs, caches


def backward_rollout(state: TrainState, spec: ExperimentSpec,
                     batch: sde.PathBatch, features: np.ndarray,
                     reflect: bool):
    """Roll the terminal payoff backwards through the coarse recursion.

    Returns ``(ys, zs, caches, masks)``; ``ys[:, n]`` is the value at coarse
    date ``n`` after any reflection, and ``masks[n]`` records where the
    unreflected value stayed above the exercise floor (``None`` when not
    reflecting).
    """
    coarse_states, coarse_incs = sde.coarsen(batch)
    n_seg, dt = spec.grid.n_coarse, spec.grid.dt
    zs, caches = [], []
    for n in range(n_seg):
        z, c = net.mlp_forward(state.nets[n], features[n])
        zs.append(z)
        caches.append(c)
    exercise = spec.payoff.exercise_values(batch) if reflect else None
    masks: list = [None] * n_seg
    ys = np.empty((batch.batch_size, n_seg + 1))
    ys[:, n_seg] = spec.payoff.terminal(batch)
    for n in range(n_seg, 0, -1):
        y = ys[:, n]
        t_prev = (n - 1) * dt
        stepped = y + spec.driver.f(t_prev, coarse_states[:, n - 1, :], y,
                                    zs[n - 1]) * dt \
            - np.sum(zs[n - 1] * coarse_incs[:, n - 1, :], axis=1)
        if reflect:
            masks[n - 1] = stepped >= exercise[:, n - 1]
            stepped = np.maximum(exercise[:, n - 1], stepped)
        ys[:, n - 1] = stepped
    return ys, zs, caches, masks


def forward_iteration(state: TrainState, spec: ExperimentSpec, seed: int,
                      update: bool = True):
    """One terminal-matching step on a fresh batch.

    Simulates, rolls the trainable initial value forward through the
    discretised equation, takes the mean-square terminal mismatch as the
    loss, and applies one Adam update to every approximator, the initial
    value, and the embedding (when present).  Returns
    ``(state, loss, estimate)`` with the estimate being the current
    trainable initial value.
    """
    batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, seed)
    features, fcache = features_for_batch(state, batch, spec)
    ys, zs, caches = forward_rollout(state, spec, batch, features)
    with np.errstate(over="ignore", invalid="ignore"):
        resid = ys[:, -1] - spec.payoff.terminal(batch)
        loss = float(np.mean(resid ** 2))
    _check_finite(loss, spec, state, seed)

    if update:
        _, coarse_incs = sde.coarsen(batch)
        n_seg, dt = spec.grid.n_coarse, spec.grid.dt
        adj = 2.0 * resid / spec.batch_size
        step_factor = 1.0 - spec.driver.dy() * dt
        feature_cots = np.zeros_like(features) if fcache is not None else None
        for n in range(n_seg - 1, -1, -1):
            g_z = adj[:, None] * coarse_incs[:, n, :]
            grads, g_x = net.mlp_backward(state.nets[n], caches[n], g_z)
            net.adam_step(state.net_adams[n], state.nets[n].parameters(), grads)
            if feature_cots is not None:
                feature_cots[n] = g_x
            adj = adj * step_factor
        net.adam_step(state.y0_adam, [state.y0], [np.asarray(np.sum(adj))])
        if fcache is not None:
            egrads = features_backward(state, spec, fcache, feature_cots)
            net.adam_step(state.embed_adam, state.embedding.parameters(), egrads)
        state.iteration += 1
    return state, loss, float(state.y0)


def _backward_pass(state: TrainState, spec: ExperimentSpec, seed: int,
                   reflect: bool, update: bool):
    batch = sde.simulate_batch(spec.model, spec.grid, spec.batch_size, seed)
    features, fcache = features_for_batch(state, batch, spec)
    ys, zs, caches, masks = backward_rollout(state, spec, batch, features, reflect)
    y0 = ys[:, 0]
    estimate = float(np.mean(y0))
    loss = float(np.mean((y0 - estimate) ** 2))
    _check_finite(loss, spec, state, seed)

    if update:
        _, coarse_incs = sde.coarsen(batch)
        n_seg, dt = spec.grid.n_coarse, spec.grid.dt
        adj = 2.0 * (y0 - estimate) / spec.batch_size
        step_factor = 1.0 + spec.driver.dy() * dt
        feature_cots = np.zeros_like(features) if fcache is not None else None
        for n in range(1, n_seg + 1):
            if reflect:
                adj = adj * masks[n - 1]
            g_z = -adj[:, None] * coarse_incs[:, n - 1, :]
            grads, g_x = net.mlp_backward(state.nets[n - 1], caches[n - 1], g_z)
            net.adam_step(state.net_adams[n - 1], state.nets[n - 1].parameters(), grads)
            if feature_cots is not None:
                feature_cots[n - 1] = g_x
            adj = adj * step_factor
        if fcache is not None:
            egrads = features_backward(state, spec, fcache, feature_cots)
            net.adam_step(state.embed_adam, state.embedding.parameters(), egrads)
        state.iteration += 1
    return state, loss, estimate


def backward_iteration(state: TrainState, spec: ExperimentSpec, seed: int,
                       update: bool = True):
    """One variance-minimisation step on a fresh batch.

    The terminal payoff is rolled backwards through the discretised
    equation; the loss is the batch variance of the reconstructed initial
    values and the estimate is their mean.
    """
    return _backward_pass(state, spec, seed, reflect=False, update=update)


def reflected_iteration(state: TrainState, spec: ExperimentSpec, seed: int,
                        update: bool = True):
    """Backward step with the early-exercise floor applied at every date."""
    return _backward_pass(state, spec, seed, reflect=True, update=update)


_ITERATION_OPS = {
    "forward": forward_iteration,
    "backward": backward_iteration,
    "reflected": reflected_iteration,
}


def train(spec: ExperimentSpec, run_seed: int | None = None) -> RunReport:
    """Run one full training and collect the loss/estimate trajectory.

    The reported final estimate averages the trailing ``tail_fraction`` of
    per-iteration estimates, which damps the per-batch fluctuation of the
    variance-minimising methods without biasing the forward one.
    """
    spec = spec if run_seed is None else replace(spec, seed=int(run_seed))
    state = init_state(spec)
    report = RunReport(method=spec.method, seed=spec.seed)
    step = _ITERATION_OPS[spec.method]
    start = time.perf_counter()
    for it in range(spec.iterations):
        seed = derive_seed(spec.seed, 4, it)
        state, loss, estimate = step(state, spec, seed)
        report.losses.append(loss)
        report.estimates.append(estimate)
        report.elapsed.append(time.perf_counter() - start)
        if spec.loss_margin > 0.0 and loss <= spec.loss_margin:
            break
    if report.estimates:
        tail = max(1, int(round(spec.tail_fraction * len(report.estimates))))
        report.final_estimate = float(np.mean(report.estimates[-tail:]))
    elif spec.method == "forward":
        report.final_estimate = float(state.y0)
    else:
        _, _, estimate = _ITERATION_OPS[spec.method](state, spec,
                                                     derive_seed(spec.seed, 4, 0),
                                                     update=False)
        report.final_estimate = estimate
    return report


def classify_trend(values, dead_band: float) -> str:
    """Label a trajectory by its least-squares drift over the whole window."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return "keep"
    x = np.arange(len(values))
    slope = np.polyfit(x, values, 1)[0]
    drift = slope * (len(values) - 1)
    if drift > dead_band:
        return "increase-guess"
    if drift < -dead_band:
        return "decrease-guess"
    return "keep"


def probe_initial_y0(spec: ExperimentSpec, candidate_y0: float, budget: int,
                     dead_band_fraction: float = 0.25) -> str:
    """Classify a short forward-training burst started at ``candidate_y0``.

    A drifting estimate means the guess is on the wrong side of the answer;
    the caller reacts by moving the guess in the drift direction.  The dead
    band is a fraction of the largest travel the optimiser could achieve in
    the budget, so undirected wander reads as ``keep``.  Pure heuristic:
    runs on a throwaway state and never touches the caller's.
    """
    if spec.method != "forward":
        raise SpecError("the initial-value probe applies to the forward method")
    probe_spec = replace(spec, y0_init=float(candidate_y0), iterations=budget,
                         seed=derive_seed(spec.seed, 5))
    state = init_state(probe_spec)
    estimates = []
    for it in range(budget):
        seed = derive_seed(probe_spec.seed, 4, it)
        state, _, estimate = forward_iteration(state, probe_spec, seed)
        estimates.append(estimate)
    dead_band = dead_band_fraction * budget * spec.learning_rate
    return classify_trend(estimates, dead_band)


@dataclass(frozen=True)
class RunSummary:
    mean: float
    ci_low: float
    ci_high: float
    estimates: tuple


def aggregate_runs(reports: list) -> RunSummary:
    """Mean and normal-approximation 95% interval of the run estimates."""
    if not reports:
        raise ValueError("aggregate_runs needs at least one report")
    values = np.array([r.final_estimate for r in reports], dtype=float)
    mean = float(values.mean())
    if len(values) == 1:
        return RunSummary(mean, mean, mean, tuple(values))
    half = 1.96 * float(values.std(ddof=1)) / np.sqrt(len(values))
    return RunSummary(mean, mean - half, mean + half, tuple(values))
