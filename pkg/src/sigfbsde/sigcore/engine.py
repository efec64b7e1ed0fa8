"""Array-level kernels for the truncated tensor algebra over paths.

Coefficients of a depth-``m`` series over ``d`` channels are stored as a
list of ``m`` arrays, where entry ``k-1`` has trailing dimension ``d**k``
and holds the level-``k`` block in lexicographic multi-index order
(index ``(i_1, ..., i_k)`` sits at offset ``sum((i_j - 1) * d**(k-j))``).
Leading axes are arbitrary batch axes shared by every level; all kernels
broadcast over them.  The level-0 scalar is carried separately by callers
(1 for group-like series, 0 for Lie-like ones).

Everything here is pure-numpy and allocation-only; reverse-mode companions
(`*_vjp`) return cotangents with the same layout.
"""

from __future__ import annotations

import math

import numpy as np

Levels = list  # list[np.ndarray], one entry per tensor level 1..m


def sig_width(channels: int, depth: int) -> int:
    """Number of stored coefficients (unit excluded) of a depth-``depth`` series."""
    if channels < 1 or depth < 1:
        raise ValueError(f"channels and depth must be positive, got ({channels}, {depth})")
    if channels == 1:
        return depth
    return (channels ** (depth + 1) - channels) // (channels - 1)


def level_sizes(channels: int, depth: int) -> list[int]:
    return [channels ** k for k in range(1, depth + 1)]


def identity_levels(batch_shape: tuple, channels: int, depth: int) -> Levels:
    """Levels of the identity series (all zero; unit scalar 1 held by caller)."""
    return [np.zeros(batch_shape + (channels ** k,)) for k in range(1, depth + 1)]


def copy_levels(levels: Levels) -> Levels:
    return [lvl.copy() for lvl in levels]


def flatten_levels(levels: Levels) -> np.ndarray:
    """Concatenate level blocks along the trailing axis."""
    return np.concatenate(levels, axis=-1)


def split_flat(flat: np.ndarray, channels: int, depth: int) -> Levels:
    """Inverse of :func:`flatten_levels`."""
    sizes = level_sizes(channels, depth)
    if flat.shape[-1] != sum(sizes):
        raise ValueError(
            f"flat coefficient vector has length {flat.shape[-1]}, "
            f"expected {sum(sizes)} for (channels={channels}, depth={depth})"
        )
    offsets = np.cumsum([0] + sizes)
    return [flat[..., offsets[k]:offsets[k + 1]] for k in range(depth)]


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Graded outer product of two flattened blocks, flattened again."""
    out = np.einsum("...i,...j->...ij", a, b)
    return out.reshape(a.shape[:-1] + (a.shape[-1] * b.shape[-1],))


def segment_exp(inc: np.ndarray, depth: int) -> Levels:
    """Signature levels of a straight segment with increment ``inc``.

    Level ``k`` equals ``inc^{⊗k} / k!``; exact for linear segments.
    """
    levels = [inc]
    for k in range(2, depth + 1):
        levels.append(_outer(levels[-1], inc) / k)
    return levels


def product(a: Levels, b: Levels, unit_a: float = 1.0, unit_b: float = 1.0) -> Levels:
    """Graded truncated product of two coefficient lists.

    ``out_k = unit_b * a_k + unit_a * b_k + sum_{i=1..k-1} a_i ⊗ b_{k-i}``;
    the resulting unit scalar ``unit_a * unit_b`` is the caller's to track.
    """
    m = len(a)
    out = []
    for k in range(1, m + 1):
        acc = unit_b * a[k - 1] + unit_a * b[k - 1]
        for i in range(1, k):
            acc = acc + _outer(a[i - 1], b[k - i - 1])
        out.append(acc)
    return out


def chen_step(levels: Levels, inc: np.ndarray) -> Levels:
    """One streaming update: ``levels ⊗ segment_exp(inc)`` for group-like input."""
    m = len(levels)
    pw = segment_exp(inc, m)
    out = []
    for k in range(1, m + 1):
        acc = levels[k - 1] + pw[k - 1]
        for i in range(1, k):
            acc = acc + _outer(levels[i - 1], pw[k - i - 1])
        out.append(acc)
    return out


def _step_major(increments: np.ndarray) -> np.ndarray:
    """Copy to step-major layout so per-step slices are contiguous."""
    return np.ascontiguousarray(np.moveaxis(increments, -2, 0))


def signature_scan(increments: np.ndarray, depth: int) -> Levels:
    """Signature levels of a piecewise-linear path given segment increments.

    ``increments`` has shape ``(..., n, d)``; the scan runs over axis ``-2``.
    """
    batch = increments.shape[:-2]
    d = increments.shape[-1]
    steps = _step_major(increments)
    levels = identity_levels(batch, d, depth)
    for s in range(steps.shape[0]):
        levels = chen_step(levels, steps[s])
    return levels


def block_signatures(increments: np.ndarray, depth: int) -> Levels:
    """Signature levels of piecewise-linear blocks, contracted over steps.

    ``increments`` has shape ``(..., M, d)``; the result is the signature of
    the whole ``M``-step block.  Depths up to 3 are closed-form sums over
    the step axis (batched matrix contractions); deeper truncations fall
    back to the sequential scan.
    """
    if depth > 3:
        return signature_scan(increments, depth)
    *batch, _, d = increments.shape
    batch = tuple(batch)
    cum = np.cumsum(increments, axis=-2)
    lvl1 = cum[..., -1, :].copy()
    if depth == 1:
        return [lvl1]
    before = cum - increments  # level-1 prefix ahead of each step
    lvl2 = np.einsum("...si,...sj->...ij", before, increments) \
        + 0.5 * np.einsum("...si,...sj->...ij", increments, increments)
    if depth == 2:
        return [lvl1, lvl2.reshape(batch + (d * d,))]
    half_sq = 0.5 * np.einsum("...si,...sj->...sij", increments, increments)
    step2 = np.einsum("...si,...sj->...sij", before, increments) + half_sq
    before2 = np.cumsum(step2, axis=-3) - step2  # level-2 prefix per step
    lvl3 = (np.einsum("...sij,...sk->...ijk", before2, increments)
            + np.einsum("...si,...sjk->...ijk", before, half_sq)
            + np.einsum("...si,...sj,...sk->...ijk",
                        increments, increments, increments) / 6.0)
    return [lvl1, lvl2.reshape(batch + (d * d,)), lvl3.reshape(batch + (d ** 3,))]


def checkpoint_scan(increments: np.ndarray, fine_per_segment: int, depth: int) -> Levels:
    """Prefix signatures sampled every ``fine_per_segment`` fine steps.

    ``increments`` has shape ``(..., n, d)`` with ``n = N * fine_per_segment``.
    Returns levels with an extra axis: entry ``k-1`` has shape
    ``(..., N+1, d**k)``; slot ``n`` holds the signature of fine steps
    ``0..n*fine_per_segment`` (slot 0 is the identity, i.e. zeros).

    Each fine segment enters exactly one block signature, and blocks are
    chained by ``N`` truncated products, so no overlapping work is redone.
    """
    *batch, n, d = increments.shape
    batch = tuple(batch)
    if fine_per_segment <= 0 or n % fine_per_segment != 0:
        raise ValueError(f"fine step count {n} is not a multiple of {fine_per_segment}")
    n_seg = n // fine_per_segment
    block_levels = block_signatures(
        increments.reshape(batch + (n_seg, fine_per_segment, d)), depth)

    out = [np.zeros(batch + (n_seg + 1, d ** k)) for k in range(1, depth + 1)]
    running = identity_levels(batch, d, depth)
    for seg in range(1, n_seg + 1):
        running = product(running, [lvl[..., seg - 1, :] for lvl in block_levels])
        for k in range(depth):
            out[k][..., seg, :] = running[k]
    return out


def log_of_group(s: Levels) -> Levels:
    """Tensor logarithm of a group-like series (unit 1); result is Lie-like."""
    m = len(s)
    acc = copy_levels(s)
    power = s  # (s - 1)^{⊗1}: same level blocks, unit 0
    for n in range(2, m + 1):
        power = product(power, s, 0.0, 0.0)
        coeff = (-1.0) ** (n + 1) / n
        for k in range(n, m + 1):
            acc[k - 1] = acc[k - 1] + coeff * power[k - 1]
    return acc


def exp_of_lie(v: Levels) -> Levels:
    """Tensor exponential of a Lie-like series (unit 0); result is group-like."""
    m = len(v)
    acc = copy_levels(v)
    power = v
    for n in range(2, m + 1):
        power = product(power, v, 0.0, 0.0)
        inv_fact = 1.0 / math.factorial(n)
        for k in range(n, m + 1):
            acc[k - 1] = acc[k - 1] + inv_fact * power[k - 1]
    return acc


# ---------------------------------------------------------------------------
# reverse-mode companions
# ---------------------------------------------------------------------------

def _contract_right(cot: np.ndarray, b: np.ndarray, d: int, i: int, j: int) -> np.ndarray:
    """d<cot, X ⊗ b>/dX for X at level ``i``, ``b`` at level ``j``."""
    mat = cot.reshape(cot.shape[:-1] + (d ** i, d ** j))
    return np.einsum("...ij,...j->...i", mat, b)


def _contract_left(cot: np.ndarray, a: np.ndarray, d: int, i: int, j: int) -> np.ndarray:
    """d<cot, a ⊗ X>/dX for ``a`` at level ``i``, X at level ``j``."""
    mat = cot.reshape(cot.shape[:-1] + (d ** i, d ** j))
    return np.einsum("...ij,...i->...j", mat, a)


def product_vjp(a: Levels, b: Levels, cot: Levels,
                unit_a: float = 1.0, unit_b: float = 1.0) -> tuple[Levels, Levels]:
    """Cotangents of :func:`product` with respect to both factors' levels."""
    m = len(a)
    d = int(round(a[0].shape[-1]))
    grad_a = [unit_b * cot[k - 1] for k in range(1, m + 1)]
    grad_b = [unit_a * cot[k - 1] for k in range(1, m + 1)]
    for k in range(1, m + 1):
        for i in range(1, k):
            j = k - i
            grad_a[i - 1] += _contract_right(cot[k - 1], b[j - 1], d, i, j)
            grad_b[j - 1] += _contract_left(cot[k - 1], a[i - 1], d, i, j)
    return grad_a, grad_b


def chen_step_vjp(prev: Levels, inc: np.ndarray, cot: Levels) -> tuple[Levels, np.ndarray]:
    """Cotangents of :func:`chen_step` w.r.t. the running levels and the increment."""
    m = len(prev)
    d = inc.shape[-1]
    pw = segment_exp(inc, m)
    grad_prev = [cot[k - 1].copy() for k in range(1, m + 1)]
    grad_pw = [cot[k - 1].copy() for k in range(1, m + 1)]
    for k in range(1, m + 1):
        for i in range(1, k):
            q = k - i
            grad_prev[i - 1] += _contract_right(cot[k - 1], pw[q - 1], d, i, q)
            grad_pw[q - 1] += _contract_left(cot[k - 1], prev[i - 1], d, i, q)
    # unwind pw_q = pw_{q-1} ⊗ inc / q down to pw_1 = inc
    extra = None
    for q in range(m, 1, -1):
        g = grad_pw[q - 1] / q
        grad_pw[q - 2] = grad_pw[q - 2] + _contract_right(g, inc, d, q - 1, 1)
        term = _contract_left(g, pw[q - 2], d, q - 1, 1)
        extra = term if extra is None else extra + term
    grad_inc = grad_pw[0] if extra is None else grad_pw[0] + extra
    return grad_prev, grad_inc


def log_of_group_vjp(s: Levels, cot: Levels) -> Levels:
    """Cotangent of :func:`log_of_group` with respect to the input levels."""
    m = len(s)
    d = int(round(s[0].shape[-1]))
    # powers of u = s - 1 up to u^{m-1}, tracked as (unit, levels, min_level)
    powers: list[tuple[float, Levels | None, int]] = [(1.0, None, m + 1)]
    if m >= 2:
        powers.append((0.0, s, 1))
    for q in range(2, m):
        powers.append((0.0, product(powers[q - 1][1], s, 0.0, 0.0), q))

    grad = [np.zeros_like(lvl) for lvl in s]
    for n in range(1, m + 1):
        coeff = (-1.0) ** (n + 1) / n
        for p in range(1, n + 1):
            lu, llev, lmin = powers[p - 1]
            ru, rlev, rmin = powers[n - p]
            for j in range(1, m + 1):
                for i in ([0] if llev is None else range(lmin, m - j + 1)):
                    for kk in ([0] if rlev is None else range(rmin, m - j - i + 1)):
                        lvl = i + j + kk
                        if lvl > m:
                            continue
                        c = cot[lvl - 1]
                        if i == 0 and kk == 0:
                            grad[j - 1] += (coeff * lu * ru) * c
                        elif i == 0:
                            mat = c.reshape(c.shape[:-1] + (d ** j, d ** kk))
                            grad[j - 1] += (coeff * lu) * np.einsum(
                                "...jk,...k->...j", mat, rlev[kk - 1])
                        elif kk == 0:
                            mat = c.reshape(c.shape[:-1] + (d ** i, d ** j))
                            grad[j - 1] += (coeff * ru) * np.einsum(
                                "...ij,...i->...j", mat, llev[i - 1])
                        else:
                            mat = c.reshape(c.shape[:-1] + (d ** i, d ** j, d ** kk))
                            grad[j - 1] += coeff * np.einsum(
                                "...ijk,...i,...k->...j", mat, llev[i - 1], rlev[kk - 1])
    return grad


# ---------------------------------------------------------------------------
# streamed signatures with reverse pass
# ---------------------------------------------------------------------------

def stream_with_cache(increments: np.ndarray, depth: int) -> list[Levels]:
    """Sequential prefix signatures after every fine step.

    Returns ``n+1`` level lists; entry ``s`` is the signature of steps
    ``1..s`` (entry 0 the identity).  Kept for the reverse pass, so every
    intermediate is materialised.
    """
    batch = increments.shape[:-2]
    d = increments.shape[-1]
    steps = _step_major(increments)
    sigs = [identity_levels(batch, d, depth)]
    for s in range(steps.shape[0]):
        sigs.append(chen_step(sigs[-1], steps[s]))
    return sigs


def stream_pullback(sigs: list[Levels], increments: np.ndarray,
                    tap_cotangents: dict[int, Levels]) -> np.ndarray:
    """Reverse traversal of the streamed scan.

    ``tap_cotangents[s]`` is the cotangent injected on the prefix signature
    after fine step ``s`` (a cotangent at ``s = 0`` is legal but inert).
    Returns the gradient with respect to ``increments``.
    """
    n = increments.shape[-2]
    steps = _step_major(increments)
    grad_inc = np.zeros_like(increments)
    adj: Levels | None = None
    for s in range(n, 0, -1):
        if s in tap_cotangents:
            taps = tap_cotangents[s]
            adj = taps if adj is None else [a + t for a, t in zip(adj, taps)]
        if adj is None:
            continue
        adj, g_inc = chen_step_vjp(sigs[s - 1], steps[s - 1], adj)
        grad_inc[..., s - 1, :] = g_inc
    return grad_inc


def increments_to_nodes_grad(grad_inc: np.ndarray) -> np.ndarray:
    """Convert a gradient w.r.t. segment increments into one w.r.t. path nodes."""
    batch = grad_inc.shape[:-2]
    n, d = grad_inc.shape[-2:]
    grad_nodes = np.zeros(batch + (n + 1, d))
    grad_nodes[..., 1:, :] += grad_inc
    grad_nodes[..., :-1, :] -= grad_inc
    return grad_nodes
