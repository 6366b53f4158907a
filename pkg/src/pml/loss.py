"""Multi-resolution losses over density-map batches and their analytic gradients.

The per-level squared error at level ``i`` is the batch mean of the squared
L2 norm between sum-downsampled prediction and ground truth:

    l2_level(i) = mean_b || S_i(pred_b) - S_i(gt_b) ||_2^2

where ``S_i`` sums blocks down to the 2^i grid and the norm sums over cells.
The difference loss between consecutive levels,

    l_diff(j) = l2_level(j) - (1/4) * l2_level(j-1),

equals the batch-mean squared norm of the difference between the prediction
residual and the ground-truth residual at the pair (j-1, j), so it is never
negative. The progressive multi-resolution loss over levels 0..n is

    pml = log(l2_level(0) + eps) + sum_{j=1..n} log(l_diff(j) + eps)

and the total training loss adds the full-resolution squared error as a
plain (un-logged) regularizer: ``total = pml + l2_level(L)``. With n = 0 the
total degenerates to ``log(l2_level(0) + eps) + l2_level(L)``, the
single-resolution L2 setting.

``eps`` guards every logarithm against a perfect fit and is reported in the
breakdown. Batch means are computed before the log. All reductions run in
batch-index order, so results are reproducible and permutation-stable to
rounding.

The gradient with respect to each predicted cell chains every log term
through sum pooling: the derivative of ``l2_level(i)`` is ``(2/B)`` times the
coarse residual at level ``i`` replicated back to the prediction grid
(replication is the adjoint of sum pooling).

The per-pair variance estimates that maximize the underlying Gaussian
likelihood come out in closed form:

    sigma_sq[j] = l_diff(pair j) / (4^{n_j} - 4^{n_{j-1}}),   j >= 1
    sigma_sq[0] = 4^{-n_0} * l2_level(n_0)

``optimal_sigma`` evaluates these from a breakdown; zero losses fall back to
the same ``eps`` guard and set a flag instead of erroring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .pyramid import DensityMap, ResolutionSet, _pool_sum, _replicate

DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class AlphaCoefficients:
    """Resolution weights alpha_0..alpha_n of the level re-weighting system.

    They are the unique solution of the triangular system
    ``(4^j - 4^{j-1}) * sum_{k=j..n} alpha_k = 1`` for j = 1..n together with
    ``sum_k alpha_k = 1``; applying them to the per-n weighted log terms
    collapses the weighted average to ``log l2(0) + sum_j log l_diff(j)``.
    """

    n: int
    alpha: tuple[float, ...]

    def tail_sum(self, j: int) -> float:
        return float(sum(self.alpha[j:]))


def alpha_coefficients(n: int) -> AlphaCoefficients:
    """Solve the triangular re-weighting system by back-substitution."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    # tails[j] = sum_{k=j..n} alpha_k; tails[0] = 1 from the normalization row
    tails = [1.0] + [1.0 / (4.0 ** j - 4.0 ** (j - 1)) for j in range(1, n + 1)] + [0.0]
    alpha = tuple(tails[j] - tails[j + 1] for j in range(n + 1))
    return AlphaCoefficients(n=n, alpha=alpha)


@dataclass(frozen=True)
class LossBreakdown:
    """Every term of one loss evaluation, for reporting and audits."""

    l2_per_level: dict[int, float]
    ldiff_per_pair: dict[tuple[int, int], float]
    pml: float
    regularizer: float
    total: float
    sigma_sq: dict[int, float]
    epsilon: float
    sigma_guarded: bool = False

    def to_flat_dict(self) -> dict[str, float]:
        """Flat key/value report of all terms."""
        out: dict[str, float] = {}
        for i in sorted(self.l2_per_level):
            out[f"l2_level_{i}"] = self.l2_per_level[i]
        for (a, b) in sorted(self.ldiff_per_pair):
            out[f"ldiff_{a}_{b}"] = self.ldiff_per_pair[(a, b)]
        for j in sorted(self.sigma_sq):
            out[f"sigma_sq_{j}"] = self.sigma_sq[j]
        out["pml"] = self.pml
        out["regularizer"] = self.regularizer
        out["total"] = self.total
        out["epsilon"] = self.epsilon
        return out


def _check_batches(preds: Sequence[DensityMap], gts: Sequence[DensityMap]) -> None:
    if len(preds) == 0 or len(gts) == 0:
        raise ValueError("batches must be non-empty")
    if len(preds) != len(gts):
        raise ValueError(f"batch sizes differ: {len(preds)} predictions vs {len(gts)} ground truths")
    for k, (p, g) in enumerate(zip(preds, gts)):
        if p.level != g.level:
            raise ValueError(f"pair {k}: prediction level {p.level} != ground truth level {g.level}")


def _stacked(preds: Sequence[DensityMap], gts: Sequence[DensityMap]):
    _check_batches(preds, gts)
    level = preds[0].level
    if any(p.level != level for p in preds):
        raise ValueError("batch mixes map levels; a single prediction level is required")
    pred_arr = np.stack([p.data for p in preds])
    gt_arr = np.stack([g.data for g in gts])
    return pred_arr, gt_arr, level


def _pooled_sq_err(pred_arr, gt_arr, level: int, i: int):
    """Pooled per-sample residual at level ``i`` and its batch-mean squared norm."""
    d = _pool_sum(pred_arr, level, i) - _pool_sum(gt_arr, level, i)
    return d, float(np.mean(np.sum(d * d, axis=(1, 2))))


def l2_level(preds: Sequence[DensityMap], gts: Sequence[DensityMap], i: int) -> float:
    """Batch-mean squared error between sum-downsamples at level ``i``."""
    _check_batches(preds, gts)
    if any(p.level < i for p in preds):
        raise ValueError(f"requested level {i} exceeds a map level in the batch")
    if all(p.level == preds[0].level for p in preds):
        pred_arr, gt_arr, level = _stacked(preds, gts)
        return _pooled_sq_err(pred_arr, gt_arr, level, i)[1]
    # mixed per-pair levels: pool each pair from its own level
    vals = []
    for p, g in zip(preds, gts):
        d = _pool_sum(p.data, p.level, i) - _pool_sum(g.data, g.level, i)
        vals.append(np.sum(d * d))
    return float(np.mean(vals))


def _clamped_diff(l2_fine: float, l2_coarse: float, scale: float) -> float:
    # mathematically >= 0; clamp float dust from the subtraction form
    return max(l2_fine - scale * l2_coarse, 0.0)


def l_diff_pair(preds: Sequence[DensityMap], gts: Sequence[DensityMap], j1: int, j2: int) -> float:
    """Difference loss for an arbitrary level pair j1 < j2."""
    if not 0 <= j1 < j2:
        raise ValueError(f"need 0 <= coarse < fine, got ({j1}, {j2})")
    return _clamped_diff(l2_level(preds, gts, j2), l2_level(preds, gts, j1), 4.0 ** (j1 - j2))


def l_diff(preds: Sequence[DensityMap], gts: Sequence[DensityMap], j: int) -> float:
    """Difference loss for the consecutive pair (j-1, j)."""
    if j < 1:
        raise ValueError(f"j must be >= 1 (level {j} has no coarser neighbour)")
    return l_diff_pair(preds, gts, j - 1, j)


def _sigma_from_terms(
    l2_vals: Mapping[int, float],
    ldiff_vals: Mapping[tuple[int, int], float],
    sub_levels: Sequence[int],
    epsilon: float,
) -> tuple[dict[int, float], bool]:
    guarded = False
    n0 = sub_levels[0]
    base = l2_vals[n0]
    if base < epsilon:
        base, guarded = epsilon, True
    sigma = {0: 4.0 ** (-n0) * base}
    for j in range(1, len(sub_levels)):
        a, b = sub_levels[j - 1], sub_levels[j]
        v = ldiff_vals[(a, b)]
        if v < epsilon:
            v, guarded = epsilon, True
        sigma[j] = v / (4.0 ** b - 4.0 ** a)
    return sigma, guarded


def _evaluate(preds, gts, n, epsilon, include_regularizer, want_gradient):
    pred_arr, gt_arr, level = _stacked(preds, gts)
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    if epsilon <= 0.0:
        raise ValueError(f"epsilon must be > 0, got {epsilon}")
    if n > level:
        raise ValueError(f"n = {n} exceeds prediction level {level}")

    pooled: dict[int, np.ndarray] = {}
    l2_vals: dict[int, float] = {}
    for i in range(n + 1):
        pooled[i], l2_vals[i] = _pooled_sq_err(pred_arr, gt_arr, level, i)
    ldiff_vals = {
        (j - 1, j): _clamped_diff(l2_vals[j], l2_vals[j - 1], 0.25) for j in range(1, n + 1)
    }
    pml = math.log(l2_vals[0] + epsilon)
    for j in range(1, n + 1):
        pml += math.log(ldiff_vals[(j - 1, j)] + epsilon)

    regularizer = 0.0
    if include_regularizer:
        if level not in pooled:
            pooled[level], l2_vals[level] = _pooled_sq_err(pred_arr, gt_arr, level, level)
        regularizer = l2_vals[level]

    sigma, guarded = _sigma_from_terms(l2_vals, ldiff_vals, tuple(range(n + 1)), epsilon)
    breakdown = LossBreakdown(
        l2_per_level=l2_vals,
        ldiff_per_pair=ldiff_vals,
        pml=pml,
        regularizer=regularizer,
        total=pml + regularizer,
        sigma_sq=sigma,
        epsilon=epsilon,
        sigma_guarded=guarded,
    )
    if not want_gradient:
        return breakdown, None

    weights = {0: 1.0 / (l2_vals[0] + epsilon)}
    for j in range(1, n + 1):
        weights[j] = 1.0 / (ldiff_vals[(j - 1, j)] + epsilon)
    # one coefficient per level: w_j from log l_diff(j), minus a quarter of
    # w_{j+1} from the subtracted coarser term inside l_diff(j+1)
    coef = {i: 0.0 for i in range(n + 1)}
    coef[0] += weights[0]
    for j in range(1, n + 1):
        coef[j] += weights[j]
        coef[j - 1] -= 0.25 * weights[j]

    grad = np.zeros_like(pred_arr)
    for i in range(n + 1):
        grad += coef[i] * _replicate(pooled[i], i, level)
    if include_regularizer:
        grad += pooled[level]  # pooling at the top level is the identity
    grad *= 2.0 / len(preds)
    grads = [DensityMap(level, grad[b]) for b in range(len(preds))]
    return breakdown, grads


def pml_loss(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    n: int,
    epsilon: float = DEFAULT_EPSILON,
) -> LossBreakdown:
    """Log-sum loss over levels 0..n, without the full-resolution regularizer."""
    return _evaluate(preds, gts, n, epsilon, include_regularizer=False, want_gradient=False)[0]


def total_loss(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    n: int,
    epsilon: float = DEFAULT_EPSILON,
) -> LossBreakdown:
    """Log-sum loss over levels 0..n plus the plain full-resolution squared error."""
    return _evaluate(preds, gts, n, epsilon, include_regularizer=True, want_gradient=False)[0]


def loss_value_and_gradient(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    n: int,
    epsilon: float = DEFAULT_EPSILON,
    include_regularizer: bool = True,
) -> tuple[LossBreakdown, list[DensityMap]]:
    """Breakdown and per-cell gradient in one pass (training hot path)."""
    breakdown, grads = _evaluate(preds, gts, n, epsilon, include_regularizer, want_gradient=True)
    return breakdown, grads


def loss_gradient(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    n: int,
    epsilon: float = DEFAULT_EPSILON,
    include_regularizer: bool = True,
) -> list[DensityMap]:
    """Derivative of the (total) loss with respect to every predicted cell.

    Each log term contributes ``1 / (term + eps)`` times the gradient of its
    inner quadratic; the quadratic's gradient is ``(2/B)`` times the coarse
    residual replicated up to the prediction grid. The weights reuse exactly
    the values the loss evaluation produces, so the gradient differentiates
    the computed loss, clamps included.
    """
    return loss_value_and_gradient(preds, gts, n, epsilon, include_regularizer)[1]


def optimal_sigma(breakdown: LossBreakdown, levels: ResolutionSet | Sequence[int]) -> dict[int, float]:
    """Likelihood-maximizing variances for the sub-levels of ``levels``.

    Requires the breakdown to carry the level/pair terms the set needs (a
    ``total_loss`` breakdown covers the dense set {0..n} plus L). Values
    below the breakdown's epsilon fall back to epsilon, mirroring the log
    guard.
    """
    levels = ResolutionSet.of(levels)
    subs = levels.sub_levels
    if not subs:
        raise ValueError("resolution set needs at least one sub-level below the prediction level")
    try:
        sigma, _ = _sigma_from_terms(
            breakdown.l2_per_level, breakdown.ldiff_per_pair, subs, breakdown.epsilon
        )
    except KeyError as exc:
        raise KeyError(f"breakdown lacks the loss term for {exc.args[0]}") from None
    return sigma
