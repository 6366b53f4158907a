"""Marginal log-likelihood of density-map batches over a resolution set.

For a resolution set with sub-levels ``n_0 < ... < n_k`` (the prediction
level itself enters only through a localization term that density-map
training drops, so every value here is a *relative* log-likelihood), the
variance-dependent form is

    ll(sigma) = -1/2 * sum_{j=1..k} [ l_diff(n_{j-1}, n_j) / sigma_sq[j]
                                      + (4^{n_j} - 4^{n_{j-1}}) * log(2*pi*sigma_sq[j])
                                      + (n_j - n_{j-1}) * 4^{n_{j-1}} * log 4 ]
                -1/2 * ( l2(n_0) / sigma_sq[0] + 4^{n_0} * log(2*pi*sigma_sq[0]) )

Profiling out the variances at their closed-form optimum gives the
simplified form evaluated by ``log_likelihood``:

    ll* = -((2*pi - 1)/2) * 4^{n_k}
          - 1/2 * sum_{j=1..k} (4^{n_j} - 4^{n_{j-1}})
                  * log( 4^{n_j} * l_diff(n_{j-1}, n_j) / (4^{n_j} - 4^{n_{j-1}}) + eps )
          - 1/2 * 4^{n_0} * log( l2(n_0) + eps )

The guard ``eps`` is added to each complete log argument; that placement
keeps the refinement comparison below exact. For the dense set {0..n, L}
the sum collapses to ``special_case_likelihood``'s form with per-pair factor
4/3 and base weight 1.

Refining a resolution set (inserting intermediate levels, extending down to
level 0) never lowers ll*: each insertion replaces one log term with a
weighted pair whose weighted mean argument equals the original argument, so
concavity of log does the rest. ``verify_theorem`` checks this empirically
on randomized batches and resolution sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .loss import DEFAULT_EPSILON, l2_level, l_diff_pair
from .pyramid import DensityMap, ResolutionSet, maps_from_batch
from .rng import SplitMix64


@dataclass(frozen=True)
class LikelihoodReport:
    """Relative log-likelihood (localization term excluded) and its terms."""

    resolution_set: ResolutionSet
    loglik: float
    terms: dict[tuple[int, int], float]
    base_term: float
    constant_part: float


def _require_sub_levels(levels: ResolutionSet) -> tuple[int, ...]:
    subs = levels.sub_levels
    if not subs:
        raise ValueError(
            f"resolution set {levels.levels} has no sub-level below the prediction level"
        )
    return subs


def log_likelihood(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    levels: ResolutionSet | Iterable[int],
    epsilon: float = DEFAULT_EPSILON,
) -> LikelihoodReport:
    """Variance-profiled relative log-likelihood for an arbitrary resolution set."""
    levels = ResolutionSet.of(levels)
    subs = _require_sub_levels(levels)
    if levels.prediction_level > preds[0].level:
        raise ValueError(
            f"resolution set reaches level {levels.prediction_level}, maps are level {preds[0].level}"
        )
    n_k = subs[-1]
    constant = -0.5 * (2.0 * math.pi - 1.0) * 4.0 ** n_k
    terms: dict[tuple[int, int], float] = {}
    for a, b in zip(subs, subs[1:]):
        delta = 4.0 ** b - 4.0 ** a
        arg = 4.0 ** b * l_diff_pair(preds, gts, a, b) / delta
        terms[(a, b)] = -0.5 * delta * math.log(arg + epsilon)
    base = -0.5 * 4.0 ** subs[0] * math.log(l2_level(preds, gts, subs[0]) + epsilon)
    total = constant + base
    for a, b in zip(subs, subs[1:]):
        total += terms[(a, b)]
    return LikelihoodReport(
        resolution_set=levels,
        loglik=total,
        terms=terms,
        base_term=base,
        constant_part=constant,
    )


def special_case_likelihood(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    n: int,
    epsilon: float = DEFAULT_EPSILON,
) -> LikelihoodReport:
    """Collapsed form for the dense set {0..n} plus the prediction level."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    level = preds[0].level
    levels = ResolutionSet.dense(n, level)
    constant = -0.5 * (2.0 * math.pi - 1.0) * 4.0 ** n
    terms: dict[tuple[int, int], float] = {}
    for j in range(1, n + 1):
        delta = 4.0 ** j - 4.0 ** (j - 1)
        arg = (4.0 / 3.0) * l_diff_pair(preds, gts, j - 1, j)
        terms[(j - 1, j)] = -0.5 * delta * math.log(arg + epsilon)
    base = -0.5 * math.log(l2_level(preds, gts, 0) + epsilon)
    total = constant + base
    for j in range(1, n + 1):
        total += terms[(j - 1, j)]
    return LikelihoodReport(
        resolution_set=levels,
        loglik=total,
        terms=terms,
        base_term=base,
        constant_part=constant,
    )


def likelihood_with_variances(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    levels: ResolutionSet | Iterable[int],
    sigma_sq: Mapping[int, float],
) -> float:
    """Variance-dependent relative log-likelihood, before profiling out sigma.

    ``sigma_sq`` maps pair index j = 1..k and base index 0 to variances.
    Used to check that the closed-form variances are actually stationary.
    """
    levels = ResolutionSet.of(levels)
    subs = _require_sub_levels(levels)
    total = 0.0
    for j in range(1, len(subs)):
        a, b = subs[j - 1], subs[j]
        s = float(sigma_sq[j])
        if not s > 0.0:
            raise ValueError(f"sigma_sq[{j}] must be > 0, got {s}")
        delta = 4.0 ** b - 4.0 ** a
        total += -0.5 * (
            l_diff_pair(preds, gts, a, b) / s
            + delta * math.log(2.0 * math.pi * s)
            + (b - a) * 4.0 ** a * math.log(4.0)
        )
    s0 = float(sigma_sq[0])
    if not s0 > 0.0:
        raise ValueError(f"sigma_sq[0] must be > 0, got {s0}")
    total += -0.5 * (
        l2_level(preds, gts, subs[0]) / s0 + 4.0 ** subs[0] * math.log(2.0 * math.pi * s0)
    )
    return total


def optimal_variances(
    preds: Sequence[DensityMap],
    gts: Sequence[DensityMap],
    levels: ResolutionSet | Iterable[int],
    epsilon: float = DEFAULT_EPSILON,
) -> dict[int, float]:
    """Closed-form variance optimum for an arbitrary resolution set."""
    levels = ResolutionSet.of(levels)
    subs = _require_sub_levels(levels)
    base = max(l2_level(preds, gts, subs[0]), epsilon)
    sigma = {0: 4.0 ** (-subs[0]) * base}
    for j in range(1, len(subs)):
        a, b = subs[j - 1], subs[j]
        sigma[j] = max(l_diff_pair(preds, gts, a, b), epsilon) / (4.0 ** b - 4.0 ** a)
    return sigma


@dataclass(frozen=True)
class TheoremTrial:
    trial: int
    sparse_levels: tuple[int, ...]
    loglik_sparse: float
    loglik_dense: float
    diff: float
    violated: bool


@dataclass(frozen=True)
class TheoremReport:
    trials: tuple[TheoremTrial, ...]
    violations: int
    slack: float

    def to_csv(self) -> str:
        lines = ["trial,loglik_N,loglik_Nprime,diff,violated"]
        for t in self.trials:
            lines.append(
                f"{t.trial},{t.loglik_sparse!r},{t.loglik_dense!r},{t.diff!r},{int(t.violated)}"
            )
        return "\n".join(lines) + "\n"


def verify_theorem(
    trials: int,
    seed: int,
    level: int,
    n_k: int,
    batch: int = 2,
    epsilon: float = DEFAULT_EPSILON,
    slack: float = 1e-9,
) -> TheoremReport:
    """Compare sparse resolution sets against their dense refinement.

    Each trial draws a random prediction/ground-truth batch at ``level``, a
    random sparse sub-level set with maximum ``n_k``, and checks that the
    dense set {0..n_k, level} never scores a lower log-likelihood than the
    sparse one (beyond ``slack``). Trial t uses the stream seeded seed + t.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not 0 < n_k < level:
        raise ValueError(f"need 0 < n_k < level, got n_k={n_k}, level={level}")
    side = 1 << level
    dense = ResolutionSet.dense(n_k, level)
    rows = []
    violations = 0
    for t in range(trials):
        rng = SplitMix64(seed + t)
        pred = rng.uniform_block(batch * side * side).reshape(batch, side, side)
        gt = rng.uniform_block(batch * side * side).reshape(batch, side, side)
        subs = [i for i in range(n_k) if rng.uniform() < 0.5] + [n_k]
        sparse = ResolutionSet(tuple(subs) + (level,))
        preds = maps_from_batch(pred, level)
        gts = maps_from_batch(gt, level)
        ll_sparse = log_likelihood(preds, gts, sparse, epsilon).loglik
        ll_dense = log_likelihood(preds, gts, dense, epsilon).loglik
        diff = ll_dense - ll_sparse
        violated = diff < -slack
        violations += violated
        rows.append(
            TheoremTrial(
                trial=t,
                sparse_levels=sparse.levels,
                loglik_sparse=ll_sparse,
                loglik_dense=ll_dense,
                diff=diff,
                violated=violated,
            )
        )
    return TheoremReport(trials=tuple(rows), violations=violations, slack=slack)
