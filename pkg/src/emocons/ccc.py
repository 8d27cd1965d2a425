"""Concordance Correlation Coefficient: statistics, loss, and analytic gradients.

The agreement between two equal-length series x and y is measured as

    ccc = 2*cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))**2 + EPSILON)

with population (divide-by-n) moments, and the training loss is ``1 - ccc``.
The covariance form is algebraically identical to the classical
``2*rho*sigma_x*sigma_y`` numerator whenever both standard deviations are
positive, but it stays defined (and goes to 0) when either series is
constant. EPSILON = 1e-8 keeps the ratio finite when all moments vanish.

Gradients of the loss are derived analytically from the covariance form so
the same expression can be differentiated with respect to either argument;
both directions are needed because the joint training objective uses one CCC
term with the consensus as second argument and one with it as first.

Moments are accumulated with exactly-rounded compensated summation
(``math.fsum``) in a single pass per statistic; pooled batches can reach
tens of thousands of frames and plain accumulation would start shedding
digits there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

EPSILON = 1e-8

#: Pooling modes for batched CCC: one CCC over all concatenated frames, or
#: the mean of per-window losses.
POOLINGS = ("pooled", "per_window_mean")


@dataclass(frozen=True)
class CccStats:
    """Population moments of a pair of series.

    ``cov`` equals ``rho * sigma_x * sigma_y``; together with the means and
    variances it is everything the CCC needs.
    """

    mu_x: float
    mu_y: float
    var_x: float
    var_y: float
    cov: float
    n: int

    def __post_init__(self):
        if self.var_x < 0 or self.var_y < 0:
            raise ContractError("variances must be nonnegative")
        bound = math.sqrt(self.var_x * self.var_y) + 1e-12
        if abs(self.cov) > bound:
            raise ContractError(
                f"covariance {self.cov} exceeds Cauchy-Schwarz bound {bound}"
            )


@dataclass(frozen=True, eq=False)
class CccResult:
    """CCC value, its loss, and optional per-element gradients of the loss."""

    ccc: float
    loss: float
    grad_x: np.ndarray | None = None
    grad_y: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class CccBatchResult:
    """Aggregate of a batch of series pairs under a pooling mode."""

    ccc: float
    loss: float
    per_pair_loss: tuple[float, ...]
    grad_xs: list[np.ndarray] | None = None
    grad_ys: list[np.ndarray] | None = None


def _as_series(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ContractError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def ccc_stats(x, y) -> CccStats:
    """Population means, variances, and covariance of two aligned series.

    Raises ContractError if the lengths differ or fewer than 2 samples are
    given (a single point has no defined correlation).
    """
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    n = x.size
    if y.size != n:
        raise ContractError(f"length mismatch: {n} vs {y.size}")
    if n < 2:
        raise ContractError(f"need at least 2 samples, got {n}")

    sx = math.fsum(x.tolist())
    sy = math.fsum(y.tolist())
    sxx = math.fsum((x * x).tolist())
    syy = math.fsum((y * y).tolist())
    sxy = math.fsum((x * y).tolist())

    mu_x = sx / n
    mu_y = sy / n
    # one-pass moment formulas; the fsum totals are exact, so the only
    # rounding happens in these final subtractions
    var_x = max(sxx / n - mu_x * mu_x, 0.0)
    var_y = max(syy / n - mu_y * mu_y, 0.0)
    cov = sxy / n - mu_x * mu_y
    return CccStats(mu_x=mu_x, mu_y=mu_y, var_x=var_x, var_y=var_y, cov=cov, n=n)


def ccc_from_stats(s: CccStats) -> float:
    return 2.0 * s.cov / (s.var_x + s.var_y + (s.mu_x - s.mu_y) ** 2 + EPSILON)


def ccc_loss(x, y, want_grad_x: bool = False, want_grad_y: bool = False) -> CccResult:
    """CCC loss ``1 - ccc(x, y)`` with optional analytic gradients.

    The gradients differentiate the implemented epsilon-regularized ratio,
    so they match finite differences of this exact function. With
    D = var_x + var_y + (mu_x - mu_y)^2 + EPSILON:

        d loss / d x_k = (2 / (n*D)) * (ccc*((x_k - mu_x) + (mu_x - mu_y)) - (y_k - mu_y))

    and symmetrically for y.
    """
    x = _as_series(x, "x")
    y = _as_series(y, "y")
    s = ccc_stats(x, y)
    denom = s.var_x + s.var_y + (s.mu_x - s.mu_y) ** 2 + EPSILON
    ccc = 2.0 * s.cov / denom

    grad_x = grad_y = None
    if want_grad_x or want_grad_y:
        scale = 2.0 / (s.n * denom)
        dmu = s.mu_x - s.mu_y
        if want_grad_x:
            grad_x = scale * (ccc * ((x - s.mu_x) + dmu) - (y - s.mu_y))
        if want_grad_y:
            grad_y = scale * (ccc * ((y - s.mu_y) - dmu) - (x - s.mu_x))
    return CccResult(ccc=ccc, loss=1.0 - ccc, grad_x=grad_x, grad_y=grad_y)


def ccc_batch_loss(
    xs,
    ys,
    pooling: str = "per_window_mean",
    want_grad_x: bool = False,
    want_grad_y: bool = False,
) -> CccBatchResult:
    """CCC loss over a batch of series pairs.

    pooling="pooled" concatenates all frames and computes one CCC;
    pooling="per_window_mean" averages the per-pair losses. Gradients are
    consistent with the chosen reduction (slices of the pooled gradient, or
    per-pair gradients divided by the pair count).
    """
    if pooling not in POOLINGS:
        raise ContractError(f"unknown pooling {pooling!r}, expected one of {POOLINGS}")
    if len(xs) != len(ys):
        raise ContractError(f"batch length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) == 0:
        raise ContractError("empty batch")

    xs = [_as_series(x, "x") for x in xs]
    ys = [_as_series(y, "y") for y in ys]
    for k, (x, y) in enumerate(zip(xs, ys)):
        if x.size != y.size:
            raise ContractError(f"pair {k}: length mismatch {x.size} vs {y.size}")

    if pooling == "pooled":
        xcat = np.concatenate(xs)
        ycat = np.concatenate(ys)
        r = ccc_loss(xcat, ycat, want_grad_x=want_grad_x, want_grad_y=want_grad_y)
        grad_xs = grad_ys = None
        bounds = np.cumsum([0] + [x.size for x in xs])
        if want_grad_x:
            grad_xs = [r.grad_x[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        if want_grad_y:
            grad_ys = [r.grad_y[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        per_pair = tuple(ccc_loss(x, y).loss for x, y in zip(xs, ys))
        return CccBatchResult(
            ccc=r.ccc, loss=r.loss, per_pair_loss=per_pair, grad_xs=grad_xs, grad_ys=grad_ys
        )

    k = len(xs)
    results = [
        ccc_loss(x, y, want_grad_x=want_grad_x, want_grad_y=want_grad_y)
        for x, y in zip(xs, ys)
    ]
    mean_loss = math.fsum(r.loss for r in results) / k
    grad_xs = [r.grad_x / k for r in results] if want_grad_x else None
    grad_ys = [r.grad_y / k for r in results] if want_grad_y else None
    return CccBatchResult(
        ccc=1.0 - mean_loss,
        loss=mean_loss,
        per_pair_loss=tuple(r.loss for r in results),
        grad_xs=grad_xs,
        grad_ys=grad_ys,
    )
