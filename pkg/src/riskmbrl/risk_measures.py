"""Static coherent risk measures on discrete distributions.

Every risk measure here is evaluated through its dual form: the worst-case
reweighting of the base probabilities inside the measure's risk envelope.
The reweighted probabilities are what the rollout generator samples from,
and the reweighted expectation is the risk value.

Values are rewards (larger is better), so "worst" means "smallest".
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc

__all__ = [
    "normal_cdf",
    "normal_ppf",
    "RiskSpec",
    "DiscreteDistribution",
    "distort_weights",
    "perturbation_rows",
    "cvar_perturbation",
    "wang_distortion",
    "wang_perturbation",
    "neutral_perturbation",
    "perturb",
    "risk_value",
    "static_cvar_of_samples",
    "gaussian_cvar",
]

_SQRT2 = math.sqrt(2.0)
_SQRT2PI = math.sqrt(2.0 * math.pi)

# Acklam's rational approximation to the probit (relative error < 1.2e-9),
# followed by one Halley step against the erfc-based CDF.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(x):
    """Standard normal CDF, ``0.5 * erfc(-x / sqrt(2))``. Accepts scalars or arrays."""
    out = 0.5 * erfc(-np.asarray(x, dtype=float) / _SQRT2)
    return float(out) if np.ndim(out) == 0 else out


def _tail_poly(q):
    num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
    den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
    return num / den


def normal_ppf(p):
    """Inverse standard normal CDF.

    Rational approximation (Acklam) refined with a single Halley step, which
    brings the absolute error below 1e-12 on [1e-10, 1 - 1e-10].
    ``normal_ppf(0) = -inf`` and ``normal_ppf(1) = +inf``.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0.0) | (p_arr > 1.0)) or np.any(np.isnan(p_arr)):
        raise ValueError("probabilities must lie in [0, 1]")
    x = np.empty_like(p_arr)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        lo = p_arr < _P_LOW
        hi = p_arr > 1.0 - _P_LOW
        mid = ~(lo | hi)

        q = np.sqrt(-2.0 * np.log(p_arr[lo]))
        x[lo] = _tail_poly(q)
        q = np.sqrt(-2.0 * np.log1p(-p_arr[hi]))
        x[hi] = -_tail_poly(q)
        q = p_arr[mid] - 0.5
        r = q * q
        num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num / den

        interior = (p_arr > 0.0) & (p_arr < 1.0)
        xi = x[interior]
        e = 0.5 * erfc(-xi / _SQRT2) - p_arr[interior]
        u = e * _SQRT2PI * np.exp(0.5 * xi * xi)
        # exp overflows for subnormal p; the rational estimate is kept there
        x[interior] = np.where(np.isfinite(u), xi - u / (1.0 + 0.5 * xi * u), xi)
    x[p_arr == 0.0] = -np.inf
    x[p_arr == 1.0] = np.inf
    return float(x) if x.ndim == 0 else x


@dataclass(frozen=True)
class RiskSpec:
    """Which one-step risk measure to apply: ``neutral``, ``cvar`` or ``wang``.

    ``param`` is alpha in (0, 1] for CVaR and eta >= 0 for Wang; it is ignored
    for the neutral measure.
    """

    kind: str = "neutral"
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in ("neutral", "cvar", "wang"):
            raise ValueError(f"unknown risk measure {self.kind!r}")
        if self.kind == "cvar" and not (0.0 < self.param <= 1.0):
            raise ValueError(f"CVaR alpha must lie in (0, 1], got {self.param}")
        if self.kind == "wang" and not self.param >= 0.0:
            raise ValueError(f"Wang eta must be >= 0, got {self.param}")

    @classmethod
    def neutral(cls) -> RiskSpec:
        return cls("neutral", 0.0)

    @classmethod
    def cvar(cls, alpha: float) -> RiskSpec:
        return cls("cvar", float(alpha))

    @classmethod
    def wang(cls, eta: float) -> RiskSpec:
        return cls("wang", float(eta))

    @classmethod
    def parse(cls, text: str) -> RiskSpec:
        """Parse ``"neutral"``, ``"cvar:0.5"`` or ``"wang:0.75"``."""
        text = text.strip().lower()
        if text == "neutral":
            return cls.neutral()
        kind, sep, value = text.partition(":")
        if not sep or kind not in ("cvar", "wang"):
            raise ValueError(f"cannot parse risk spec {text!r}; expected neutral, cvar:A or wang:E")
        return cls(kind, float(value))

    def __str__(self) -> str:
        return "neutral" if self.kind == "neutral" else f"{self.kind}:{self.param!r}"


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite distribution over real values.

    ``payload`` carries an opaque integer per support point (for example the
    index of the successor state a value was computed from). It is the
    tie-breaker when two values are equal.
    """

    values: np.ndarray
    weights: np.ndarray = None
    payload: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size == 0:
            raise ValueError("distribution support must be non-empty")
        if self.weights is None:
            weights = np.full(values.size, 1.0 / values.size)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if weights.shape != values.shape:
            raise ValueError("weights must align with values")
        if np.any(weights < 0.0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        payload = np.arange(values.size) if self.payload is None else np.asarray(self.payload)
        if payload.shape != values.shape:
            raise ValueError("payload must align with values")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "payload", payload)

    @classmethod
    def uniform(cls, values, payload=None) -> DiscreteDistribution:
        return cls(values, None, payload)

    @property
    def size(self) -> int:
        return self.values.size

    def is_uniform(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.size) <= tol))

    def expectation(self) -> float:
        return float(self.weights @ self.values)


def wang_distortion(tau, eta: float):
    """Wang distortion ``g(tau) = Phi(Phi^-1(tau) + eta)``."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    tau_arr = np.asarray(tau, dtype=float)
    if np.any((tau_arr < 0.0) | (tau_arr > 1.0)):
        raise ValueError("tau must lie in [0, 1]")
    out = np.asarray(normal_cdf(np.asarray(normal_ppf(tau_arr)) + eta), dtype=float)
    # keep the endpoints exact
    out = np.where(tau_arr == 0.0, 0.0, np.where(tau_arr == 1.0, 1.0, out))
    return float(out) if out.ndim == 0 else out


def _sorted_weights(p_sorted: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Worst-case weights for probabilities already sorted worst-first."""
    if spec.kind == "neutral":
        return p_sorted.copy()
    if spec.kind == "cvar":
        alpha = spec.param
        before = np.cumsum(p_sorted, axis=-1) - p_sorted
        # greedy fill: each outcome gets at most p/alpha until the unit budget runs out
        return np.minimum(p_sorted / alpha, np.clip(1.0 - before / alpha, 0.0, None))
    cum = np.cumsum(p_sorted, axis=-1)
    cum[..., -1] = 1.0
    g = wang_distortion(np.clip(cum, 0.0, 1.0), spec.param)
    return np.diff(g, prepend=0.0, axis=-1)


def distort_weights(values, probs, spec: RiskSpec, payload=None) -> np.ndarray:
    """Worst-case reweighting of ``probs`` within the envelope of ``spec``.

    Works for arbitrary (non-uniform) base probabilities. The result is
    aligned with the input order. Tied values share their group's mass in
    proportion to their base probability, so the result does not depend on
    the order in which ties are presented.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    probs = np.asarray(probs, dtype=float).reshape(-1)
    if values.size == 0:
        raise ValueError("distribution support must be non-empty")
    if spec.kind == "neutral":
        return probs.copy()
    keys = np.arange(values.size) if payload is None else np.asarray(payload)
    order = np.lexsort((keys, values))
    v_sorted = values[order]
    p_sorted = probs[order]
    w_sorted = _sorted_weights(p_sorted, spec)

    if values.size > 1 and np.any(v_sorted[1:] == v_sorted[:-1]):
        starts = np.flatnonzero(np.r_[True, v_sorted[1:] != v_sorted[:-1]])
        ends = np.r_[starts[1:], values.size]
        for lo, hi in zip(starts, ends):
            if hi - lo < 2:
                continue
            mass = w_sorted[lo:hi].sum()
            base = p_sorted[lo:hi].sum()
            if base > 0:
                w_sorted[lo:hi] = mass * p_sorted[lo:hi] / base
            else:
                w_sorted[lo:hi] = mass / (hi - lo)

    out = np.empty_like(w_sorted)
    out[order] = w_sorted
    return out


def perturbation_rows(values: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Worst-case weights for each row of ``values`` under uniform base weights.

    ``values`` has shape ``(n, m)``; each row is an ``m``-point uniform
    distribution. Rows containing ties fall back to :func:`distort_weights`.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] == 0:
        raise ValueError("values must have shape (n, m) with m >= 1")
    n, m = values.shape
    if spec.kind == "neutral":
        return np.full((n, m), 1.0 / m)
    order = np.argsort(values, axis=1, kind="stable")
    p_sorted = np.full((n, m), 1.0 / m)
    w_sorted = _sorted_weights(p_sorted, spec)
    out = np.empty_like(w_sorted)
    np.put_along_axis(out, order, w_sorted, axis=1)
    v_sorted = np.take_along_axis(values, order, axis=1)
    tied = np.flatnonzero(np.any(v_sorted[:, 1:] == v_sorted[:, :-1], axis=1)) if m > 1 else []
    for i in tied:
        out[i] = distort_weights(values[i], p_sorted[i], spec)
    return out


def _require_uniform(dist: DiscreteDistribution):
    if not dist.is_uniform():
        raise ValueError("perturbation is defined for uniform sample distributions only")


def cvar_perturbation(dist: DiscreteDistribution, alpha: float) -> np.ndarray:
    """CVaR-adversarial probabilities for a uniform ``m``-sample distribution.

    Samples strictly below VaR_alpha get ``1/(m*alpha)``, samples above get
    zero, and the VaR sample(s) receive whatever mass is left.
    """
    spec = RiskSpec.cvar(alpha)
    _require_uniform(dist)
    return distort_weights(dist.values, dist.weights, spec, dist.payload)


def wang_perturbation(dist: DiscreteDistribution, eta: float) -> np.ndarray:
    """Wang-distorted probabilities: the i-th worst of m samples gets g(i/m) - g((i-1)/m)."""
    spec = RiskSpec.wang(eta)
    _require_uniform(dist)
    return distort_weights(dist.values, dist.weights, spec, dist.payload)


def neutral_perturbation(dist: DiscreteDistribution) -> np.ndarray:
    return dist.weights.copy()


def perturb(dist: DiscreteDistribution, spec: RiskSpec) -> np.ndarray:
    if spec.kind == "neutral":
        return neutral_perturbation(dist)
    if spec.kind == "cvar":
        return cvar_perturbation(dist, spec.param)
    return wang_perturbation(dist, spec.param)


def risk_value(dist: DiscreteDistribution, spec: RiskSpec) -> float:
    """Risk of ``dist``: the expectation under its worst-case reweighting."""
    return float(perturb(dist, spec) @ dist.values)


def static_cvar_of_samples(returns, alpha: float) -> float:
    """Empirical CVaR: mean of the ``ceil(alpha * n)`` smallest returns."""
    returns = np.asarray(returns, dtype=float).reshape(-1)
    if returns.size == 0:
        raise ValueError("need at least one return")
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    k = max(1, math.ceil(alpha * returns.size - 1e-9))
    return float(np.mean(np.sort(returns)[:k]))


def gaussian_cvar(mu: float, sigma: float, alpha: float) -> float:
    """Closed-form lower-tail CVaR of N(mu, sigma^2).

    ``CVaR_alpha = mu - sigma * phi(Phi^-1(alpha)) / alpha``
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly inside (0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    z = normal_ppf(alpha)
    return mu - sigma / (alpha * _SQRT2PI) * math.exp(-0.5 * z * z)
