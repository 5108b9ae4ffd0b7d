"""Point estimators, variance estimators, and confidence intervals.

Every estimator here is a pure function of its vectors. The weighted-mean
family all share the generalized unequal-probability (Hajek) form
``sum(y_i/w_i) / sum(1/w_i)``; what changes between estimators is where the
weights come from (resampling frequencies, reported degrees, exact inclusion
probabilities, or nothing at all for the sample mean).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import ConfigurationError

__all__ = [
    "EstimateResult",
    "VarianceDiagnostics",
    "ESTIMATOR_IDS",
    "VARIANCE_IDS",
    "hajek_mean",
    "degree_weighted_mean",
    "variance_simple_n",
    "variance_simple_taylor",
    "variance_taylor_edges",
    "variance_taylor_diag",
    "variance_taylor_conservative",
    "wr_mean",
    "variance_wr",
    "ratio_mean",
    "ratio_variance",
    "normal_quantile",
    "confidence_interval",
    "compute_estimate",
]

ESTIMATOR_IDS = ("adherent", "brewer_pi", "vh_current", "sample_mean", "adherent_wr", "ratio")
VARIANCE_IDS = (
    "simple_n",
    "simple_taylor",
    "taylor_edges",
    "taylor_diag",
    "taylor_conservative",
    "wr",
    "ratio",
)


@dataclass
class VarianceDiagnostics:
    """Counters for numerically awkward variance outcomes."""

    negative_clamps: int = 0


@dataclass(frozen=True)
class EstimateResult:
    """One point estimate with its variance estimate and symmetric interval."""

    estimator_id: str
    variance_id: str
    point: float
    variance: float
    half_width: float
    alpha: float = 0.05

    @property
    def lo(self) -> float:
        return self.point - self.half_width

    @property
    def hi(self) -> float:
        return self.point + self.half_width

    def csv_row(self, variable: str) -> list:
        return [
            variable,
            self.estimator_id,
            self.variance_id,
            self.point,
            self.variance,
            self.half_width,
            self.lo,
            self.hi,
        ]


def _as_vectors(*arrays) -> tuple[np.ndarray, ...]:
    out = tuple(np.asarray(a, dtype=np.float64) for a in arrays)
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise ValueError("input vectors must have equal length")
    if n == 0:
        raise ValueError("input vectors are empty")
    return out


def hajek_mean(y, w) -> float:
    """Generalized unequal-probability mean: sum(y_i/w_i) / sum(1/w_i).

    Works with any positive weights proportional to inclusion probability;
    a common scale factor cancels between numerator and denominator.
    """
    y, w = _as_vectors(y, w)
    if np.any(w <= 0):
        raise ValueError("all weights must be > 0")
    inv = 1.0 / w
    return float(np.dot(y, inv) / inv.sum())


def degree_weighted_mean(y, degrees) -> float:
    """Hajek mean with reported degree as the weight (Volz-Heckathorn form).

    Degree-0 nodes cannot be recruited over links, so they are rejected.
    """
    y, d = _as_vectors(y, degrees)
    if np.any(d <= 0):
        raise ValueError("degree-weighted mean requires all degrees >= 1")
    return hajek_mean(y, d)


def variance_simple_n(y, w, point: float) -> float:
    """Variance from treating the n per-unit pseudo-values as uncorrelated.

    t_i = n * (y_i/w_i) / sum(1/w_j) each estimates the mean on its own; the
    estimator is their sample variance divided by n.
    """
    y, w = _as_vectors(y, w)
    n = len(y)
    if n < 2:
        raise ValueError("variance_simple_n requires n >= 2")
    inv = 1.0 / w
    t = n * y * inv / inv.sum()
    return float(np.sum((t - point) ** 2) / (n * (n - 1)))


def variance_simple_taylor(y, w, point: float) -> float:
    """Simplified Taylor-linearization variance: centered terms over w_i^2."""
    y, w = _as_vectors(y, w)
    inv_total = (1.0 / w).sum()
    return float(np.sum((y - point) ** 2 / w**2) / inv_total**2)


def variance_taylor_edges(
    y,
    f,
    f_pairs: dict[tuple[int, int], float],
    point: float,
    diagnostics: VarianceDiagnostics | None = None,
) -> float:
    """Linearization variance restricted to pairs joined by a sample edge.

    Off-diagonal terms use joint frequencies f_ij only for the sample edge
    set; each recorded (i, j) must satisfy f_ij > 0. Negative totals are
    clamped to 0 (and counted) so the result is usable in an interval.
    """
    y, f = _as_vectors(y, f)
    inv_total = (1.0 / f).sum()
    centered = y - point
    total = float(np.sum((f - 1.0) * centered**2 / f))
    for (i, j), fij in f_pairs.items():
        if fij <= 0:
            raise ValueError(f"pair frequency for ({i}, {j}) must be > 0")
        delta = (fij - f[i] * f[j]) / fij
        total += delta * (centered[i] / f[i]) * (centered[j] / f[j])
    value = total / inv_total**2
    if value < 0:
        if diagnostics is not None:
            diagnostics.negative_clamps += 1
        return 0.0
    return value


def variance_taylor_diag(y, f, point: float) -> float:
    """Diagonal-only linearization variance with (1 - f_i) coefficients."""
    y, f = _as_vectors(y, f)
    inv_total = (1.0 / f).sum()
    return float(np.sum((1.0 - f) * (y - point) ** 2 / f) / inv_total**2)


def variance_taylor_conservative(y, f, point: float) -> float:
    """Diagonal variance with the (1 - f_i) coefficients dropped.

    Always >= variance_taylor_diag, giving wider, more conservative
    intervals.
    """
    y, f = _as_vectors(y, f)
    inv_total = (1.0 / f).sum()
    return float(np.sum((y - point) ** 2 / f) / inv_total**2)


def wr_mean(y, m, g) -> float:
    """With-replacement estimator from selection counts.

    m_i is the number of times unit i was selected in the original design;
    g_i is its mean selection count per resampling iteration.
    """
    y, m, g = _as_vectors(y, m, g)
    if np.any(g <= 0):
        raise ValueError("all mean selection counts g_i must be > 0")
    if np.any(m < 1):
        raise ValueError("all original selection counts m_i must be >= 1")
    return float(np.dot(m * y, 1.0 / g) / (m / g).sum())


def variance_wr(y, m, g, point: float) -> float:
    """Variance for the with-replacement estimator."""
    y, m, g = _as_vectors(y, m, g)
    if np.any(g <= 0):
        raise ValueError("all mean selection counts g_i must be > 0")
    denom = (m / g).sum() ** 2
    return float(np.sum(m * (y - point) ** 2 / g**2) / denom)


def ratio_mean(y, x, f) -> float:
    """Estimator of the ratio of two population means: sum(y/f) / sum(x/f)."""
    y, x, f = _as_vectors(y, x, f)
    if np.any(f <= 0):
        raise ValueError("all frequencies must be > 0")
    denom = (x / f).sum()
    if denom == 0:
        raise ValueError("ratio denominator sum(x_i/f_i) is zero")
    return float((y / f).sum() / denom)


def ratio_variance(y, x, f, rhat: float) -> float:
    """Linearization variance of the ratio, residuals y_i - x_i * rhat."""
    y, x, f = _as_vectors(y, x, f)
    denom = (x / f).sum() ** 2
    if denom == 0:
        raise ValueError("ratio denominator sum(x_i/f_i) is zero")
    return float(np.sum((y - x * rhat) ** 2 / f**2) / denom)


def normal_quantile(p: float) -> float:
    """Standard-normal quantile (accurate to well under 1e-9)."""
    return float(norm.ppf(p))


def confidence_interval(
    point: float, variance: float, alpha: float = 0.05
) -> tuple[float, float, float]:
    """Symmetric z-interval: point +/- z_{1-alpha/2} * sqrt(variance)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if variance < 0:
        raise ValueError("variance must be >= 0")
    half = normal_quantile(1.0 - alpha / 2.0) * float(np.sqrt(variance))
    return point - half, point + half, half


def compute_estimate(
    estimator_id: str,
    variance_id: str,
    y,
    *,
    f=None,
    degrees=None,
    pi=None,
    m=None,
    g=None,
    x=None,
    f_pairs=None,
    alpha: float = 0.05,
    diagnostics: VarianceDiagnostics | None = None,
) -> EstimateResult:
    """Dispatch on estimator/variance identity and package the result."""
    y = np.asarray(y, dtype=np.float64)
    if estimator_id == "adherent":
        weights = f
        point = hajek_mean(y, weights)
    elif estimator_id == "brewer_pi":
        weights = pi
        point = hajek_mean(y, weights)
    elif estimator_id == "vh_current":
        weights = degrees
        point = degree_weighted_mean(y, weights)
    elif estimator_id == "sample_mean":
        weights = np.ones_like(y)
        point = float(y.mean())
    elif estimator_id == "adherent_wr":
        if variance_id != "wr":
            raise ConfigurationError("adherent_wr pairs only with variance_id='wr'")
        point = wr_mean(y, m, g)
        weights = None
    elif estimator_id == "ratio":
        if variance_id != "ratio":
            raise ConfigurationError("ratio pairs only with variance_id='ratio'")
        point = ratio_mean(y, x, f)
        weights = None
    else:
        raise ConfigurationError(f"unknown estimator_id {estimator_id!r}")

    if variance_id == "simple_n":
        variance = variance_simple_n(y, weights, point)
    elif variance_id == "simple_taylor":
        variance = variance_simple_taylor(y, weights, point)
    elif variance_id == "taylor_edges":
        if f_pairs is None:
            raise ConfigurationError("taylor_edges requires pair frequencies")
        variance = variance_taylor_edges(y, weights, f_pairs, point, diagnostics)
    elif variance_id == "taylor_diag":
        variance = variance_taylor_diag(y, weights, point)
    elif variance_id == "taylor_conservative":
        variance = variance_taylor_conservative(y, weights, point)
    elif variance_id == "wr":
        variance = variance_wr(y, m, g, point)
    elif variance_id == "ratio":
        variance = ratio_variance(y, x, f, point)
    elif variance_id == "taylor_full":
        raise ConfigurationError(
            "the full all-pairs linearization variance is out of scope; "
            "use taylor_edges"
        )
    else:
        raise ConfigurationError(f"unknown variance_id {variance_id!r}")

    _, _, half = confidence_interval(point, variance, alpha)
    return EstimateResult(
        estimator_id=estimator_id,
        variance_id=variance_id,
        point=point,
        variance=variance,
        half_width=half,
        alpha=alpha,
    )
