"""Fitting the test-loss distribution and converting it to bits of bias.

Per-hypothesis mean squared test errors are modeled with a scaled
non-central Chi-squared (scale s, continuous dof k, noncentrality lam).
Parameters come from a closed-form method-of-moments inversion, optionally
refined by Nelder-Mead maximum likelihood in log-parameter space. The
required inductive bias at target error eps is -log CDF(eps), reported in
bits. The CDF is evaluated three ways: an exact Poisson-mixture series for
small dof, a normal-based closed-form approximation otherwise, and a
e^(-y^2/2) tail rule once the normal argument is deep below zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammainc, gammaln, ndtr

from .datasets import Dataset
from .errors import NumericalError
from .samples import HypothesisSamples

LN2 = math.log(2.0)
# Series terms are dropped once they fall 16 decades below the running peak.
SERIES_CUT = 16.0 * math.log(10.0)
LAMBDA_FLOOR = 1e-8
K_DOF_FLOOR = 1e-3
EPSILON_FLOOR = 1e-12
CHERNOFF_Y = -6.0
AUTO_EXACT_MAX_DOF = 20.0
AUTO_EXACT_MAX_LAMBDA = 50.0

TAIL_MODES = ("auto", "exact", "sankaran", "sankaran_chernoff")


@dataclass
class LossSamples:
    """Per-hypothesis test losses, normalized as the mean per output element."""

    losses: np.ndarray
    normalization: str = "mean_per_element"
    source: dict | None = None

    def __post_init__(self) -> None:
        losses = np.asarray(self.losses, dtype=np.float64).ravel()
        if losses.size < 1:
            raise ValueError("losses must be nonempty")
        if not np.all(np.isfinite(losses)) or np.any(losses < 0):
            raise ValueError("losses must be finite and nonnegative")
        if self.normalization != "mean_per_element":
            raise ValueError(f"unknown normalization {self.normalization!r}")
        self.losses = losses

    @property
    def num_samples(self) -> int:
        return self.losses.size


@dataclass(frozen=True)
class ChiSquaredFit:
    """Scaled non-central Chi-squared parameters for the loss distribution."""

    scale: float
    k_dof: float
    noncentrality: float
    fit_method: str = "mom"
    log_likelihood: float = float("nan")

    def __post_init__(self) -> None:
        if not (self.scale > 0):
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not (self.k_dof > 0):
            raise ValueError(f"k_dof must be positive, got {self.k_dof}")
        if self.noncentrality < 0:
            raise ValueError(f"noncentrality must be >= 0, got {self.noncentrality}")

    def moments(self) -> tuple[float, float, float]:
        """(mean, variance, third central moment) implied by the parameters."""
        s, k, lam = self.scale, self.k_dof, self.noncentrality
        return s * (k + lam), s**2 * (2 * k + 4 * lam), s**3 * (8 * k + 24 * lam)


@dataclass(frozen=True)
class SankaranTerms:
    """Intermediate quantities of the closed-form normal CDF approximation."""

    h: float
    p: float
    m: float
    y: float | np.ndarray


@dataclass(frozen=True)
class BiasEstimate:
    epsilon: float
    log_cdf: float
    bias_nats: float
    bias_bits: float
    tail_mode: str


@dataclass
class ConvergenceDiagnostic:
    """Finite-sample stability of the first three power moments.

    deviations[i] is the mean absolute relative deviation of per-subsample
    moment estimates (size sizes[i]) from the full-sample moments, maximized
    over the three moments; slope is its fitted log-log decay rate vs size.
    """

    sizes: list[int]
    moments: np.ndarray  # (len(sizes), 3), subsample-averaged estimates
    deviations: np.ndarray  # (len(sizes),)
    slope: float
    sigma: float
    seed: int = 0
    extra: dict = field(default_factory=dict)


def test_losses(samples: HypothesisSamples, data: Dataset) -> LossSamples:
    """Mean squared test error per hypothesis, averaged over points and channels."""
    preds = samples.predictions
    if preds.shape[1:] != data.test_Y.shape:
        raise ValueError(
            f"sample grid {preds.shape[1:]} does not match test targets {data.test_Y.shape}"
        )
    losses = np.mean((preds - data.test_Y[None, :, :]) ** 2, axis=(1, 2))
    return LossSamples(
        losses,
        source={"source": samples.source, "seed": samples.seed, "S": samples.num_samples},
    )


def _sample_moments(losses: np.ndarray) -> tuple[float, float, float]:
    m1 = float(np.mean(losses))
    centered = losses - m1
    return m1, float(np.mean(centered**2)), float(np.mean(centered**3))


def fit_mom(losses: LossSamples) -> ChiSquaredFit:
    """Closed-form method-of-moments fit from mean, variance, and skew.

    The 3x3 system mean = s(k+lam), var = s^2(2k+4lam),
    third = s^3(8k+24lam) reduces to a quadratic in s whose smaller root is
    exact; if it is unusable or gives lam < 0, lam is clamped to 0 and
    (s, k) refit from mean and variance alone.
    """
    if losses.num_samples < 3:
        raise ValueError(f"need at least 3 losses to fit, got {losses.num_samples}")
    m1, m2, m3 = _sample_moments(losses.losses)
    if m1 <= 0 or m2 <= 0:
        raise NumericalError("degenerate loss sample: zero mean or zero variance")
    s = lam = k = -1.0
    disc = m2 * m2 - 0.5 * m1 * m3
    if m3 > 0 and disc >= 0:
        s = (m2 - math.sqrt(disc)) / (2.0 * m1)
        if s > 0:
            lam = m2 / (2.0 * s * s) - m1 / s
            k = m1 / s - lam
    if s <= 0 or lam < 0 or k <= 0:
        # Central fallback: lam = 0, match mean and variance only. Covers
        # skew-deficient data, where the three-moment solve turns invalid.
        s = m2 / (2.0 * m1)
        k = 2.0 * m1 * m1 / m2
        lam = 0.0
    k = max(k, K_DOF_FLOOR)
    fit = ChiSquaredFit(scale=s, k_dof=k, noncentrality=lam, fit_method="mom")
    ll = float(np.sum(ncx2_logpdf(losses.losses, fit)))
    return ChiSquaredFit(s, k, lam, fit_method="mom", log_likelihood=ll)


def _central_chi2_logpdf(x: np.ndarray, dof: float) -> np.ndarray:
    half = 0.5 * dof
    return (half - 1.0) * np.log(x) - 0.5 * x - half * LN2 - gammaln(half)


_SERIES_BLOCK = 32


def _ncx2_logpdf_core(x: np.ndarray, k_dof: float, lam: float) -> np.ndarray:
    """Log density of the (unscaled) non-central Chi-squared.

    Poisson(lam/2)-weighted mixture of central Chi-squared(k_dof + 2j) log
    densities, combined by a running log-sum-exp. The term index starts at
    floor(lam/2) and expands in both directions (in blocks, for speed) until
    every point's latest term is 16 decades below its own running peak.
    """
    if lam <= 0:
        return _central_chi2_logpdf(x, k_dof)
    half_lam = 0.5 * lam
    log_half_lam = math.log(half_lam)
    log_x = np.log(x)
    half_x = 0.5 * x

    def block_terms(js: np.ndarray) -> np.ndarray:
        # (len(x), len(js)) matrix of log w_j + log chi2_{k+2j}(x)
        log_w = -half_lam + js * log_half_lam - gammaln(js + 1.0)
        half = 0.5 * k_dof + js
        return (
            np.outer(log_x, half - 1.0)
            + (log_w - half * LN2 - gammaln(half))
            - half_x[:, None]
        )

    peak = np.full(x.shape, -np.inf)
    acc = np.zeros_like(peak)

    def absorb(js: np.ndarray, edge: int) -> bool:
        """Fold a block into the running log-sum-exp; True once the block's
        outermost term (column `edge`) is negligible everywhere."""
        nonlocal peak, acc
        t = block_terms(js)
        new_peak = np.maximum(peak, t.max(axis=1))
        shift = np.exp(peak - new_peak, where=np.isfinite(peak), out=np.zeros_like(peak))
        acc = acc * shift + np.exp(t - new_peak[:, None]).sum(axis=1)
        peak = new_peak
        return bool(np.all(t[:, edge] < peak - SERIES_CUT))

    j0 = int(half_lam)
    lo = j0
    while not absorb(np.arange(lo, lo + _SERIES_BLOCK), edge=-1):
        lo += _SERIES_BLOCK
    hi = j0
    while hi > 0:
        js = np.arange(max(0, hi - _SERIES_BLOCK), hi)
        if absorb(js, edge=0):
            break
        hi = js[0]
    return peak + np.log(acc)


def ncx2_logpdf(x: np.ndarray | float, fit: ChiSquaredFit) -> np.ndarray | float:
    """Log density of the scaled non-central Chi-squared at x (-inf for x <= 0)."""
    arr = np.asarray(x, dtype=np.float64)
    scalar = arr.ndim == 0
    arr = np.atleast_1d(arr)
    out = np.full(arr.shape, -np.inf)
    pos = arr > 0
    if np.any(pos):
        out[pos] = _ncx2_logpdf_core(arr[pos] / fit.scale, fit.k_dof, fit.noncentrality)
        out[pos] -= math.log(fit.scale)
    return float(out[0]) if scalar else out


def fit_mle(losses: LossSamples, init: ChiSquaredFit) -> ChiSquaredFit:
    """Maximum-likelihood refinement by Nelder-Mead over log parameters.

    Searches (log s, log k, log(lam + 1e-8)); terminates when the simplex
    shrinks below 1e-8 or after 2000 iterations. The returned fit's
    log-likelihood is never below the initial fit's.
    """
    x = losses.losses
    if losses.num_samples < 3:
        raise ValueError(f"need at least 3 losses to fit, got {losses.num_samples}")
    init_ll = float(np.sum(ncx2_logpdf(x, init)))
    if not np.isfinite(init_ll):
        raise NumericalError(
            "log-likelihood is non-finite at the initial fit (zero losses present?)"
        )

    def unpack(u: np.ndarray) -> tuple[float, float, float]:
        s = math.exp(u[0])
        k = max(math.exp(u[1]), K_DOF_FLOOR)
        lam = max(math.exp(u[2]) - LAMBDA_FLOOR, 0.0)
        return s, k, lam

    def neg_ll(u: np.ndarray) -> float:
        if np.any(np.abs(u) > 700):
            return np.inf
        s, k, lam = unpack(u)
        # The mixture series needs O(sqrt(lam)) terms; loss data never
        # supports noncentralities anywhere near this cutoff.
        if lam > 1e7:
            return np.inf
        ll = np.sum(_ncx2_logpdf_core(x / s, k, lam)) - x.size * math.log(s)
        return -float(ll) if np.isfinite(ll) else np.inf

    u0 = np.array(
        [
            math.log(init.scale),
            math.log(init.k_dof),
            math.log(init.noncentrality + LAMBDA_FLOOR),
        ]
    )
    res = minimize(
        neg_ll,
        u0,
        method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10, "maxiter": 2000, "maxfev": 4000},
    )
    best_ll = -float(res.fun)
    if not np.isfinite(best_ll) or best_ll < init_ll:
        s, k, lam = init.scale, init.k_dof, init.noncentrality
        best_ll = init_ll
    else:
        s, k, lam = unpack(res.x)
    return ChiSquaredFit(s, k, lam, fit_method="mle", log_likelihood=best_ll)


def sankaran_cdf(
    z: np.ndarray | float, k_dof: float, lam: float
) -> tuple[np.ndarray | float, SankaranTerms]:
    """Closed-form normal approximation to the non-central Chi-squared CDF.

    Returns the probability and the intermediate terms, including the
    normal argument y that the tail rule in log_cdf inspects.
    """
    if k_dof + lam <= 0:
        raise ValueError("k_dof + lam must be positive")
    z_arr = np.asarray(z, dtype=np.float64)
    scalar = z_arr.ndim == 0
    kl = k_dof + lam
    h = 1.0 - (2.0 / 3.0) * kl * (k_dof + 3.0 * lam) / (k_dof + 2.0 * lam) ** 2
    p = (k_dof + 2.0 * lam) / kl**2
    m = (h - 1.0) * (1.0 - 3.0 * h)
    center = 1.0 + h * p * (h - 1.0 - 0.5 * (2.0 - h) * m * p)
    denom = h * math.sqrt(2.0 * p) * (1.0 + 0.5 * m * p)
    y = (np.power(z_arr / kl, h) - center) / denom
    prob = ndtr(y)
    if scalar:
        y = float(y)
        prob = float(prob)
    return prob, SankaranTerms(h=h, p=p, m=m, y=y)


def _log_gammainc_lower(a: float, x: float) -> float:
    """log of the regularized lower incomplete gamma, stable for tiny values.

    Falls back to the Kummer series x^a e^-x / Gamma(a+1) * M(1, a+1, x)
    when the direct value underflows (only possible for x well below a,
    where that series converges quickly).
    """
    v = float(gammainc(a, x))
    if v > 1e-290:
        return math.log(v)
    term = 1.0
    total = 1.0
    denom = a
    for _ in range(100_000):
        denom += 1.0
        term *= x / denom
        total += term
        if term < total * 1e-18:
            break
    else:
        raise NumericalError(f"incomplete-gamma series did not converge (a={a}, x={x})")
    return a * math.log(x) - x - float(gammaln(a + 1.0)) + math.log(total)


def _ncx2_logcdf_series(z: float, k_dof: float, lam: float) -> float:
    """Exact log CDF of the non-central Chi-squared via the Poisson mixture.

    Each term pairs a Poisson(lam/2) log weight with the log regularized
    lower incomplete gamma of the corresponding central component; the same
    adaptive two-sided truncation as the density series applies.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    half_z = 0.5 * z
    if lam <= 0:
        return _log_gammainc_lower(0.5 * k_dof, half_z)
    half_lam = 0.5 * lam
    log_half_lam = math.log(half_lam)

    def term(j: int) -> float:
        log_w = -half_lam + j * log_half_lam - float(gammaln(j + 1.0))
        return log_w + _log_gammainc_lower(0.5 * k_dof + j, half_z)

    j0 = int(half_lam)
    peak = term(j0)
    acc = 1.0
    for direction, start in ((1, j0 + 1), (-1, j0 - 1)):
        j = start
        while j >= 0:
            t = term(j)
            if t > peak:
                acc = acc * math.exp(peak - t) + 1.0
                peak = t
            else:
                acc += math.exp(t - peak)
            if t < peak - SERIES_CUT:
                break
            j += direction
    return peak + math.log(acc)


def log_cdf(
    epsilon: float, fit: ChiSquaredFit, mode: str = "auto"
) -> tuple[float, str]:
    """Natural-log CDF of the fitted loss distribution at epsilon.

    mode 'auto' integrates the mixture exactly for small (k_dof, lam) and
    otherwise uses the normal approximation; whenever that approximation's
    argument y drops below -6 the e^(-y^2/2) tail rule takes over so the
    result stays finite. Returns (log_cdf <= 0, tail mode used).
    """
    if mode not in TAIL_MODES:
        raise ValueError(f"mode must be one of {TAIL_MODES}, got {mode!r}")
    if not (epsilon > 0):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    z = epsilon / fit.scale
    k, lam = fit.k_dof, fit.noncentrality
    branch = mode
    if mode == "auto":
        branch = "exact" if (k <= AUTO_EXACT_MAX_DOF and lam <= AUTO_EXACT_MAX_LAMBDA) else "sankaran"
    if branch == "exact":
        return min(_ncx2_logcdf_series(z, k, lam), 0.0), "exact"
    prob, terms = sankaran_cdf(z, k, lam)
    y = float(terms.y)
    if branch == "sankaran_chernoff":
        value = -0.5 * y * y if y < 0 else math.log(max(prob, 1e-300))
        return min(value, 0.0), "sankaran_chernoff"
    if y < CHERNOFF_Y:
        return min(-0.5 * y * y, 0.0), "sankaran_chernoff"
    return min(math.log(max(prob, 1e-300)), 0.0), "sankaran"


def inductive_bias(fit: ChiSquaredFit, epsilon: float, mode: str = "auto") -> BiasEstimate:
    """Required bias at target error epsilon: -log CDF(epsilon), in nats and bits."""
    lc, tail = log_cdf(epsilon, fit, mode)
    nats = max(-lc, 0.0)
    return BiasEstimate(
        epsilon=epsilon,
        log_cdf=lc,
        bias_nats=nats,
        bias_bits=nats / LN2,
        tail_mode=tail,
    )


def bias_of_model(accuracy: float, fit: ChiSquaredFit, mode: str = "auto") -> BiasEstimate:
    """Bias provided by a model reported via accuracy, using error = 1 - accuracy."""
    if not (0.0 <= accuracy <= 1.0):
        raise ValueError(f"accuracy must be in [0, 1], got {accuracy}")
    epsilon = max(1.0 - accuracy, EPSILON_FLOOR)
    return inductive_bias(fit, epsilon, mode)


def convergence_diagnostic(
    losses: LossSamples,
    sizes: list[int],
    sigma: float = 0.05,
    seed: int = 0,
) -> ConvergenceDiagnostic:
    """Moment-estimate stability across disjoint subsamples of the losses.

    For each size, the losses are permuted once and split into floor(S/size)
    disjoint subsamples; the reported deviation is the mean absolute relative
    gap between per-subsample power moments (orders 1..3) and the full-sample
    moments, maximized over the three orders. The slope is fit on sizes with
    a strictly positive deviation.
    """
    S = losses.num_samples
    sizes = [int(n) for n in sizes]
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly increasing")
    if sizes[0] < 1 or sizes[-1] > S:
        raise ValueError(f"sizes must lie in [1, {S}]")
    rng = np.random.default_rng(seed)
    arr = losses.losses[rng.permutation(S)]
    powers = np.stack([arr, arr**2, arr**3], axis=1)  # (S, 3)
    full = powers.mean(axis=0)
    scale = np.maximum(np.abs(full), 1e-300)
    avg_moments = np.empty((len(sizes), 3))
    deviations = np.empty(len(sizes))
    for i, n in enumerate(sizes):
        J = S // n
        subs = powers[: J * n].reshape(J, n, 3).mean(axis=1)  # (J, 3)
        avg_moments[i] = subs.mean(axis=0)
        deviations[i] = np.max(np.mean(np.abs(subs - full), axis=0) / scale)
    positive = deviations > 0
    if np.count_nonzero(positive) >= 2:
        slope = float(
            np.polyfit(np.log(np.asarray(sizes)[positive]), np.log(deviations[positive]), 1)[0]
        )
    else:
        slope = float("nan")
    return ConvergenceDiagnostic(
        sizes=sizes,
        moments=avg_moments,
        deviations=deviations,
        slope=slope,
        sigma=sigma,
        seed=seed,
    )


def bias_record(fit: ChiSquaredFit, estimate: BiasEstimate) -> dict:
    """The JSON-serializable fit+bias result record."""
    return {
        "s": fit.scale,
        "k_dof": fit.k_dof,
        "lambda": fit.noncentrality,
        "fit_method": fit.fit_method,
        "log_likelihood": fit.log_likelihood,
        "epsilon": estimate.epsilon,
        "bias_nats": estimate.bias_nats,
        "bias_bits": estimate.bias_bits,
        "tail_mode": estimate.tail_mode,
    }


def histogram_table(
    losses: LossSamples, fit: ChiSquaredFit, bins: int = 50
) -> np.ndarray:
    """Histogram rows (bin_left, bin_right, count, fitted_pdf at bin center)."""
    counts, edges = np.histogram(losses.losses, bins=bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    pdf = np.exp(np.asarray(ncx2_logpdf(centers, fit)))
    return np.column_stack([edges[:-1], edges[1:], counts.astype(np.float64), pdf])
