"""Dissipated work, heat variance and the round-trip P&L law.

For a deterministic round trip the P&L is Gaussian with mean ``-W`` (the
dissipated work) and variance ``sigma**2 * V`` (``V`` the time-integrated
squared inventory).  Everything else in this module derives from those two
numbers: the exact profit probability, the Chernoff bound
``exp(-W**2 / (2 sigma**2 V))`` and the market temperature ``W / (sigma**2 V)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy import integrate, optimize, special

from .exceptions import ConvergenceError, InvalidInputError, NonRoundTripError
from .impact_models import CallableImpact, ImpactModel, LinearImpact, PowerLawImpact
from .strategies import (
    Strategy,
    inventory,
    inventory_gram,
    inventory_rate_cross,
    position_variance,
    rate_power_integral,
    roundtrip_tolerance,
)
from .validation import check_positive, check_sigma


@dataclass(frozen=True)
class PnLStats:
    """Moments and tail quantities of the round-trip P&L.

    ``variance_term`` is ``int |q_t|^2 dt``; ``pnl_variance`` is the heat
    variance (``sigma**2 * variance_term`` for scalar volatility).
    ``beta_v`` is ``None`` when the heat variance vanishes.
    """

    work: float
    variance_term: float
    sigma: float | np.ndarray
    mean_pnl: float
    pnl_variance: float
    profit_prob_exact: float
    chernoff_bound: float
    beta_v: float | None

    @classmethod
    def from_moments(cls, work, variance_term, sigma=1.0, pnl_variance=None):
        sigma = check_sigma(sigma)
        if pnl_variance is None:
            if np.ndim(sigma) != 0:
                raise InvalidInputError("pnl_variance is required for a volatility matrix")
            pnl_variance = sigma * sigma * variance_term
        work = float(work)
        pnl_variance = float(pnl_variance)
        return cls(
            work=work,
            variance_term=float(variance_term),
            sigma=sigma,
            mean_pnl=-work,
            pnl_variance=pnl_variance,
            profit_prob_exact=_profit_probability(work, pnl_variance),
            chernoff_bound=_chernoff(work, pnl_variance),
            beta_v=work / pnl_variance if pnl_variance > 0 else None,
        )

    def to_dict(self):
        sigma = self.sigma.tolist() if isinstance(self.sigma, np.ndarray) else self.sigma
        return {
            "work": self.work,
            "variance_term": self.variance_term,
            "sigma": sigma,
            "mean_pnl": self.mean_pnl,
            "pnl_variance": self.pnl_variance,
            "profit_prob_exact": self.profit_prob_exact,
            "chernoff_bound": self.chernoff_bound,
            "beta_v": self.beta_v,
        }


class GaussianLaw(NamedTuple):
    mean: float
    variance: float

    @property
    def std(self):
        return math.sqrt(self.variance)


def _require_roundtrip(s, tol):
    if tol is None:
        tol = roundtrip_tolerance(s)
    q_T = inventory(s).terminal
    if np.any(np.abs(q_T) > tol):
        raise NonRoundTripError(q_T if q_T.size > 1 else float(q_T[0]), tol)


def temporary_work(temporary, s: Strategy, rtol=1e-10) -> float:
    """``int sum_i J(v_i) v_i dt`` for componentwise temporary impact."""
    if isinstance(temporary, (LinearImpact, PowerLawImpact)):
        return temporary.eta * rate_power_integral(s, temporary.cost_exponent, rtol=rtol)
    return general_work_lagrangian(
        lambda v, q: float(np.sum(temporary.cost(v))), s, rtol=rtol
    )


def permanent_work(permanent, s: Strategy) -> float:
    """``int q_t^T Lambda v_t dt``, integrated exactly."""
    cross = inventory_rate_cross(s)  # int q v^T
    return float(np.sum(permanent.matrix(s.assets) * cross))


def dissipated_work(model: ImpactModel, s: Strategy, tol=None) -> float:
    """Work ``W = int (J(v) v + I(v) q) dt`` of a round trip.

    The permanent term is integrated exactly.  With symmetric permanent impact
    it equals ``q^T Lambda q / 2`` at ``T`` and so vanishes up to rounding; that
    is checked rather than assumed.

    Raises
    ------
    NonRoundTripError
        If ``|q_T|`` exceeds ``tol`` (default ``1e-9 * max|v| * T``).
    """
    _check_assets(model, s)
    _require_roundtrip(s, tol)
    work = temporary_work(model.temporary, s)
    if model.permanent.is_matrix or model.permanent.lam != 0.0:
        perm = permanent_work(model.permanent, s)
        lam = model.permanent.matrix(s.assets)
        if np.allclose(lam, lam.T, rtol=0, atol=1e-14 * max(1.0, np.max(np.abs(lam)))):
            limit = 1e-9 * max(1.0, np.max(np.abs(lam))) * (s.rate_scale * s.horizon) ** 2
            if abs(perm) > limit:
                raise ConvergenceError(
                    f"permanent-impact work {perm:.3e} of a round trip exceeds {limit:.3e}",
                    achieved=abs(perm),
                )
        work += perm
    return float(work)


def _check_assets(model, s):
    if model.assets != s.assets:
        raise InvalidInputError(
            f"model has {model.assets} assets but the strategy has {s.assets}"
        )


def _quad_pieces(s):
    """Breakpoints splitting ``[0, T]`` where the integrand may have kinks."""
    points = list(s.knots)
    moving = s.slope != 0
    for k, i in zip(*np.nonzero(moving)):
        root = s.knots[k] - s.const[k, i] / s.slope[k, i]
        if s.knots[k] < root < s.knots[k + 1]:
            points.append(root)
    return np.unique(points)


def _quad(func, a, b, rtol, atol):
    res = integrate.quad(func, a, b, epsrel=rtol, epsabs=atol, limit=200, full_output=1)
    val, err = res[0], res[1]
    if len(res) > 3:
        # quad appends a message only when its error flag is set
        raise ConvergenceError(f"quadrature on [{a:.6g}, {b:.6g}] failed: {res[3]}", achieved=err)
    return val, err


def general_work_lagrangian(
    L: Callable, s: Strategy, rtol=1e-10, zero_tol=1e-12
) -> float:
    """``int_0^T L(v_t, q_t) dt`` by adaptive quadrature.

    ``L`` receives floats for a single asset and length-``d`` arrays otherwise.
    ``L(0, q)`` must vanish; this is spot-checked at every knot.
    """
    q_path = inventory(s)
    scalar = s.assets == 1

    def unpack(x):
        return float(x[0]) if scalar else x

    zero = 0.0 if scalar else np.zeros(s.assets)
    for qk in q_path.node_values:
        at_rest = float(L(zero, unpack(qk)))
        if abs(at_rest) > zero_tol:
            raise InvalidInputError(f"L(0, q) = {at_rest:.3g} != 0 at q = {qk}")

    def integrand(t):
        return float(L(unpack(s.rate(t)), unpack(q_path(t))))

    pieces = _quad_pieces(s)
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        val, _ = _quad(integrand, a, b, rtol, 1e-300)
        total += val
    return total


@dataclass(frozen=True)
class ExponentialKernel:
    """``G(tau) = kappa * exp(-rho * tau)``; ``rho = 0`` gives a constant (permanent-like) kernel."""

    kappa: float
    rho: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", check_positive(self.kappa, "kappa"))
        object.__setattr__(self, "rho", check_positive(self.rho, "rho", allow_zero=True))

    def __call__(self, tau):
        return self.kappa * np.exp(-self.rho * np.asarray(tau, dtype=float))

    def moments(self, a, b):
        """``(int_a^b G, int_a^b x G)`` for arrays ``0 <= a <= b``."""
        k, r = self.kappa, self.rho
        if r == 0.0:
            return k * (b - a), 0.5 * k * (b * b - a * a)
        a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        width = b - a
        e1, e2 = _decay_factors(r * width)
        ea = np.exp(-r * a)
        m0 = k * ea * width * e1
        m1 = k * ea * (a * width * e1 + width * width * e2)
        return m0, m1


def _decay_factors(x):
    """``(1 - e^-x) / x`` and ``(1 - (1 + x) e^-x) / x**2``, stable as ``x -> 0``."""
    x = np.asarray(x, dtype=float)
    small = x < 0.1
    safe = np.where(small, 1.0, x)
    e1_direct = -np.expm1(-safe) / safe
    e2_direct = (-np.expm1(-safe) - safe * np.exp(-safe)) / (safe * safe)
    # Taylor series: e1 = sum (-x)^n / (n+1)!,  e2 = sum (n+1) (-x)^n / (n+2)!
    e1_series = np.zeros_like(x)
    e2_series = np.zeros_like(x)
    power = np.ones_like(x)
    for n in range(14):
        e1_series = e1_series + power / math.factorial(n + 1)
        e2_series = e2_series + (n + 1) * power / math.factorial(n + 2)
        power = power * -x
    return np.where(small, e1_series, e1_direct), np.where(small, e2_series, e2_direct)


@dataclass(frozen=True)
class PowerLawKernel:
    """``G(tau) = kappa * tau**(-delta)`` with ``0 < delta < 1`` (integrable at 0)."""

    kappa: float
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "kappa", check_positive(self.kappa, "kappa"))
        delta = check_positive(self.delta, "delta")
        if delta >= 1:
            raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
        object.__setattr__(self, "delta", delta)

    def __call__(self, tau):
        return self.kappa * np.asarray(tau, dtype=float) ** (-self.delta)

    def moments(self, a, b):
        k, d = self.kappa, self.delta
        m0 = k * (b ** (1 - d) - a ** (1 - d)) / (1 - d)
        m1 = k * (b ** (2 - d) - a ** (2 - d)) / (2 - d)
        return m0, m1


def transient_work(kernel, s: Strategy, rtol=1e-10) -> float:
    """Non-local work ``int_0^T int_0^t G(t - u) v_u . v_t du dt``.

    Exponential kernels on piecewise-constant rates use the closed-form
    segment-pair sum.  Otherwise the inner integral is closed form (rates are
    linear on each segment) and the outer one is adaptive quadrature.
    """
    if isinstance(kernel, ExponentialKernel) and s.is_piecewise_constant:
        return _exponential_pairs(kernel, s)

    knots, c, m = s.knots, s.const, s.slope

    def memory(t):
        k = int(s.segment_index(t))
        a = np.maximum(t - knots[1 : k + 2], 0.0)
        b = t - knots[: k + 1]
        m0, m1 = kernel.moments(a, b)
        level = c[: k + 1] + m[: k + 1] * b[:, None]
        return m0 @ level - m1 @ m[: k + 1]

    def integrand(t):
        return float(memory(t) @ s.rate(t))

    scale = kernel.moments(0.0, s.horizon)[0] * s.rate_scale**2 * s.horizon
    total = 0.0
    for lo, hi in zip(knots[:-1], knots[1:]):
        val, _ = _quad(integrand, lo, hi, rtol, 1e-15 * max(scale, 1e-300))
        total += val
    return total


def _exponential_pairs(kernel, s):
    kappa, rho = kernel.kappa, kernel.rho
    h = s.durations
    c = s.const
    if rho == 0.0:
        diag = 0.5 * h * h
        ext = h
    else:
        x = rho * h
        small = x < 1e-3
        diag = np.where(
            small,
            h * h * (0.5 - x / 6 + x * x / 24 - x**3 / 120),
            (h / rho) + np.expm1(-x) / rho**2,
        )
        ext = -np.expm1(-x) / rho
    total = float(np.sum(np.einsum("ki,ki->k", c, c) * diag))
    starts, ends = s.knots[:-1], s.knots[1:]
    gap = starts[None, :] - ends[:, None]  # gap[j, k] = a_k - b_j
    upper = np.triu(np.ones_like(gap, dtype=bool), k=1)
    decay = np.where(upper, np.exp(-rho * np.where(upper, gap, 0.0)), 0.0)
    dots = c @ c.T
    total += float(np.sum(dots * decay * np.outer(ext, ext)))
    return kappa * total


def heat_variance(sigma, s: Strategy) -> float:
    """Variance of ``int q_t . Sigma dW_t``: ``sigma**2 V`` or ``int q^T Sigma Sigma^T q dt``."""
    sigma = check_sigma(sigma, assets=None)
    gram = inventory_gram(s)
    if np.ndim(sigma) == 0:
        return float(sigma * sigma * np.trace(gram))
    if sigma.shape[0] != s.assets:
        raise InvalidInputError(
            f"sigma is {sigma.shape[0]}x{sigma.shape[0]} but the strategy has {s.assets} assets"
        )
    return float(np.sum((sigma @ sigma.T) * gram))


def pnl_distribution(model: ImpactModel, s: Strategy, sigma) -> GaussianLaw:
    """Exact Gaussian law of the round-trip P&L: ``N(-W, heat variance)``."""
    return GaussianLaw(-dissipated_work(model, s), heat_variance(sigma, s))


def analyze(model: ImpactModel, s: Strategy, sigma) -> PnLStats:
    """All P&L statistics of a deterministic round trip."""
    law = pnl_distribution(model, s, sigma)
    return PnLStats.from_moments(
        -law.mean, position_variance(s), check_sigma(sigma), pnl_variance=law.variance
    )


def _profit_probability(work, var):
    if var > 0:
        return float(special.ndtr(-work / math.sqrt(var)))
    return 0.0 if work > 0 else 1.0


def _chernoff(work, var):
    if work <= 0:
        return 1.0
    if var > 0:
        return math.exp(-work * work / (2.0 * var))
    return 0.0


def profit_probability_exact(stats: PnLStats) -> float:
    """``P(Pi >= 0) = Phi(-W / sqrt(var))``.

    With zero variance the P&L is the constant ``-W``: the probability is 0
    when ``W > 0`` and 1 when ``W = 0``.
    """
    return _profit_probability(stats.work, stats.pnl_variance)


def chernoff_bound(stats: PnLStats) -> float:
    """``exp(-W**2 / (2 var))``, the optimized Chernoff bound on ``P(Pi >= 0)``.

    Returns 1 for ``W <= 0`` (no positive tilt helps) and 0 for ``W > 0`` with zero variance.
    """
    return _chernoff(stats.work, stats.pnl_variance)


class ChernoffOptimum(NamedTuple):
    theta_star: float
    bound: float
    theta_numeric: float
    bound_numeric: float


def chernoff_optimum(stats: PnLStats) -> ChernoffOptimum:
    """Optimal tilt ``theta* = W / var`` and ``M(theta*)``, cross-checked numerically.

    The numeric side minimizes the log-MGF exponent ``-theta W + theta**2 var / 2``
    with Brent's method.
    """
    W, var = stats.work, stats.pnl_variance
    if not W > 0:
        raise InvalidInputError(f"optimal tilt needs W > 0, got W={W!r}")
    if not var > 0:
        raise InvalidInputError("optimal tilt needs a positive P&L variance")

    def exponent(theta):
        return -theta * W + 0.5 * theta * theta * var

    theta_star = W / var
    res = optimize.minimize_scalar(
        exponent, bracket=(0.0, 1.0 / var), method="brent", options={"xtol": 1e-12}
    )
    return ChernoffOptimum(
        theta_star, math.exp(exponent(theta_star)), float(res.x), math.exp(float(res.fun))
    )


def market_temperature(stats: PnLStats) -> float:
    """``beta_v = W / (sigma**2 V)``; the Chernoff bound equals ``exp(-beta_v W / 2)``."""
    if not stats.pnl_variance > 0:
        raise InvalidInputError("market temperature is undefined for zero P&L variance")
    return stats.work / stats.pnl_variance


def scaling_bound(c1, c2, sigma, T) -> float:
    """Bound for ``W = c1 T`` and ``V = c2 T**3``: ``exp(-c1**2 / (2 sigma**2 c2 T))``."""
    c1 = check_positive(c1, "c1")
    c2 = check_positive(c2, "c2")
    sigma = check_positive(sigma, "sigma")
    T = check_positive(T, "T")
    return math.exp(-(c1 * c1) / (2.0 * sigma * sigma * c2 * T))


@dataclass(frozen=True)
class MultiAssetBound:
    work: float
    exact_variance: float
    trace_variance: float
    exact_variance_bound: float
    trace_bound: float


def multi_asset_bound(Sigma, s: Strategy, model: ImpactModel) -> MultiAssetBound:
    """Chernoff bound with the exact heat variance, next to the looser trace form.

    The trace form replaces ``int q^T Sigma Sigma^T q`` by
    ``Tr(Sigma Sigma^T) int |q|^2``, which is never smaller, so
    ``exact_variance_bound <= trace_bound``.
    """
    Sigma = check_sigma(Sigma, assets=s.assets)
    if np.ndim(Sigma) == 0:
        Sigma = Sigma * np.eye(s.assets)
    work = dissipated_work(model, s)
    exact = heat_variance(Sigma, s)
    trace = float(np.trace(Sigma @ Sigma.T)) * position_variance(s)
    return MultiAssetBound(work, exact, trace, _chernoff(work, exact), _chernoff(work, trace))


def power_law_bound(eta, gamma, s: Strategy, sigma) -> float:
    """``exp(-eta**2 (int |v|^(gamma+1))**2 / (2 sigma**2 int q**2))``."""
    eta = check_positive(eta, "eta")
    gamma = check_positive(gamma, "gamma")
    work = eta * rate_power_integral(s, gamma + 1.0)
    return _chernoff(work, heat_variance(sigma, s))


@dataclass(frozen=True)
class SecondLawResult:
    holds: bool
    work: float


def second_law_verify(model: ImpactModel, s: Strategy, tol=1e-12) -> SecondLawResult:
    """``W >= -tol``, and strictly ``W > 0`` unless the rate is identically zero."""
    work = dissipated_work(model, s)
    holds = work >= -tol and (s.is_zero or work > 0)
    return SecondLawResult(bool(holds), work)
