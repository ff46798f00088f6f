"""Gibbs ensembles over a finite set of strategies.

Strategy ``i`` with work ``W_i`` gets weight ``exp(-beta W_i) / Z(beta)``.
The module computes the partition function, free energy, entropy and work
variance, calibrates ``beta`` from observed strategy counts by maximum
likelihood, and clusters observed ``(W, V)`` pairs into strategy types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConvergenceError, InvalidInputError
from .validation import check_int, check_matrix, check_positive, check_vector


@dataclass(frozen=True, eq=False)
class StrategyEnsemble:
    works: np.ndarray
    labels: tuple = None

    def __post_init__(self):
        works = check_vector(self.works, "works")
        works.setflags(write=False)
        object.__setattr__(self, "works", works)
        if self.labels is not None:
            labels = tuple(str(x) for x in self.labels)
            if len(labels) != works.size:
                raise InvalidInputError("labels and works differ in length")
            object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.works.size


def _as_ensemble(ens):
    return ens if isinstance(ens, StrategyEnsemble) else StrategyEnsemble(ens)


@dataclass(frozen=True, eq=False)
class GibbsState:
    beta: float
    probabilities: np.ndarray
    logZ: float
    free_energy: float
    mean_work: float
    entropy: float
    work_variance: float

    def to_dict(self):
        return {
            "beta": self.beta,
            "logZ": self.logZ,
            "free_energy": self.free_energy,
            "mean_work": self.mean_work,
            "entropy": self.entropy,
            "work_variance": self.work_variance,
            "probabilities": [float(p) for p in self.probabilities],
        }


def _shifted_log_partition(gaps, beta):
    """``log sum_i exp(-beta * gaps_i)`` for nonnegative gaps with at least one zero.

    Written as ``log(m) + log1p(rest / m)`` (``m`` the number of zero gaps), which
    keeps full relative precision when the excited states carry little mass.
    """
    ground = gaps == 0.0
    m = int(np.count_nonzero(ground))
    rest = float(np.sum(np.exp(-beta * gaps[~ground])))
    return math.log(m) + math.log1p(rest / m)


def gibbs_state(ens, beta) -> GibbsState:
    """Gibbs probabilities and thermodynamic summaries at inverse temperature ``beta``.

    Works are shifted by their minimum before exponentiation, so the result is
    stable for ``beta * range(W)`` far beyond the overflow threshold.
    """
    ens = _as_ensemble(ens)
    beta = check_positive(beta, "beta")
    w = ens.works
    w_min = float(w.min())
    gaps = w - w_min
    log_shifted = _shifted_log_partition(gaps, beta)
    log_p = -beta * gaps - log_shifted
    p = np.exp(log_p)
    mean_work = float(p @ w)
    centered = w - mean_work
    return GibbsState(
        beta=beta,
        probabilities=p,
        logZ=-beta * w_min + log_shifted,
        free_energy=w_min - log_shifted / beta,
        mean_work=mean_work,
        entropy=float(-(p @ log_p)),
        work_variance=float(p @ (centered * centered)),
    )


def decomposition_residual(state: GibbsState) -> float:
    """``|F - (<W> - S / beta)|``."""
    return abs(state.free_energy - (state.mean_work - state.entropy / state.beta))


@dataclass(frozen=True)
class IdentityCheck:
    dF_dbeta_error: float
    curvature_error: float
    dF_dbeta_fd: float
    dF_dbeta_exact: float
    curvature_fd: float
    curvature_exact: float


def identity_checks(ens, beta, h=1e-4) -> IdentityCheck:
    """Central finite differences against the closed-form derivatives of the free energy.

    With ``F = -log(Z) / beta`` the exact relations are ``dF/dbeta = S / beta**2``
    and ``d2(beta F)/dbeta2 = -Var(W)`` (``log Z`` is convex, so ``beta F`` is
    concave).  Differences are taken of ``g(beta) = beta (F - W_min)``; the
    dropped ``beta * W_min`` term is linear and affects neither derivative.
    ``dF/dbeta`` follows from ``F' = (g' - g / beta) / beta``, which avoids
    differencing the ``1/beta`` pole of ``F`` at small ``beta``.  Errors are relative.
    """
    ens = _as_ensemble(ens)
    beta = check_positive(beta, "beta")
    h = check_positive(h, "h")
    if beta - h <= 0:
        raise InvalidInputError(f"beta - h must be positive, got {beta - h}")
    gaps = ens.works - ens.works.min()

    def g(b):
        return -_shifted_log_partition(gaps, b)

    g_m, g_0, g_p = g(beta - h), g(beta), g(beta + h)
    dg = (g_p - g_m) / (2 * h)
    d2g = (g_p - 2 * g_0 + g_m) / (h * h)
    state = gibbs_state(ens, beta)
    dF_fd = (dg - g_0 / beta) / beta
    dF_exact = state.entropy / beta**2
    return IdentityCheck(
        dF_dbeta_error=_relative_error(dF_fd, dF_exact),
        curvature_error=_relative_error(d2g, -state.work_variance),
        dF_dbeta_fd=dF_fd,
        dF_dbeta_exact=dF_exact,
        curvature_fd=d2g,
        curvature_exact=-state.work_variance,
    )


def beta_free_energy(ens, beta):
    """``beta * F(beta) = -log Z(beta)``."""
    return -gibbs_state(ens, beta).logZ


def _relative_error(approx, exact):
    if exact == 0:
        return abs(approx)
    return abs(approx - exact) / abs(exact)


@dataclass(frozen=True)
class BetaLimits:
    argmin_set: tuple
    uniform_entropy: float
    cold_beta: float
    cold_mass: float
    hot_beta: float
    hot_entropy: float


def beta_limits(ens) -> BetaLimits:
    """Zero- and infinite-temperature limits, confirmed at an extreme ``beta`` each.

    The cold probe uses ``beta = 1e3 / g`` with ``g`` the smallest nonzero gap
    above the minimum work, the hot probe ``beta = 1e-6 / max(1, range(W))``.
    """
    ens = _as_ensemble(ens)
    w = ens.works
    gaps = w - w.min()
    argmin = tuple(int(i) for i in np.flatnonzero(gaps == 0.0))
    positive = gaps[gaps > 0]
    cold_beta = 1e3 / float(positive.min()) if positive.size else 1.0
    hot_beta = 1e-6 / max(1.0, float(gaps.max()))
    cold = gibbs_state(ens, cold_beta)
    hot = gibbs_state(ens, hot_beta)
    return BetaLimits(
        argmin_set=argmin,
        uniform_entropy=math.log(w.size),
        cold_beta=cold_beta,
        cold_mass=float(cold.probabilities[list(argmin)].sum()),
        hot_beta=hot_beta,
        hot_entropy=hot.entropy,
    )


@dataclass(frozen=True)
class Calibration:
    beta_hat: float
    diagnosis: str
    target_mean: float
    iterations: int = 0


def calibrate_beta(ens, counts, max_iter=500) -> Calibration:
    """Maximum-likelihood ``beta`` for observed strategy counts.

    The likelihood's first-order condition is ``<W>_beta = sum n_i W_i / sum n_i``,
    and ``<W>_beta`` decreases strictly in ``beta``; the root is bracketed on
    ``[1e-8, 1e8] / range(W)`` and found by Newton steps safeguarded by bisection.

    Means at or below ``min(W)`` give ``beta_hat = inf``; means at or above the
    equal-weight mean lie outside ``beta > 0`` and give ``beta_hat = nan``.
    Both come with a ``diagnosis`` other than ``"ok"``.
    """
    ens = _as_ensemble(ens)
    counts = check_vector(counts, "counts")
    if counts.size != len(ens):
        raise InvalidInputError(f"{counts.size} counts for {len(ens)} strategies")
    if np.any(counts < 0):
        raise InvalidInputError("counts must be nonnegative")
    total = counts.sum()
    if not total > 0:
        raise InvalidInputError("counts sum to zero")
    w = ens.works
    w_range = float(w.max() - w.min())
    if w_range == 0:
        raise InvalidInputError("all works are equal; beta is not identifiable")
    target = float(counts @ w / total)
    scale = max(1.0, float(np.max(np.abs(w))))
    if target <= w.min() + 1e-15 * scale:
        return Calibration(math.inf, "degenerate: all mass at argmin", target)
    if target >= w.mean() - 1e-15 * scale:
        return Calibration(
            math.nan,
            "beta <= 0 region: empirical mean exceeds the beta->0 ensemble mean",
            target,
        )

    def excess(b):
        st = gibbs_state(ens, b)
        return st.mean_work - target, st.work_variance

    lo, hi = 1e-8 / w_range, 1e8 / w_range
    f_lo, _ = excess(lo)
    f_hi, _ = excess(hi)
    if f_lo < 0:
        return Calibration(lo, "target mean within the bracket floor; beta below 1e-8/range(W)", target)
    if f_hi > 0:
        return Calibration(hi, "target mean within the bracket ceiling; beta above 1e8/range(W)", target)

    beta = math.sqrt(lo * hi)
    for it in range(1, max_iter + 1):
        f, var = excess(beta)
        if f == 0:
            return Calibration(beta, "ok", target, it)
        if f > 0:
            lo = beta
        else:
            hi = beta
        step = f / var if var > 0 else math.inf
        candidate = beta + step
        if not lo < candidate < hi:
            candidate = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if abs(candidate - beta) <= 1e-10 * max(1.0, beta):
            return Calibration(candidate, "ok", target, it)
        beta = candidate
    raise ConvergenceError("beta calibration did not converge", achieved=hi - lo)


class GibbsTemperatureEstimator(BaseEstimator):
    """Estimator wrapper around :func:`calibrate_beta`.

    ``fit(works, counts)`` stores ``beta_``, ``diagnosis_`` and, when ``beta_``
    is finite and positive, the fitted ``state_``.
    """

    def fit(self, works, counts):
        ens = StrategyEnsemble(works)
        cal = calibrate_beta(ens, counts)
        self.works_ = ens.works
        self.beta_ = cal.beta_hat
        self.diagnosis_ = cal.diagnosis
        self.target_mean_ = cal.target_mean
        self.state_ = gibbs_state(ens, cal.beta_hat) if math.isfinite(cal.beta_hat) else None
        return self

    def predict_proba(self, works=None):
        """Gibbs probabilities at ``beta_`` over ``works`` (default: the fitted works)."""
        check_is_fitted(self, "beta_")
        if not math.isfinite(self.beta_):
            raise InvalidInputError(f"no finite temperature: {self.diagnosis_}")
        return gibbs_state(self.works_ if works is None else works, self.beta_).probabilities


@dataclass(frozen=True, eq=False)
class ClusterResult:
    labels: np.ndarray
    centroids: np.ndarray           # standardized feature space
    centroids_original: np.ndarray  # original (W, V) units
    mean: np.ndarray
    scale: np.ndarray
    n_iter: int
    inertia: float
    reseeded: tuple = field(default=())


def _assign(X, centroids):
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def cluster_strategies(points, k, seed, max_iter=300) -> ClusterResult:
    """Lloyd's k-means on standardized ``(W, V)`` features.

    Centroids start at ``k`` distinct points sampled with ``seed``.  A cluster
    that empties is re-seeded at the point farthest from its current centroid.
    Iteration stops once assignments no longer change.
    """
    X_raw = check_matrix(points, "points")
    k = check_int(k, "k", minimum=1)
    distinct = np.unique(X_raw, axis=0)
    if k > X_raw.shape[0]:
        raise InvalidInputError(f"k={k} exceeds the number of points ({X_raw.shape[0]})")
    if k > distinct.shape[0]:
        raise InvalidInputError(f"k={k} exceeds the number of distinct points ({distinct.shape[0]})")
    mean = X_raw.mean(axis=0)
    scale = X_raw.std(axis=0)
    scale[scale == 0] = 1.0
    X = (X_raw - mean) / scale
    distinct_std = (distinct - mean) / scale

    rng = np.random.default_rng(seed)
    centroids = distinct_std[rng.choice(distinct_std.shape[0], size=k, replace=False)].copy()
    labels = None
    reseeded = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels, d2 = _assign(X, centroids)
        for j in range(k):
            if not np.any(new_labels == j):
                own = d2[np.arange(X.shape[0]), new_labels]
                far = int(np.argmax(own))
                centroids[j] = X[far]
                new_labels[far] = j
                reseeded.append((n_iter, j, far))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centroids[j] = X[labels == j].mean(axis=0)
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return ClusterResult(
        labels=labels,
        centroids=centroids,
        centroids_original=centroids * scale + mean,
        mean=mean,
        scale=scale,
        n_iter=n_iter,
        inertia=inertia,
        reseeded=tuple(reseeded),
    )


class StrategyKMeans(ClusterMixin, BaseEstimator):
    """Estimator interface to :func:`cluster_strategies`."""

    def __init__(self, n_clusters=2, seed=0, max_iter=300):
        self.n_clusters = n_clusters
        self.seed = seed
        self.max_iter = max_iter

    def fit(self, X, y=None):
        res = cluster_strategies(X, self.n_clusters, self.seed, self.max_iter)
        self.labels_ = res.labels
        self.cluster_centers_ = res.centroids_original
        self.mean_ = res.mean
        self.scale_ = res.scale
        self.inertia_ = res.inertia
        self.n_iter_ = res.n_iter
        self._std_centers = res.centroids
        return self

    def predict(self, X):
        check_is_fitted(self, "labels_")
        X = (check_matrix(X, "X") - self.mean_) / self.scale_
        return _assign(X, self._std_centers)[0]


def cluster_counts(labels, k):
    """Occupation count per cluster, for feeding :func:`calibrate_beta`."""
    return np.bincount(np.asarray(labels, dtype=int), minlength=k).astype(float)
