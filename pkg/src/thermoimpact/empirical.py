"""Validation pipeline on trade tapes.

A tape is a time-ordered record of trading rates and midprice increments.
From it we estimate the temporary impact curve, test the cost curve for
convexity, estimate volatility by realized variance, rebuild ``(W, V)`` for
each round trip and compare realized profitability with the fluctuation bound.

Midprice convention: a tape's ``dS`` holds midprice moves only,
``dS_k = sigma sqrt(dt_k) Z_k + I(v_k) dt_k``.  The temporary offset ``J(v)``
never enters the midprice, so the impact curve of a synthetic tape is
reconstructed from its annotated model; raw tapes are read as execution-price
increments and need a permanent-impact coefficient to isolate ``J``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y

from .exceptions import InvalidInputError
from .impact_models import ImpactModel, convexity_check
from .strategies import Strategy
from .thermo_core import PnLStats
from .validation import check_int, check_positive, check_sigma, check_vector

TAPE_CSV_HEADER = ["t", "rate", "dS"]


@dataclass(frozen=True, eq=False)
class TradeTape:
    """Single-asset trade records on ``[0, horizon]``.

    Record ``k`` covers ``[t_k, t_{k+1})`` (the last one ends at ``horizon``)
    with constant rate ``rate[k]`` and midprice increment ``dS[k]``.
    ``model`` annotates synthetic tapes; ``pnl`` is the realized round-trip P&L.
    """

    t: np.ndarray
    rate: np.ndarray
    dS: np.ndarray
    horizon: float
    model: ImpactModel | None = None
    pnl: float | None = None

    def __post_init__(self):
        t = check_vector(self.t, "t")
        rate = check_vector(self.rate, "rate")
        dS = check_vector(self.dS, "dS")
        if not (t.size == rate.size == dS.size):
            raise InvalidInputError(
                f"t, rate and dS differ in length ({t.size}, {rate.size}, {dS.size})"
            )
        horizon = check_positive(self.horizon, "horizon")
        if np.any(np.diff(t) <= 0):
            raise InvalidInputError("tape times must be strictly increasing")
        if t[0] < 0 or t[-1] >= horizon:
            raise InvalidInputError(f"tape times must lie in [0, {horizon:g})")
        for name, arr in (("t", t), ("rate", rate), ("dS", dS)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "horizon", horizon)
        if self.pnl is not None:
            object.__setattr__(self, "pnl", float(self.pnl))

    def __len__(self):
        return self.t.size

    @property
    def intervals(self):
        return np.diff(np.append(self.t, self.horizon))

    def inventory_left(self):
        """Inventory at the start of each record, accumulated by the left rule from 0."""
        flow = self.rate * self.intervals
        return np.concatenate([[0.0], np.cumsum(flow)[:-1]])

    def terminal_inventory(self):
        return float(np.sum(self.rate * self.intervals))


def write_tape_csv(tape: TradeTape, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TAPE_CSV_HEADER)
        for row in zip(tape.t, tape.rate, tape.dS):
            writer.writerow([repr(float(x)) for x in row])


def read_tape_csv(path, horizon=None, pnl=None) -> TradeTape:
    """Read a ``t,rate,dS`` file.

    Without ``horizon`` the last record is assumed to be as long as the one
    before it (a single record then needs an explicit horizon).
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != TAPE_CSV_HEADER:
            raise InvalidInputError(f"{path}: expected header t,rate,dS, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise InvalidInputError(f"{path}:{lineno}: malformed row {row}") from exc
            if len(row) != 3:
                raise InvalidInputError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
    if not rows:
        raise InvalidInputError(f"{path}: tape has no records")
    arr = np.asarray(rows)
    if horizon is None:
        if arr.shape[0] < 2:
            raise InvalidInputError(f"{path}: a one-record tape needs an explicit horizon")
        horizon = 2 * arr[-1, 0] - arr[-2, 0]
    return TradeTape(arr[:, 0], arr[:, 1], arr[:, 2], horizon, pnl=pnl)


def synthesize_tape(model: ImpactModel, s: Strategy, sigma, dt, seed, s0=0.0) -> TradeTape:
    """Sample a tape of ``s`` traded under ``model`` on a knot-aligned grid.

    The realized P&L is the cash flow ``-sum (S_k + J(v_k)) v_k dt_k`` plus the
    terminal position marked at the final midprice (zero for an exact round trip
    traded on a grid where the left rule closes the position).
    """
    if model.assets != 1 or s.assets != 1:
        raise InvalidInputError("trade tapes are single-asset")
    sigma = check_sigma(sigma)
    if np.ndim(sigma) != 0:
        raise InvalidInputError("trade tapes need a scalar sigma")
    seed = check_int(seed, "seed", minimum=0)
    dt = check_positive(dt, "dt")
    if dt > s.horizon / 10 * (1 + 1e-12):
        raise InvalidInputError(f"dt={dt:g} must be <= T/10 = {s.horizon / 10:g}")
    t_left, step, seg = s.grid(dt)
    v = s.const[seg, 0] + s.slope[seg, 0] * (t_left - s.knots[seg])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    z = rng.standard_normal(t_left.size)
    dS = sigma * np.sqrt(step) * z + model.permanent(v) * step
    S_left = s0 + np.concatenate([[0.0], np.cumsum(dS)[:-1]])
    cash = -float(np.sum((S_left + model.temporary(v)) * v * step))
    q_T = float(np.sum(v * step))
    S_T = s0 + float(np.sum(dS))
    return TradeTape(t_left, v, dS, s.horizon, model=model, pnl=cash + q_T * S_T)


def synthesize_tapes(model, s, sigma, dt, seeds):
    return [synthesize_tape(model, s, sigma, dt, seed) for seed in seeds]


@dataclass(frozen=True, eq=False)
class ImpactCurveEstimate:
    """Binned estimate of ``J`` and the cost curve ``f(v) = J(v) v``.

    Only populated bins are kept; ``dropped_bins`` lists the indices (on the
    full equal-width grid) of empty ones.  ``stderr`` is the standard error of
    each impact estimate (``inf`` when a bin has too few records to tell).
    """

    centers: np.ndarray
    impact: np.ndarray
    counts: np.ndarray
    edges: np.ndarray
    bin_index: np.ndarray
    dropped_bins: tuple = ()
    stderr: np.ndarray | None = None

    @property
    def cost(self):
        return self.impact * self.centers

    @property
    def n_populated(self):
        return self.centers.size

    def linear_fit(self):
        """Least-squares ``(intercept, slope)`` of the impact estimates against bin centers."""
        if self.centers.size < 2:
            raise InvalidInputError("a linear fit needs at least 2 populated bins")
        slope, intercept = np.polyfit(self.centers, self.impact, 1)
        return float(intercept), float(slope)

    def to_dict(self):
        return {
            "centers": self.centers.tolist(),
            "impact": self.impact.tolist(),
            "cost": self.cost.tolist(),
            "counts": self.counts.tolist(),
            "stderr": None if self.stderr is None else self.stderr.tolist(),
            "dropped_bins": list(self.dropped_bins),
        }


def _local_fit(x, y):
    """Intercept of ``y ~ a + b x`` and its standard error (bin mean if ``x`` is constant)."""
    n = x.size
    if np.ptp(x) > 0:
        design = np.column_stack([np.ones(n), x])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        if n <= 2:
            return float(coef[0]), math.inf
        resid = y - design @ coef
        s2 = float(resid @ resid) / (n - 2)
        return float(coef[0]), math.sqrt(s2 * np.linalg.inv(design.T @ design)[0, 0])
    mean = float(np.mean(y))
    if n == 1:
        return mean, math.inf
    return mean, float(np.std(y, ddof=1)) / math.sqrt(n)


def _binned_local_linear(v, y, n_bins):
    """Equal-width bins over ``[min v, max v]``; local-linear value at each bin center.

    Within a bin ``y ~ a + b (v - c)`` is fit by least squares and ``a`` is the
    estimate at the center ``c``; this is exact when ``y`` is linear in ``v``.
    A bin whose records share one rate falls back to the mean of ``y``.
    """
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo), abs(hi)):
        c = 0.5 * (lo + hi)
        est, se = _local_fit(v - c, y)
        return ImpactCurveEstimate(
            np.array([c]),
            np.array([est]),
            np.array([v.size]),
            np.array([lo, hi]),
            np.zeros(v.size, dtype=int),
            stderr=np.array([se]),
        )
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, n_bins - 1)
    centers, impact, counts, errors, dropped = [], [], [], [], []
    for b in range(n_bins):
        mask = idx == b
        n = int(np.count_nonzero(mask))
        if n == 0:
            dropped.append(b)
            continue
        c = 0.5 * (edges[b] + edges[b + 1])
        est, se = _local_fit(v[mask] - c, y[mask])
        centers.append(c)
        impact.append(est)
        counts.append(n)
        errors.append(se)
    return ImpactCurveEstimate(
        np.asarray(centers),
        np.asarray(impact),
        np.asarray(counts),
        edges,
        idx,
        tuple(dropped),
        np.asarray(errors),
    )


def execution_offsets(tape: TradeTape, lam=None):
    """Per-unit-time execution offset of every record.

    Synthetic tapes: ``J(v_k) + (dS_k - I(v_k) dt_k) / dt_k`` using the annotated
    model, so price noise still enters the regression.  Raw tapes:
    ``(dS_k - lam v_k dt_k) / dt_k`` with a caller-supplied ``lam``.
    """
    dt = tape.intervals
    if lam is None:
        if tape.model is None:
            raise InvalidInputError(
                "a raw tape needs a permanent-impact estimate lam to separate J from I"
            )
        model = tape.model
        return model.temporary(tape.rate) + (tape.dS - model.permanent(tape.rate) * dt) / dt
    lam = check_positive(lam, "lam", allow_zero=True)
    return (tape.dS - lam * tape.rate * dt) / dt


def estimate_impact_curve(tape, n_bins=20, lam=None) -> ImpactCurveEstimate:
    """Nonparametric ``J`` on equal-width rate bins; see :func:`execution_offsets` for ``lam``.

    ``tape`` may also be a list of tapes, whose records are pooled.
    """
    n_bins = check_int(n_bins, "n_bins", minimum=3)
    tapes = [tape] if isinstance(tape, TradeTape) else list(tape)
    if not tapes:
        raise InvalidInputError("no tapes given")
    rates = np.concatenate([t.rate for t in tapes])
    offsets = np.concatenate([execution_offsets(t, lam) for t in tapes])
    return _binned_local_linear(rates, offsets, n_bins)


class ImpactCurveRegressor(RegressorMixin, BaseEstimator):
    """Binned local-linear regression of execution offsets on trading rates.

    ``predict`` interpolates linearly between populated bin centers and holds
    the end values outside them.
    """

    def __init__(self, n_bins=20):
        self.n_bins = n_bins

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_all_finite=True, y_numeric=True)
        if X.shape[1] != 1:
            raise InvalidInputError(f"expected a single rate column, got {X.shape[1]}")
        n_bins = check_int(self.n_bins, "n_bins", minimum=3)
        self.curve_ = _binned_local_linear(X[:, 0], y, n_bins)
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "curve_")
        X = np.asarray(X, dtype=float).reshape(-1, 1)
        return np.interp(X[:, 0], self.curve_.centers, self.curve_.impact)


@dataclass(frozen=True)
class ConvexityVerdict:
    is_convex: bool
    violating_bins: tuple
    violating_rates: tuple
    runs_checked: int
    tolerance: float | None = None


def convexity_test(curve: ImpactCurveEstimate, tol=None, z=None) -> ConvexityVerdict:
    """Second-difference convexity test of the estimated cost curve.

    Dropped bins break the uniform spacing, so the test runs separately on each
    run of three or more adjacent populated bins.  ``tol`` is passed to
    :func:`thermoimpact.impact_models.convexity_check`.  With ``z`` set, a
    second difference only counts as a violation when it is also more than
    ``z`` standard errors below zero, which keeps estimation noise from
    posing as non-convexity.  Violations are indices into ``curve.centers``.
    """
    if curve.n_populated < 3:
        raise InvalidInputError(
            f"convexity test needs at least 3 populated bins, got {curve.n_populated}"
        )
    if z is not None:
        z = check_positive(z, "z", allow_zero=True)
        if curve.stderr is None:
            raise InvalidInputError("z-scaled tolerance needs per-bin standard errors")
    width = curve.edges[1] - curve.edges[0]
    gaps = np.diff(curve.centers) > 1.5 * width
    breaks = np.concatenate([[0], np.flatnonzero(gaps) + 1, [curve.n_populated]])
    bad, runs = [], 0
    cost = curve.cost
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b - a < 3:
            continue
        runs += 1
        report = convexity_check(cost[a:b], tol)
        found = report.violating_indices
        if z is not None:
            f_se = np.abs(curve.centers[a:b]) * curve.stderr[a:b]
            d2_se = np.sqrt(f_se[2:] ** 2 + 4 * f_se[1:-1] ** 2 + f_se[:-2] ** 2)
            found = [i for i in found if report.second_differences[i - 1] < -report.tolerance - z * d2_se[i - 1]]
        bad.extend(a + i for i in found)
    if runs == 0:
        raise InvalidInputError("no run of 3 adjacent populated bins to test")
    bad = tuple(int(i) for i in bad)
    return ConvexityVerdict(
        is_convex=not bad,
        violating_bins=bad,
        violating_rates=tuple(float(curve.centers[i]) for i in bad),
        runs_checked=runs,
        tolerance=tol,
    )


def realized_variance(prices, T, mode="arithmetic") -> float:
    """``(1/T) sum r_i**2`` with ``r_i = dS`` (arithmetic) or ``d log S`` (log)."""
    S = check_vector(prices, "prices", min_length=2)
    T = check_positive(T, "T")
    if mode == "arithmetic":
        r = np.diff(S)
    elif mode == "log":
        if np.any(S <= 0):
            raise InvalidInputError("log returns need strictly positive prices")
        r = np.diff(np.log(S))
    else:
        raise InvalidInputError(f"mode must be 'arithmetic' or 'log', got {mode!r}")
    return float(np.sum(r * r) / T)


class WorkVariance(NamedTuple):
    work: float
    variance_term: float


def estimate_work_variance(tape: TradeTape, model: ImpactModel) -> WorkVariance:
    """Left-rule sums of ``J(v) v`` and ``q**2`` over the tape grid."""
    dt = tape.intervals
    work = float(np.sum(model.temporary.cost(tape.rate) * dt))
    q = tape.inventory_left()
    return WorkVariance(work, float(np.sum(q * q * dt)))


@dataclass(frozen=True)
class TapeRow:
    index: int
    work: float
    variance_term: float
    sigma: float
    pnl: float
    chernoff_bound: float
    profit_prob_exact: float
    profitable: bool
    flagged: bool


@dataclass(frozen=True)
class ViolationReport:
    """Per-tape rows and the aggregate comparison of realized and bounded profitability.

    A tape is flagged when it made money although its bound is below
    ``flag_level``.  The aggregate is flagged when the profitable frequency
    exceeds the mean Chernoff bound by more than ``z`` binomial standard errors.
    """

    rows: tuple
    n_tapes: int
    profitable_frequency: float
    frequency_se: float
    mean_chernoff_bound: float
    mean_profit_prob_exact: float
    aggregate_flagged: bool
    flag_level: float
    z: float

    @property
    def flagged_tapes(self):
        return tuple(r.index for r in self.rows if r.flagged)

    def aggregate(self):
        return {
            "n_tapes": self.n_tapes,
            "profitable_frequency": self.profitable_frequency,
            "frequency_se": self.frequency_se,
            "mean_chernoff_bound": self.mean_chernoff_bound,
            "mean_profit_prob_exact": self.mean_profit_prob_exact,
            "aggregate_flagged": self.aggregate_flagged,
            "flagged_tapes": list(self.flagged_tapes),
            "flag_level": self.flag_level,
            "z": self.z,
        }

    def to_dict(self):
        return {
            "aggregate": self.aggregate(),
            "tapes": [{k: getattr(r, k) for k in TapeRow.__dataclass_fields__} for r in self.rows],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        fields = list(TapeRow.__dataclass_fields__)
        writer.writerow(fields)
        for r in self.rows:
            writer.writerow([_csv_cell(getattr(r, f)) for f in fields])
        return buf.getvalue()


def _csv_cell(x):
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return repr(x)
    return str(x)


def bound_violation_report(
    tapes: Sequence[TradeTape], model: ImpactModel, sigma_hat, flag_level=1e-3, z=3.0
) -> ViolationReport:
    """Compare each tape's realized P&L with the bound built from its ``(W_hat, V_hat)``.

    ``sigma_hat`` is one volatility for all tapes or one per tape.
    """
    tapes = list(tapes)
    if not tapes:
        raise InvalidInputError("no tapes given")
    sig = np.atleast_1d(np.asarray(sigma_hat, dtype=float))
    if sig.size == 1:
        sig = np.full(len(tapes), sig[0])
    if sig.size != len(tapes):
        raise InvalidInputError(f"{sig.size} volatilities for {len(tapes)} tapes")
    flag_level = check_positive(flag_level, "flag_level")
    rows = []
    for i, (tape, s_hat) in enumerate(zip(tapes, sig)):
        if tape.pnl is None:
            raise InvalidInputError(f"tape {i} carries no realized P&L")
        est = estimate_work_variance(tape, model)
        stats = PnLStats.from_moments(est.work, est.variance_term, check_positive(s_hat, "sigma_hat", allow_zero=True))
        profitable = tape.pnl >= 0.0
        rows.append(
            TapeRow(
                index=i,
                work=est.work,
                variance_term=est.variance_term,
                sigma=float(s_hat),
                pnl=tape.pnl,
                chernoff_bound=stats.chernoff_bound,
                profit_prob_exact=stats.profit_prob_exact,
                profitable=bool(profitable),
                flagged=bool(profitable and stats.chernoff_bound <= flag_level),
            )
        )
    n = len(rows)
    freq = sum(r.profitable for r in rows) / n
    se = math.sqrt(freq * (1 - freq) / n)
    mean_bound = float(np.mean([r.chernoff_bound for r in rows]))
    mean_exact = float(np.mean([r.profit_prob_exact for r in rows]))
    return ViolationReport(
        rows=tuple(rows),
        n_tapes=n,
        profitable_frequency=freq,
        frequency_se=se,
        mean_chernoff_bound=mean_bound,
        mean_profit_prob_exact=mean_exact,
        aggregate_flagged=bool(freq > mean_bound + z * se),
        flag_level=flag_level,
        z=float(z),
    )
