"""Deterministic trading-rate paths as piecewise-linear functions of time.

On segment ``k`` (``knots[k] <= t < knots[k+1]``) the rate of every asset is
``const[k] + slope[k] * (t - knots[k])``.  Inventory is then piecewise
quadratic and every moment integral used by the work and variance functionals
is a polynomial integral evaluated in closed form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .exceptions import ConvergenceError, InvalidInputError
from .validation import check_int, check_positive, check_vector

_KNOT_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class Strategy:
    """Piecewise-linear rate path on ``[0, T]`` for one or more assets.

    Parameters
    ----------
    knots : array of shape (n + 1,)
        Segment breakpoints, strictly increasing, ``knots[0] == 0``.
    const : array of shape (n, d)
        Rate at the start of each segment.
    slope : array of shape (n, d)
        Rate slope within each segment.
    """

    knots: np.ndarray
    const: np.ndarray
    slope: np.ndarray

    def __post_init__(self):
        knots = check_vector(self.knots, "knots", min_length=2)
        if knots[0] != 0.0:
            raise InvalidInputError(f"first knot must be 0, got {knots[0]!r}")
        if np.any(np.diff(knots) <= 0):
            raise InvalidInputError("knots must be strictly increasing")
        n = knots.size - 1
        const = np.asarray(self.const, dtype=float)
        slope = np.asarray(self.slope, dtype=float)
        if const.ndim == 1:
            const = const[:, None]
        if slope.ndim == 1:
            slope = slope[:, None]
        if const.shape[0] != n or slope.shape != const.shape:
            raise InvalidInputError(
                f"expected rate arrays of shape ({n}, d), got {const.shape} and {slope.shape}"
            )
        if not (np.all(np.isfinite(const)) and np.all(np.isfinite(slope))):
            raise InvalidInputError("rates must be finite")
        for name, arr in (("knots", knots), ("const", const), ("slope", slope)):
            arr = np.array(arr)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def horizon(self):
        return float(self.knots[-1])

    T = horizon

    @property
    def n_segments(self):
        return self.const.shape[0]

    @property
    def assets(self):
        return self.const.shape[1]

    @property
    def durations(self):
        return np.diff(self.knots)

    @property
    def end_rates(self):
        """Rate at the right end of each segment, shape (n, d)."""
        return self.const + self.slope * self.durations[:, None]

    @property
    def is_piecewise_constant(self):
        return not np.any(self.slope)

    @property
    def is_zero(self):
        return not (np.any(self.const) or np.any(self.slope))

    @property
    def rate_scale(self):
        """Largest absolute rate on ``[0, T]`` (attained at a segment end)."""
        return float(max(np.max(np.abs(self.const)), np.max(np.abs(self.end_rates))))

    def segment_index(self, t):
        t = np.asarray(t, dtype=float)
        idx = np.searchsorted(self.knots, t, side="right") - 1
        return np.clip(idx, 0, self.n_segments - 1)

    def rate(self, t):
        """Rate at times ``t``; shape ``t.shape + (d,)``.  Segments are closed on the left."""
        t = np.asarray(t, dtype=float)
        k = self.segment_index(t)
        tau = (t - self.knots[k])[..., None]
        return self.const[k] + self.slope[k] * tau

    def inventory(self):
        return inventory(self)

    def refine(self, knots):
        """Same rate path expressed on a finer knot set containing the current knots."""
        knots = np.unique(np.concatenate([self.knots, check_vector(knots, "knots")]))
        knots = knots[(knots >= 0) & (knots <= self.horizon)]
        starts = knots[:-1]
        k = self.segment_index(starts)
        const = self.const[k] + self.slope[k] * (starts - self.knots[k])[:, None]
        return Strategy(knots, const, self.slope[k])

    def time_reversed(self):
        """The path ``w(t) = -v(T - t)``; it retraces the inventory path backwards."""
        T = self.horizon
        knots = T - self.knots[::-1]
        knots[0] = 0.0
        return Strategy(knots, -self.end_rates[::-1], self.slope[::-1])

    def asset(self, i):
        return Strategy(self.knots, self.const[:, i], self.slope[:, i])

    def grid(self, dt):
        """Left endpoints and step sizes of a simulation grid aligned to every knot.

        Each segment of length ``h`` is cut into ``ceil(h / dt)`` equal steps.
        Raises :class:`InvalidInputError` when ``dt`` exceeds the shortest segment.
        """
        dt = check_positive(dt, "dt")
        h = self.durations
        if dt > h.min() * (1 + 1e-9):
            raise InvalidInputError(
                f"dt={dt:.6g} exceeds the shortest strategy segment ({h.min():.6g})"
            )
        counts = np.maximum(1, np.ceil(h / dt - 1e-9).astype(int))
        seg = np.repeat(np.arange(self.n_segments), counts)
        local = np.concatenate([np.arange(m) for m in counts])
        step = (h / counts)[seg]
        t_left = self.knots[seg] + local * step
        return t_left, step, seg

    def __repr__(self):
        return (
            f"Strategy(T={self.horizon:.6g}, segments={self.n_segments}, assets={self.assets})"
        )


@dataclass(frozen=True, eq=False)
class InventoryPath:
    """Piecewise-quadratic inventory ``q(t) = c0 + c1 tau + c2 tau**2`` per segment."""

    knots: np.ndarray
    coeffs: np.ndarray  # (n, d, 3), ascending powers of tau = t - knots[k]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.clip(np.searchsorted(self.knots, t, side="right") - 1, 0, self.coeffs.shape[0] - 1)
        tau = (t - self.knots[k])[..., None]
        c = self.coeffs[k]
        return c[..., 0] + tau * (c[..., 1] + tau * c[..., 2])

    @property
    def terminal(self):
        h = self.knots[-1] - self.knots[-2]
        c = self.coeffs[-1]
        return c[:, 0] + h * (c[:, 1] + h * c[:, 2])

    @property
    def node_values(self):
        """Inventory at every knot, shape (n + 1, d)."""
        return np.vstack([self.coeffs[:, :, 0], self.terminal[None, :]])


def inventory(s: Strategy) -> InventoryPath:
    """Exact antiderivative of the rate path with ``q(0) = 0``."""
    h = s.durations[:, None]
    increments = s.const * h + 0.5 * s.slope * h * h
    start = np.vstack([np.zeros((1, s.assets)), np.cumsum(increments, axis=0)[:-1]])
    coeffs = np.stack([start, s.const, 0.5 * s.slope], axis=-1)
    return InventoryPath(s.knots, coeffs)


def _rate_coeffs(s):
    return np.stack([s.const, s.slope], axis=-1)


def cross_integral(h, P, Q):
    """``M[i, j] = sum_k int_0^{h_k} P_{k,i}(tau) Q_{k,j}(tau) dtau`` for per-segment polynomials.

    ``P`` and ``Q`` hold ascending coefficients with shapes (n, d, kp) and (n, d, kq).
    """
    d = P.shape[1]
    out = np.zeros((d, d))
    for a in range(P.shape[2]):
        for b in range(Q.shape[2]):
            w = h ** (a + b + 1) / (a + b + 1)
            out += np.einsum("ki,kj,k->ij", P[:, :, a], Q[:, :, b], w)
    return out


def inventory_gram(s: Strategy) -> np.ndarray:
    """``int_0^T q_t q_t^T dt`` as a (d, d) matrix."""
    q = inventory(s).coeffs
    return cross_integral(s.durations, q, q)


def inventory_rate_cross(s: Strategy) -> np.ndarray:
    """``int_0^T q_t v_t^T dt`` as a (d, d) matrix."""
    return cross_integral(s.durations, inventory(s).coeffs, _rate_coeffs(s))


def position_variance(s: Strategy) -> float:
    """``V = int_0^T |q_t|^2 dt``, integrated exactly segment by segment."""
    return float(np.trace(inventory_gram(s)))


def roundtrip_tolerance(s: Strategy) -> float:
    return 1e-9 * max(s.rate_scale * s.horizon, np.finfo(float).tiny)


def roundtrip_check(s: Strategy, tol=None) -> bool:
    """True when every component of the terminal inventory is within ``tol`` of zero."""
    if tol is None:
        tol = roundtrip_tolerance(s)
    return bool(np.all(np.abs(inventory(s).terminal) <= tol))


def rate_power_integral(s: Strategy, p, rtol=1e-10) -> float:
    """``int_0^T sum_i |v_{t,i}|^p dt``, in closed form.

    On a linear segment the integrand ``|c + m tau|^p`` is split at the rate's
    root; each sign-constant piece has the antiderivative
    ``|c + m tau|^(p+1) / ((p+1) |m|)``, evaluated without cancellation.
    ``rtol`` is accepted for interface compatibility and not needed.
    """
    p = float(p)
    if not p >= 1:
        raise InvalidInputError(f"exponent p must be >= 1, got {p!r}")
    h = s.durations
    if p == 2.0:
        r = _rate_coeffs(s)
        return float(np.trace(cross_integral(h, r, r)))
    flat = s.slope == 0
    total = float(np.sum((np.abs(s.const) ** p * h[:, None])[flat]))
    for k, i in zip(*np.nonzero(~flat)):
        total += _linear_power_integral(s.const[k, i], s.slope[k, i], h[k], p)
    return total


def _linear_power_integral(c, m, h, p):
    c, m, h = float(c), float(m), float(h)
    # the rate crosses zero inside the segment iff c and m differ in sign and |c| < |m| h
    root = -c / m if c * m < 0.0 and abs(c) < abs(m) * h else None
    pieces = [0.0, h] if root is None else [0.0, root, h]
    total = 0.0
    for a, b in zip(pieces[:-1], pieces[1:]):
        u_a, u_b = abs(c + m * a), abs(c + m * b)
        if a == root:
            u_a = 0.0
        if b == root:
            u_b = 0.0
        lo, hi = min(u_a, u_b), max(u_a, u_b)
        if lo == 0.0 or abs(m) * (b - a) > lo:
            total += (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * abs(m))
            continue
        # nearly equal ends: hi**(p+1) - lo**(p+1) = lo**(p+1) expm1((p+1) log1p(|m| (b-a) / lo))
        ratio = abs(m) * (b - a) / lo
        total += lo ** (p + 1) * math.expm1((p + 1) * math.log1p(ratio)) / ((p + 1) * abs(m))
    return total


def _check_horizon(T):
    return check_positive(T, "T")


def build_piecewise_constant(knots, rates) -> Strategy:
    rates = np.asarray(rates, dtype=float)
    return Strategy(knots, rates, np.zeros_like(rates if rates.ndim == 2 else rates[:, None]))


def build_triangular(vbar, T) -> Strategy:
    """Buy at ``+vbar`` on the first half, sell at ``-vbar`` on the second."""
    vbar = check_positive(vbar, "vbar")
    T = _check_horizon(T)
    return build_piecewise_constant([0.0, T / 2, T], [vbar, -vbar])


def build_square_wave(vbar, T, n) -> Strategy:
    """``n`` back-to-back triangular cycles of length ``T / n``."""
    vbar = check_positive(vbar, "vbar")
    T = _check_horizon(T)
    n = check_int(n, "n", minimum=1)
    knots = T * np.arange(2 * n + 1) / (2 * n)
    knots[-1] = T
    rates = np.tile([vbar, -vbar], n)
    return build_piecewise_constant(knots, rates)


def build_ramp(vbar, T) -> Strategy:
    """``v_t = vbar (T - 2t) / T``: buying that slows, turns into selling at ``T/2``."""
    vbar = check_positive(vbar, "vbar")
    T = _check_horizon(T)
    return Strategy([0.0, T], [vbar], [-2.0 * vbar / T])


def build_zero(T) -> Strategy:
    return build_piecewise_constant([0.0, _check_horizon(T)], [0.0])


def build_from_samples(times, rates, T) -> Strategy:
    """Piecewise-constant path holding each sampled rate until the next sample time.

    ``rates`` may be 2-D (samples x assets).  If the first sample is after 0,
    the rate is zero before it.
    """
    T = _check_horizon(T)
    times = check_vector(times, "times")
    rates = np.asarray(rates, dtype=float)
    if rates.ndim == 1:
        rates = rates[:, None]
    if rates.shape[0] != times.size:
        raise InvalidInputError(
            f"times and rates differ in length ({times.size} vs {rates.shape[0]})"
        )
    if np.any(np.diff(times) <= 0):
        raise InvalidInputError("sample times must be strictly increasing")
    if times[0] < 0 or times[-1] >= T:
        raise InvalidInputError("sample times must lie in [0, T)")
    if times[0] > 0:
        times = np.concatenate([[0.0], times])
        rates = np.vstack([np.zeros((1, rates.shape[1])), rates])
    return build_piecewise_constant(np.concatenate([times, [T]]), rates)


def random_roundtrip(seed, n_segments, rate_bound, T, assets=1) -> Strategy:
    """Seeded random piecewise-constant round trip.

    Breakpoints are uniform order statistics on ``(0, T)`` and rates are uniform
    on ``[-rate_bound, rate_bound]``; the final rate is then replaced by the
    value that closes the position exactly, and may exceed ``rate_bound``.
    """
    n_segments = check_int(n_segments, "n_segments", minimum=2)
    rate_bound = check_positive(rate_bound, "rate_bound")
    T = _check_horizon(T)
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.uniform(0.0, T, size=n_segments - 1))
    knots = np.concatenate([[0.0], cuts, [T]])
    if np.any(np.diff(knots) <= 0):
        # measure-zero tie; fall back to an even grid so the output stays valid
        knots = np.linspace(0.0, T, n_segments + 1)
    rates = rng.uniform(-rate_bound, rate_bound, size=(n_segments, assets))
    h = np.diff(knots)
    rates[-1] = -(h[:-1] @ rates[:-1]) / h[-1]
    return build_piecewise_constant(knots, rates)


def stack_assets(*legs: Strategy) -> Strategy:
    """Combine strategies on a common horizon into one multi-asset strategy."""
    if not legs:
        raise InvalidInputError("need at least one strategy")
    T = legs[0].horizon
    for leg in legs[1:]:
        if not math.isclose(leg.horizon, T, rel_tol=_KNOT_RTOL):
            raise InvalidInputError("all legs must share the same horizon")
    knots = np.unique(np.concatenate([leg.knots for leg in legs]))
    knots[-1] = T
    knots = knots[np.concatenate([[True], np.diff(knots) > _KNOT_RTOL * T])]
    knots[-1] = T
    refined = [leg.refine(knots) if leg.knots.size != knots.size else leg for leg in legs]
    return Strategy(
        knots,
        np.hstack([r.const for r in refined]),
        np.hstack([r.slope for r in refined]),
    )


STRATEGY_CSV_HEADER = ["t_start", "t_end", "rate_const", "rate_slope"]


def write_strategy_csv(s: Strategy, path):
    """One row per segment; assets follow each other as consecutive blocks.

    ``rate_const`` is the rate at ``t_start`` and ``rate_slope`` its time derivative.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STRATEGY_CSV_HEADER)
        for i in range(s.assets):
            for k in range(s.n_segments):
                writer.writerow(
                    [
                        repr(float(s.knots[k])),
                        repr(float(s.knots[k + 1])),
                        repr(float(s.const[k, i])),
                        repr(float(s.slope[k, i])),
                    ]
                )


def read_strategy_csv(path) -> Strategy:
    """Inverse of :func:`write_strategy_csv`; a new asset block starts whenever ``t_start`` is 0 again."""
    blocks = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != STRATEGY_CSV_HEADER:
            raise InvalidInputError(
                f"{path}: expected header {','.join(STRATEGY_CSV_HEADER)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                rec = [float(row[key]) for key in STRATEGY_CSV_HEADER]
            except (TypeError, ValueError) as exc:
                raise InvalidInputError(f"{path}:{lineno}: malformed row {row}") from exc
            if rec[0] == 0.0 or not blocks:
                blocks.append([])
            blocks[-1].append(rec)
    if not blocks:
        raise InvalidInputError(f"{path}: no segments")
    legs = []
    for block in blocks:
        arr = np.asarray(block)
        if np.any(np.abs(arr[1:, 0] - arr[:-1, 1]) > _KNOT_RTOL * max(1.0, arr[-1, 1])):
            raise InvalidInputError(f"{path}: segments leave gaps or overlap")
        knots = np.concatenate([arr[:, 0], arr[-1:, 1]])
        legs.append(Strategy(knots, arr[:, 2], arr[:, 3]))
    return legs[0] if len(legs) == 1 else stack_assets(*legs)
