"""Temporary and permanent impact functions.

Temporary impact ``J(v)`` offsets the execution price while trading at rate
``v``; permanent impact ``I(v)`` drifts the midprice.  The composite cost rate
``f(v) = J(v) * v`` is what must be convex for round trips to lose money on
average.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .exceptions import AsymmetricImpactWarning, InvalidInputError
from .validation import check_int, check_matrix, check_positive, check_vector


@dataclass(frozen=True)
class LinearImpact:
    """``J(v) = eta * v``; the cost rate is ``eta * v**2``."""

    eta: float

    def __post_init__(self):
        object.__setattr__(self, "eta", check_positive(self.eta, "eta"))

    kind = "linear"

    @property
    def cost_exponent(self):
        return 2.0

    def __call__(self, v):
        return self.eta * np.asarray(v, dtype=float)

    def cost(self, v):
        v = np.asarray(v, dtype=float)
        return self.eta * v * v


@dataclass(frozen=True)
class PowerLawImpact:
    """``J(v) = eta * sgn(v) * |v|**gamma``; the cost rate is ``eta * |v|**(gamma + 1)``.

    For ``gamma < 1`` the impact itself is concave on ``v > 0`` while the cost
    rate stays convex.
    """

    eta: float
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "eta", check_positive(self.eta, "eta"))
        object.__setattr__(self, "gamma", check_positive(self.gamma, "gamma"))

    kind = "power"

    @property
    def cost_exponent(self):
        return self.gamma + 1.0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        return self.eta * np.sign(v) * np.abs(v) ** self.gamma

    def cost(self, v):
        v = np.asarray(v, dtype=float)
        return self.eta * np.abs(v) ** (self.gamma + 1.0)


@dataclass(frozen=True)
class CallableImpact:
    """Arbitrary user-supplied temporary impact, e.g. a deliberately non-convex generator.

    Work integrals for this kind go through quadrature; it cannot be serialized
    to a config block.
    """

    func: Callable
    name: str = "custom"

    kind = "callable"
    cost_exponent = None

    def __call__(self, v):
        return np.asarray(self.func(np.asarray(v, dtype=float)), dtype=float)

    def cost(self, v):
        v = np.asarray(v, dtype=float)
        return self(v) * v


@dataclass(frozen=True, eq=False)
class PermanentImpact:
    """Linear permanent impact: ``I(v) = lam * v`` or ``Lambda @ v``.

    ``lam`` is a nonnegative scalar or a square matrix.  A matrix with a
    nonzero antisymmetric part is accepted but raises
    :class:`AsymmetricImpactWarning`.
    """

    lam: float | np.ndarray = 0.0

    def __post_init__(self):
        if np.ndim(self.lam) == 0:
            object.__setattr__(self, "lam", check_positive(self.lam, "lambda", allow_zero=True))
            return
        mat = check_matrix(np.atleast_2d(np.asarray(self.lam, dtype=float)), "lambda", square=True)
        mat.setflags(write=False)
        object.__setattr__(self, "lam", mat)
        skew = 0.5 * (mat - mat.T)
        if np.max(np.abs(skew), initial=0.0) > 1e-14 * max(1.0, np.max(np.abs(mat))):
            warnings.warn(
                "permanent impact matrix is not symmetric; its antisymmetric part "
                "makes the round-trip permanent term nonzero",
                AsymmetricImpactWarning,
                stacklevel=3,
            )

    @property
    def is_matrix(self):
        return np.ndim(self.lam) == 2

    @property
    def dimension(self):
        return self.lam.shape[0] if self.is_matrix else None

    def matrix(self, assets):
        """``Lambda`` as a ``(assets, assets)`` array (scalar means ``lam * I``)."""
        if self.is_matrix:
            return np.array(self.lam)
        return self.lam * np.eye(assets)

    def __call__(self, v):
        return perm_impact_eval(self, v)


@dataclass(frozen=True, eq=False)
class ImpactModel:
    """Temporary impact (applied componentwise for several assets) plus permanent impact."""

    temporary: LinearImpact | PowerLawImpact | CallableImpact
    permanent: PermanentImpact = field(default_factory=PermanentImpact)
    assets: int = 1

    def __post_init__(self):
        assets = check_int(self.assets, "assets", minimum=1)
        object.__setattr__(self, "assets", assets)
        if not isinstance(self.permanent, PermanentImpact):
            object.__setattr__(self, "permanent", PermanentImpact(self.permanent))
        dim = self.permanent.dimension
        if dim is not None and dim != assets:
            raise InvalidInputError(
                f"permanent impact matrix is {dim}x{dim} but assets={assets}"
            )


def temp_impact_eval(spec, v):
    """Execution-price offset ``J(v)``; odd in ``v`` for the built-in kinds."""
    return spec(v)


def instantaneous_cost(spec, v):
    """Cost rate ``J(v) * v``."""
    return spec.cost(v)


def perm_impact_eval(spec, v):
    """Midprice drift ``I(v)``: ``lam * v`` or the matrix-vector product."""
    v_arr = np.asarray(v, dtype=float)
    if not spec.is_matrix:
        return spec.lam * v_arr
    if v_arr.shape[-1:] != (spec.dimension,):
        raise InvalidInputError(
            f"rate vector has shape {v_arr.shape}, expected trailing dimension {spec.dimension}"
        )
    return v_arr @ np.asarray(spec.lam).T


@dataclass(frozen=True)
class ConvexityReport:
    is_convex: bool
    violating_indices: tuple
    second_differences: np.ndarray = field(repr=False, compare=False)
    tolerance: float = 0.0


def convexity_check(values, tolerance=None):
    """Discrete second-difference convexity test on uniformly spaced samples.

    Interior point ``i`` violates convexity when
    ``f[i+1] - 2 f[i] + f[i-1] < -tolerance``.  The default tolerance is
    ``1e-9 * max|f|``.
    """
    f = check_vector(values, "values")
    if f.size < 3:
        raise InvalidInputError(f"convexity check needs at least 3 samples, got {f.size}")
    if tolerance is None:
        tolerance = 1e-9 * float(np.max(np.abs(f)))
    tolerance = check_positive(tolerance, "tolerance", allow_zero=True)
    d2 = f[2:] - 2.0 * f[1:-1] + f[:-2]
    bad = tuple(int(i) + 1 for i in np.flatnonzero(d2 < -tolerance))
    return ConvexityReport(not bad, bad, d2, tolerance)


_TEMP_KINDS = {"linear", "power", "powerlaw", "power_law"}


def model_from_config(cfg: Mapping[str, str]) -> ImpactModel:
    """Build an :class:`ImpactModel` from flat ``temp.*`` / ``perm.*`` / ``assets`` keys.

    ``perm.matrix`` is a row-major comma list; its length must be ``assets**2``.
    """
    kind = str(cfg.get("temp.kind", "linear")).strip().lower()
    if kind not in _TEMP_KINDS:
        raise InvalidInputError(f"unknown temp.kind {kind!r}")
    try:
        eta = float(cfg["temp.eta"])
    except KeyError as exc:
        raise InvalidInputError("config is missing temp.eta") from exc
    except ValueError as exc:
        raise InvalidInputError(f"temp.eta is not a number: {cfg['temp.eta']!r}") from exc
    if kind == "linear":
        temporary = LinearImpact(eta)
    else:
        if "temp.gamma" not in cfg:
            raise InvalidInputError("power-law impact requires temp.gamma")
        temporary = PowerLawImpact(eta, _as_float(cfg["temp.gamma"], "temp.gamma"))

    assets = check_int(_as_float(cfg.get("assets", 1), "assets"), "assets", minimum=1)
    if "perm.matrix" in cfg and "perm.lambda" in cfg:
        raise InvalidInputError("give either perm.lambda or perm.matrix, not both")
    if "perm.matrix" in cfg:
        entries = _as_list(cfg["perm.matrix"], "perm.matrix")
        if len(entries) != assets * assets:
            raise InvalidInputError(
                f"perm.matrix has {len(entries)} entries, expected {assets * assets}"
            )
        permanent = PermanentImpact(np.asarray(entries).reshape(assets, assets))
    else:
        permanent = PermanentImpact(_as_float(cfg.get("perm.lambda", 0.0), "perm.lambda"))
    return ImpactModel(temporary, permanent, assets)


def model_to_config(model: ImpactModel) -> dict:
    temp = model.temporary
    if isinstance(temp, CallableImpact):
        raise InvalidInputError("callable impact cannot be serialized")
    out = {"temp.kind": temp.kind, "temp.eta": repr(temp.eta)}
    if isinstance(temp, PowerLawImpact):
        out["temp.gamma"] = repr(temp.gamma)
    if model.permanent.is_matrix:
        out["perm.matrix"] = ",".join(repr(float(x)) for x in np.ravel(model.permanent.lam))
    else:
        out["perm.lambda"] = repr(model.permanent.lam)
    out["assets"] = str(model.assets)
    return out


def _as_float(value, name):
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} is not a number: {value!r}") from exc


def _as_list(value, name):
    if isinstance(value, str):
        parts = [p for p in value.replace(";", ",").split(",") if p.strip()]
    else:
        parts = list(np.ravel(value))
    return [_as_float(p, name) for p in parts]
