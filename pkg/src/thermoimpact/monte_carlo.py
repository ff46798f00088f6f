"""Euler-Maruyama simulation of the impacted midprice and realized round-trip P&L.

The engine is deliberately independent of the closed forms in
:mod:`thermoimpact.thermo_core`: it steps the price, charges the execution
price at every step and sums cash flows.  The analytic work enters only when
forming the pathwise decomposition residual.

Random numbers come from counter-based Philox streams, one per fixed-size
block of paths, keyed by ``(seed, block index)``.  Blocks are independent of
how they are scheduled, so results are bit-identical for any worker count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import InvalidInputError, NonRoundTripError
from .impact_models import ImpactModel
from .strategies import Strategy, inventory, roundtrip_tolerance
from .thermo_core import analyze, dissipated_work
from .validation import check_int, check_positive, check_sigma


@dataclass(frozen=True)
class SimConfig:
    sigma: float | np.ndarray
    dt: float
    n_paths: int
    seed: int = 0
    antithetic: bool = False
    workers: int = 1
    block_size: int = 4096
    s0: float = 0.0
    keep_paths: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma", check_sigma(self.sigma))
        object.__setattr__(self, "dt", check_positive(self.dt, "dt"))
        object.__setattr__(self, "n_paths", check_int(self.n_paths, "n_paths", minimum=1))
        object.__setattr__(self, "seed", check_int(self.seed, "seed", minimum=0))
        object.__setattr__(self, "workers", check_int(self.workers, "workers", minimum=1))
        block = check_int(self.block_size, "block_size", minimum=2)
        if block % 2:
            raise InvalidInputError("block_size must be even so antithetic pairs stay in one block")
        object.__setattr__(self, "block_size", block)

    def with_dt(self, dt):
        return SimConfig(**{**_config_fields(self), "dt": dt})


def _config_fields(cfg):
    return {f: getattr(cfg, f) for f in cfg.__dataclass_fields__}


@dataclass(frozen=True)
class MCResult:
    mean_pnl: float
    mean_se: float | None
    var_pnl: float | None
    var_se: float | None
    profit_frequency: float
    profit_se: float | None
    skewness: float | None
    n_paths: int
    decomposition_residual_max: float
    work: float
    pnl: np.ndarray | None = field(default=None, repr=False, compare=False)

    def to_dict(self):
        out = asdict(self)
        out.pop("pnl")
        return out


@dataclass(frozen=True)
class _Plan:
    dt: np.ndarray        # (m,)
    rates: np.ndarray     # (m, d) left-endpoint rates
    cash_weight: np.ndarray  # (m, d) rate * dt
    temp_cost: float      # sum_k J(v_k) . v_k dt_k
    drift: np.ndarray     # (m, d) permanent drift per step
    q_left: np.ndarray    # (m, d) exact inventory at left endpoints
    sigma_t: np.ndarray | None  # Sigma^T for matrix volatility
    sigma: float
    work: float


def _plan(model: ImpactModel, s: Strategy, cfg: SimConfig) -> _Plan:
    if model.assets != s.assets:
        raise InvalidInputError(
            f"model has {model.assets} assets but the strategy has {s.assets}"
        )
    if cfg.dt > s.horizon / 10 * (1 + 1e-12):
        raise InvalidInputError(f"dt={cfg.dt:g} must be <= T/10 = {s.horizon / 10:g}")
    sigma = cfg.sigma
    if np.ndim(sigma) == 2 and sigma.shape[0] != s.assets:
        raise InvalidInputError(
            f"sigma is {sigma.shape[0]}x{sigma.shape[0]} but the strategy has {s.assets} assets"
        )
    tol = roundtrip_tolerance(s)
    q_T = inventory(s).terminal
    if np.any(np.abs(q_T) > tol):
        raise NonRoundTripError(q_T if q_T.size > 1 else float(q_T[0]), tol)

    t_left, dt, seg = s.grid(cfg.dt)
    tau = (t_left - s.knots[seg])[:, None]
    rates = s.const[seg] + s.slope[seg] * tau
    temp = model.temporary(rates)
    cash_weight = rates * dt[:, None]
    drift = model.permanent(rates) * dt[:, None]
    return _Plan(
        dt=dt,
        rates=rates,
        cash_weight=cash_weight,
        temp_cost=float(np.sum(temp * cash_weight)),
        drift=drift,
        q_left=inventory(s)(t_left).reshape(rates.shape),
        sigma_t=None if np.ndim(sigma) == 0 else np.asarray(sigma).T,
        sigma=float(sigma) if np.ndim(sigma) == 0 else float("nan"),
        work=dissipated_work(model, s),
    )


def _block_rng(seed, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _simulate_block(plan: _Plan, cfg: SimConfig, block: int, n: int):
    rng = _block_rng(cfg.seed, block)
    m, d = plan.rates.shape
    if cfg.antithetic:
        half = rng.standard_normal((-(-n // 2), m, d))
        z = np.concatenate([half, -half])[:n]
    else:
        z = rng.standard_normal((n, m, d))
    dW = z * np.sqrt(plan.dt)[None, :, None]
    if plan.sigma_t is None:
        noise = plan.sigma * dW
    else:
        noise = dW @ plan.sigma_t
    dS = noise + plan.drift[None]
    # price seen by the k-th trade is the midprice before step k's move
    S_left = np.cumsum(dS, axis=1)
    S_left -= dS
    S_left += cfg.s0
    pnl = -np.einsum("nmd,md->n", S_left, plan.cash_weight) - plan.temp_cost
    heat = np.einsum("nmd,md->n", noise, plan.q_left)
    residual = pnl + plan.work - heat
    return pnl, float(np.max(np.abs(residual)))


def _run(plan: _Plan, cfg: SimConfig, progress=None):
    sizes = []
    remaining = cfg.n_paths
    while remaining > 0:
        sizes.append(min(cfg.block_size, remaining))
        remaining -= sizes[-1]

    def job(item):
        block, n = item
        out = _simulate_block(plan, cfg, block, n)
        if progress is not None:
            progress(block + 1, len(sizes))
        return out

    items = list(enumerate(sizes))
    if cfg.workers == 1 or len(items) == 1:
        results = [job(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(job, items))
    pnl = np.concatenate([r[0] for r in results])
    residual = max(r[1] for r in results)
    return pnl, residual


def _summarize(pnl, residual, work, keep):
    n = pnl.size
    mean = float(np.mean(pnl))
    freq = float(np.mean(pnl >= 0.0))
    if n > 1:
        centered = pnl - mean
        m2 = float(np.mean(centered**2))
        var = m2 * n / (n - 1)
        m4 = float(np.mean(centered**4))
        var_se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
        skew = float(np.mean(centered**3) / m2**1.5) if m2 > 0 else 0.0
        mean_se = math.sqrt(var / n)
        profit_se = math.sqrt(freq * (1 - freq) / n)
    else:
        var = var_se = skew = mean_se = profit_se = None
    return MCResult(
        mean_pnl=mean,
        mean_se=mean_se,
        var_pnl=var,
        var_se=var_se,
        profit_frequency=freq,
        profit_se=profit_se,
        skewness=skew,
        n_paths=n,
        decomposition_residual_max=residual,
        work=work,
        pnl=pnl if keep else None,
    )


def simulate_paths(model: ImpactModel, s: Strategy, cfg: SimConfig, progress=None) -> MCResult:
    """Simulate ``cfg.n_paths`` round trips and aggregate their realized P&L.

    Per step ``S_{k+1} = S_k + sigma sqrt(dt) Z_k + I(v_k) dt`` and the trader
    pays ``(S_k + J(v_k)) v_k dt``, rates taken at the left endpoint (Ito).
    ``progress(done, total)`` is called after each block when given.
    """
    plan = _plan(model, s, cfg)
    pnl, residual = _run(plan, cfg, progress)
    return _summarize(pnl, residual, plan.work, cfg.keep_paths)


def pathwise_decomposition_check(model: ImpactModel, s: Strategy, cfg: SimConfig) -> float:
    """Largest ``|Pi + W - sum_k q_{t_k} . Sigma dW_k|`` over paths; O(dt) as ``dt -> 0``."""
    return simulate_paths(model, s, cfg).decomposition_residual_max


@dataclass(frozen=True)
class ProfitCheck:
    frequency: float
    exact: float
    chernoff: float
    se_exact: float
    se_frequency: float
    consistent: bool
    n_paths: int

    def to_dict(self):
        return asdict(self)


def mc_profit_probability(model: ImpactModel, s: Strategy, cfg: SimConfig, z=3.0) -> ProfitCheck:
    """Compare the simulated profit frequency with the exact probability and the bound.

    Consistent when the frequency is within ``z`` binomial standard errors of
    the exact probability (SE under the exact ``p``) and does not exceed the
    Chernoff bound by more than ``z`` standard errors of the frequency.
    """
    result = simulate_paths(model, s, cfg)
    stats = analyze(model, s, cfg.sigma)
    n = result.n_paths
    freq, exact = result.profit_frequency, stats.profit_prob_exact
    se_exact = math.sqrt(exact * (1 - exact) / n)
    se_freq = math.sqrt(freq * (1 - freq) / n)
    consistent = abs(freq - exact) <= z * se_exact and freq <= stats.chernoff_bound + z * se_freq
    return ProfitCheck(freq, exact, stats.chernoff_bound, se_exact, se_freq, bool(consistent), n)


@dataclass(frozen=True)
class ConvergenceRow:
    dt: float
    mean_bias: float
    mean_bias_se: float | None
    residual: float


def convergence_study(model: ImpactModel, s: Strategy, cfg: SimConfig, dt_list):
    """Mean bias ``E[Pi] + W`` and decomposition residual for each step size."""
    dts = [check_positive(dt, "dt") for dt in dt_list]
    if not dts:
        raise InvalidInputError("dt_list is empty")
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise InvalidInputError("dt_list must be strictly decreasing")
    rows = []
    for dt in dts:
        res = simulate_paths(model, s, cfg.with_dt(dt))
        rows.append(
            ConvergenceRow(dt, res.mean_pnl + res.work, res.mean_se, res.decomposition_residual_max)
        )
    return rows


def write_pnl_csv(path, pnl):
    """Single-column per-path P&L dump."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pnl"])
        writer.writerows([repr(float(x))] for x in pnl)
