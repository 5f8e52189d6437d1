"""Single-agent valuation laws, revenue/gain curves and their concave closures.

A distribution lives on ``[0, L]``.  Curves are indexed by the selling
probability ``q``: ``R(q) = q * price(q)`` where ``price(q)`` is the highest
price that still sells with probability at least ``q``.  On continuous laws
this is exactly ``F^{-1}(1 - q)``; on laws with atoms it picks the top of the
atom, which is what a seller posting that price actually earns.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError

ArrayLike = float | Sequence[float] | np.ndarray

DEFAULT_GRID = 1025
_PROB_TOL = 1e-12


def _as_array(x: ArrayLike) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _ret(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


class ValuationDistribution(ABC):
    """Common interface of the supported value laws.

    All query methods accept a scalar or an array and answer in kind.
    """

    @property
    @abstractmethod
    def support_bound(self) -> float:
        """The upper end ``L`` of the support."""

    @property
    @abstractmethod
    def support_min(self) -> float:
        ...

    @abstractmethod
    def _cdf(self, v: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _tail_prob(self, p: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _tail_mean(self, p: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _quantile(self, x: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _price_at(self, q: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def _expect_tail(self, func: Callable[[float], float], p: float) -> float:
        ...

    @abstractmethod
    def kinks(self) -> np.ndarray:
        """Selling probabilities at which the revenue curve is not smooth."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        ...

    @abstractmethod
    def to_config(self) -> dict[str, Any]:
        ...

    def price_slope(self, q: ArrayLike) -> np.ndarray | None:
        """Derivative of ``price(q)`` in ``q``; ``None`` when the law has no density."""
        return None

    def cdf(self, v: ArrayLike):
        arr, scalar = _as_array(v)
        if np.any(arr < 0) or np.any(arr > self.support_bound) or np.any(np.isnan(arr)):
            raise DomainError(f"value outside [0, {self.support_bound}]")
        return _ret(self._cdf(arr), scalar)

    def tail_prob(self, p: ArrayLike):
        """``Pr[V >= p]``, the probability that a posted price ``p`` is accepted."""
        arr, scalar = _as_array(p)
        return _ret(self._tail_prob(arr), scalar)

    def tail_mean(self, p: ArrayLike):
        """``E[V * 1{V >= p}]``."""
        arr, scalar = _as_array(p)
        return _ret(self._tail_mean(arr), scalar)

    def quantile(self, x: ArrayLike):
        """``inf{v : F(v) >= x}``."""
        arr, scalar = _as_array(x)
        if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
            raise DomainError("quantile level outside [0, 1]")
        return _ret(self._quantile(arr), scalar)

    def price_at(self, q: ArrayLike):
        """Highest price accepted with probability at least ``q``."""
        arr, scalar = _as_array(q)
        if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
            raise DomainError("selling probability outside [0, 1]")
        return _ret(self._price_at(arr), scalar)

    def expect_tail(self, func: Callable[[float], float], p: float) -> float:
        """``E[func(V) * 1{V >= p}]`` for an arbitrary scalar ``func``."""
        return self._expect_tail(func, float(p))


@dataclass(frozen=True)
class Uniform(ValuationDistribution):
    lo: float
    hi: float

    def __post_init__(self):
        if not (0 <= self.lo < self.hi) or not math.isfinite(self.hi):
            raise DomainError(f"uniform needs 0 <= lo < hi, got ({self.lo}, {self.hi})")

    @property
    def support_bound(self) -> float:
        return float(self.hi)

    @property
    def support_min(self) -> float:
        return float(self.lo)

    @property
    def width(self) -> float:
        return float(self.hi - self.lo)

    def _cdf(self, v):
        return np.clip((v - self.lo) / self.width, 0.0, 1.0)

    def _tail_prob(self, p):
        return 1.0 - np.clip((p - self.lo) / self.width, 0.0, 1.0)

    def _tail_mean(self, p):
        c = np.clip(p, self.lo, self.hi)
        return (self.hi**2 - c**2) / (2.0 * self.width)

    def _quantile(self, x):
        return self.lo + x * self.width

    def _price_at(self, q):
        return self.hi - q * self.width

    def price_slope(self, q):
        arr = np.asarray(q, dtype=float)
        return np.full(arr.shape, -self.width)

    def _expect_tail(self, func, p):
        a = max(p, self.lo)
        if a >= self.hi:
            return 0.0
        val, _ = integrate.quad(func, a, self.hi, epsabs=1e-12, epsrel=1e-10)
        return val / self.width

    def kinks(self):
        return np.array([0.0, 1.0])

    def sample(self, rng, size):
        return rng.uniform(self.lo, self.hi, size)

    def to_config(self):
        return {"type": "uniform", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class Discrete(ValuationDistribution):
    """Finitely supported law; zero-probability atoms are dropped."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(values) != len(probs) or not values:
            raise DomainError("discrete law needs matching, non-empty values and probs")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise DomainError("discrete values must be strictly increasing")
        if values[0] < 0 or not math.isfinite(values[-1]):
            raise DomainError("discrete values must lie in [0, inf)")
        if any(p < 0 for p in probs) or abs(math.fsum(probs) - 1.0) > _PROB_TOL:
            raise DomainError("discrete probs must be non-negative and sum to 1")
        kept = [(v, p) for v, p in zip(values, probs) if p > 0]
        object.__setattr__(self, "values", tuple(v for v, _ in kept))
        object.__setattr__(self, "probs", tuple(p for _, p in kept))

    @cached_property
    def _v(self) -> np.ndarray:
        return np.array(self.values)

    @cached_property
    def _cum(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @cached_property
    def _suffix(self) -> np.ndarray:
        # _suffix[j] = Pr[V >= values[j]]; trailing 0 for prices above the top atom
        s = np.cumsum(self.probs[::-1])[::-1]
        return np.append(s, 0.0)

    @cached_property
    def _suffix_mean(self) -> np.ndarray:
        vp = np.array(self.values) * np.array(self.probs)
        return np.append(np.cumsum(vp[::-1])[::-1], 0.0)

    @property
    def support_bound(self) -> float:
        return self.values[-1]

    @property
    def support_min(self) -> float:
        return self.values[0]

    def _cdf(self, v):
        idx = np.searchsorted(self._v, v, side="right") - 1
        return np.where(idx >= 0, self._cum[np.clip(idx, 0, None)], 0.0)

    def _tail_prob(self, p):
        return self._suffix[np.searchsorted(self._v, p, side="left")]

    def _tail_mean(self, p):
        return self._suffix_mean[np.searchsorted(self._v, p, side="left")]

    def _quantile(self, x):
        idx = np.searchsorted(self._cum, x - _PROB_TOL, side="left")
        return self._v[np.clip(idx, 0, len(self.values) - 1)]

    def _price_at(self, q):
        # largest j with Pr[V >= v_j] >= q
        suffix = self._suffix[:-1]
        count = np.searchsorted(-suffix, -(q - _PROB_TOL), side="right")
        return self._v[np.clip(count - 1, 0, len(self.values) - 1)]

    def _expect_tail(self, func, p):
        return math.fsum(pr * func(v) for v, pr in zip(self.values, self.probs) if v >= p)

    def kinks(self):
        return np.concatenate([[0.0], self._suffix[:-1], [1.0]])

    def sample(self, rng, size):
        return rng.choice(self._v, size=size, p=np.array(self.probs))

    def to_config(self):
        return {"type": "discrete", "values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class PiecewiseCDF(ValuationDistribution):
    """CDF given by linear interpolation through ``(value, F)`` points.

    ``F`` at the first point may be positive, which places an atom there.
    """

    points: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(v), float(f)) for v, f in self.points)
        if len(pts) < 2:
            raise DomainError("piecewise CDF needs at least two points")
        vs = [v for v, _ in pts]
        fs = [f for _, f in pts]
        if vs[0] < 0 or any(b <= a for a, b in zip(vs, vs[1:])):
            raise DomainError("piecewise CDF values must be >= 0 and strictly increasing")
        if any(f < 0 or f > 1 for f in fs) or any(b < a for a, b in zip(fs, fs[1:])):
            raise DomainError("piecewise CDF levels must be non-decreasing in [0, 1]")
        if abs(fs[-1] - 1.0) > _PROB_TOL:
            raise DomainError("piecewise CDF must reach 1 at its last point")
        pts = pts[:-1] + ((vs[-1], 1.0),)
        object.__setattr__(self, "points", pts)

    @cached_property
    def _vs(self) -> np.ndarray:
        return np.array([v for v, _ in self.points])

    @cached_property
    def _fs(self) -> np.ndarray:
        return np.array([f for _, f in self.points])

    @property
    def support_bound(self) -> float:
        return float(self._vs[-1])

    @property
    def support_min(self) -> float:
        # first value where the law puts mass
        if self._fs[0] > 0:
            return float(self._vs[0])
        j = int(np.argmax(self._fs > 0))
        return float(self._vs[j - 1])

    def _cdf(self, v):
        return np.where(v < self._vs[0], 0.0, np.interp(v, self._vs, self._fs))

    def _tail_prob(self, p):
        return np.where(p <= self._vs[0], 1.0, 1.0 - np.interp(p, self._vs, self._fs))

    def _tail_mean(self, p):
        vs, fs = self._vs, self._fs
        p = np.asarray(p, dtype=float)
        out = np.where(p <= vs[0], vs[0] * fs[0], 0.0)
        for a, b, fa, fb in zip(vs[:-1], vs[1:], fs[:-1], fs[1:]):
            if fb == fa:
                continue
            dens = (fb - fa) / (b - a)
            lo = np.clip(p, a, b)
            out = out + dens * (b * b - lo * lo) / 2.0
        return out

    def _quantile(self, x):
        vs, fs = self._vs, self._fs
        j = np.clip(np.searchsorted(fs, x, side="left"), 1, len(fs) - 1)
        fa, fb = fs[j - 1], fs[j]
        va, vb = vs[j - 1], vs[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(fb > fa, (x - fa) / (fb - fa), 0.0)
        out = va + np.clip(t, 0.0, 1.0) * (vb - va)
        out = np.where(x <= fs[0], vs[0], out)
        return np.where(x <= 0.0, self.support_min, out)

    def _price_at(self, q):
        vs, fs = self._vs, self._fs
        x = 1.0 - q
        i = np.searchsorted(fs, x + _PROB_TOL, side="right")
        j = np.clip(i, 1, len(fs) - 1)
        fa, fb = fs[j - 1], fs[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(fb > fa, (x - fa) / (fb - fa), 1.0)
        out = vs[j - 1] + np.clip(t, 0.0, 1.0) * (vs[j] - vs[j - 1])
        out = np.where(i >= len(fs), vs[-1], out)
        return np.where(i == 0, vs[0], out)

    def price_slope(self, q):
        vs, fs = self._vs, self._fs
        price = self._price_at(np.asarray(q, dtype=float))
        j = np.clip(np.searchsorted(vs, price, side="right") - 1, 0, len(vs) - 2)
        df = fs[j + 1] - fs[j]
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(df > 0, -(vs[j + 1] - vs[j]) / df, np.nan)

    def _expect_tail(self, func, p):
        vs, fs = self._vs, self._fs
        total = fs[0] * func(vs[0]) if p <= vs[0] else 0.0
        for a, b, fa, fb in zip(vs[:-1], vs[1:], fs[:-1], fs[1:]):
            lo = max(a, p)
            if fb == fa or lo >= b:
                continue
            val, _ = integrate.quad(func, lo, b, epsabs=1e-12, epsrel=1e-10)
            total += val * (fb - fa) / (b - a)
        return float(total)

    def kinks(self):
        return np.unique(np.concatenate([[0.0, 1.0], 1.0 - self._fs]))

    def sample(self, rng, size):
        return self._quantile(rng.random(size))

    def to_config(self):
        return {"type": "piecewise_cdf", "points": [list(p) for p in self.points]}


def distribution_from_config(cfg: dict[str, Any]) -> ValuationDistribution:
    """Build a distribution from its JSON form."""
    kind = cfg.get("type")
    try:
        if kind == "uniform":
            return Uniform(float(cfg.get("lo", 0.0)), float(cfg["hi"]))
        if kind == "discrete":
            return Discrete(tuple(cfg["values"]), tuple(cfg["probs"]))
        if kind == "piecewise_cdf":
            return PiecewiseCDF(tuple(tuple(p) for p in cfg["points"]))
    except KeyError as exc:
        raise DomainError(f"distribution config missing field {exc}") from None
    raise DomainError(f"unknown distribution type {kind!r}")


# -- objectives ----------------------------------------------------------------

OBJECTIVE_KINDS = ("revenue", "welfare", "surplus", "custom")


@dataclass(frozen=True)
class Objective:
    """Per-sale gain ``g(v, p)``, collected when an agent with value ``v`` buys at ``p``."""

    kind: str = "revenue"
    gain: Callable[[float, float], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise DomainError(f"unknown objective {self.kind!r}")
        if self.kind == "custom" and self.gain is None:
            raise DomainError("custom objective needs a gain function")

    def g(self, v, p):
        v = np.asarray(v, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.kind == "revenue":
            return np.broadcast_to(p, np.broadcast(v, p).shape).astype(float)
        if self.kind == "welfare":
            return np.broadcast_to(v, np.broadcast(v, p).shape).astype(float)
        if self.kind == "surplus":
            return v - p
        return np.vectorize(self.gain, otypes=[float])(v, p)

    def tail_gain(self, dist: ValuationDistribution, p: ArrayLike):
        """Expected gain of posting price ``p``: ``E[g(V, p) * 1{V >= p}]``."""
        arr, scalar = _as_array(p)
        finite = np.isfinite(arr) & (arr <= dist.support_bound)
        safe = np.where(finite, arr, dist.support_bound)
        if self.kind == "revenue":
            out = safe * dist.tail_prob(safe)
        elif self.kind == "welfare":
            out = dist.tail_mean(safe)
        elif self.kind == "surplus":
            out = dist.tail_mean(safe) - safe * dist.tail_prob(safe)
        else:
            out = np.array([dist.expect_tail(lambda v, pp=pp: self.gain(v, pp), pp)
                            for pp in np.atleast_1d(safe)]).reshape(safe.shape)
        out = np.where(finite, out, 0.0)
        return _ret(out, scalar)


REVENUE = Objective("revenue")
WELFARE = Objective("welfare")
SURPLUS = Objective("surplus")


def objective_from_name(name: str) -> Objective:
    if name not in ("revenue", "welfare", "surplus"):
        raise DomainError(f"objective must be revenue, welfare or surplus, got {name!r}")
    return Objective(name)


# -- curves --------------------------------------------------------------------


def gain_at(dist: ValuationDistribution, objective: Objective, q: ArrayLike):
    """Exact curve value at selling probability ``q``.

    The deterministic price ``price(q)`` is posted with probability ``q / Pr[V >= price]``
    so the sale probability is exactly ``q`` even when ``price`` sits on an atom.
    """
    arr, scalar = _as_array(q)
    price = dist.price_at(arr)
    if objective.kind == "revenue":
        return _ret(arr * price, scalar)
    sell = dist.tail_prob(price)
    tg = objective.tail_gain(dist, price)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(sell > 0, arr / np.where(sell > 0, sell, 1.0) * tg, 0.0)
    return _ret(out, scalar)


def _grid(dist: ValuationDistribution, grid_size: int, extra_q: Sequence[float] = ()) -> np.ndarray:
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    pts = np.concatenate([np.linspace(0.0, 1.0, grid_size), dist.kinks(),
                          np.asarray(extra_q, dtype=float)])
    pts = np.clip(pts, 0.0, 1.0)
    # kinks from rounded suffix sums may land a hair off the endpoints
    pts[pts < 1e-15] = 0.0
    pts[pts > 1.0 - 1e-15] = 1.0
    pts = np.unique(pts)
    keep = np.concatenate([[True], np.diff(pts) > 1e-15])
    pts = pts[keep]
    pts[-1] = 1.0
    return pts


@dataclass(frozen=True, eq=False)
class RevenueCurve:
    """A gain curve ``G(q)`` sampled on a grid; ``R(q)`` for the revenue objective."""

    qs: np.ndarray
    values: np.ndarray
    dist: ValuationDistribution
    objective: Objective = REVENUE

    def __call__(self, q: ArrayLike):
        return gain_at(self.dist, self.objective, q)

    @property
    def sample_grid(self) -> list[tuple[float, float]]:
        return list(zip(self.qs.tolist(), self.values.tolist()))


def gain_curve(dist: ValuationDistribution, objective: Objective = REVENUE,
               grid_size: int = DEFAULT_GRID, extra_q: Sequence[float] = ()) -> RevenueCurve:
    qs = _grid(dist, grid_size, extra_q)
    return RevenueCurve(qs, np.asarray(gain_at(dist, objective, qs)), dist, objective)


def revenue_curve(dist: ValuationDistribution, grid_size: int = DEFAULT_GRID,
                  extra_q: Sequence[float] = ()) -> RevenueCurve:
    return gain_curve(dist, REVENUE, grid_size, extra_q)


@dataclass(frozen=True, eq=False)
class IronedCurve:
    """Concave piecewise-linear closure, stored by its hull vertices.

    ``source_index`` maps each vertex back to the grid point it came from, so a
    segment joining two neighbouring grid points is known to follow the curve.
    """

    qs: np.ndarray
    values: np.ndarray
    source_index: np.ndarray

    def __call__(self, q: ArrayLike):
        arr, scalar = _as_array(q)
        return _ret(np.interp(arr, self.qs, self.values), scalar)

    @property
    def hull_points(self) -> list[tuple[float, float]]:
        return list(zip(self.qs.tolist(), self.values.tolist()))

    @cached_property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / np.diff(self.qs)

    @cached_property
    def tight(self) -> np.ndarray:
        """True for segments that join consecutive grid points (no ironing)."""
        return np.diff(self.source_index) == 1

    def segment_index(self, q: ArrayLike) -> np.ndarray:
        """Index ``j`` of the segment with ``qs[j] < q <= qs[j + 1]`` (first segment at 0)."""
        idx = np.searchsorted(self.qs, np.asarray(q, dtype=float), side="left") - 1
        return np.clip(idx, 0, len(self.qs) - 2)

    def max_value(self) -> float:
        return float(self.values.max())


def iron(curve: RevenueCurve) -> IronedCurve:
    """Upper concave envelope of the sampled curve (monotone-chain scan)."""
    qs, rs = curve.qs, curve.values
    if len(qs) < 2 or qs[0] != 0.0 or qs[-1] != 1.0:
        raise DomainError("curve grid must run from q=0 to q=1")
    scale = max(1.0, float(np.max(np.abs(rs))))
    tol = 1e-13 * scale
    hull: list[int] = []
    for i in range(len(qs)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (qs[b] - qs[a]) * (rs[i] - rs[a]) - (rs[b] - rs[a]) * (qs[i] - qs[a])
            if cross >= -tol:
                hull.pop()
            else:
                break
        hull.append(i)
    idx = np.array(hull)
    return IronedCurve(qs[idx].copy(), rs[idx].copy(), idx)


def ironed_curve(dist: ValuationDistribution, objective: Objective = REVENUE,
                 grid_size: int = DEFAULT_GRID, extra_q: Sequence[float] = ()) -> IronedCurve:
    return iron(gain_curve(dist, objective, grid_size, extra_q))


def exact_slope(dist: ValuationDistribution, objective: Objective, q: ArrayLike) -> np.ndarray | None:
    """Derivative of the exact curve at ``q``; ``None`` where no closed form exists."""
    slope = dist.price_slope(q)
    if slope is None:
        return None
    q = np.asarray(q, dtype=float)
    price = np.asarray(dist.price_at(q))
    if objective.kind == "revenue":
        return price + q * slope
    if objective.kind == "welfare":
        return price
    if objective.kind == "surplus":
        return -q * slope
    return None


# -- pricing -------------------------------------------------------------------


@dataclass(frozen=True)
class PricePolicy:
    """Randomised take-it-or-leave-it price: ``low_price`` with probability ``prob_low``."""

    low_price: float
    high_price: float
    prob_low: float
    target_q: float

    @property
    def deterministic(self) -> bool:
        return self.prob_low in (0.0, 1.0) or self.low_price == self.high_price

    def selling_probability(self, dist: ValuationDistribution) -> float:
        return (self.prob_low * dist.tail_prob(self.low_price)
                + (1.0 - self.prob_low) * dist.tail_prob(self.high_price))

    def expected_gain(self, dist: ValuationDistribution, objective: Objective = REVENUE) -> float:
        return (self.prob_low * objective.tail_gain(dist, self.low_price)
                + (1.0 - self.prob_low) * objective.tail_gain(dist, self.high_price))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        return np.where(u < self.prob_low, self.low_price, self.high_price)


def _endpoint_price(dist: ValuationDistribution, q: float) -> float:
    if q <= 0.0:
        top = dist.support_bound
        return top if dist.tail_prob(top) == 0.0 else math.inf
    return float(dist.price_at(min(q, 1.0)))


def optimal_price_policy(dist: ValuationDistribution, ironed: IronedCurve, q: float) -> PricePolicy:
    """Best price lottery selling with probability exactly ``q``.

    Mixes the prices of the two hull vertices around ``q``; the low price (the
    vertex with the larger selling probability) gets weight
    ``(q - q_hi_price) / (q_lo_price - q_hi_price)``.
    """
    if not (0.0 < q <= 1.0):
        raise DomainError(f"target selling probability must be in (0, 1], got {q}")
    qs = ironed.qs
    j = int(np.searchsorted(qs, q, side="left"))
    if j < len(qs) and abs(qs[j] - q) <= _PROB_TOL or j > 0 and abs(qs[j - 1] - q) <= _PROB_TOL:
        price = float(dist.price_at(q))
        return PricePolicy(price, price, 1.0, float(q))
    high = _endpoint_price(dist, float(qs[j - 1]))
    low = _endpoint_price(dist, float(qs[j]))
    s_high = float(dist.tail_prob(high))
    s_low = float(dist.tail_prob(low))
    if s_low - s_high <= 0.0:
        return PricePolicy(low, low, 1.0, float(q))
    w = min(1.0, max(0.0, (q - s_high) / (s_low - s_high)))
    return PricePolicy(low, high, w, float(q))
