"""Edge-weight laws: survival, density, quantile and inverse-CDF sampling.

Four families are supported:

* ``WeibullModel``      survival ``exp(-alpha * t**r)`` for every ``t >= 0``
                        (``r = 1`` is the exponential / Eden model).
* ``AnomalousModel``    piecewise exponential density whose rate alternates
                        between ``alpha2`` and ``alpha1`` on the tower
                        intervals ``[a_k, a_{k+1})`` with ``a_{k+1} = 2**a_k``.
* ``LogPerturbedModel`` survival ``exp(-b(t) * t**r)`` with the slowly varying
                        prefactor ``b(t) = alpha * (1 + gamma / ln(e + t))``.
* ``DegenerateModel``   a constant weight (test substrate).

The quantile functions are compiled with numba and shared with the lattice
kernel so that a weight computed inside a shortest-path search is bit-identical
to the one returned by :func:`sample`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from numba import njit

# a_0..a_5; a_6 = 2**65536 is not representable.
TOWER = (0, 1, 2, 4, 16, 65536)
TOWER_MAX_INDEX = 6

KIND_DEGENERATE = 0
KIND_WEIBULL = 1
KIND_ANOMALOUS = 2
KIND_LOGPERTURBED = 3


class ModelError(ValueError):
    """Invalid model parameters or an argument outside a model's domain."""


def tower(n: int) -> int:
    """Return ``a_n`` of the tower sequence ``a_0 = 0, a_{n+1} = 2**a_n``.

    ``a_6`` is accepted (it is an exact Python integer with 19729 digits) but
    anything beyond is rejected.
    """
    if n < 0 or n > TOWER_MAX_INDEX:
        raise ModelError(f"tower index {n} outside stored range 0..{TOWER_MAX_INDEX}")
    if n == TOWER_MAX_INDEX:
        return 2 ** TOWER[-1]
    return TOWER[n]


@dataclass(frozen=True)
class TowerSequence:
    values: tuple = TOWER

    def __post_init__(self):
        v = self.values
        if not v or v[0] != 0:
            raise ModelError("tower must start at a_0 = 0")
        for a, b in zip(v, v[1:]):
            if b != 2 ** a:
                raise ModelError(f"tower recurrence broken at {a} -> {b}")

    def interval_index(self, x: float) -> int:
        """Index k with ``a_k <= x < a_{k+1}``; the last stored interval is open-ended."""
        v = self.values
        for k in range(len(v) - 1):
            if x < v[k + 1]:
                return k
        return len(v) - 1


@dataclass(frozen=True)
class WeibullModel:
    alpha: float
    r: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ModelError("alpha must be positive")
        if not 0 < self.r <= 1:
            raise ModelError("r must lie in (0, 1]")


@dataclass(frozen=True)
class DegenerateModel:
    value: float

    def __post_init__(self):
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ModelError("degenerate value must be finite and nonnegative")


@dataclass(frozen=True)
class LogPerturbedModel:
    alpha: float
    r: float
    gamma: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ModelError("alpha must be positive")
        if not 0 < self.r < 1:
            raise ModelError("r must lie in (0, 1)")
        if not self.gamma > -1:
            raise ModelError("gamma must exceed -1 so that b(t) stays positive")
        # t / ((e + t) ln(e + t)) peaks near 0.318; below that b(t) t**r can decrease.
        if self.gamma > 0 and self.r < 1 / 3:
            raise ModelError("gamma > 0 requires r >= 1/3 for a monotone survival")

    def rate(self, t: float) -> float:
        """The slowly varying prefactor b(t)."""
        return self.alpha * (1.0 + self.gamma / math.log(math.e + t))


@dataclass(frozen=True)
class AnomalousModel:
    alpha1: float
    alpha2: float
    tower: TowerSequence = field(default_factory=TowerSequence)
    c3: float = field(init=False)
    interval_masses: tuple = field(init=False)

    def __post_init__(self):
        c3, masses = normalize_anomalous(self.alpha1, self.alpha2, self.tower)
        object.__setattr__(self, "c3", c3)
        object.__setattr__(self, "interval_masses", masses)

    def interval_rate(self, k: int) -> float:
        """Exponential rate on ``[a_k, a_{k+1})``: alpha2 for even k, alpha1 for odd k."""
        return self.alpha2 if k % 2 == 0 else self.alpha1

    @property
    def boundary_survival(self) -> tuple:
        """``P(tau >= a_k)`` for every stored boundary, ending with 0 at ``a_5``."""
        out = [0.0]
        for m in reversed(self.interval_masses):
            out.append(out[-1] + m)
        return tuple(min(1.0, s) for s in reversed(out))

    def sandwich_constants(self) -> tuple:
        """(c4, c5) with ``c4 e^{-alpha2 t} <= P(tau > t) <= c5 e^{-alpha1 t}`` for all t >= 0.

        The density is squeezed between ``c3 e^{-alpha2 x}`` and ``c3 e^{-alpha1 x}``,
        so integrating the tail gives ``c4 = c3/alpha2`` and ``c5 = c3/alpha1``.
        """
        return self.c3 / self.alpha2, self.c3 / self.alpha1


EdgeWeightModel = Union[WeibullModel, AnomalousModel, LogPerturbedModel, DegenerateModel]


def normalize_anomalous(alpha1: float, alpha2: float, tower_seq: TowerSequence | None = None):
    """Return ``(c3, interval_masses)`` for the anomalous density.

    Each interval integral ``(e^{-a alpha} - e^{-b alpha}) / alpha`` is taken in
    closed form. Mass beyond ``a_5 = 65536`` is below 1e-300 and dropped.
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise ModelError("rates must be positive")
    if not alpha1 < alpha2:
        raise ModelError("anomalous model needs alpha1 < alpha2")
    v = (tower_seq or TowerSequence()).values
    pieces = []
    for k in range(len(v) - 1):
        a, b = v[k], v[k + 1]
        rate = alpha2 if k % 2 == 0 else alpha1
        pieces.append((math.exp(-rate * a) - math.exp(-rate * b)) / rate)
    c3 = 1.0 / math.fsum(pieces)
    return c3, tuple(c3 * p for p in pieces)


# ---------------------------------------------------------------------------
# Compiled parameter packing shared with the lattice kernels.


def pack(model: EdgeWeightModel):
    """Flatten a model into ``(kind, params)`` for the compiled kernels."""
    if isinstance(model, DegenerateModel):
        return KIND_DEGENERATE, np.array([model.value], dtype=np.float64)
    if isinstance(model, WeibullModel):
        return KIND_WEIBULL, np.array([model.alpha, model.r], dtype=np.float64)
    if isinstance(model, LogPerturbedModel):
        return KIND_LOGPERTURBED, np.array([model.alpha, model.r, model.gamma], dtype=np.float64)
    if isinstance(model, AnomalousModel):
        v = model.tower.values
        params = [model.alpha1, model.alpha2, model.c3, float(len(v))]
        params += [float(a) for a in v]
        params += list(model.boundary_survival)
        return KIND_ANOMALOUS, np.array(params, dtype=np.float64)
    raise ModelError(f"unknown model type {type(model).__name__}")


@njit(cache=True)
def _logperturbed_cum_hazard(t, alpha, r, gamma):
    return alpha * (1.0 + gamma / math.log(math.e + t)) * t ** r


@njit(cache=True)
def _logperturbed_quantile(u, alpha, r, gamma):
    target = -math.log1p(-u)
    lo = 0.0
    hi = 1.0
    while _logperturbed_cum_hazard(hi, alpha, r, gamma) < target:
        lo = hi
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _logperturbed_cum_hazard(mid, alpha, r, gamma) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _anomalous_quantile(u, params):
    # params: alpha1, alpha2, c3, m, bounds[m], boundary survival[m]
    alpha1 = params[0]
    alpha2 = params[1]
    c3 = params[2]
    m = int(params[3])
    q = 1.0 - u
    k = 0
    while k < m - 2 and params[4 + m + k + 1] >= q:
        k += 1
    rate = alpha2 if k % 2 == 0 else alpha1
    a = params[4 + k]
    b = params[4 + k + 1]
    inner = (q - params[4 + m + k + 1]) * rate / c3 + math.exp(-rate * b)
    if inner <= 0.0:
        return b
    t = -math.log(inner) / rate
    if t < a:
        t = a
    return t


@njit(cache=True, inline="always")
def quantile_kernel(kind, params, u):
    """Inverse CDF at ``u`` for a packed model."""
    if kind == 0:
        return params[0]
    if kind == 1:
        e = -math.log1p(-u) / params[0]
        if params[1] == 1.0:
            return e
        if params[1] == 0.5:
            return e * e
        return e ** (1.0 / params[1])
    if kind == 2:
        return _anomalous_quantile(u, params)
    return _logperturbed_quantile(u, params[0], params[1], params[2])


# ---------------------------------------------------------------------------
# Python-facing analytic interface.


def _check_t(t):
    if not t >= 0:
        raise ModelError(f"argument must be nonnegative, got {t}")


def survival(model: EdgeWeightModel, t: float) -> float:
    """``P(tau > t)``."""
    _check_t(t)
    if isinstance(model, WeibullModel):
        return math.exp(-model.alpha * t ** model.r)
    if isinstance(model, LogPerturbedModel):
        return math.exp(-_logperturbed_cum_hazard(t, model.alpha, model.r, model.gamma))
    if isinstance(model, DegenerateModel):
        return 1.0 if t < model.value else 0.0
    if isinstance(model, AnomalousModel):
        k = model.tower.interval_index(t)
        v = model.tower.values
        rate = model.interval_rate(k)
        if k >= len(v) - 1:
            return model.c3 * math.exp(-rate * t) / rate
        tail = model.boundary_survival[k + 1]
        return tail + model.c3 * (math.exp(-rate * t) - math.exp(-rate * v[k + 1])) / rate
    raise ModelError(f"unknown model type {type(model).__name__}")


def cdf(model: EdgeWeightModel, t: float) -> float:
    return 1.0 - survival(model, t)


def log_density(model: EdgeWeightModel, x: float) -> float:
    """Natural log of the density; ``-inf`` outside the support."""
    if x < 0:
        return -math.inf
    if isinstance(model, DegenerateModel):
        raise ModelError("degenerate model has no density")
    if isinstance(model, WeibullModel):
        a, r = model.alpha, model.r
        if r == 1:
            return math.log(a) - a * x
        if x == 0:
            return math.inf
        return math.log(a * r) + (r - 1) * math.log(x) - a * x ** r
    if isinstance(model, LogPerturbedModel):
        if x == 0:
            return math.inf
        a, r, g = model.alpha, model.r, model.gamma
        lg = math.log(math.e + x)
        hazard = a * (r * x ** (r - 1) * (1 + g / lg) - g * x ** r / ((math.e + x) * lg * lg))
        return math.log(hazard) - _logperturbed_cum_hazard(x, a, r, g)
    if isinstance(model, AnomalousModel):
        k = model.tower.interval_index(x)
        return math.log(model.c3) - model.interval_rate(k) * x
    raise ModelError(f"unknown model type {type(model).__name__}")


def density(model: EdgeWeightModel, x: float) -> float:
    """Density of the law at ``x`` (derivative of the CDF)."""
    _check_t(x)
    return math.exp(log_density(model, x))


def quantile(model: EdgeWeightModel, u: float) -> float:
    """Value ``t`` with ``CDF(t) = u``, for ``0 < u < 1``."""
    if not 0 < u < 1:
        raise ModelError(f"quantile level must lie in (0, 1), got {u}")
    kind, params = pack(model)
    return float(quantile_kernel(kind, params, float(u)))


def sample(model: EdgeWeightModel, uniform: float) -> float:
    """Map one uniform variate to a weight; identical to :func:`quantile`."""
    return quantile(model, uniform)


def mean(model: EdgeWeightModel) -> float:
    if isinstance(model, DegenerateModel):
        return model.value
    if isinstance(model, WeibullModel):
        return math.gamma(1 + 1 / model.r) / model.alpha ** (1 / model.r)
    if isinstance(model, AnomalousModel):
        v = model.tower.values
        total = 0.0
        for k in range(len(v) - 1):
            a, b, lam = v[k], v[k + 1], model.interval_rate(k)
            # integral of x lam e^{-lam x} on [a, b), scaled by c3 / lam
            total += model.c3 / lam * ((a + 1 / lam) * math.exp(-lam * a) - (b + 1 / lam) * math.exp(-lam * b))
        return total
    from scipy.integrate import quad

    return quad(lambda t: survival(model, t), 0, math.inf, limit=200)[0]


def is_continuous(model: EdgeWeightModel) -> bool:
    """All non-degenerate laws put no mass at zero, so P(tau = 0) < p_c(d) trivially."""
    return not isinstance(model, DegenerateModel)


# ---------------------------------------------------------------------------
# Config grammar.


def model_from_spec(spec: dict) -> EdgeWeightModel:
    """Build a model from ``{"kind": ..., <params>}``."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ModelError("model spec must be an object with a 'kind' key")
    kind = spec["kind"]
    fields_by_kind = {
        "weibull": (WeibullModel, ("alpha", "r")),
        "anomalous": (AnomalousModel, ("alpha1", "alpha2")),
        "logperturbed": (LogPerturbedModel, ("alpha", "r", "gamma")),
        "degenerate": (DegenerateModel, ("value",)),
    }
    if kind not in fields_by_kind:
        raise ModelError(f"unknown model kind {kind!r}")
    cls, names = fields_by_kind[kind]
    extra = set(spec) - set(names) - {"kind"}
    missing = set(names) - set(spec)
    if extra or missing:
        raise ModelError(f"bad fields for {kind}: extra={sorted(extra)} missing={sorted(missing)}")
    return cls(**{k: float(spec[k]) for k in names})


def model_to_spec(model: EdgeWeightModel) -> dict:
    if isinstance(model, WeibullModel):
        return {"kind": "weibull", "alpha": model.alpha, "r": model.r}
    if isinstance(model, AnomalousModel):
        return {"kind": "anomalous", "alpha1": model.alpha1, "alpha2": model.alpha2}
    if isinstance(model, LogPerturbedModel):
        return {"kind": "logperturbed", "alpha": model.alpha, "r": model.r, "gamma": model.gamma}
    return {"kind": "degenerate", "value": model.value}


def tail_rate(model: EdgeWeightModel) -> float:
    """The alpha entering the -2 d alpha xi^r target (alpha1 for the anomalous law)."""
    if isinstance(model, (WeibullModel, LogPerturbedModel)):
        return model.alpha
    if isinstance(model, AnomalousModel):
        return model.alpha1
    return math.inf


def tail_exponent(model: EdgeWeightModel) -> float:
    if isinstance(model, (WeibullModel, LogPerturbedModel)):
        return model.r
    return 1.0
