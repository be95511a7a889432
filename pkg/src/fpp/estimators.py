"""Monte Carlo layer: time constants, upper-tail probabilities and rate fits.

Replica ``i`` always uses the environment seeded ``base_seed + i``. Replicas
may run on a thread pool, but results are gathered and reduced in replica
order, so every estimate is bit-identical for any worker count.

The tilted estimator is a defensive mixture: with probability ``w`` a replica
adds ``s`` to every origin edge it can use, otherwise it keeps the environment
as is. Each replica is weighted by

    LR = prod f(tau') / (w prod f(tau' - s) + (1 - w) prod f(tau'))

over the tilted edges, which is bounded by ``1 / (1 - w)``. Probabilities far
below the double range are handled in log space (``log_p``).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import distributions as dist
from . import lattice as lat
from .lattice import Environment, Region
from .passage import search


class EstimationError(RuntimeError):
    """Internal-consistency failure during estimation."""


def _map_replicas(fn, count: int, threads: int = 1) -> list:
    if threads <= 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count), chunksize=max(1, count // (8 * threads))))


# ---------------------------------------------------------------------------
# Time constant


@dataclass
class TimeConstantEstimate:
    mu_hat: float
    n_used: int
    replicas: int
    stderr: float
    per_n_means: list  # (n, mean of T(0, n e_1), stderr of that mean)

    def normalized(self):
        """(n, mean/n, stderr/n) rows."""
        return [(n, m / n, s / n) for n, m, s in self.per_n_means]


def passage_samples(model, d: int, n_list, replicas: int, base_seed: int = 0, threads: int = 1, axis: int = 0):
    """Matrix ``T[i, j] = T(0, n_j e_axis)`` in environment ``base_seed + i``."""
    targets = [lat.unit(d, axis, n) for n in n_list]
    origin = (0,) * d

    def one(i):
        env = Environment(d, model, base_seed + i)
        return search(env, origin, targets).times

    return np.array(_map_replicas(one, replicas, threads), dtype=np.float64)


def estimate_time_constant(model, d: int, n_list, replicas: int, base_seed: int = 0, threads: int = 1) -> TimeConstantEstimate:
    """Estimate mu(e_1) by the mean of ``T(0, n e_1) / n`` at the largest n."""
    n_list = [int(n) for n in n_list]
    if not n_list or any(n <= 0 for n in n_list) or n_list != sorted(set(n_list)):
        raise ValueError("n_list must be strictly ascending positive integers")
    if replicas < 30:
        raise ValueError("need at least 30 replicas")
    T = passage_samples(model, d, n_list, replicas, base_seed, threads)
    if not np.all(np.isfinite(T)):
        raise EstimationError("infinite passage time on the full lattice")
    rows = []
    for j, n in enumerate(n_list):
        col = T[:, j]
        rows.append((n, float(col.mean()), float(col.std(ddof=1) / math.sqrt(replicas))))
    n_max = n_list[-1]
    scaled = T[:, -1] / n_max
    return TimeConstantEstimate(
        mu_hat=float(scaled.mean()),
        n_used=n_max,
        replicas=replicas,
        stderr=float(scaled.std(ddof=1) / math.sqrt(replicas)),
        per_n_means=rows,
    )


def subadditive_violations(est: TimeConstantEstimate, k: float = 2.0) -> list:
    """Consecutive pairs where mean/n increases by more than k combined stderrs."""
    bad = []
    rows = est.normalized()
    for (n1, m1, s1), (n2, m2, s2) in zip(rows, rows[1:]):
        if m2 - m1 > k * math.hypot(s1, s2):
            bad.append((n1, n2, m1, m2))
    return bad


# ---------------------------------------------------------------------------
# Tail probabilities


@dataclass(frozen=True)
class TailQuery:
    model: object
    d: int
    xi: float
    n: int
    mu_hat: float
    direction: tuple | None = None

    @property
    def target(self) -> tuple:
        direction = self.direction or lat.unit(self.d, 0)
        return lat.as_site([self.n * c for c in direction])

    @property
    def threshold(self) -> float:
        return self.n * (self.mu_hat + self.xi)


@dataclass
class TailEstimate:
    p_hat: float
    log_p: float
    variance: float
    replicas: int
    estimator_kind: str
    tilt_shift: float = 0.0
    mixture_weight: float = 1.0
    rel_stderr: float = math.inf
    hits: int = 0

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance)

    def interval95(self):
        """Normal-approximation 95% interval, in probability units."""
        half = 1.96 * self.stderr
        return max(0.0, self.p_hat - half), self.p_hat + half


@dataclass
class TailSamples:
    """Per-replica passage times and log likelihood ratios.

    Times above the search cutoff are stored as ``inf``; any threshold at or
    below the cutoff can be evaluated exactly from these samples.
    """

    times: np.ndarray
    log_lr: np.ndarray
    estimator_kind: str
    tilt_shift: float = 0.0
    mixture_weight: float = 1.0
    cutoff: float = math.inf

    def estimate(self, threshold: float, strict: bool = True) -> TailEstimate:
        if threshold > self.cutoff:
            raise ValueError("threshold above the search cutoff")
        hit = self.times > threshold if strict else self.times >= threshold
        R = len(self.times)
        nh = int(hit.sum())
        kw = dict(replicas=R, estimator_kind=self.estimator_kind, tilt_shift=self.tilt_shift,
                  mixture_weight=self.mixture_weight, hits=nh)
        if nh == 0:
            return TailEstimate(0.0, -math.inf, 0.0, rel_stderr=math.inf, **kw)
        if self.estimator_kind == "naive":
            p = nh / R
            var = p * (1 - p) / R
            return TailEstimate(p, math.log(p), var, rel_stderr=math.sqrt(var) / p, **kw)
        lw = self.log_lr[hit]
        top = float(lw.max())
        w = np.exp(lw - top)
        s1 = float(w.sum())
        s2 = float((w * w).sum())
        m = s1 / R
        var_scaled = max(0.0, (s2 - R * m * m) / (R - 1)) / R if R > 1 else 0.0
        log_p = top + math.log(m)
        return TailEstimate(
            p_hat=math.exp(log_p),
            log_p=log_p,
            variance=math.exp(2 * top) * var_scaled if var_scaled > 0 else 0.0,
            rel_stderr=math.sqrt(var_scaled) / m,
            **kw,
        )


def tilt_edges(d: int, region: Region) -> list:
    """Origin edges usable inside the region; these receive the tilt."""
    return [e for e in lat.origin_edges(d) if region.contains_edge(e)]


def log_likelihood_ratio(model, weights, shift: float, w: float, tilted: bool = False) -> float:
    """log of f(tau') / (w f(tau' - s) + (1 - w) f(tau')), products over the tilted edges.

    ``weights`` are the untilted draws tau; a tilted replica uses tau' = tau + s.
    Working from tau avoids re-deriving it as (tau + s) - s in floating point.
    """
    log_ratio = 0.0  # log prod f(tau' - s) / f(tau')
    for x in weights:
        if tilted:
            log_ratio += dist.log_density(model, x) - dist.log_density(model, x + shift)
        elif x < shift:
            log_ratio = -math.inf
            break
        else:
            log_ratio += dist.log_density(model, x - shift) - dist.log_density(model, x)
    a = math.log(w) + log_ratio
    b = math.log1p(-w) if w < 1 else -math.inf
    return -float(np.logaddexp(a, b))


def sample_tail(
    model,
    d: int,
    n: int,
    replicas: int,
    base_seed: int = 0,
    region: Region | None = None,
    target=None,
    shift: float | None = None,
    mixture_weight: float = 0.5,
    cutoff: float = math.inf,
    threads: int = 1,
) -> TailSamples:
    """Draw passage times T_region(0, target) with optional origin tilting.

    ``shift=None`` gives plain (naive) sampling.
    """
    region = region or Region.full()
    origin = (0,) * d
    target = tuple(target) if target is not None else lat.unit(d, 0, n)
    tilted = shift is not None
    if tilted:
        if not shift > 0:
            raise ValueError("tilt shift must be positive")
        if not 0 < mixture_weight <= 1:
            raise ValueError("mixture weight must lie in (0, 1]")
        if not dist.is_continuous(model):
            raise ValueError("tilting needs a model with a density")
    edges = tilt_edges(d, region) if tilted else []

    def one(i):
        seed = base_seed + i
        env = Environment(d, model, seed)
        overrides = None
        log_lr = 0.0
        if tilted:
            taus = [lat.weight(env, e) for e in edges]
            shifted = lat.stream_uniform(lat.seed_u64(seed), lat.STREAM_MIXTURE, 0) < mixture_weight
            if shifted:
                overrides = {e: t + shift for e, t in zip(edges, taus)}
            log_lr = log_likelihood_ratio(model, taus, shift, mixture_weight, shifted)
        t = search(env, origin, [target], region, overrides=overrides, cutoff=cutoff).times[0]
        return t, log_lr

    out = _map_replicas(one, replicas, threads)
    times = np.array([t for t, _ in out], dtype=np.float64)
    log_lr = np.array([x for _, x in out], dtype=np.float64)
    if tilted:
        if not np.all(np.isfinite(log_lr)):
            raise EstimationError("non-finite likelihood ratio")
        if mixture_weight < 1 and np.any(log_lr > -math.log1p(-mixture_weight) + 1e-12):
            raise EstimationError("likelihood ratio above the defensive-mixture bound")
    return TailSamples(
        times, log_lr, "tilted" if tilted else "naive",
        float(shift) if tilted else 0.0, float(mixture_weight) if tilted else 1.0, cutoff,
    )


def naive_tail(q: TailQuery, replicas: int, base_seed: int = 0, threads: int = 1) -> TailEstimate:
    """Fraction of replicas with T(0, n x) above n (mu_hat + xi)."""
    if replicas < 1:
        raise ValueError("need at least one replica")
    s = sample_tail(q.model, q.d, q.n, replicas, base_seed, target=q.target, cutoff=q.threshold, threads=threads)
    return s.estimate(q.threshold)


def tilted_tail(q: TailQuery, shift: float | None = None, mixture_weight: float = 0.5, replicas: int = 1000,
                base_seed: int = 0, threads: int = 1) -> TailEstimate:
    """Importance-sampled P(T(0, n x) > n (mu_hat + xi)); default shift xi n."""
    if not q.xi > 0:
        raise ValueError("tilted estimator needs xi > 0")
    shift = q.xi * q.n if shift is None else shift
    s = sample_tail(q.model, q.d, q.n, replicas, base_seed, target=q.target, shift=shift,
                    mixture_weight=mixture_weight, cutoff=q.threshold, threads=threads)
    return s.estimate(q.threshold)


# ---------------------------------------------------------------------------
# Rate fits


@dataclass
class RateFit:
    r: float
    slope: float
    intercept: float
    slope_stderr: float
    points: list = field(default_factory=list)


def rate_regressor(model, n: float, r: float) -> float:
    """n**r, or b(n) n**r for the log-perturbed family."""
    if isinstance(model, dist.LogPerturbedModel):
        return model.rate(n) * n ** r
    return n ** r


def fit_rate(points, r: float, model=None) -> RateFit:
    """Least squares of log_p against n**r (b(n) n**r for log-perturbed laws)."""
    points = [(float(n), float(lp)) for n, lp in points]
    if len(points) < 4:
        raise ValueError("rate fit needs at least 4 points")
    if len({n for n, _ in points}) < 2:
        raise ValueError("degenerate regressor: all n equal")
    if not all(math.isfinite(lp) for _, lp in points):
        raise ValueError("cannot fit a point with zero estimated probability")
    x = np.array([rate_regressor(model, n, r) for n, _ in points])
    y = np.array([lp for _, lp in points])
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    dof = len(points) - 2
    sigma2 = float((resid ** 2).sum()) / dof
    return RateFit(r, slope, intercept, math.sqrt(sigma2 / sxx), points)


def theoretical_rate(model, d: int, xi: float):
    """-2 d alpha xi**r; for the anomalous law the pair (alpha1, alpha2) versions."""
    if isinstance(model, dist.AnomalousModel):
        return -2 * d * model.alpha1 * xi, -2 * d * model.alpha2 * xi
    if isinstance(model, dist.LogPerturbedModel):
        return -2 * d * xi ** model.r
    return -2 * d * dist.tail_rate(model) * xi ** dist.tail_exponent(model)


@dataclass
class UpperTailResult:
    estimates: dict  # n -> TailEstimate
    fit: RateFit
    target: float
    slope_low: float
    slope_high: float
    mu_hat: float
    mu_stderr: float

    @property
    def relative_error(self) -> float:
        return abs(self.fit.slope - self.target) / abs(self.target)


def upper_tail_experiment(model, d: int, xi: float, n_list, replicas: int, mu_hat: float, mu_stderr: float = 0.0,
                          base_seed: int = 0, estimator: str = "tilted", shift_factor: float = 1.0,
                          mixture_weight: float = 0.5, threads: int = 1) -> UpperTailResult:
    """Estimate P(T(0, n e_1) > n (mu + xi)) over n_list and fit the rate.

    The fit is repeated at mu_hat +- 2 stderr on the same samples to report
    how sensitive the slope is to the plug-in time constant.
    """
    r = dist.tail_exponent(model)
    spread = 2 * mu_stderr
    estimates, lo_pts, hi_pts = {}, [], []
    for n in n_list:
        shift = shift_factor * xi * n if estimator == "tilted" else None
        cutoff = n * (mu_hat + spread + xi)
        samples = sample_tail(model, d, n, replicas, base_seed, shift=shift, mixture_weight=mixture_weight,
                              cutoff=cutoff, threads=threads)
        estimates[n] = samples.estimate(n * (mu_hat + xi))
        lo_pts.append((n, samples.estimate(n * (mu_hat - spread + xi)).log_p))
        hi_pts.append((n, samples.estimate(cutoff).log_p))
    fit = fit_rate([(n, e.log_p) for n, e in estimates.items()], r, model)
    slopes = []
    for pts in (lo_pts, hi_pts):
        try:
            slopes.append(fit_rate(pts, r, model).slope)
        except ValueError:
            slopes.append(math.nan)
    target = theoretical_rate(model, d, xi)
    if isinstance(target, tuple):
        target = target[0]
    return UpperTailResult(estimates, fit, target, min(slopes), max(slopes), mu_hat, mu_stderr)


def slab_tail(model, d: int, K: int, n: int, epsilon: float, mu_hat: float, replicas: int, base_seed: int = 0,
              estimator: str = "naive", shift: float | None = None, mixture_weight: float = 0.5,
              threads: int = 1) -> TailEstimate:
    """P(T_{[0,n] x [-K,K]^{d-1}}(0, n e_1) >= (mu + epsilon) n)."""
    if n < K:
        raise ValueError("slab experiment needs n >= K")
    region = Region.slab((0,) * (d - 1), K, n)
    threshold = (mu_hat + epsilon) * n
    if estimator == "tilted":
        shift = epsilon * n if shift is None else shift
    elif estimator == "naive":
        shift = None
    else:
        raise ValueError(f"unknown estimator {estimator!r}")
    s = sample_tail(model, d, n, replicas, base_seed, region=region, shift=shift,
                    mixture_weight=mixture_weight, cutoff=threshold, threads=threads)
    return s.estimate(threshold, strict=False)


# ---------------------------------------------------------------------------
# Sums of i.i.d. weights


@njit(cache=True)
def draw_kernel(seed, kind, params, start, count):
    out = np.empty(count)
    for i in range(count):
        out[i] = dist.quantile_kernel(kind, params, lat.stream_uniform(seed, lat.STREAM_SAMPLES, start + i))
    return out


def draw_samples(model, count: int, seed: int = 0) -> np.ndarray:
    """``count`` i.i.d. weights from a counter-based stream."""
    kind, params = dist.pack(model)
    return draw_kernel(lat.seed_u64(seed), kind, params, 0, int(count))


@njit(cache=True)
def _sum_tail_kernel(seed, kind, params, k, replicas, thresholds, lo, hi):
    hits = np.zeros(thresholds.shape[0], np.int64)
    for i in range(replicas):
        s = 0.0
        for j in range(k):
            x = dist.quantile_kernel(kind, params, lat.stream_uniform(seed, lat.STREAM_SAMPLES, i * k + j))
            if lo <= x < hi:
                s += x
        for t in range(thresholds.shape[0]):
            if s > thresholds[t]:
                hits[t] += 1
    return hits


@dataclass
class SumTailRow:
    n: float
    p_hat: float
    stderr: float
    bound: float


def sum_tail_bound(model, n: float, c: float = 0.1) -> float:
    """exp(-(1 - c) alpha n**r); alpha2 with r = 1 for the anomalous law."""
    if isinstance(model, dist.AnomalousModel):
        return math.exp(-(1 - c) * model.alpha2 * n)
    if isinstance(model, dist.LogPerturbedModel):
        return math.exp(-(1 - c) * model.rate(n) * n ** model.r)
    if isinstance(model, dist.WeibullModel):
        return math.exp(-(1 - c) * model.alpha * n ** model.r)
    return math.nan


def sum_tail_check(model, k: int, n_list, replicas: int, seed: int = 0, c: float = 0.1,
                   window: tuple = (0.0, math.inf)) -> list:
    """Monte Carlo P(sum of k i.i.d. weights > n) next to the exponential-Markov bound.

    ``window = (lo, hi)`` only counts summands in ``[lo, hi)``, the truncated
    sums used for the anomalous law.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    kind, params = dist.pack(model)
    thresholds = np.array([float(n) for n in n_list])
    hits = _sum_tail_kernel(lat.seed_u64(seed), kind, params, int(k), int(replicas), thresholds,
                            float(window[0]), float(window[1]))
    rows = []
    for n, h in zip(n_list, hits):
        p = float(h) / replicas
        rows.append(SumTailRow(n, p, math.sqrt(p * (1 - p) / replicas), sum_tail_bound(model, n, c)))
    return rows


# ---------------------------------------------------------------------------
# Anomalous law: tower-scale interval map


@dataclass
class IntervalMapCheck:
    scale_index: int
    n: int
    t: float
    interval: tuple
    regime_rate: float
    predicted_rate: float
    hazard: float

    @property
    def agrees(self) -> bool:
        return self.regime_rate == self.predicted_rate


def interval_map(model: dist.AnomalousModel, xi: float, m: int) -> IntervalMapCheck:
    """Where the single-edge tail scale xi * a_m**2 falls in the tower.

    Along n = a_m**2 the rate alternates: odd m (a_{2j-1}**2) is the limsup
    subsequence governed by alpha1, even m the liminf one governed by alpha2.
    The hazard f/S at that scale is computed analytically and equals the
    regime rate whenever the interval's upper end carries negligible mass.
    """
    a = dist.tower(m)
    n = a * a
    t = xi * n
    k = model.tower.interval_index(t)
    v = model.tower.values
    interval = (v[k], v[k + 1] if k + 1 < len(v) else math.inf)
    regime = model.interval_rate(k)
    predicted = model.alpha1 if m % 2 == 1 else model.alpha2
    # f/S rewritten as alpha / (alpha S(b) e^{alpha t} / c3 + 1 - e^{-alpha (b - t)}), finite even where S underflows
    b = interval[1]
    tail = model.boundary_survival[k + 1] if k + 1 < len(v) else 0.0
    carry = regime * math.exp(math.log(tail) + regime * t) / model.c3 if tail > 0 else 0.0
    hazard = regime / (carry - math.expm1(-regime * (b - t)))
    return IntervalMapCheck(m, n, t, interval, regime, predicted, hazard)
