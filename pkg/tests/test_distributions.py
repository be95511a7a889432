import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from fpp import distributions as dist
from fpp.distributions import AnomalousModel, DegenerateModel, LogPerturbedModel, ModelError, WeibullModel
from fpp.estimators import draw_samples

ANOM = AnomalousModel(1.0, 2.0)
MODELS = [WeibullModel(1.0, 1.0), WeibullModel(1.0, 0.5), WeibullModel(2.0, 0.7),
          LogPerturbedModel(1.0, 0.5, 0.3), LogPerturbedModel(1.5, 0.4, -0.5), ANOM]


def closed_form_pieces(a1, a2):
    v = [0, 1, 2, 4, 16, 65536]
    return [(a2 if k % 2 == 0 else a1, v[k], v[k + 1]) for k in range(5)]


def oracle_survival(a1, a2, t):
    """Independent interval-sum oracle for the anomalous survival."""
    pieces = closed_form_pieces(a1, a2)
    z = math.fsum((math.exp(-r * a) - math.exp(-r * b)) / r for r, a, b in pieces)
    tail = math.fsum((math.exp(-r * max(a, t)) - math.exp(-r * b)) / r for r, a, b in pieces if b > t)
    return tail / z


def test_survival_examples():
    assert dist.survival(WeibullModel(1, 1), 0) == 1.0
    assert dist.survival(WeibullModel(2, 1), 1) == pytest.approx(math.exp(-2), rel=1e-15)
    assert dist.survival(WeibullModel(1, 0.5), 4) == pytest.approx(math.exp(-2), rel=1e-15)
    assert dist.survival(ANOM, 3) == pytest.approx(oracle_survival(1, 2, 3), rel=1e-12)


def test_survival_rejects_negative():
    with pytest.raises(ModelError):
        dist.survival(WeibullModel(1, 1), -0.1)


def test_density_examples():
    c3 = ANOM.c3
    for x in (0.0, 0.3, 0.99):
        assert dist.density(ANOM, x) == pytest.approx(c3 * math.exp(-2 * x), rel=1e-14)
    for x in (1.0, 1.5, 1.99):
        assert dist.density(ANOM, x) == pytest.approx(c3 * math.exp(-x), rel=1e-14)
    assert dist.density(WeibullModel(1, 1), 0) == 1.0
    with pytest.raises(ModelError):
        dist.density(DegenerateModel(1.0), 1.0)


def test_quantile_examples():
    assert dist.quantile(WeibullModel(1, 1), 1 - math.exp(-1)) == pytest.approx(1.0, rel=1e-12)
    assert dist.quantile(WeibullModel(1, 0.5), 1 - math.exp(-2)) == pytest.approx(4.0, rel=1e-12)
    assert dist.quantile(ANOM, ANOM.interval_masses[0]) == pytest.approx(1.0, rel=1e-12)
    for u in (0.0, 1.0, -0.5, 1.5):
        with pytest.raises(ModelError):
            dist.quantile(WeibullModel(1, 1), u)


def test_normalization():
    c3, masses = dist.normalize_anomalous(1.0, 2.0)
    z = math.fsum((math.exp(-r * a) - math.exp(-r * b)) / r for r, a, b in closed_form_pieces(1, 2))
    assert c3 == pytest.approx(1 / z, rel=1e-15)
    assert c3 == pytest.approx(1.4447, abs=5e-5)
    assert math.fsum(masses) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ModelError):
        dist.normalize_anomalous(2.0, 1.0)
    with pytest.raises(ModelError):
        dist.normalize_anomalous(1.0, 1.0)


@given(a1=st.floats(0.1, 5), gap=st.floats(0.01, 5))
@settings(max_examples=50, deadline=None)
def test_masses_sum_to_one(a1, gap):
    _, masses = dist.normalize_anomalous(a1, a1 + gap)
    assert math.fsum(masses) == pytest.approx(1.0, abs=1e-12)


def test_exponential_as_plain_case():
    # Weibull(alpha, 1) with c3 = alpha integrates to one
    m = WeibullModel(1.7, 1.0)
    total = integrate.quad(lambda x: dist.density(m, x), 0, math.inf)[0]
    assert total == pytest.approx(1.0, abs=1e-10)
    assert dist.density(m, 0) == pytest.approx(1.7)


def test_tower():
    assert dist.tower(0) == 0
    assert dist.tower(3) == 4
    assert dist.tower(5) == 65536
    assert dist.tower(6) == 2 ** 65536
    with pytest.raises(ModelError):
        dist.tower(7)
    seq = dist.TowerSequence()
    assert seq.values[0] == 0
    assert all(b == 2 ** a for a, b in zip(seq.values, seq.values[1:]))
    with pytest.raises(ModelError):
        dist.TowerSequence((0, 1, 3))


def test_sample_examples():
    assert dist.sample(DegenerateModel(3.0), 0.123) == 3.0
    assert dist.sample(WeibullModel(1, 1), 0.5) == pytest.approx(math.log(2), rel=1e-15)
    x = dist.sample(ANOM, 0.999999)
    assert x >= 4
    # bisection on the analytic CDF agrees
    lo, hi = 0.0, 100.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if dist.cdf(ANOM, mid) < 0.999999 else (lo, mid)
    assert x == pytest.approx(hi, rel=1e-10)
    us = np.linspace(0.9999, 0.999999, 50)
    xs = [dist.sample(ANOM, u) for u in us]
    assert all(b > a for a, b in zip(xs, xs[1:]))


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_round_trip_grid(model):
    for u in np.linspace(0.0005, 0.9995, 1000):
        t = dist.quantile(model, float(u))
        assert abs(dist.survival(model, t) - (1 - u)) <= 1e-10 * max(1 - u, 1e-300) + 1e-15


@pytest.mark.parametrize("model", MODELS, ids=repr)
@given(t1=st.floats(0, 200), dt=st.floats(0, 200))
@settings(max_examples=60, deadline=None)
def test_survival_monotone(model, t1, dt):
    assert dist.survival(model, t1 + dt) <= dist.survival(model, t1)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_survival_at_zero(model):
    assert dist.survival(model, 0.0) == 1.0


@pytest.mark.parametrize("model", [m for m in MODELS if not isinstance(m, AnomalousModel)], ids=repr)
def test_density_quadrature(model):
    r, a = model.r, model.alpha
    t_star = (math.log(1e12) / a * 1.5) ** (1 / r)
    f = lambda x: dist.density(model, x)  # noqa: E731
    total = integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, t_star, limit=400)[0]
    assert total == pytest.approx(1.0, abs=1e-8)


def test_anomalous_quadrature_to_a5():
    f = lambda x: dist.density(ANOM, x)  # noqa: E731
    pts = [0, 1, 2, 4, 16, 80, 65536]
    total = math.fsum(integrate.quad(f, a, b, epsabs=1e-14, limit=200)[0] for a, b in zip(pts, pts[1:]))
    assert total == pytest.approx(1.0, abs=1e-8)


def test_anomalous_log_slopes():
    v = ANOM.tower.values
    for k in range(len(v) - 1):
        a, b = v[k], v[min(k + 1, len(v) - 1)]
        x1, x2 = a + 0.2 * min(b - a, 4), a + 0.7 * min(b - a, 4)
        slope = (dist.log_density(ANOM, x1) - dist.log_density(ANOM, x2)) / (x2 - x1)
        assert slope == pytest.approx(ANOM.interval_rate(k), abs=1e-12)


def test_anomalous_sandwich():
    c4, c5 = ANOM.sandwich_constants()
    assert c4 > 0 and c5 > 0
    for t in np.linspace(1, 100, 991):
        s = dist.survival(ANOM, float(t))
        assert c4 * math.exp(-2 * t) <= s <= c5 * math.exp(-t)


def test_logperturbed_rate():
    m = LogPerturbedModel(1.0, 0.5, 0.3)
    assert m.rate(0) == pytest.approx(1.3)
    assert m.rate(1e300) == pytest.approx(1.0, rel=1e-3)
    for t in (0.5, 3.0, 50.0):
        b = 1.0 * (1 + 0.3 / math.log(math.e + t))
        assert dist.survival(m, t) == pytest.approx(math.exp(-b * t ** 0.5), rel=1e-14)


@pytest.mark.parametrize("model", MODELS, ids=repr)
def test_sampler_ks(model):
    x = draw_samples(model, 200_000, seed=7)
    ks = stats.kstest(x, np.vectorize(lambda t: dist.cdf(model, t), otypes=[float]))
    assert ks.statistic < 0.01


def test_degenerate_samples_exact():
    x = draw_samples(DegenerateModel(2.5), 1000, seed=1)
    assert np.all(x == 2.5)


def test_invalid_models():
    for bad in (lambda: WeibullModel(0, 1), lambda: WeibullModel(1, 1.5), lambda: WeibullModel(1, 0),
                lambda: AnomalousModel(2, 1), lambda: LogPerturbedModel(1, 1.0, 0.1),
                lambda: LogPerturbedModel(1, 0.5, -1.0), lambda: DegenerateModel(-1)):
        with pytest.raises(ModelError):
            bad()


def test_spec_round_trip():
    specs = [{"kind": "weibull", "alpha": 1.0, "r": 0.5}, {"kind": "anomalous", "alpha1": 1.0, "alpha2": 2.0},
             {"kind": "logperturbed", "alpha": 1.0, "r": 0.5, "gamma": 0.3}, {"kind": "degenerate", "value": 1.0}]
    for s in specs:
        assert dist.model_to_spec(dist.model_from_spec(s)) == s
    with pytest.raises(ModelError):
        dist.model_from_spec({"kind": "weibull", "alpha": 1.0})
    with pytest.raises(ModelError):
        dist.model_from_spec({"kind": "weibull", "alpha": 1.0, "r": 1.0, "extra": 2})
    with pytest.raises(ModelError):
        dist.model_from_spec({"kind": "pareto"})


def test_mean_matches_samples():
    for m in (WeibullModel(1, 1), WeibullModel(1, 0.5), ANOM):
        x = draw_samples(m, 200_000, seed=3)
        assert x.mean() == pytest.approx(dist.mean(m), abs=5 * x.std() / math.sqrt(len(x)))
