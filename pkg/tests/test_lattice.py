import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpp import lattice as lat
from fpp.distributions import DegenerateModel, WeibullModel
from fpp.lattice import EdgeId, Environment, LatticeError, LatticeRangeError, Region

coord = st.integers(-(2 ** 20) + 1, 2 ** 20 - 1)


def test_neighbors_order():
    assert lat.neighbors((0, 0)) == [(1, 0), (-1, 0), (0, 1), (0, -1)]
    assert len(lat.neighbors((0, 0, 0))) == 6


@given(st.lists(st.integers(-50, 50), min_size=2, max_size=5))
def test_neighbors_unit_distance(s):
    for nb in lat.neighbors(s):
        assert sum(abs(a - b) for a, b in zip(s, nb)) == 1


@pytest.mark.parametrize("d", [2, 3, 4])
def test_origin_edges_and_sphere(d):
    edges, sphere = lat.origin_edges(d), lat.origin_sphere(d)
    assert len(edges) == len(sphere) == 2 * d
    o = (0,) * d
    assert all(o in e.endpoints() for e in edges)
    assert all(sum(map(abs, x)) == 1 for x in sphere)
    assert len(set(edges)) == 2 * d


def test_canonical_edges():
    e = lat.edge_between((3, 4), (2, 4))
    assert e == EdgeId((2, 4), 0)
    assert lat.edge_between((2, 4), (3, 4)) == e
    assert lat.canonical(((2, 5), (2, 4))) == EdgeId((2, 4), 1)
    with pytest.raises(LatticeError):
        lat.edge_between((0, 0), (1, 1))
    with pytest.raises(LatticeError):
        lat.canonical(EdgeId((0, 0), 2))


@given(st.lists(coord, min_size=2, max_size=5), st.data())
@settings(max_examples=200)
def test_encode_round_trip(base, data):
    axis = data.draw(st.integers(0, len(base) - 1))
    e = EdgeId(tuple(base), axis)
    assert lat.decode_edge(lat.encode_edge(e), len(base)) == e


def test_encode_injective_on_sample():
    rng = np.random.default_rng(0)
    bases = rng.integers(-300, 300, size=(1_000_000, 3))
    axes = rng.integers(0, 3, size=1_000_000)
    edges = {(tuple(b), int(a)) for b, a in zip(bases.tolist(), axes.tolist())}
    codes = {lat.encode_edge(EdgeId(b, a)) for b, a in edges}
    assert len(codes) == len(edges)


def test_coordinate_limit():
    with pytest.raises(LatticeRangeError):
        lat.check_site((2 ** 20, 0))
    with pytest.raises(LatticeError):
        lat.check_site((1,))


def test_uniform_purity_and_range():
    env = Environment(2, WeibullModel(1, 1), 42)
    e = EdgeId((5, -3), 1)
    u1, u2 = lat.uniform_for_edge(env, e), lat.uniform_for_edge(env, e)
    assert u1 == u2 and 0 < u1 < 1
    assert lat.weight(env, e) == lat.weight(env, e)
    with pytest.raises(LatticeError):
        lat.uniform_for_edge(env, EdgeId((0, 0, 0), 0))


def _uniform_block(env, n):
    side = int(math.isqrt(n // 2)) + 1
    out = []
    for x in range(side):
        for y in range(side):
            for axis in (0, 1):
                out.append(lat.uniform_for_edge(env, EdgeId((x, y), axis)))
                if len(out) == n:
                    return np.array(out)
    return np.array(out)


def test_uniform_mean():
    u = _uniform_block(Environment(2, WeibullModel(1, 1), 2024), 1_000_000)
    assert len(u) == 1_000_000
    assert abs(u.mean() - 0.5) < 0.002
    assert u.min() > 0 and u.max() < 1


def test_seed_avalanche():
    a = Environment(2, WeibullModel(1, 1), 12345)
    b = Environment(2, WeibullModel(1, 1), 12345 ^ (1 << 17))
    edges = [EdgeId((i, -i // 3), i % 2) for i in range(1000)]
    differ = sum(lat.uniform_for_edge(a, e) != lat.uniform_for_edge(b, e) for e in edges)
    assert differ >= 990


def test_neighbouring_edges_uncorrelated():
    env = Environment(2, WeibullModel(1, 1), 9)
    u = np.array([lat.uniform_for_edge(env, EdgeId((x, 0), 0)) for x in range(20000)])
    corr = np.corrcoef(u[:-1], u[1:])[0, 1]
    assert abs(corr) < 4 / math.sqrt(len(u))


def test_degenerate_weight():
    env = Environment(3, DegenerateModel(1.0), 0)
    assert lat.weight(env, EdgeId((1, 2, 3), 2)) == 1.0


def test_weights_follow_law():
    from scipy import stats
    env = Environment(2, WeibullModel(1, 0.5), 5)
    w = [lat.weight(env, EdgeId((x, y), a)) for x in range(230) for y in range(230) for a in (0, 1)]
    ks = stats.kstest(w, lambda t: 1 - np.exp(-np.sqrt(t)))
    assert ks.statistic < 0.01


def test_transverse_grid_examples():
    assert lat.transverse_grid(1, 3, 2) == [(-3,), (0,), (3,)]
    assert lat.transverse_grid(1, 0, 3) == [(0, 0)]
    g = lat.transverse_grid(2, 12, 2)
    assert g == [(-12,), (-6,), (0,), (6,), (12,)]
    assert len(g) >= 12 / 6


@given(st.integers(1, 4), st.integers(0, 12), st.integers(2, 4))
@settings(deadline=None)
def test_transverse_grid_count(K, mult, d):
    M = 3 * K * mult
    g = lat.transverse_grid(K, M, d)
    assert all(c % (3 * K) == 0 and abs(c) <= M for v in g for c in v)
    assert len(g) >= M / (3 * K)


def test_slab_endpoints():
    assert lat.slab_endpoints((0,), 5) == ((0, 0), (5, 0))
    assert lat.slab_endpoints((3,), 2) == ((0, 3), (2, 3))
    M = 4
    for v in [(-4,), (0,), (4,)]:
        a, b = lat.slab_endpoints(v, 10)
        assert Region.box((0, 0), M).contains_site(a)
        assert Region.box((10, 0), M).contains_site(b)
        assert Region.slab(v, 0, 10).contains_site(a) and Region.slab(v, 0, 10).contains_site(b)


@given(st.lists(st.integers(-8, 8), min_size=2, max_size=3), st.integers(0, 3), st.data())
@settings(max_examples=200)
def test_box_and_slab_membership(center, k, data):
    d = len(center)
    s = tuple(data.draw(st.integers(-12, 12)) for _ in range(d))
    box = Region.box(center, k)
    assert box.contains_site(s) == all(abs(a - c) <= k for a, c in zip(s, center))
    v = tuple(center[1:])
    slab = Region.slab(v, k, 6)
    assert slab.contains_site(s) == (0 <= s[0] <= 6 and all(abs(a - c) <= k for a, c in zip(s[1:], v)))


@pytest.mark.parametrize("d,K,M,n", [(2, 1, 6, 4), (2, 2, 12, 3), (3, 1, 3, 2)])
def test_slabs_disjoint(d, K, M, n):
    grid = lat.transverse_grid(K, M, d)
    members = [set(Region.slab(v, K, n).site_list(d)) for v in grid]
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            assert not members[i] & members[j]


def test_box_site_count():
    assert len(Region.box((0, 0, 0), 2).site_list(3)) == 125
