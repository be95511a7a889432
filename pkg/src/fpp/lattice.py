"""Geometry of Z^d and the deterministic edge environment.

Sites are plain tuples of ints. An undirected nearest-neighbour edge is stored
once, as ``EdgeId(base, axis)`` meaning ``<base, base + e_axis>``.

Edge weights are never stored. ``uniform_for_edge`` hashes the edge with the
splitmix64 finalizer

    fmix(z): z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
             z ^= z >> 27; z *= 0x94D049BB133111EB
             z ^= z >> 31

applied in counter mode. With ``G = 0x9E3779B97F4A7C15`` and the environment
key ``S = fmix(seed ^ 0x6A09E667F3BCC909)``, the edge ``(base, axis)`` is packed
into the words ``w0 = axis | zz(x_0) << 3 | zz(x_1) << 24`` and, for d > 2,
``w1 = zz(x_2) | zz(x_3) << 21 | zz(x_4) << 42`` (zz = zigzag, 21 bits each),
and ``h = fmix(S + w0 G)``, then ``h = fmix(h + w1 G)`` when d > 2. In d = 2 the
map from edges to ``h`` is a bijection, so distinct edges never share a hash.
The top 53 bits give ``u = ((h >> 11) + 0.5) / 2**53``, strictly inside (0, 1).
The weight is the model quantile of that uniform.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numba import njit

from . import distributions as dist

COORD_LIMIT = 1 << 20
MAX_DIM = 5
MASK64 = (1 << 64) - 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SEED_KEY = np.uint64(0x6A09E667F3BCC909)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0

# Reserved first word for per-replica streams that are not edges (axis words are < MAX_DIM).
STREAM_MIXTURE = 1001
STREAM_SAMPLES = 1002


class LatticeError(ValueError):
    """Malformed site, edge or region."""


class LatticeRangeError(OverflowError):
    """Coordinates outside |x_i| < 2**20."""


@njit(cache=True, inline="always")
def fmix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def zigzag(x):
    if x >= 0:
        return np.uint64(2 * x)
    return np.uint64(-2 * x - 1)


@njit(cache=True, inline="always")
def to_unit(h):
    return (float(h >> np.uint64(11)) + 0.5) * _INV53


@njit(cache=True, inline="always")
def seed_key(seed):
    return fmix64(seed ^ _SEED_KEY)


@njit(cache=True, inline="always")
def edge_hash(key, axis, coords):
    d = coords.shape[0]
    w0 = np.uint64(axis) | (zigzag(coords[0]) << np.uint64(3)) | (zigzag(coords[1]) << np.uint64(24))
    h = fmix64(key + w0 * _GOLDEN)
    if d > 2:
        w1 = zigzag(coords[2])
        if d > 3:
            w1 |= zigzag(coords[3]) << np.uint64(21)
        if d > 4:
            w1 |= zigzag(coords[4]) << np.uint64(42)
        h = fmix64(h + w1 * _GOLDEN)
    return h


@njit(cache=True, inline="always")
def edge_weight_kernel(key, axis, coords, kind, params):
    """Weight of edge (coords, axis) in the environment with key ``seed_key(seed)``."""
    return dist.quantile_kernel(kind, params, to_unit(edge_hash(key, axis, coords)))


@njit(cache=True)
def edge_uniform_kernel(key, axis, coords):
    return to_unit(edge_hash(key, axis, coords))


@njit(cache=True)
def stream_uniform(seed, stream, index):
    """Uniform for auxiliary randomness keyed by (seed, stream, index)."""
    h = fmix64(seed_key(seed) + np.uint64(stream) * _GOLDEN)
    h = fmix64(h + np.uint64(index) * _GOLDEN)
    return to_unit(h)


def seed_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & MASK64)


# ---------------------------------------------------------------------------


class EdgeId(NamedTuple):
    base: tuple
    axis: int

    def endpoints(self):
        other = list(self.base)
        other[self.axis] += 1
        return self.base, tuple(other)


def as_site(x) -> tuple:
    """Map a point of R^d to the lattice by componentwise floor."""
    return tuple(int(math.floor(c)) for c in x)


def check_site(s, d: int | None = None) -> tuple:
    s = tuple(s)
    if d is not None and len(s) != d:
        raise LatticeError(f"site {s} has dimension {len(s)}, expected {d}")
    if not 2 <= len(s) <= MAX_DIM:
        raise LatticeError(f"dimension {len(s)} outside 2..{MAX_DIM}")
    for c in s:
        if not isinstance(c, (int, np.integer)):
            raise LatticeError(f"site coordinates must be integers, got {s}")
        if abs(c) >= COORD_LIMIT:
            raise LatticeRangeError(f"coordinate {c} outside |x| < 2**20")
    return tuple(int(c) for c in s)


def unit(d: int, axis: int, scale: int = 1) -> tuple:
    v = [0] * d
    v[axis] = scale
    return tuple(v)


def neighbors(s, d: int | None = None) -> list:
    """The 2d nearest neighbours in order +e_0, -e_0, +e_1, -e_1, ..."""
    s = tuple(s)
    d = len(s) if d is None else d
    out = []
    for axis in range(d):
        for step in (1, -1):
            t = list(s)
            t[axis] += step
            out.append(tuple(t))
    return out


def edge_between(v, w) -> EdgeId:
    """Canonical id of the edge joining nearest neighbours v and w."""
    v, w = tuple(v), tuple(w)
    diff = [b - a for a, b in zip(v, w)]
    if len(v) != len(w) or sum(abs(x) for x in diff) != 1:
        raise LatticeError(f"{v} and {w} are not nearest neighbours")
    axis = next(i for i, x in enumerate(diff) if x)
    return EdgeId(v if diff[axis] == 1 else w, axis)


def canonical(e) -> EdgeId:
    """Validate an EdgeId or convert an endpoint pair."""
    if isinstance(e, EdgeId):
        base = check_site(e.base)
        if not 0 <= e.axis < len(base):
            raise LatticeError(f"axis {e.axis} out of range for dimension {len(base)}")
        return EdgeId(base, int(e.axis))
    v, w = e
    return edge_between(check_site(v), check_site(w))


def encode_edge(e: EdgeId) -> int:
    """Injective integer packing: axis in the low 3 bits, then 21 bits per zigzag coordinate."""
    e = canonical(e)
    code = 0
    for c in reversed(e.base):
        code = (code << 21) | (2 * c if c >= 0 else -2 * c - 1)
    return (code << 3) | e.axis


def decode_edge(code: int, d: int) -> EdgeId:
    axis = code & 7
    code >>= 3
    base = []
    for _ in range(d):
        z = code & ((1 << 21) - 1)
        base.append(z // 2 if z % 2 == 0 else -(z + 1) // 2)
        code >>= 21
    return EdgeId(tuple(base), axis)


def origin_sphere(d: int) -> list:
    """Lambda_1: the sites at l1 distance 1 from the origin."""
    return neighbors((0,) * d)


def origin_edges(d: int) -> list:
    """E_1: the 2d edges incident to the origin, in neighbour order."""
    o = (0,) * d
    return [edge_between(o, x) for x in origin_sphere(d)]


def transverse_grid(K: int, M: int, d: int) -> list:
    """B_{K,M} = 3K Z^{d-1} intersected with [-M, M]^{d-1}, sorted."""
    if K < 1 or M < 0:
        raise LatticeError("need K >= 1 and M >= 0")
    step = 3 * K
    ticks = list(range(-(M // step) * step, M + 1, step))
    return [tuple(v) for v in itertools.product(ticks, repeat=d - 1)]


def slab_endpoints(v, n: int):
    """The slab's end sites (0, v) and (n, v)."""
    v = tuple(v)
    return (0,) + v, (n,) + v


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """Vertex or edge restriction for passage-time searches.

    Kinds and parameters:

    ``full``              no restriction
    ``box``               ``center + [-k, k]^d``
    ``slab``              ``0 <= x_1 <= n`` and ``(x_2..x_d) in v + [-K, K]^{d-1}``
    ``edge_complement``   every edge except ``edges``
    ``vertex_set``        paths through ``sites`` only
    ``edge_set``          paths along ``edges`` only
    """

    kind: str
    center: tuple = ()
    k: int = 0
    v: tuple = ()
    K: int = 0
    n: int = 0
    sites: frozenset = frozenset()
    edges: frozenset = frozenset()

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def box(cls, center, k: int):
        if k < 0:
            raise LatticeError("box radius must be nonnegative")
        return cls("box", center=tuple(center), k=int(k))

    @classmethod
    def slab(cls, v, K: int, n: int):
        if K < 0 or n < 0:
            raise LatticeError("slab needs K >= 0 and n >= 0")
        return cls("slab", v=tuple(v), K=int(K), n=int(n))

    @classmethod
    def edge_complement(cls, edges):
        return cls("edge_complement", edges=frozenset(canonical(e) for e in edges))

    @classmethod
    def vertex_set(cls, sites):
        return cls("vertex_set", sites=frozenset(tuple(s) for s in sites))

    @classmethod
    def edge_set(cls, edges):
        return cls("edge_set", edges=frozenset(canonical(e) for e in edges))

    def bounds(self, d: int):
        """Inclusive (lo, hi) corner tuples for box-shaped kinds, else None."""
        if self.kind == "box":
            return (tuple(c - self.k for c in self.center), tuple(c + self.k for c in self.center))
        if self.kind == "slab":
            if len(self.v) != d - 1:
                raise LatticeError("slab offset must have d-1 coordinates")
            return ((0,) + tuple(c - self.K for c in self.v), (self.n,) + tuple(c + self.K for c in self.v))
        return None

    def contains_site(self, s) -> bool:
        s = tuple(s)
        b = self.bounds(len(s))
        if b is not None:
            return all(lo <= c <= hi for c, lo, hi in zip(s, *b))
        if self.kind in ("full", "edge_complement"):
            return True
        if self.kind == "vertex_set":
            return s in self.sites
        if self.kind == "edge_set":
            return any(s in e.endpoints() for e in self.edges)
        raise LatticeError(f"unknown region kind {self.kind!r}")

    def contains_edge(self, e: EdgeId) -> bool:
        if self.kind == "edge_set":
            return e in self.edges
        if self.kind == "edge_complement":
            return e not in self.edges
        a, b = e.endpoints()
        return self.contains_site(a) and self.contains_site(b)

    def is_finite(self) -> bool:
        return self.kind in ("box", "slab", "vertex_set", "edge_set")

    def site_list(self, d: int) -> list:
        """All member sites of a finite region, sorted."""
        b = self.bounds(d)
        if b is not None:
            return list(itertools.product(*(range(lo, hi + 1) for lo, hi in zip(*b))))
        if self.kind == "vertex_set":
            return sorted(self.sites)
        if self.kind == "edge_set":
            return sorted({p for e in self.edges for p in e.endpoints()})
        raise LatticeError(f"region {self.kind!r} is infinite")


@dataclass(frozen=True)
class Environment:
    """An i.i.d. edge environment on Z^d, fully determined by (d, model, seed)."""

    d: int
    model: dist.EdgeWeightModel
    seed: int

    def __post_init__(self):
        if not 2 <= self.d <= MAX_DIM:
            raise LatticeError(f"dimension must lie in 2..{MAX_DIM}")
        kind, params = dist.pack(self.model)
        object.__setattr__(self, "_kind", kind)
        object.__setattr__(self, "_params", params)
        object.__setattr__(self, "_key", np.uint64(seed_key(seed_u64(self.seed))))

    @property
    def packed(self):
        """(hash key, model kind, model params) as consumed by the kernels."""
        return self._key, self._kind, self._params


def uniform_for_edge(env: Environment, e: EdgeId) -> float:
    e = canonical(e)
    if len(e.base) != env.d:
        raise LatticeError("edge dimension does not match environment")
    return float(edge_uniform_kernel(env._key, e.axis, np.array(e.base, dtype=np.int64)))


def weight(env: Environment, e: EdgeId) -> float:
    """tau_e: the model quantile of the edge's uniform."""
    e = canonical(e)
    if len(e.base) != env.d:
        raise LatticeError("edge dimension does not match environment")
    return float(edge_weight_kernel(env._key, e.axis, np.array(e.base, dtype=np.int64), env._kind, env._params))
