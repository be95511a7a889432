"""First passage times on lazily weighted environments.

Two Dijkstra implementations share the same edge weights and tie-breaking
(heap ordered by ``(distance, push counter)``, strict-improvement relaxation,
neighbours in the documented order):

* a compiled search over a dense window of the lattice, used for ``full``,
  ``box`` and ``slab`` regions and small excluded-edge sets. For the full
  lattice the window is grown and the search repeated whenever a window
  boundary site would be settled before all targets, so results are exact;
* a dictionary-keyed search for arbitrary vertex/edge regions.

``brute_force_oracle`` enumerates simple paths and serves as the independent
check for both.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from . import lattice as lat
from .lattice import COORD_LIMIT, EdgeId, Environment, LatticeError, LatticeRangeError, Region

MAX_WINDOW_SITES = 20_000_000
MAX_KERNEL_EDGES = 64


@dataclass(frozen=True)
class PassageQuery:
    env: Environment
    source: tuple
    target: tuple
    region: Region = field(default_factory=Region.full)
    excluded_edges: frozenset = frozenset()
    want_geodesic: bool = False


@dataclass(frozen=True)
class PassageResult:
    time: float
    geodesic: tuple | None = None
    settled_count: int = 0
    max_frontier: int = 0


def path_time(env: Environment, path: Sequence) -> float:
    """T(gamma): sum of edge weights along the path, accumulated in path order."""
    path = [lat.check_site(s, env.d) for s in path]
    if not path:
        raise LatticeError("empty path")
    total = 0.0
    for a, b in zip(path, path[1:]):
        total += lat.weight(env, lat.edge_between(a, b))
    return total


# ---------------------------------------------------------------------------
# Compiled window search.


@njit(cache=True, inline="always")
def _heap_push(hk, hs, hn, size, key, seq, node):
    i = size
    while i > 0:
        p = (i - 1) >> 1
        if hk[p] < key or (hk[p] == key and hs[p] < seq):
            break
        hk[i] = hk[p]
        hs[i] = hs[p]
        hn[i] = hn[p]
        i = p
    hk[i] = key
    hs[i] = seq
    hn[i] = node


@njit(cache=True, inline="always")
def _heap_pop(hk, hs, hn, size):
    # caller reads the root before calling; size is the size after removal
    key = hk[size]
    seq = hs[size]
    node = hn[size]
    i = 0
    while True:
        c = 2 * i + 1
        if c >= size:
            break
        if c + 1 < size and (hk[c + 1] < hk[c] or (hk[c + 1] == hk[c] and hs[c + 1] < hs[c])):
            c += 1
        if hk[c] < key or (hk[c] == key and hs[c] < seq):
            hk[i] = hk[c]
            hs[i] = hs[c]
            hn[i] = hn[c]
            i = c
        else:
            break
    hk[i] = key
    hs[i] = seq
    hn[i] = node


@njit(cache=True, nogil=True)
def window_search(hkey, kind, params, lo, shape, bounded, src, targets, excl, ov_keys, ov_vals, cutoff, want_pred):
    """Dijkstra from flat index ``src`` inside the window ``lo + [0, shape)``.

    Edge keys are ``flat_base * d + axis``. Returns ``(target_times, status,
    settled, max_heap, pred)`` with status 0 = all targets settled, 1 = an
    unbounded search reached the window boundary, 2 = the cutoff was passed,
    3 = heap exhausted.
    """
    d = shape.shape[0]
    strides = np.empty(d, np.int64)
    size = 1
    for i in range(d - 1, -1, -1):
        strides[i] = size
        size *= shape[i]
    dist = np.full(size, np.inf)
    done = np.zeros(size, np.uint8)
    pred = np.full(size if want_pred else 1, -1, np.int64)
    nt = targets.shape[0]
    tdist = np.full(nt, np.inf)
    remaining = nt
    # each edge is relaxed at most once (from its first settled endpoint)
    cap = d * size + 2
    hk = np.empty(cap, np.float64)
    hs = np.empty(cap, np.int64)
    hn = np.empty(cap, np.int64)
    hsize = 0
    seq = 0
    dist[src] = 0.0
    _heap_push(hk, hs, hn, hsize, 0.0, seq, src)
    hsize = 1
    seq = 1
    max_heap = 1
    settled = 0
    status = 3
    coords = np.empty(d, np.int64)
    base = np.empty(d, np.int64)
    n_excl = excl.shape[0]
    n_ov = ov_keys.shape[0]
    while hsize > 0:
        key = hk[0]
        node = hn[0]
        hsize -= 1
        if hsize > 0:
            _heap_pop(hk, hs, hn, hsize)
        if done[node]:
            continue
        if key > cutoff:
            status = 2
            break
        done[node] = 1
        settled += 1
        for t in range(nt):
            if targets[t] == node:
                tdist[t] = key
                remaining -= 1
        if remaining == 0:
            status = 0
            break
        rem = node
        edge_of_window = False
        for i in range(d):
            coords[i] = rem // strides[i]
            rem -= coords[i] * strides[i]
            if coords[i] == 0 or coords[i] == shape[i] - 1:
                edge_of_window = True
        if edge_of_window and not bounded:
            status = 1
            break
        for axis in range(d):
            for step in (1, -1):
                c = coords[axis] + step
                if c < 0 or c >= shape[axis]:
                    continue
                nb = node + step * strides[axis]
                if done[nb]:
                    continue
                bnode = node if step == 1 else nb
                ekey = bnode * d + axis
                skip = False
                for j in range(n_excl):
                    if excl[j] == ekey:
                        skip = True
                        break
                if skip:
                    continue
                w = -1.0
                for j in range(n_ov):
                    if ov_keys[j] == ekey:
                        w = ov_vals[j]
                        break
                if w < 0.0:
                    for i in range(d):
                        base[i] = lo[i] + coords[i]
                    if step == -1:
                        base[axis] -= 1
                    w = lat.edge_weight_kernel(hkey, axis, base, kind, params)
                nd = key + w
                if nd < dist[nb]:
                    dist[nb] = nd
                    if want_pred:
                        pred[nb] = node
                    _heap_push(hk, hs, hn, hsize, nd, seq, nb)
                    hsize += 1
                    seq += 1
                    if hsize > max_heap:
                        max_heap = hsize
    return tdist, status, settled, max_heap, pred


class _Window:
    def __init__(self, lo, hi):
        self.lo = np.array(lo, dtype=np.int64)
        self.shape = np.array([b - a + 1 for a, b in zip(lo, hi)], dtype=np.int64)
        self.strides = np.ones(len(lo), dtype=np.int64)
        for i in range(len(lo) - 2, -1, -1):
            self.strides[i] = self.strides[i + 1] * self.shape[i + 1]

    @property
    def size(self):
        return int(np.prod(self.shape))

    def contains(self, s):
        return all(0 <= c - a < n for c, a, n in zip(s, self.lo, self.shape))

    def flat(self, s):
        return int(sum((c - a) * st for c, a, st in zip(s, self.lo, self.strides)))

    def site(self, idx):
        out = []
        for a, st in zip(self.lo, self.strides):
            q, idx = divmod(idx, int(st))
            out.append(int(a) + q)
        return tuple(out)

    def edge_key(self, e: EdgeId):
        a, b = e.endpoints()
        if not (self.contains(a) and self.contains(b)):
            return None
        return self.flat(a) * len(a) + e.axis


@dataclass
class SearchOutcome:
    times: np.ndarray
    status: int
    settled: int
    max_frontier: int
    geodesics: list | None = None


def _run_window(env, window, bounded, source, targets, excluded, overrides, cutoff, want_pred):
    excl = [k for k in (window.edge_key(e) for e in excluded) if k is not None]
    ov = [(window.edge_key(e), w) for e, w in overrides.items()]
    ov = [(k, w) for k, w in ov if k is not None]
    hkey, kind, params = env.packed
    tflat = np.array([window.flat(t) for t in targets], dtype=np.int64)
    res = window_search(
        hkey, kind, params, window.lo, window.shape, bounded, window.flat(source), tflat,
        np.array(excl, dtype=np.int64),
        np.array([k for k, _ in ov], dtype=np.int64),
        np.array([w for _, w in ov], dtype=np.float64),
        float(cutoff), want_pred,
    )
    times, status, settled, max_heap, pred = res
    geos = None
    if want_pred:
        geos = []
        src = window.flat(source)
        for tf, tt in zip(tflat, times):
            if not math.isfinite(tt):
                geos.append(None)
                continue
            chain = [int(tf)]
            while chain[-1] != src:
                chain.append(int(pred[chain[-1]]))
            geos.append(tuple(window.site(i) for i in reversed(chain)))
    return SearchOutcome(times, int(status), int(settled), int(max_heap), geos)


def _initial_margin(source, targets):
    spread = max(sum(abs(a - b) for a, b in zip(source, t)) for t in targets)
    return max(16, int(math.ceil(1.5 * spread)) + 16)


def search(
    env: Environment,
    source,
    targets,
    region: Region | None = None,
    excluded_edges=(),
    overrides: dict | None = None,
    cutoff: float = math.inf,
    want_geodesic: bool = False,
) -> SearchOutcome:
    """Passage times from one source to several targets in one Dijkstra run.

    ``overrides`` replaces the environment weight of selected edges (used to
    tilt the origin edges). Targets whose time exceeds ``cutoff`` come back as
    ``inf``; ``status == 2`` tells the caller that happened.
    """
    region = region or Region.full()
    d = env.d
    source = lat.check_site(source, d)
    targets = [lat.check_site(t, d) for t in targets]
    excluded = frozenset(lat.canonical(e) for e in excluded_edges)
    overrides = {lat.canonical(e): float(w) for e, w in (overrides or {}).items()}
    for w in overrides.values():
        if not w >= 0:
            raise LatticeError("override weights must be nonnegative")

    if region.kind == "edge_complement" and len(region.edges) + len(excluded) <= MAX_KERNEL_EDGES:
        excluded = excluded | region.edges
        region = Region.full()

    bounds = region.bounds(d)
    use_kernel = (region.kind == "full" or bounds is not None) and len(excluded) <= MAX_KERNEL_EDGES
    if use_kernel and bounds is not None:
        window = _Window(*bounds)
        if window.size <= MAX_WINDOW_SITES and window.contains(source):
            reachable = [t for t in targets if window.contains(t)]
            out = _run_window(env, window, True, source, reachable or [source], excluded, overrides, cutoff, want_geodesic)
            return _scatter(out, targets, reachable)
    elif use_kernel:
        margin = _initial_margin(source, targets)
        pts = [source] + targets
        while True:
            lo = [min(min(p[i] for p in pts), source[i] - margin) for i in range(d)]
            hi = [max(max(p[i] for p in pts), source[i] + margin) for i in range(d)]
            if any(c <= -COORD_LIMIT or c >= COORD_LIMIT for c in lo + hi):
                raise LatticeRangeError("search window exceeds the |x| < 2**20 safety box")
            window = _Window(lo, hi)
            if window.size > MAX_WINDOW_SITES:
                break
            out = _run_window(env, window, False, source, targets, excluded, overrides, cutoff, want_geodesic)
            if out.status != 1:
                return out
            margin *= 2
    return _generic_search(env, source, targets, region, excluded, overrides, cutoff, want_geodesic)


def _scatter(out, targets, reachable):
    """Re-expand results when some targets lie outside a bounded window."""
    if len(reachable) == len(targets):
        return out
    by_site = dict(zip(reachable, out.times))
    geo = dict(zip(reachable, out.geodesics)) if out.geodesics is not None else None
    times = np.array([by_site.get(t, math.inf) for t in targets])
    geos = [geo.get(t) for t in targets] if geo is not None else None
    return SearchOutcome(times, out.status, out.settled, out.max_frontier, geos)


def _generic_search(env, source, targets, region, excluded, overrides, cutoff, want_geodesic):
    d = env.d
    if not region.contains_site(source):
        return SearchOutcome(np.full(len(targets), math.inf), 3, 0, 0, [None] * len(targets))
    pending = {}
    for i, t in enumerate(targets):
        pending.setdefault(t, []).append(i)
    times = np.full(len(targets), math.inf)
    dist = {source: 0.0}
    pred = {}
    done = set()
    heap = [(0.0, 0, source)]
    seq = 1
    settled = 0
    max_heap = 1
    status = 3
    while heap:
        key, _, s = heapq.heappop(heap)
        if s in done:
            continue
        if key > cutoff:
            status = 2
            break
        done.add(s)
        settled += 1
        for i in pending.pop(s, ()):
            times[i] = key
        if not pending:
            status = 0
            break
        for nb in lat.neighbors(s, d):
            if nb in done or not region.contains_site(nb):
                continue
            e = lat.edge_between(s, nb)
            if e in excluded or not region.contains_edge(e):
                continue
            if any(abs(c) >= COORD_LIMIT for c in nb):
                raise LatticeRangeError("search left the |x| < 2**20 safety box")
            w = overrides.get(e)
            if w is None:
                w = lat.weight(env, e)
            nd = key + w
            if nd < dist.get(nb, math.inf):
                dist[nb] = nd
                pred[nb] = s
                heapq.heappush(heap, (nd, seq, nb))
                seq += 1
                max_heap = max(max_heap, len(heap))
    geos = None
    if want_geodesic:
        geos = []
        for t, tt in zip(targets, times):
            if not math.isfinite(tt):
                geos.append(None)
                continue
            chain = [t]
            while chain[-1] != source:
                chain.append(pred[chain[-1]])
            geos.append(tuple(reversed(chain)))
    return SearchOutcome(times, status, settled, max_heap, geos)


def _endpoint(x, d):
    x = tuple(x)
    if len(x) != d:
        raise LatticeError(f"endpoint {x} has dimension {len(x)}, expected {d}")
    if all(isinstance(c, (int, np.integer)) for c in x):
        return lat.check_site(x, d)
    return lat.check_site(lat.as_site(x), d)


def passage_time(q: PassageQuery) -> PassageResult:
    """T_D(source, target) restricted to ``q.region`` and avoiding ``q.excluded_edges``.

    Real-valued endpoints are floored. A source or target outside the region
    gives ``inf`` unless source and target coincide (time 0).
    """
    d = q.env.d
    s = _endpoint(q.source, d)
    t = _endpoint(q.target, d)
    if s == t:
        return PassageResult(0.0, (s,) if q.want_geodesic else None, 1, 1)
    if not (q.region.contains_site(s) and q.region.contains_site(t)):
        return PassageResult(math.inf, None, 0, 0)
    out = search(q.env, s, [t], q.region, q.excluded_edges, want_geodesic=q.want_geodesic)
    geo = out.geodesics[0] if out.geodesics else None
    return PassageResult(float(out.times[0]), geo, out.settled, out.max_frontier)


def first_passage_time(env: Environment, source, target, region: Region | None = None) -> float:
    return passage_time(PassageQuery(env, tuple(source), tuple(target), region or Region.full())).time


def passage_time_excluding(env: Environment, source, target, excluded=None) -> PassageResult:
    """T_{E^d \\ E}(source, target); ``excluded`` defaults to the origin edges E_1."""
    if excluded is None:
        excluded = lat.origin_edges(env.d)
    return passage_time(PassageQuery(env, tuple(source), tuple(target), Region.full(), frozenset(lat.canonical(e) for e in excluded)))


def brute_force_oracle(env: Environment, source, target, region: Region, max_sites: int = 20, excluded_edges=()) -> float:
    """Minimum of ``path_time`` over every simple path inside a small region."""
    if max_sites > 20:
        raise LatticeError("brute force limited to 20 sites")
    if not region.is_finite():
        raise LatticeError("brute force needs a finite region")
    sites = set(region.site_list(env.d))
    if len(sites) > max_sites:
        raise LatticeError(f"region has {len(sites)} sites, limit {max_sites}")
    source, target = tuple(source), tuple(target)
    if source == target:
        return 0.0
    if source not in sites or target not in sites:
        return math.inf
    excluded = {lat.canonical(e) for e in excluded_edges}

    def allowed(a, b):
        e = lat.edge_between(a, b)
        return b in sites and region.contains_edge(e) and e not in excluded

    best = math.inf
    path = [source]
    on_path = {source}

    def dfs(s):
        nonlocal best
        if s == target:
            best = min(best, path_time(env, path))
            return
        for nb in lat.neighbors(s):
            if nb not in on_path and allowed(s, nb):
                path.append(nb)
                on_path.add(nb)
                dfs(nb)
                path.pop()
                on_path.discard(nb)

    dfs(source)
    return best
