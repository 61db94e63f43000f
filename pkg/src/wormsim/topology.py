"""Network topology: typed links, sources with path sets, hop distances.

The graph is undirected for distance computation; paths are directed walks
from a source node to its destination. Wormhole links can be excluded from
distance queries so that hop counts reflect the legitimate topology only.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InputError

VALID = "valid"
OOB_WORMHOLE = "oob_wormhole"
IB_WORMHOLE = "ib_wormhole"
LINK_KINDS = (VALID, OOB_WORMHOLE, IB_WORMHOLE)
WORMHOLE_KINDS = (OOB_WORMHOLE, IB_WORMHOLE)


@dataclass(frozen=True)
class LinkSpec:
    """One undirected link with its delay-law parameters.

    capacity:  flow units; for an in-band wormhole this is the *advertised*
               capacity, while tunnel_capacity (if set) is the true per-hop
               capacity of the covert tunnel.
    alpha:     propagation delay, time units.
    queue_capacity:  finite buffer size of the overflow model.
    slack:     geometric leash slack, time units. Only meaningful on
               wormhole links; credits the covert tunnel with part of one
               legitimate hop's propagation budget.
    """

    id: str
    ends: tuple[str, str]
    kind: str = VALID
    capacity: float = 1.0
    alpha: float = 1.0
    queue_capacity: int = 5
    slack: float = 0.0
    tunnel_capacity: Optional[float] = None

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise InputError(f"link {self.id}: unknown kind {self.kind!r}")
        if not self.capacity > 0:
            raise InputError(f"link {self.id}: capacity must be > 0")
        if not self.alpha > 0:
            raise InputError(f"link {self.id}: alpha must be > 0")
        if self.queue_capacity < 1:
            raise InputError(f"link {self.id}: queue_capacity must be >= 1")
        if len(self.ends) != 2 or self.ends[0] == self.ends[1]:
            raise InputError(f"link {self.id}: needs two distinct endpoints")


@dataclass(frozen=True)
class SourceSpec:
    """A source node pushing a constant total rate to one destination."""

    node: str
    dest: str
    rate: float
    paths: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.rate > 0:
            raise InputError(f"source {self.node}: rate must be > 0")
        if not self.paths:
            raise InputError(f"source {self.node}: needs at least one path")


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable topology: nodes, typed links, sources and their path sets."""

    nodes: tuple[str, ...]
    links: tuple[LinkSpec, ...]
    sources: tuple[SourceSpec, ...]
    zeta: float = 1.0

    def __post_init__(self):
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise InputError("duplicate node ids")
        by_id = {}
        for link in self.links:
            if link.id in by_id:
                raise InputError(f"duplicate link id {link.id}")
            for end in link.ends:
                if end not in node_set:
                    raise InputError(f"link {link.id}: unknown endpoint {end}")
            by_id[link.id] = link
        object.__setattr__(self, "_links_by_id", by_id)
        for src in self.sources:
            if src.node not in node_set or src.dest not in node_set:
                raise InputError(f"source {src.node}: unknown endpoint")
            for path in src.paths:
                self._check_walk(src, path)

    def _check_walk(self, src: SourceSpec, path: Sequence[str]):
        """Each path must be a connected walk from src.node to src.dest."""
        if not path:
            raise InputError(f"source {src.node}: empty path")
        at = src.node
        for link_id in path:
            link = self._links_by_id.get(link_id)
            if link is None:
                raise InputError(f"source {src.node}: unknown link {link_id}")
            a, b = link.ends
            if at == a:
                at = b
            elif at == b:
                at = a
            else:
                raise InputError(
                    f"source {src.node}: path {list(path)} breaks at {link_id}")
        if at != src.dest:
            raise InputError(
                f"source {src.node}: path {list(path)} ends at {at}, "
                f"not {src.dest}")

    def link(self, link_id: str) -> LinkSpec:
        try:
            return self._links_by_id[link_id]
        except KeyError:
            raise InputError(f"unknown link id {link_id}") from None

    def adjacency(self, exclude_kinds: Iterable[str] = ()) -> dict:
        """Undirected adjacency lists, optionally dropping link kinds."""
        excl = set(exclude_kinds)
        adj: dict[str, list[str]] = {n: [] for n in self.nodes}
        for link in self.links:
            if link.kind in excl:
                continue
            a, b = link.ends
            adj[a].append(b)
            adj[b].append(a)
        return adj

    def path_rate_count(self) -> int:
        return sum(len(s.paths) for s in self.sources)


def bfs_distances(spec: NetworkSpec, start: str,
                  exclude_kinds: Iterable[str] = ()) -> dict:
    """Hop counts from start to every node; unreachable nodes map to inf."""
    if start not in set(spec.nodes):
        raise InputError(f"unknown node id {start}")
    adj = spec.adjacency(exclude_kinds)
    dist = {n: math.inf for n in spec.nodes}
    dist[start] = 0
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] == math.inf:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path_len(spec: NetworkSpec, i: str, j: str,
                      exclude_kinds: Iterable[str] = ()) -> float:
    """Minimum hop count between i and j; math.inf when unreachable."""
    if j not in set(spec.nodes):
        raise InputError(f"unknown node id {j}")
    return bfs_distances(spec, i, exclude_kinds)[j]


@dataclass
class IncidenceMatrix:
    """Dense 0/1 link-by-path incidence map.

    Columns are ordered source by source, each source's paths in declared
    order. col_slices[i] is the slice of columns owned by source i.
    """

    matrix: np.ndarray
    link_ids: tuple[str, ...]
    link_index: dict
    col_slices: tuple[slice, ...]

    @property
    def n_links(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_paths(self) -> int:
        return self.matrix.shape[1]

    def column_support(self, col: int) -> set:
        rows = np.nonzero(self.matrix[:, col])[0]
        return {self.link_ids[r] for r in rows}


def build_incidence(spec: NetworkSpec) -> IncidenceMatrix:
    link_ids = tuple(l.id for l in spec.links)
    link_index = {lid: k for k, lid in enumerate(link_ids)}
    n_paths = spec.path_rate_count()
    A = np.zeros((len(link_ids), n_paths))
    slices = []
    col = 0
    for src in spec.sources:
        start = col
        for path in src.paths:
            for lid in path:
                A[link_index[lid], col] = 1.0
            col += 1
        slices.append(slice(start, col))
    return IncidenceMatrix(A, link_ids, link_index, tuple(slices))


def link_rates(inc: IncidenceMatrix, r: np.ndarray) -> np.ndarray:
    """Per-link rates induced by the path-rate vector r."""
    r = np.asarray(r, dtype=float)
    if r.shape != (inc.n_paths,):
        raise InputError(f"rate vector must have length {inc.n_paths}")
    if np.any(r < 0):
        raise InputError("negative path rate")
    return inc.matrix @ r
