"""Immutable metric-graph model: vertices joined by parametrized arcs.

Each edge is identified with the interval [0, length]; the parametrization
direction (tail -> head) induces the signed incidence used by the vertex
conditions. The exit vertex is the single absorbing boundary vertex; every
other vertex is treated as a transition vertex (a degree-1 non-exit vertex
is the degenerate, reflecting case of the same vertex condition).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DanglingEdgeEndpoint,
    DisconnectedGraph,
    ExitNotDegreeOne,
    NonpositiveLength,
    SelfLoop,
)

__all__ = [
    "Vertex",
    "Edge",
    "NetworkTopology",
    "build_network",
    "incidence_sign",
    "classify_vertices",
]


@dataclass(frozen=True)
class Vertex:
    """A network node. The position is ambient (2D) and only used to
    evaluate ambient density functions and to label output; the PDE itself
    sees arc lengths only."""

    id: int
    position: tuple[float, float]


@dataclass(frozen=True)
class Edge:
    """An arc from ``tail`` to ``head`` with positive length.

    The arc-length coordinate runs 0 at the tail to ``length`` at the head.
    """

    id: int
    tail: int
    head: int
    length: float


@dataclass(frozen=True)
class NetworkTopology:
    """Validated graph with precomputed incidence tables.

    Immutable after construction; safe to share between threads.
    """

    vertices: tuple[Vertex, ...]
    edges: tuple[Edge, ...]
    exit_vertex: int
    incident: tuple[tuple[int, ...], ...] = field(repr=False)  # vertex -> edge ids

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def exit_edge(self) -> Edge:
        """The unique edge incident to the exit vertex."""
        return self.edges[self.incident[self.exit_vertex][0]]

    def degree(self, vertex_id: int) -> int:
        return len(self.incident[vertex_id])

    def positions(self) -> np.ndarray:
        """Vertex coordinates as an (n_vertices, 2) array."""
        return np.array([v.position for v in self.vertices], dtype=float)

    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))


def build_network(vertices, edges, exit_vertex: int) -> NetworkTopology:
    """Validate and freeze a topology.

    ``vertices`` is a sequence of Vertex (or (id, position) pairs) with dense
    ids 0..n-1; ``edges`` a sequence of Edge (or (id, tail, head, length)
    tuples, length optional when vertex positions determine it).

    Raises DanglingEdgeEndpoint, SelfLoop, NonpositiveLength,
    ExitNotDegreeOne or DisconnectedGraph when the inputs do not describe a
    legal network.
    """
    verts = [v if isinstance(v, Vertex) else Vertex(int(v[0]), (float(v[1][0]), float(v[1][1])))
             for v in vertices]
    if not verts or not edges:
        raise DanglingEdgeEndpoint("a network needs at least one vertex and one edge")
    verts.sort(key=lambda v: v.id)
    ids = [v.id for v in verts]
    if ids != list(range(len(verts))):
        raise DanglingEdgeEndpoint(f"vertex ids must be dense 0..{len(verts) - 1}, got {ids}")

    pos = {v.id: np.asarray(v.position, dtype=float) for v in verts}
    built: list[Edge] = []
    for e in edges:
        if isinstance(e, Edge):
            eid, tail, head, length = e.id, e.tail, e.head, e.length
        else:
            eid, tail, head = int(e[0]), int(e[1]), int(e[2])
            length = float(e[3]) if len(e) > 3 and e[3] is not None else None
        if tail not in pos or head not in pos:
            raise DanglingEdgeEndpoint(f"edge {eid} references missing vertex {tail if tail not in pos else head}")
        if tail == head:
            raise SelfLoop(f"edge {eid} starts and ends at vertex {tail}")
        if length is None:
            length = float(np.linalg.norm(pos[head] - pos[tail]))
        if not length > 0.0:
            raise NonpositiveLength(f"edge {eid} has length {length}")
        built.append(Edge(eid, tail, head, float(length)))
    built.sort(key=lambda e: e.id)
    eids = [e.id for e in built]
    if eids != list(range(len(built))):
        raise DanglingEdgeEndpoint(f"edge ids must be dense 0..{len(built) - 1}, got {eids}")

    incident: list[list[int]] = [[] for _ in verts]
    for e in built:
        incident[e.tail].append(e.id)
        incident[e.head].append(e.id)

    if not 0 <= exit_vertex < len(verts):
        raise DanglingEdgeEndpoint(f"exit vertex {exit_vertex} does not exist")
    if len(incident[exit_vertex]) != 1:
        raise ExitNotDegreeOne(
            f"exit vertex {exit_vertex} has degree {len(incident[exit_vertex])}, expected 1")

    # connectivity by breadth-first search from the exit
    seen = {exit_vertex}
    frontier = [exit_vertex]
    while frontier:
        nxt = []
        for v in frontier:
            for j in incident[v]:
                other = built[j].head if built[j].tail == v else built[j].tail
                if other not in seen:
                    seen.add(other)
                    nxt.append(other)
        frontier = nxt
    if len(seen) != len(verts):
        missing = sorted(set(range(len(verts))) - seen)
        raise DisconnectedGraph(f"vertices {missing} are not reachable from the exit")

    return NetworkTopology(
        vertices=tuple(verts),
        edges=tuple(built),
        exit_vertex=int(exit_vertex),
        incident=tuple(tuple(js) for js in incident),
    )


def incidence_sign(topology: NetworkTopology, vertex_id: int, edge_id: int) -> int:
    """+1 if the edge starts at the vertex, -1 if it ends there, 0 otherwise."""
    e = topology.edges[edge_id]
    if e.tail == vertex_id:
        return 1
    if e.head == vertex_id:
        return -1
    return 0


def classify_vertices(topology: NetworkTopology) -> tuple[set[int], set[int]]:
    """Split vertex ids into (boundary, transition) sets by degree.

    Boundary vertices are exactly the degree-1 ones; the exit vertex is
    always among them.
    """
    boundary = {v.id for v in topology.vertices if topology.degree(v.id) == 1}
    transition = {v.id for v in topology.vertices} - boundary
    return boundary, transition
