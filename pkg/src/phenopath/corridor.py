"""Junction graph of a corridor field and no-U-turn path search over it.

Nodes are free cells where the robot can do something other than continue
straight (junctions, corners, dead ends) plus the start and the waypoints.
Edges are the straight free segments between them. A robot may go straight
or turn 90 degrees at a node but never reverse, so search states carry the
incoming heading.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import NamedTuple

from .errors import InvalidInputError, PlanningError, ResourceLimitError
from .field import FieldGrid

Cell = tuple[int, int]

NORTH, EAST, SOUTH, WEST = range(4)
NO_HEADING = 4
STEPS = ((-1, 0), (0, 1), (1, 0), (0, -1))
HEADING_NAMES = ("N", "E", "S", "W", None)
DEFAULT_MAX_STATES = 5_000_000


def opposite(direction: int) -> int:
    return (direction + 2) % 4


def allowed(heading: int, direction: int) -> bool:
    return heading == NO_HEADING or direction != opposite(heading)


def heading_index(heading) -> int:
    if heading is None:
        return NO_HEADING
    if isinstance(heading, str):
        return HEADING_NAMES.index(heading.upper())
    if 0 <= heading <= NO_HEADING:
        return int(heading)
    raise InvalidInputError(f"unknown heading {heading!r}")


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    direction: int
    length: int
    cells: tuple[Cell, ...]  # cells entered, ending at the target
    plots: tuple[int, ...]  # plots measured while entering those cells


class SearchState(NamedTuple):
    node: int
    heading: int
    visited_mask: int
    cost_so_far: int


@dataclass(frozen=True)
class CandidatePath:
    nodes: tuple[int, ...]
    cost: int
    mobile_plots: frozenset

    def __len__(self):
        return len(self.nodes)


class CorridorGraph:
    def __init__(self, grid: FieldGrid, positions, edges, start: int, waypoints, sides: str):
        self.grid = grid
        self.positions: tuple[Cell, ...] = tuple(positions)
        self.index = {p: i for i, p in enumerate(self.positions)}
        self.out_edges: tuple[tuple[Edge, ...], ...] = tuple(edges)
        self.start = start
        self.waypoints: tuple[int, ...] = tuple(waypoints)
        self.sides = sides
        self._edge = {(e.source, e.target): e for out in self.out_edges for e in out}

    def __repr__(self):
        return f"CorridorGraph({len(self.positions)} nodes, {self.n_edges} edges)"

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_edges(self) -> int:
        """Number of undirected edges."""
        return sum(len(out) for out in self.out_edges) // 2

    def node(self, cell: Cell) -> int:
        try:
            return self.index[tuple(cell)]
        except KeyError:
            raise InvalidInputError(f"cell {cell} is not a graph node") from None

    def edge(self, u: int, v: int) -> Edge:
        try:
            return self._edge[(u, v)]
        except KeyError:
            raise InvalidInputError(f"nodes {u} and {v} are not adjacent") from None

    def path_edges(self, path) -> list[Edge]:
        nodes = path.nodes if isinstance(path, CandidatePath) else tuple(path)
        return [self.edge(u, v) for u, v in zip(nodes, nodes[1:])]

    def make_path(self, nodes) -> CandidatePath:
        edges = self.path_edges(nodes)
        plots = frozenset(p for e in edges for p in e.plots)
        return CandidatePath(tuple(nodes), sum(e.length for e in edges), plots)


def _is_junction(grid: FieldGrid, cell: Cell) -> bool:
    r, c = cell
    free = [grid.is_free((r + dr, c + dc)) for dr, dc in STEPS]
    if sum(free) != 2:
        return True
    return not ((free[NORTH] and free[SOUTH]) or (free[EAST] and free[WEST]))


def junction_cells(grid: FieldGrid) -> list[Cell]:
    return [
        (r, c)
        for r in range(grid.height)
        for c in range(grid.width)
        if grid.is_free((r, c)) and _is_junction(grid, (r, c))
    ]


def build_graph(grid: FieldGrid, start: Cell, waypoints=(), sides: str = "single") -> CorridorGraph:
    """Graph of junctions plus ``start`` and ``waypoints`` (which split edges)."""
    if sides not in ("single", "both"):
        raise InvalidInputError(f"unknown side rule {sides!r}")
    start = tuple(start)
    waypoints = [tuple(w) for w in waypoints]
    for label, cell in [("start", start)] + [("waypoint", w) for w in waypoints]:
        if not grid.is_free(cell):
            raise InvalidInputError(f"{label} {cell} is not a free cell")
    nodes = set(junction_cells(grid)) | {start} | set(waypoints)
    positions = sorted(nodes)
    index = {p: i for i, p in enumerate(positions)}
    edges = []
    for u, (r, c) in enumerate(positions):
        out = []
        for d, (dr, dc) in enumerate(STEPS):
            cells, plots = [], []
            cur = (r + dr, c + dc)
            while grid.is_free(cur):
                cells.append(cur)
                plots.extend(grid.plots_seen_from(cur, sides))
                if cur in index:
                    break
                cur = (cur[0] + dr, cur[1] + dc)
            else:
                continue
            out.append(Edge(u, index[cur], d, len(cells), tuple(cells), tuple(plots)))
        out.sort(key=lambda e: e.target)
        edges.append(tuple(out))
    wp_ids = tuple(dict.fromkeys(index[w] for w in waypoints))
    return CorridorGraph(grid, positions, edges, index[start], wp_ids, sides)


def heuristic_cost_to_go(pos: Cell, remaining) -> int:
    """Bounding-box lower bound on the distance needed to visit ``remaining``.

    Both box dimensions plus, on each axis, the distance from ``pos`` to the
    nearer box edge.
    """
    remaining = list(remaining)
    if not remaining:
        return 0
    x1, x2 = pos
    lo1 = min(x1, *(w[0] for w in remaining))
    hi1 = max(x1, *(w[0] for w in remaining))
    lo2 = min(x2, *(w[1] for w in remaining))
    hi2 = max(x2, *(w[1] for w in remaining))
    return (hi1 - lo1) + (hi2 - lo2) + min(hi1 - x1, x1 - lo1) + min(hi2 - x2, x2 - lo2)


def _waypoint_bits(graph: CorridorGraph):
    bits = [0] * graph.n_nodes
    for k, w in enumerate(graph.waypoints):
        bits[w] = 1 << k
    return bits, (1 << len(graph.waypoints)) - 1


def shortest_cover_cost(graph: CorridorGraph, start=None, waypoints=None, heading=None) -> int:
    """Exact minimum no-U-turn length from ``start`` visiting every waypoint."""
    if start is not None or waypoints is not None:
        graph = build_graph(
            graph.grid,
            graph.positions[graph.start] if start is None else start,
            [graph.positions[w] for w in graph.waypoints] if waypoints is None else waypoints,
            graph.sides,
        )
    h0 = heading_index(heading)
    bits, full = _waypoint_bits(graph)
    m0 = bits[graph.start]
    best = {(graph.start, h0, m0): 0}
    heap = [(0, graph.start, h0, m0)]
    while heap:
        cost, u, h, m = heapq.heappop(heap)
        if m == full:
            return cost
        if best.get((u, h, m), math.inf) < cost:
            continue
        for e in graph.out_edges[u]:
            if not allowed(h, e.direction):
                continue
            key = (e.target, e.direction, m | bits[e.target])
            c2 = cost + e.length
            if c2 < best.get(key, math.inf):
                best[key] = c2
                heapq.heappush(heap, (c2, *key))
    reached = {(u, m) for (u, _, m) in best}
    missing = [graph.positions[w] for w in graph.waypoints if not any(u == w for u, _ in reached)]
    if not missing:
        missing = [graph.positions[w] for w in graph.waypoints]
    raise PlanningError(f"waypoints {missing} cannot all be reached from {graph.positions[graph.start]}")


def cover_cost_to_go(graph: CorridorGraph) -> list[list[list[float]]]:
    """Exact remaining cover cost, indexed ``[mask][node][heading]``.

    Masks are processed from supersets down; within one mask a reverse
    Dijkstra propagates costs over transitions that do not add a waypoint.
    """
    bits, full = _waypoint_bits(graph)
    n = graph.n_nodes
    incoming = [[] for _ in range(n)]
    for out in graph.out_edges:
        for e in out:
            incoming[e.target].append(e)
    table: list = [None] * (full + 1)
    for m in sorted(range(full + 1), key=lambda x: -bin(x).count("1")):
        if m == full:
            table[m] = [[0.0] * 5 for _ in range(n)]
            continue
        dist = [[math.inf] * 5 for _ in range(n)]
        heap = []
        for u in range(n):
            for e in graph.out_edges[u]:
                m2 = m | bits[e.target]
                if m2 == m:
                    continue
                val = e.length + table[m2][e.target][e.direction]
                for h in range(5):
                    if allowed(h, e.direction) and val < dist[u][h]:
                        dist[u][h] = val
        for u in range(n):
            for h in range(5):
                if dist[u][h] < math.inf:
                    heapq.heappush(heap, (dist[u][h], u, h))
        while heap:
            val, v, d = heapq.heappop(heap)
            if val > dist[v][d] or d == NO_HEADING:
                continue
            if bits[v] & ~m:
                continue  # arriving at v would add it to the mask
            for e in incoming[v]:
                if e.direction != d:
                    continue
                cand = val + e.length
                for h in range(5):
                    if allowed(h, d) and cand < dist[e.source][h]:
                        dist[e.source][h] = cand
                        heapq.heappush(heap, (cand, e.source, h))
        table[m] = dist
    return table


def enumerate_feasible(graph: CorridorGraph, budget: float, heading=None, *,
                       max_states: int = DEFAULT_MAX_STATES, pruning: str = "bbox",
                       stats: dict | None = None) -> list[CandidatePath]:
    """Every no-U-turn path from the start covering all waypoints with cost <= budget.

    A path ends at the first moment all waypoints have been visited. Prefixes
    are cut when ``cost + bound > budget``; ``pruning`` picks the bound:
    ``"bbox"`` (bounding-box heuristic), ``"exact"`` (precomputed cover cost
    to go) or ``"none"``. Results are sorted by node-id sequence. When given,
    ``stats["states"]`` receives the number of expanded search states.
    """
    if pruning not in ("bbox", "exact", "none"):
        raise InvalidInputError(f"unknown pruning mode {pruning!r}")
    h0 = heading_index(heading)
    bits, full = _waypoint_bits(graph)
    pos = graph.positions
    out_edges = graph.out_edges
    m0 = bits[graph.start]

    if pruning == "exact":
        table = cover_cost_to_go(graph)

        def bound(v, d, m):
            return table[m][v][d]
    elif pruning == "bbox":
        boxes = {}
        for m in range(full + 1):
            rem = [pos[w] for k, w in enumerate(graph.waypoints) if not m >> k & 1]
            if rem:
                boxes[m] = (min(r for r, _ in rem), max(r for r, _ in rem),
                            min(c for _, c in rem), max(c for _, c in rem))

        def bound(v, d, m):
            box = boxes.get(m)
            if box is None:
                return 0
            r, c = pos[v]
            lo1, hi1, lo2, hi2 = min(box[0], r), max(box[1], r), min(box[2], c), max(box[3], c)
            return (hi1 - lo1) + (hi2 - lo2) + min(hi1 - r, r - lo1) + min(hi2 - c, c - lo2)
    else:
        def bound(v, d, m):
            return 0

    results = []
    trail = [graph.start]
    states = 0

    def dfs(u, h, m, cost):
        nonlocal states
        states += 1
        if states > max_states:
            raise ResourceLimitError(
                f"path enumeration exceeded {max_states} states; use a smaller slack"
            )
        if m == full:
            results.append((tuple(trail), cost))
            return
        for e in out_edges[u]:
            if h != NO_HEADING and e.direction == (h + 2) % 4:
                continue
            c2 = cost + e.length
            m2 = m | bits[e.target]
            if c2 + bound(e.target, e.direction, m2) > budget:
                continue
            trail.append(e.target)
            dfs(e.target, e.direction, m2, c2)
            trail.pop()

    if 0 + bound(graph.start, h0, m0) <= budget:
        dfs(graph.start, h0, m0, 0)
    if stats is not None:
        stats["states"] = states
    results.sort()
    paths = []
    for nodes, cost in results:
        plots = frozenset(p for u, v in zip(nodes, nodes[1:]) for p in graph.edge(u, v).plots)
        paths.append(CandidatePath(nodes, cost, plots))
    return paths


def mobile_plots_along(graph: CorridorGraph, path: CandidatePath) -> frozenset:
    """De-duplicated set of plots measured while driving ``path``."""
    return frozenset(p for e in graph.path_edges(path) for p in e.plots)


def traversal_plots(graph: CorridorGraph, path: CandidatePath) -> list[int]:
    """Plots measured along ``path`` in driving order, one entry per pass."""
    return [p for e in graph.path_edges(path) for p in e.plots]


def path_cells(graph: CorridorGraph, path) -> list[Cell]:
    """Cell-level expansion of a path, starting with the start cell."""
    nodes = path.nodes if isinstance(path, CandidatePath) else tuple(path)
    cells = [graph.positions[nodes[0]]]
    for e in graph.path_edges(nodes):
        cells.extend(e.cells)
    return cells


def final_heading(graph: CorridorGraph, path, default=None):
    """Heading after the last edge of ``path`` (``default`` for empty paths)."""
    edges = graph.path_edges(path)
    return edges[-1].direction if edges else heading_index(default)
