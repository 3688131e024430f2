"""Static environment model: grid maps, tree decomposition and distance fields.

Nodes are identified by their row-major cell index ``row * width + col``.
All objects here are immutable once built and may be shared between
simulation instances.
"""
from __future__ import annotations

import functools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import networkx as nx

MAGIC = "mapd-map v1"
LEGEND = {
    "@": None,
    ".": "",
    "p": "p",
    "d": "d",
    "i": "i",
    "b": "pd",
}
INF = 1 << 30


class MapError(ValueError):
    """Base class for environment construction errors."""


class MapFormatError(MapError):
    """The map document is malformed or describes a disconnected graph."""


class DecompositionError(MapError):
    """The graph is not a bi-connected main area with trees attached."""


@dataclass(frozen=True, eq=False)
class Environment:
    name: str
    width: int
    height: int
    nodes: frozenset[int]
    neighbors: Mapping[int, tuple[int, ...]]
    pickup_nodes: frozenset[int]
    delivery_nodes: frozenset[int]
    parking_nodes: tuple[int, ...]

    def coord(self, node: int) -> tuple[int, int]:
        """Return ``(x, y)`` of a node; ``y`` grows downward."""
        return node % self.width, node // self.width

    def node_at(self, x: int, y: int) -> int:
        node = y * self.width + x
        if not (0 <= x < self.width and 0 <= y < self.height) or node not in self.nodes:
            raise KeyError(f"no walkable cell at ({x},{y})")
        return node

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        return frozenset((u, v) for u, nbrs in self.neighbors.items() for v in nbrs if u < v)

    @functools.cached_property
    def diameter(self) -> int:
        return max(max(d for d in _bfs(self, s) if d < INF) for s in self.nodes)

    def __repr__(self) -> str:
        return f"Environment({self.name!r}, {len(self.nodes)} nodes)"


def _bfs(env: Environment, source: int) -> list[int]:
    dist = [INF] * (env.width * env.height)
    dist[source] = 0
    queue = deque([source])
    while queue:
        u = queue.popleft()
        du = dist[u] + 1
        for v in env.neighbors[u]:
            if dist[v] == INF:
                dist[v] = du
                queue.append(v)
    return dist


def parse_map(text: str, name: str = "") -> Environment:
    """Parse an ASCII ``.map`` document into an :class:`Environment`.

    Raises:
        MapFormatError: on a bad header, unknown cell characters, ragged rows
            or when the walkable cells do not form one connected region.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0] != MAGIC:
        raise MapFormatError(f"line 1: expected {MAGIC!r}")
    header: dict[str, int] = {}
    for lineno in (2, 3):
        if len(lines) < lineno:
            raise MapFormatError(f"line {lineno}: missing header")
        parts = lines[lineno - 1].split(" ")
        if len(parts) != 2 or parts[0] not in ("height", "width"):
            raise MapFormatError(f"line {lineno}: expected 'height H' or 'width W'")
        key, value = parts
        if key in header:
            raise MapFormatError(f"line {lineno}: duplicate header key {key!r}")
        if not value.isdigit() or int(value) == 0:
            raise MapFormatError(f"line {lineno}: bad {key} {value!r}")
        header[key] = int(value)
    height, width = header["height"], header["width"]
    rows = lines[3:]
    if len(rows) != height:
        raise MapFormatError(f"expected {height} rows, found {len(rows)}")

    nodes: set[int] = set()
    pickup, delivery, parking = set(), set(), []
    for y, row in enumerate(rows):
        if len(row) != width:
            raise MapFormatError(f"row {y}: expected {width} cells, found {len(row)} (ragged row)")
        for x, ch in enumerate(row):
            if ch not in LEGEND:
                raise MapFormatError(f"cell ({x},{y}): unknown character {ch!r}")
            roles = LEGEND[ch]
            if roles is None:
                continue
            node = y * width + x
            nodes.add(node)
            if "p" in roles:
                pickup.add(node)
            if "d" in roles:
                delivery.add(node)
            if "i" in roles:
                parking.append(node)
    if not nodes:
        raise MapFormatError("map has no walkable cells")

    neighbors: dict[int, tuple[int, ...]] = {}
    for node in nodes:
        x, y = node % width, node // width
        adj = []
        if y > 0 and node - width in nodes:
            adj.append(node - width)
        if x > 0 and node - 1 in nodes:
            adj.append(node - 1)
        if x < width - 1 and node + 1 in nodes:
            adj.append(node + 1)
        if y < height - 1 and node + width in nodes:
            adj.append(node + width)
        neighbors[node] = tuple(adj)

    env = Environment(
        name=name,
        width=width,
        height=height,
        nodes=frozenset(nodes),
        neighbors=neighbors,
        pickup_nodes=frozenset(pickup),
        delivery_nodes=frozenset(delivery),
        parking_nodes=tuple(sorted(parking)),
    )
    reach = _bfs(env, min(nodes))
    unreached = sorted(v for v in nodes if reach[v] == INF)
    if unreached:
        x, y = env.coord(unreached[0])
        raise MapFormatError(
            f"walkable region is disconnected: {len(unreached)} cells unreachable, e.g. ({x},{y})"
        )
    return env


def load_map(path) -> Environment:
    from pathlib import Path

    path = Path(path)
    return parse_map(path.read_text(), name=path.stem)


@dataclass(frozen=True, eq=False)
class Tree:
    tree_id: int
    nodes: frozenset[int]
    connecting_node: int
    proper_nodes: frozenset[int]
    # parent pointer toward the connecting node and hop depth below it
    parent: Mapping[int, int]
    depth: Mapping[int, int]

    def path(self, u: int, v: int) -> list[int]:
        """Unique simple path from ``u`` to ``v`` inside the tree."""
        up, down = [u], [v]
        a, b = u, v
        while self.depth[a] > self.depth[b]:
            a = self.parent[a]
            up.append(a)
        while self.depth[b] > self.depth[a]:
            b = self.parent[b]
            down.append(b)
        while a != b:
            a, b = self.parent[a], self.parent[b]
            up.append(a)
            down.append(b)
        return up + down[-2::-1]


@dataclass(frozen=True, eq=False)
class Decomposition:
    main_nodes: frozenset[int]
    trees: tuple[Tree, ...]
    # node -> tree id for proper tree nodes; main nodes are absent
    tree_of: Mapping[int, int]
    _entry: dict = field(default_factory=dict, repr=False)

    @property
    def tree_count(self) -> int:
        return len(self.trees)

    def region(self, node: int) -> int | None:
        """Tree id owning ``node`` or ``None`` for the main area."""
        return self.tree_of.get(node)

    @property
    def node_to_region(self) -> dict[int, str]:
        out = {v: "main" for v in self.main_nodes}
        out.update({v: f"tree{k}" for v, k in self.tree_of.items()})
        return out

    def entry_path(self, tree_id: int, dest: int) -> frozenset[int]:
        """Nodes of the connecting-node-to-target path of a tree.

        The target is ``dest`` when it lies in the tree, else the connecting
        node itself.
        """
        key = (tree_id, dest)
        cached = self._entry.get(key)
        if cached is None:
            tree = self.trees[tree_id]
            target = dest if dest in tree.nodes else tree.connecting_node
            cached = frozenset(tree.path(tree.connecting_node, target))
            self._entry[key] = cached
        return cached


def decompose(env: Environment) -> Decomposition:
    """Split ``env`` into a bi-connected main area and attached trees.

    Degree-1 nodes are stripped repeatedly; what remains is the main area and
    every stripped fragment hangs off exactly one main node.
    """
    degree = {v: len(env.neighbors[v]) for v in env.nodes}
    alive = set(env.nodes)
    queue = deque(sorted(v for v, d in degree.items() if d <= 1))
    while queue:
        v = queue.popleft()
        if v not in alive:
            continue
        alive.discard(v)
        for u in env.neighbors[v]:
            if u in alive:
                degree[u] -= 1
                if degree[u] == 1:
                    queue.append(u)
    if not alive:
        raise DecompositionError("pruning dead-ends consumed the whole graph: no main area")

    main = frozenset(alive)
    _check_biconnected(env, main)

    pruned = env.nodes - main
    seen: set[int] = set()
    fragments = []
    for start in sorted(pruned):
        if start in seen:
            continue
        comp, attach = [], set()
        stack = [start]
        seen.add(start)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in env.neighbors[u]:
                if w in main:
                    attach.add(w)
                elif w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(attach) != 1:
            x, y = env.coord(start)
            raise DecompositionError(f"fragment at ({x},{y}) attaches to the main area at {len(attach)} nodes")
        fragments.append((min(comp), frozenset(comp), attach.pop()))

    trees = []
    tree_of: dict[int, int] = {}
    for k, (_, comp, conn) in enumerate(sorted(fragments, key=lambda f: f[0])):
        parent, depth = {}, {conn: 0}
        queue = deque([conn])
        while queue:
            u = queue.popleft()
            for w in env.neighbors[u]:
                if w in comp and w not in depth:
                    depth[w] = depth[u] + 1
                    parent[w] = u
                    queue.append(w)
        trees.append(
            Tree(k, comp | {conn}, conn, comp, parent, {v: depth[v] for v in comp | {conn}})
        )
        for v in comp:
            tree_of[v] = k
    return Decomposition(main, tuple(trees), tree_of)


def _check_biconnected(env: Environment, main: frozenset[int]) -> None:
    if len(main) < 3:
        raise DecompositionError(f"main area has only {len(main)} nodes; need a bi-connected area of >= 3")
    graph = nx.Graph()
    graph.add_nodes_from(main)
    graph.add_edges_from((u, v) for u in main for v in env.neighbors[u] if v in main and u < v)
    if not nx.is_connected(graph):
        raise DecompositionError("main area is not connected")
    cuts = sorted(nx.articulation_points(graph))
    if cuts:
        where = ", ".join("({},{})".format(*env.coord(v)) for v in cuts[:5])
        raise DecompositionError(
            f"main area is not bi-connected: {len(cuts)} articulation node(s) at {where}"
        )


@dataclass(frozen=True, eq=False)
class DistanceField:
    goal: int
    dist: tuple[int, ...]

    def __getitem__(self, node: int) -> int:
        return self.dist[node]


def distance_field(env: Environment, goal: int) -> DistanceField:
    """Breadth-first hop distances from every node to ``goal``."""
    if goal not in env.nodes:
        raise KeyError(f"goal {goal} is not a node")
    return DistanceField(goal, tuple(_bfs(env, goal)))


class DistanceTable(dict):
    """Lazily populated ``goal -> DistanceField`` cache for one environment."""

    def __init__(self, env: Environment, goals: Iterable[int] = ()):
        super().__init__()
        self.env = env
        for g in goals:
            self[g] = distance_field(env, g)

    def __missing__(self, goal: int) -> DistanceField:
        df = distance_field(self.env, goal)
        self[goal] = df
        return df


def tree_shortest_path_set(
    decomp: Decomposition,
    env: Environment,
    tree_id: int,
    dest: int,
    position: int | None = None,
) -> frozenset[int]:
    """Nodes of tree ``tree_id`` an agent heading to ``dest`` may occupy.

    The target is ``dest`` when it lies in the tree and the connecting node
    otherwise. The result is the connecting-node-to-target path, extended by
    the unique path from ``position`` to the target when a position is given.
    """
    if not 0 <= tree_id < decomp.tree_count:
        raise IndexError(f"tree id {tree_id} out of range (B={decomp.tree_count})")
    entry = decomp.entry_path(tree_id, dest)
    if position is None or position in entry:
        return entry
    tree = decomp.trees[tree_id]
    target = dest if dest in tree.nodes else tree.connecting_node
    return entry | frozenset(tree.path(position, target))
