"""Token Passing (TP) baseline.

A shared token holds one timed path per agent. An agent whose path has run
out takes the token, picks the nearest task whose endpoints nobody else is
using, and plans pickup-then-delivery with space-time A* around every other
path. Agents park at the last node of their path, so other plans avoid that
node from the path's end onward.
"""
from __future__ import annotations

import heapq
from collections import Counter, deque
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .engine import AgentState, Phase
from .world import INF, DistanceField, Environment


@dataclass
class TimedPath:
    start_time: int
    nodes: list[int]

    def __post_init__(self):
        if not self.nodes:
            raise ValueError("a timed path needs at least one node")

    @property
    def end_time(self) -> int:
        return self.start_time + len(self.nodes) - 1

    @property
    def final(self) -> int:
        return self.nodes[-1]

    def at(self, t: int) -> int:
        i = t - self.start_time
        if i <= 0:
            return self.nodes[0]
        if i >= len(self.nodes):
            return self.nodes[-1]
        return self.nodes[i]

    def well_formed(self, env: Environment) -> bool:
        return all(v == u or v in env.neighbors[u] for u, v in zip(self.nodes, self.nodes[1:]))


class Token:
    """Committed paths plus the task endpoints they hold."""

    def __init__(self, env: Environment, agents: Sequence[AgentState], fields: Mapping[int, DistanceField]):
        self.env = env
        self.fields = fields
        self.paths: dict[int, TimedPath] = {}
        self.claimed_tasks: dict[int, int] = {}
        self._task_nodes: dict[int, tuple[int, int]] = {}
        self._vertex: dict[tuple[int, int], int] = {}
        self._edge: dict[tuple[int, int, int], int] = {}
        self._parked: dict[int, int] = {}
        # how many agents hold each node as a path end or task endpoint
        self._held: Counter = Counter()
        # bumped on every change to ``_held``; lets waiting agents skip a
        # task search whose answer cannot have changed
        self.version = 0
        self._idle_seen: dict[int, tuple[int, int]] = {}
        for a in agents:
            self.set_path(a.id, TimedPath(0, [a.position]))

    # reservations -----------------------------------------------------------

    def remove_path(self, agent_id: int) -> None:
        path = self._drop(agent_id)
        if path is not None:
            self._unhold(path.final)

    def _drop(self, agent_id: int) -> TimedPath | None:
        path = self.paths.pop(agent_id, None)
        if path is None:
            return None
        t = path.start_time
        prev = None
        for v in path.nodes:
            if self._vertex.get((v, t)) == agent_id:
                del self._vertex[(v, t)]
            if prev is not None and prev != v:
                self._edge.pop((prev, v, t), None)
            prev = v
            t += 1
        if self._parked.get(path.final) == path.end_time:
            del self._parked[path.final]
        return path

    def set_path(self, agent_id: int, path: TimedPath) -> None:
        old = self._drop(agent_id)
        # keeping the same end node leaves the hold counts untouched
        if old is not None and old.final != path.final:
            self._unhold(old.final)
        self.paths[agent_id] = path
        t = path.start_time
        prev = None
        for v in path.nodes:
            self._vertex[(v, t)] = agent_id
            if prev is not None and prev != v:
                self._edge[(prev, v, t)] = agent_id
            prev = v
            t += 1
        self._parked[path.final] = path.end_time
        if old is None or old.final != path.final:
            self._hold(path.final)

    def extend_stay(self, agent_id: int) -> None:
        """Hold an agent whose path just ended on its final node one more step.

        Same effect on future reservations as ``set_path`` with a two-node stay
        path, without touching the hold counts.
        """
        path = self.paths[agent_id]
        v, t = path.final, path.end_time
        if len(path.nodes) == 2 and path.nodes[0] == v:
            # roll the stay window forward instead of rebuilding it
            if self._vertex.get((v, path.start_time)) == agent_id:
                del self._vertex[(v, path.start_time)]
            path.start_time = t
        else:
            self._drop(agent_id)
            path = self.paths[agent_id] = TimedPath(t, [v, v])
            self._vertex[(v, t)] = agent_id
        self._vertex[(v, t + 1)] = agent_id
        self._parked[v] = t + 1

    def _hold(self, node: int) -> None:
        self.version += 1
        self._held[node] += 1

    def _unhold(self, node: int) -> None:
        self.version += 1
        self._held[node] -= 1
        if self._held[node] <= 0:
            del self._held[node]

    @property
    def busy_until(self) -> int:
        return max((p.end_time for p in self.paths.values()), default=0)

    def last_visit(self, node: int) -> int:
        """Latest timestep any committed path occupies ``node`` (-1 if never)."""
        last = -1
        for path in self.paths.values():
            for i in range(len(path.nodes) - 1, -1, -1):
                if path.nodes[i] == node:
                    last = max(last, path.start_time + i)
                    break
        return last

    # task bookkeeping ------------------------------------------------------

    def claim(self, agent_id: int, task_id: int, pickup: int, delivery: int) -> None:
        self.claimed_tasks[task_id] = agent_id
        self.release(agent_id)
        self._task_nodes[agent_id] = (pickup, delivery)
        self._hold(pickup)
        self._hold(delivery)

    def release(self, agent_id: int) -> None:
        if agent_id in self._task_nodes:
            for v in self._task_nodes.pop(agent_id):
                self._unhold(v)
            for tid in [tid for tid, aid in self.claimed_tasks.items() if aid == agent_id]:
                del self.claimed_tasks[tid]

    @property
    def active_endpoints(self) -> frozenset[int]:
        return frozenset(v for pair in self._task_nodes.values() for v in pair)

    def _own(self, agent_id: int) -> Counter:
        own = Counter(self._task_nodes.get(agent_id, ()))
        if agent_id in self.paths:
            own[self.paths[agent_id].final] += 1
        return own

    def blocked_endpoints(self, agent_id: int) -> set[int]:
        """Path ends and claimed task endpoints held by agents other than ``agent_id``."""
        own = self._own(agent_id)
        return {v for v, c in self._held.items() if c > own[v]}

    def conflicts(self, t0: int = 0) -> list[tuple[int, int, int]]:
        """Pairwise conflicts from ``t0`` on, counting parked path ends; ``(a, b, t)``."""
        ids = sorted(self.paths)
        horizon = self.busy_until + 1
        out = []
        for t in range(t0, horizon + 1):
            pos = {aid: self.paths[aid].at(t) for aid in ids}
            prev = {aid: self.paths[aid].at(t - 1) for aid in ids}
            for i, a in enumerate(ids):
                for b in ids[i + 1:]:
                    if pos[a] == pos[b]:
                        out.append((a, b, t))
                    elif t > t0 and pos[a] == prev[b] and pos[b] == prev[a] and pos[a] != prev[a]:
                        out.append((a, b, t))
        return out


def space_time_astar(
    env: Environment,
    start: int,
    t0: int,
    goal: int,
    token: Token,
    *,
    final: bool = True,
    horizon: int | None = None,
) -> list[int] | None:
    """Earliest-arrival path from ``(start, t0)`` to ``goal`` around the token.

    The caller must have removed its own path from ``token``. Waiting in place
    is allowed. With ``final`` the agent will park at ``goal``, so arrival must
    come after every committed visit to ``goal``. Returns the node sequence
    starting at ``start`` (one entry per timestep) or ``None`` when no such
    path exists within ``horizon`` steps (default ``4 |V|``).
    """
    vertex, edge, parked = token._vertex, token._edge, token._parked
    if final and goal in parked:
        return None
    h = token.fields[goal].dist
    if h[start] >= INF:
        return None
    limit = t0 + (4 * len(env.nodes) if horizon is None else horizon)
    earliest = token.last_visit(goal) + 1 if final else t0
    # from here on only parked agents remain and the rest is a static search
    t_static = max(token.busy_until, earliest, t0)
    static: list[int] | None = None
    neighbors = env.neighbors

    parent: dict[tuple[int, int], tuple[int, int] | None] = {(start, t0): None}
    heap = [(t0 + h[start], h[start], 0, start, t0)]
    while heap:
        _, _, tail, u, t = heapq.heappop(heap)
        if tail:
            return _unwind(parent, u, t) + _static_route(env, static, u)
        if u == goal and t >= earliest:
            return _unwind(parent, u, t)
        if t >= t_static:
            if static is None:
                static = _static_distances(env, goal, parked)
            d = static[u]
            if d < INF and t + d <= limit:
                heapq.heappush(heap, (t + d, 0, 1, u, t))
            continue
        if t >= limit:
            continue
        nt = t + 1
        for v in (u, *neighbors[u]):
            if (v, nt) in parent or (v, nt) in vertex:
                continue
            end = parked.get(v)
            if end is not None and end <= nt:
                continue
            if v != u and (v, u, nt) in edge:
                continue
            parent[(v, nt)] = (u, t)
            heapq.heappush(heap, (nt + h[v], h[v], 0, v, nt))
    return None


def _unwind(parent, u: int, t: int) -> list[int]:
    nodes = []
    k = (u, t)
    while k is not None:
        nodes.append(k[0])
        k = parent[k]
    nodes.reverse()
    return nodes


def _static_distances(env: Environment, goal: int, parked: Mapping[int, int]) -> list[int]:
    dist = [INF] * (env.width * env.height)
    if goal in parked:
        return dist
    dist[goal] = 0
    queue = deque([goal])
    while queue:
        u = queue.popleft()
        for v in env.neighbors[u]:
            if dist[v] == INF and v not in parked:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _static_route(env: Environment, dist: list[int], u: int) -> list[int]:
    route = []
    while dist[u] > 0:
        u = min((v for v in env.neighbors[u] if dist[v] == dist[u] - 1))
        route.append(u)
    return route


def select_task_tp(agent: AgentState, tasks: Sequence, token: Token):
    """Nearest-pickup pending task whose endpoints no other agent holds.

    Ties go to the lower task id. Returns ``None`` when nothing qualifies.
    """
    held, own = token._held, dict(token._own(agent.id))
    pos = agent.position
    best, best_key = None, None
    for task in tasks:
        if task.status != "pending":
            continue
        p, d = task.pickup, task.delivery
        if (p in held and held[p] > own.get(p, 0)) or (d in held and held[d] > own.get(d, 0)):
            continue
        k = (token.fields[p].dist[pos], task.id)
        if best_key is None or k < best_key:
            best, best_key = task, k
    return best


def tp_step(
    agents: Sequence[AgentState],
    tasks: Sequence,
    token: Token,
    t: int,
    on_claim: Callable[[AgentState, object], None] | None = None,
) -> dict[int, int]:
    """Advance the token by one timestep and return every agent's next node.

    Agents whose path has run out take the token in id order. Each picks a
    task and plans pickup then delivery; without a task (or a plan) it heads
    for its parking node, and failing that it waits one step where it is,
    which is always safe because other plans treat a path end as occupied.
    """
    env = token.env
    pending = [task for task in tasks if task.status == "pending"]
    for a in agents:
        if token.paths[a.id].end_time > t:
            continue
        token.release(a.id)
        path = None
        task = None
        # the own path stays in the token until planning: selection discounts it
        searched = bool(pending) and token._idle_seen.get(a.id) != (token.version, a.position)
        if searched:
            task = select_task_tp(a, pending, token)
        if task is not None:
            token.remove_path(a.id)
            leg1 = space_time_astar(env, a.position, t, task.pickup, token, final=False)
            if leg1 is not None:
                leg2 = space_time_astar(env, task.pickup, t + len(leg1) - 1, task.delivery, token)
                if leg2 is not None:
                    path = TimedPath(t, leg1 + leg2[1:])
                    token.claim(a.id, task.id, task.pickup, task.delivery)
                    if on_claim is not None:
                        on_claim(a, task)
                    pending.remove(task)
        if path is None and a.task is None:
            if a.position != a.parking:
                token.remove_path(a.id)
                route = space_time_astar(env, a.position, t, a.parking, token)
                if route is not None:
                    path = TimedPath(t, route)
                a.destination, a.phase = a.parking, Phase.RETURNING
            else:
                a.destination, a.phase = None, Phase.IDLE
        if path is None or len(path.nodes) == 1:
            if a.id in token.paths:
                token.extend_stay(a.id)
            else:
                token.set_path(a.id, TimedPath(t, [a.position, a.position]))
        else:
            token.set_path(a.id, path)
        if task is None and (searched or a.id in token._idle_seen):
            # no task qualified; until the holds change the answer stays the same
            token._idle_seen[a.id] = (token.version, a.position)
        else:
            token._idle_seen.pop(a.id, None)
    return {a.id: token.paths[a.id].at(t + 1) for a in agents}
