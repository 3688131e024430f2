"""Timestep planner for the PIBT family.

Three candidate-set policies share one priority-inheritance-with-backtracking
core:

* ``Policy.NAIVE_PIBT`` - plain PIBT with distance-based priorities. It
  deadlocks on dead-ends and is kept for demonstrations.
* ``Policy.PIBTTP`` - agents inside a tree that does not hold their
  destination get a temporary priority ``1 + eps``; movement inside trees is
  restricted to the path toward the destination (or back to the main area).
* ``Policy.PIBTTP_TA`` - like PIBTTP, but an agent pushed inside its
  destination tree may step aside into a side branch. It then waits there in
  the temporary avoiding state (TAS) with priority ``eps`` while holding a
  reservation on the path node it has to retake.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .world import Decomposition, DistanceField, Environment, tree_shortest_path_set


class Policy(str, Enum):
    NAIVE_PIBT = "pibt"
    PIBTTP = "pibttp"
    PIBTTP_TA = "pibttp-ta"
    TP = "tp"

    @property
    def pibt_family(self) -> bool:
        return self is not Policy.TP


class Phase(str, Enum):
    IDLE = "idle"
    TO_PICKUP = "to_pickup"
    TO_DELIVERY = "to_delivery"
    RETURNING = "returning"
    # waiting to leave a tree before a task may be chosen
    TO_MAIN = "to_main"


@dataclass(slots=True)
class AgentState:
    id: int
    position: int
    parking: int
    epsilon: float
    priority: float = 0.0
    destination: int | None = None
    task: int | None = None
    phase: Phase = Phase.IDLE
    tas: bool = False
    reserved_node: int | None = None

    @property
    def goal(self) -> int:
        """Node the agent is steering to; idle agents hold their parking node."""
        return self.parking if self.destination is None else self.destination


@dataclass
class StepContext:
    env: Environment
    decomp: Decomposition
    fields: Mapping[int, DistanceField]
    policy: Policy
    agents: Sequence[AgentState]
    t: int = 0
    undecided: set[int] = field(default_factory=set)
    claimed: set[int] = field(default_factory=set)
    reserved: Counter = field(default_factory=Counter)
    tas_nodes: set[int] = field(default_factory=set)
    next: dict[int, int] = field(default_factory=dict)
    occupant: dict[int, int] = field(default_factory=dict)
    events: list[dict] = field(default_factory=list)
    calls: int = 0


def new_context(
    agents: Sequence[AgentState],
    env: Environment,
    decomp: Decomposition,
    fields: Mapping[int, DistanceField],
    policy: Policy,
    t: int = 0,
) -> StepContext:
    """Fresh per-timestep context: everyone undecided, nothing claimed."""
    if not policy.pibt_family:
        raise ValueError("token passing is not planned by the PIBT engine")
    ctx = StepContext(env, decomp, fields, policy, agents, t)
    ctx.undecided = {a.id for a in agents}
    ctx.occupant = {a.position: a.id for a in agents}
    for a in agents:
        if a.tas:
            ctx.reserved[a.reserved_node] += 1
            ctx.tas_nodes.add(a.position)
    return ctx


def compute_priorities(
    agents: Sequence[AgentState],
    decomp: Decomposition,
    fields: Mapping[int, DistanceField],
    policy: Policy,
) -> None:
    """Set ``agent.priority`` for the coming timestep.

    Normal priority is ``eps - f`` with ``f`` the hop distance to the goal, so
    it is negative until the goal is reached. Temporary priorities sit above
    that band: ``1 + eps`` for an agent in a tree it has to leave and, under
    PIBTTP-TA, ``eps`` for an agent waiting in TAS. Agents without a task sit
    ``|V|`` below the normal band so they never block task work: a parked
    agent would otherwise hold the top normal priority and could not be pushed.
    """
    tree_of = decomp.tree_of
    free_offset = len(decomp.main_nodes) + len(tree_of)
    for a in agents:
        goal = a.goal
        try:
            field_ = fields[goal]
        except KeyError:
            raise KeyError(f"agent {a.id}: no distance field for goal {goal}") from None
        normal = a.epsilon - field_[a.position]
        if a.task is None:
            normal -= free_offset
        if policy is Policy.NAIVE_PIBT:
            a.priority = normal
            continue
        k = tree_of.get(a.position)
        if k is None:
            a.priority = normal
        elif k != tree_of.get(goal):
            a.priority = 1.0 + a.epsilon
        elif policy is Policy.PIBTTP_TA and a.tas:
            a.priority = a.epsilon
        else:
            a.priority = normal


def candidate_set(agent: AgentState, pusher: AgentState | None, ctx: StepContext) -> list[int]:
    """Nodes ``agent`` may take next, best first (by distance, then node id).

    A pushed agent inside a tree under PIBTTP-TA may also step into side
    branches, but never onto a reserved node or a node held by a TAS agent.
    """
    env, decomp = ctx.env, ctx.decomp
    pos = agent.position
    goal = agent.goal
    pusher_pos = pusher.position if pusher is not None else None
    claimed = ctx.claimed
    cands = [v for v in (pos, *env.neighbors[pos]) if v not in claimed and v != pusher_pos]

    if ctx.policy is not Policy.NAIVE_PIBT:
        tree_of = decomp.tree_of
        k = tree_of.get(pos)
        if k is None:
            goal_tree = tree_of.get(goal)
            cands = [v for v in cands if tree_of.get(v, goal_tree) == goal_tree]
        elif ctx.policy is Policy.PIBTTP_TA and pusher is not None:
            reserved = ctx.reserved
            cands = [v for v in cands if not reserved[v] and v not in ctx.tas_nodes]
        else:
            allowed = tree_shortest_path_set(decomp, env, k, goal, pos)
            cands = [v for v in cands if v in allowed]

    dist = ctx.fields[goal].dist
    cands.sort(key=lambda v: (dist[v], v))
    return cands


def tas_transition(agent: AgentState, target: int, ctx: StepContext) -> None:
    """Enter, keep or leave the temporary avoiding state after a commit.

    An agent inside its destination tree that commits to a node off the
    connecting-node-to-destination path enters TAS and reserves the node it
    would have taken next toward the destination. Any other commit reverts
    TAS and releases the reservation unless another agent still holds it.
    """
    decomp = ctx.decomp
    goal = agent.goal
    k = decomp.tree_of.get(agent.position)
    if k is not None and k == decomp.tree_of.get(goal) and target not in decomp.entry_path(k, goal):
        if not agent.tas:
            if agent.position == goal:
                ahead = goal
            else:
                ahead = decomp.trees[k].path(agent.position, goal)[1]
            agent.tas = True
            agent.reserved_node = ahead
            ctx.reserved[ahead] += 1
            ctx.events.append({"type": "reserve", "agent": agent.id, "node": ahead})
        else:
            ctx.tas_nodes.discard(agent.position)
        ctx.tas_nodes.add(target)
    elif agent.tas:
        ctx.tas_nodes.discard(agent.position)
        node = agent.reserved_node
        ctx.reserved[node] -= 1
        if ctx.reserved[node] <= 0:
            del ctx.reserved[node]
        agent.tas = False
        agent.reserved_node = None
        ctx.events.append({"type": "revert", "agent": agent.id, "node": node})


def _commit(agent: AgentState, target: int, ctx: StepContext) -> None:
    ctx.next[agent.id] = target
    if ctx.policy is Policy.PIBTTP_TA:
        tas_transition(agent, target, ctx)


class _Frame:
    __slots__ = ("agent", "pusher", "cands", "waiting")

    def __init__(self, agent, pusher, cands):
        self.agent = agent
        self.pusher = pusher
        self.cands = cands
        self.waiting = None


def ex_pibt(agent: AgentState, pusher: AgentState | None, ctx: StepContext) -> bool:
    """Decide the next node of ``agent`` and, recursively, of agents it pushes.

    Returns ``True`` (valid) when ``agent`` secured a node and ``False``
    (invalid) when it had to stay put, which tells the pusher to try its next
    candidate. The recursion runs on an explicit stack; each level consumes one
    undecided agent, so the depth never exceeds the number of agents.
    """
    agents = ctx.agents
    stack: list[_Frame] = []

    def enter(a: AgentState, by: AgentState | None) -> None:
        if a.id not in ctx.undecided:
            raise RuntimeError(f"agent {a.id} planned twice in one step")
        ctx.undecided.discard(a.id)
        ctx.calls += 1
        if len(stack) >= len(agents):
            raise RuntimeError("priority inheritance deeper than the number of agents")
        if by is not None:
            a.priority = by.priority
        stack.append(_Frame(a, by, candidate_set(a, by, ctx)))

    enter(agent, pusher)
    result = False
    while stack:
        frame = stack[-1]
        a = frame.agent
        if frame.waiting is not None:
            target, frame.waiting = frame.waiting, None
            if result:
                _commit(a, target, ctx)
                stack.pop()
                continue
            claimed = ctx.claimed
            frame.cands = [v for v in frame.cands if v not in claimed]
        if frame.cands:
            target = frame.cands.pop(0)
            ctx.claimed.add(target)
            other = ctx.occupant.get(target)
            if other is not None and other in ctx.undecided:
                frame.waiting = target
                enter(agents[other], a)
                continue
            _commit(a, target, ctx)
            stack.pop()
            result = True
        else:
            ctx.next[a.id] = a.position
            ctx.claimed.add(a.position)
            stack.pop()
            result = False
    return result


def plan_step(ctx: StepContext) -> dict[int, int]:
    """Plan one timestep for every agent in descending priority order."""
    order = sorted(ctx.agents, key=lambda a: (-a.priority, a.id))
    for a in order:
        if a.id in ctx.undecided:
            ex_pibt(a, None, ctx)
    return ctx.next
