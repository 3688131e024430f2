"""Instance runner: task lifecycle, move validation, metrics and traces."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from . import engine
from .engine import AgentState, Phase, Policy
from .rng import SeedStream, distinct_epsilons
from .world import Decomposition, DistanceTable, Environment


class TaskStatus(str, Enum):
    PENDING = "pending"
    CLAIMED = "claimed"
    PICKED_UP = "picked_up"
    DONE = "done"


@dataclass
class Task:
    id: int
    pickup: int
    delivery: int
    status: TaskStatus = TaskStatus.PENDING
    agent: int | None = None
    claimed_at: int | None = None
    done_at: int | None = None


@dataclass
class Violation:
    kind: str  # "vertex", "swap" or "jump"
    agents: tuple[int, ...]
    node: int

    def __str__(self) -> str:
        return f"{self.kind} conflict among agents {self.agents} at node {self.node}"


@dataclass
class Metrics:
    makespan: int
    violations: int
    timesteps: int
    seed: int
    completed: int = 0
    service_times: dict[int, int] = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "makespan": self.makespan,
            "violations": self.violations,
            "timesteps": self.timesteps,
            "seed": self.seed,
        }


@dataclass
class TraceRecord:
    t: int
    agents: list[dict]
    events: list[dict]

    def to_json(self) -> str:
        return json.dumps({"t": self.t, "agents": self.agents, "events": self.events}, separators=(",", ":"))


@dataclass
class RunResult:
    status: str  # "ok", "cap", "deadlock" or "violation"
    metrics: Metrics
    trace: list[TraceRecord] | None = None
    diagnostics: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


class InstanceError(ValueError):
    """Raised when an instance breaks the runner's preconditions."""


def generate_taskset(env: Environment, decomp: Decomposition, count: int, seed: int) -> list[tuple[int, int]]:
    """Draw ``count`` (pickup, delivery) pairs uniformly, rejecting same-tree pairs."""
    pickups = sorted(env.pickup_nodes)
    deliveries = sorted(env.delivery_nodes)
    if count and (not pickups or not deliveries):
        raise InstanceError("map needs pickup and delivery nodes to generate tasks")
    tree_of = decomp.tree_of
    feasible = any(
        p != d and (tree_of.get(p) is None or tree_of.get(p) != tree_of.get(d))
        for p in pickups for d in deliveries
    )
    if count and not feasible:
        raise InstanceError("every pickup/delivery pair shares a tree")
    stream = SeedStream(seed, "taskset")
    out = []
    while len(out) < count:
        p = pickups[stream.below(len(pickups))]
        d = deliveries[stream.below(len(deliveries))]
        if p == d or (tree_of.get(p) is not None and tree_of.get(p) == tree_of.get(d)):
            continue
        out.append((p, d))
    return out


def validate_transition(before: Sequence[int], after: Sequence[int], env: Environment) -> list[Violation]:
    """Check one synchronous move of all agents.

    Reports vertex conflicts, swaps along an edge and moves that are neither a
    wait nor a single edge. Cyclic rotations of three or more agents pass.
    """
    out: list[Violation] = []
    for i, (u, v) in enumerate(zip(before, after)):
        if u != v and v not in env.neighbors.get(u, ()):
            out.append(Violation("jump", (i,), v))
    where: dict[int, list[int]] = {}
    for i, v in enumerate(after):
        where.setdefault(v, []).append(i)
    for v, ids in where.items():
        if len(ids) > 1:
            out.append(Violation("vertex", tuple(ids), v))
    start = {u: i for i, u in enumerate(before)}
    for i, (u, v) in enumerate(zip(before, after)):
        j = start.get(v)
        if u != v and j is not None and j > i and after[j] == u:
            out.append(Violation("swap", (i, j), u))
    return out


def _claim(agent: AgentState, task: Task, t: int) -> None:
    task.status = TaskStatus.CLAIMED
    task.agent = agent.id
    task.claimed_at = t
    agent.task = task.id
    _set_destination(agent, task.pickup, Phase.TO_PICKUP)


def _set_destination(agent: AgentState, node: int | None, phase: Phase) -> None:
    if node != agent.destination and agent.tas:
        agent.tas = False
        agent.reserved_node = None
    agent.destination = node
    agent.phase = phase


def assign_task(
    agent: AgentState,
    tasks: Sequence[Task],
    rng: SeedStream,
    policy: Policy,
    decomp: Decomposition,
    t: int = 0,
) -> Task | None:
    """Pick a new task for a free agent of the PIBT family.

    The choice is uniform over pending tasks. An agent inside a tree may not
    take a task whose pickup lies in that tree; when only such tasks remain it
    heads for the tree's connecting node first and retries later. With no
    pending task left the agent returns to its parking node.
    """
    if not policy.pibt_family:
        raise ValueError("token passing selects tasks through baseline_tp.select_task_tp")
    pending = [task for task in tasks if task.status is TaskStatus.PENDING]
    if not pending:
        if agent.position == agent.parking:
            _set_destination(agent, None, Phase.IDLE)
        else:
            _set_destination(agent, agent.parking, Phase.RETURNING)
        return None
    k = decomp.tree_of.get(agent.position)
    if k is not None and policy is not Policy.NAIVE_PIBT:
        eligible = [task for task in pending if decomp.tree_of.get(task.pickup) != k]
        if not eligible:
            _set_destination(agent, decomp.trees[k].connecting_node, Phase.TO_MAIN)
            return None
    else:
        eligible = pending
    task = eligible[rng.below(len(eligible))]
    _claim(agent, task, t)
    return task


def hard_cap(env: Environment, task_count: int) -> int:
    return 100 * max(task_count, 1) * env.diameter


def run_instance(
    env: Environment,
    decomp: Decomposition,
    n: int,
    taskset: Iterable[tuple[int, int]],
    policy: Policy | str,
    seed: int,
    *,
    trace: bool = False,
    settle: bool = False,
    cap: int | None = None,
    fields: DistanceTable | None = None,
    deadlock_window: int | None = None,
) -> RunResult:
    """Simulate one MAPD instance until every task is delivered.

    Agents start on the first ``n`` parking nodes. With ``settle`` the run
    continues after the last delivery until no agent is left inside a tree, so
    traces show every escape from a dead-end; the makespan still stops at the
    last delivery. PIBT-family runs stop with status ``"deadlock"`` once the
    full system state repeats with no pickup or delivery in between (within
    ``deadlock_window`` steps, default ``2 |V|``), since the planner is
    deterministic and would loop forever.
    """
    policy = Policy(policy)
    tasks = [Task(i, p, d) for i, (p, d) in enumerate(taskset)]
    if n < 1:
        raise InstanceError("need at least one agent")
    if n >= len(decomp.main_nodes):
        raise InstanceError(f"{n} agents do not fit: main area has {len(decomp.main_nodes)} nodes")
    if n > len(env.parking_nodes):
        raise InstanceError(f"{n} agents but only {len(env.parking_nodes)} parking nodes")
    for task in tasks:
        if task.pickup not in env.pickup_nodes or task.delivery not in env.delivery_nodes:
            raise InstanceError(f"task {task.id} endpoints are not pickup/delivery nodes")
        kp = decomp.tree_of.get(task.pickup)
        if kp is not None and kp == decomp.tree_of.get(task.delivery):
            raise InstanceError(f"task {task.id} has pickup and delivery in the same tree")

    if fields is None:
        fields = DistanceTable(env)
    cap = hard_cap(env, len(tasks)) if cap is None else cap
    window = 2 * len(env.nodes) if deadlock_window is None else deadlock_window
    eps = distinct_epsilons(seed, n)
    agents = [AgentState(i, env.parking_nodes[i], env.parking_nodes[i], eps[i]) for i in range(n)]
    for a in agents:
        fields[a.parking]
    for task in tasks:
        fields[task.pickup]
        fields[task.delivery]
    for tree in decomp.trees:
        fields[tree.connecting_node]
    selection = SeedStream(seed, "selection")
    records: list[TraceRecord] | None = [] if trace else None
    metrics = Metrics(makespan=0, violations=0, timesteps=0, seed=seed)
    if not tasks:
        return RunResult("ok", metrics, records)

    token = None
    if policy is Policy.TP:
        from .baseline_tp import Token

        token = Token(env, agents, fields)

    remaining = len(tasks)
    events: list[dict] = []
    seen_states: dict[tuple, int] = {}
    t = 0
    while True:
        # assignment
        if policy.pibt_family:
            open_tasks = any(task.status is TaskStatus.PENDING for task in tasks)
            for a in agents:
                if a.task is None:
                    if not open_tasks and (
                        a.phase is Phase.RETURNING or (a.phase is Phase.IDLE and a.position == a.parking)
                    ):
                        # nothing left to assign and already homing: the call would be a no-op
                        continue
                    task = assign_task(a, tasks, selection, policy, decomp, t)
                    if task is not None:
                        events.append({"type": "assign", "agent": a.id, "task": task.id})
                        _arrive(a, tasks, t, events)

        if remaining == 0 and (not settle or not any(a.position in decomp.tree_of for a in agents)):
            break
        if t >= cap:
            metrics.timesteps = t
            _close_trace(records, t, agents, env, decomp, fields, policy, events)
            return RunResult("cap", metrics, records, f"hit the timestep cap {cap} with {remaining} tasks left")

        if policy.pibt_family:
            engine.compute_priorities(agents, decomp, fields, policy)
        record = None
        if records is not None:
            record = TraceRecord(t, [_agent_view(env, a, policy) for a in agents], events)
            records.append(record)

        before = [a.position for a in agents]
        if policy.pibt_family:
            ctx = engine.new_context(agents, env, decomp, fields, policy, t)
            nxt = engine.plan_step(ctx)
            after = [nxt[a.id] for a in agents]
            step_events = ctx.events
        else:
            from .baseline_tp import tp_step

            step_events = []
            nxt = tp_step(agents, tasks, token, t, on_claim=lambda a, task: _tp_claim(a, task, tasks, t, step_events))
            after = [nxt[a.id] for a in agents]
        if record is not None:
            record.events = events + step_events

        bad = validate_transition(before, after, env)
        if bad:
            metrics.violations = len(bad)
            metrics.timesteps = t
            return RunResult("violation", metrics, records, "; ".join(map(str, bad)))

        for a, v in zip(agents, after):
            a.position = v
        t += 1
        events = []
        for a in agents:
            remaining -= _arrive(a, tasks, t, events, metrics)
        if remaining == 0 and metrics.makespan == 0:
            metrics.makespan = t

        if policy.pibt_family and remaining:
            if events:
                seen_states.clear()
            else:
                state = tuple((a.position, a.destination, a.tas) for a in agents)
                first = seen_states.get(state)
                if first is not None and t - first <= window:
                    metrics.timesteps = t
                    _close_trace(records, t, agents, env, decomp, fields, policy, events)
                    return RunResult(
                        "deadlock", metrics, records,
                        f"state at t={t} repeats t={first} with no pickup or delivery in between",
                    )
                seen_states[state] = t

    metrics.timesteps = t
    metrics.completed = len(tasks)
    _close_trace(records, t, agents, env, decomp, fields, policy, events)
    return RunResult("ok", metrics, records)


def _close_trace(records, t, agents, env, decomp, fields, policy, events) -> None:
    """Append the state reached after the last executed move."""
    if records is None:
        return
    if policy.pibt_family:
        engine.compute_priorities(agents, decomp, fields, policy)
    records.append(TraceRecord(t, [_agent_view(env, a, policy) for a in agents], events))


def _tp_claim(agent: AgentState, task: Task, tasks: Sequence[Task], t: int, events: list[dict]) -> None:
    _claim(agent, task, t)
    events.append({"type": "assign", "agent": agent.id, "task": task.id})
    _arrive(agent, tasks, t, events)


def _arrive(agent: AgentState, tasks: Sequence[Task], t: int, events: list[dict], metrics: Metrics | None = None) -> int:
    """Fire pickup/delivery/parking transitions; returns 1 on a delivery."""
    if agent.task is not None:
        task = tasks[agent.task]
        if task.status is TaskStatus.CLAIMED and agent.position == task.pickup:
            task.status = TaskStatus.PICKED_UP
            _set_destination(agent, task.delivery, Phase.TO_DELIVERY)
            events.append({"type": "pickup", "agent": agent.id, "task": task.id})
        if task.status is TaskStatus.PICKED_UP and agent.position == task.delivery:
            task.status = TaskStatus.DONE
            task.done_at = t
            agent.task = None
            _set_destination(agent, None, Phase.IDLE)
            events.append({"type": "delivery", "agent": agent.id, "task": task.id})
            if metrics is not None:
                metrics.service_times[task.id] = t - task.claimed_at
            return 1
    elif agent.phase is Phase.RETURNING and agent.position == agent.parking:
        _set_destination(agent, None, Phase.IDLE)
    return 0


def _agent_view(env: Environment, a: AgentState, policy: Policy) -> dict:
    x, y = env.coord(a.position)
    view = {
        "id": a.id,
        "x": x,
        "y": y,
        "p": a.priority if policy.pibt_family else None,
        "tas": a.tas,
        "task": a.task,
    }
    if a.destination is None:
        view["dest"] = None
    else:
        view["dest"] = list(env.coord(a.destination))
    return view


def write_trace(records: Iterable[TraceRecord], path) -> None:
    with open(path, "w", newline="\n") as fh:
        for rec in records:
            fh.write(rec.to_json())
            fh.write("\n")
