import pytest
from conftest import build, world

from pibttp import engine, generate_taskset, run_instance
from pibttp.engine import AgentState, Policy, candidate_set, compute_priorities, ex_pibt, new_context, plan_step
from pibttp.world import distance_field


def agent(env, i, xy, goal_xy, eps=0.5, task=0, **kw):
    pos = env.node_at(*xy)
    goal = env.node_at(*goal_xy) if goal_xy is not None else None
    return AgentState(i, pos, kw.pop("parking", pos), eps, destination=goal, task=task, **kw)


def at(env, a):
    return env.coord(a)


# --- compute_priorities -------------------------------------------------------

# 3x3 main block, dead-end spine to the right with a branch above it
PUSH = ("...@@@@", ".......", "...@@@@")
PUSH_TA = ("...@.@@", ".......", "...@@@@")


def test_normal_priority_formula():
    env, d, f = build(*PUSH)
    a = agent(env, 0, (0, 0), (2, 1), eps=0.25)  # f = 3
    compute_priorities([a], d, f, Policy.PIBTTP)
    assert a.priority == pytest.approx(-2.75)


def test_temporary_priority_in_foreign_tree():
    env, d, f = build(*PUSH)
    a = agent(env, 0, (5, 1), (0, 0), eps=0.6)
    compute_priorities([a], d, f, Policy.PIBTTP)
    assert a.priority == pytest.approx(1.6)
    compute_priorities([a], d, f, Policy.NAIVE_PIBT)
    assert a.priority < 0


def test_tas_priority_between_bands():
    env, d, f = build(*PUSH_TA)
    tas = agent(env, 0, (4, 0), (6, 1), eps=0.4, tas=True, reserved_node=env.node_at(5, 1))
    out = agent(env, 1, (5, 1), (0, 0), eps=0.1)
    walker = agent(env, 2, (0, 2), (2, 0), eps=0.99)
    compute_priorities([tas, out, walker], d, f, Policy.PIBTTP_TA)
    assert tas.priority == pytest.approx(0.4)
    assert out.priority > 1 > tas.priority > 0 > walker.priority


def test_free_agents_rank_below_task_agents():
    env, d, f = build(*PUSH)
    parked = agent(env, 0, (0, 0), None, eps=0.9, task=None)
    busy = agent(env, 1, (0, 2), (2, 0), eps=0.1)
    compute_priorities([parked, busy], d, f, Policy.PIBTTP)
    assert parked.priority < busy.priority < 0


def test_missing_distance_field():
    env, d, _ = build(*PUSH)
    a = agent(env, 0, (0, 0), (2, 1))
    with pytest.raises(KeyError):
        compute_priorities([a], d, {}, Policy.PIBTTP)


# --- candidate_set ---------------------------------------------------------------

def test_main_agent_skips_foreign_tree():
    env, d, f = build(*PUSH)
    a = agent(env, 0, (2, 1), (0, 1))
    ctx = new_context([a], env, d, f, Policy.PIBTTP)
    assert env.node_at(3, 1) not in candidate_set(a, None, ctx)
    b = agent(env, 0, (2, 1), (6, 1))
    ctx = new_context([b], env, d, f, Policy.PIBTTP)
    assert candidate_set(b, None, ctx)[0] == env.node_at(3, 1)


def test_pushed_agent_may_enter_branch_under_ta():
    env, d, f = build(*PUSH_TA)
    pushed = agent(env, 0, (4, 1), (6, 1))
    pusher = agent(env, 1, (5, 1), (0, 1))
    branch = env.node_at(4, 0)
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    assert branch in candidate_set(pushed, pusher, ctx)
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP)
    assert branch not in candidate_set(pushed, pusher, ctx)
    # not pushed: tree path only
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    assert branch not in candidate_set(pushed, None, ctx)


def test_reserved_and_tas_nodes_excluded_when_pushed():
    env, d, f = build(*PUSH_TA)
    pushed = agent(env, 0, (4, 1), (6, 1))
    pusher = agent(env, 1, (5, 1), (0, 1))
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    ctx.reserved[env.node_at(4, 0)] += 1
    assert env.node_at(4, 0) not in candidate_set(pushed, pusher, ctx)
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    ctx.tas_nodes.add(env.node_at(3, 1))
    assert env.node_at(3, 1) not in candidate_set(pushed, pusher, ctx)


def test_open_center_candidates():
    env, d, f = build("...", "...", "...")
    goal = env.node_at(2, 2)
    a = agent(env, 0, (1, 1), (2, 2))
    ctx = new_context([a], env, d, f, Policy.PIBTTP)
    cands = candidate_set(a, None, ctx)
    assert set(cands) == {a.position, *env.neighbors[a.position]}
    dist = f[goal].dist
    assert cands == sorted(cands, key=lambda v: (dist[v], v))


# --- ex_pibt / plan_step ---------------------------------------------------------

def _plan(env, d, f, agents, policy, priorities):
    for a, p in zip(agents, priorities):
        a.priority = p
    ctx = new_context(agents, env, d, f, policy)
    return plan_step(ctx), ctx


def test_priority_inheritance_three_agents():
    env, d, f = build("....", "....", "....")
    a1 = agent(env, 0, (2, 1), (0, 1))
    a2 = agent(env, 1, (0, 1), (3, 1))
    a3 = agent(env, 2, (2, 0), (2, 2))
    nxt, _ = _plan(env, d, f, [a1, a2, a3], Policy.NAIVE_PIBT, [-3, -2, -1])
    assert at(env, nxt[2]) == (2, 1)  # a3 moves down
    assert at(env, nxt[0]) == (1, 1)  # a1 moves left
    assert at(env, nxt[1]) == (0, 1)  # a2 gives up that node and stays
    assert a1.priority == -1  # inherited from a3


def test_backtracking_six_agents():
    env, d, f = build("@.@@@@", ".....@", "@..@@@")
    goal = (4, 1)
    starts = {1: (2, 1), 2: (2, 2), 3: (3, 1), 4: (4, 1), 5: (1, 1), 6: (0, 1)}
    agents = [agent(env, i - 1, starts[i], goal) for i in range(1, 7)]
    nxt, _ = _plan(env, d, f, agents, Policy.NAIVE_PIBT, [i for i in range(1, 7)])
    moved = {i for i in range(1, 7) if nxt[i - 1] != agents[i - 1].position}
    assert moved == {6, 5, 1, 2}
    assert at(env, nxt[5]) == (1, 1)
    assert at(env, nxt[4]) == (2, 1)
    assert at(env, nxt[0]) == (2, 2)
    assert at(env, nxt[1]) == (1, 2)


def test_single_agent_valid_step():
    env, d, f = build("...", "...", "...")
    a = agent(env, 0, (0, 0), (2, 2))
    ctx = new_context([a], env, d, f, Policy.PIBTTP)
    compute_priorities([a], d, f, Policy.PIBTTP)
    assert ex_pibt(a, None, ctx) is True
    assert f[a.goal][ctx.next[0]] == f[a.goal][a.position] - 1


def test_everyone_at_goal_stays():
    env, d, f = build("...", "...", "...")
    agents = [agent(env, i, (i, 0), (i, 0)) for i in range(3)]
    compute_priorities(agents, d, f, Policy.PIBTTP)
    nxt = plan_step(new_context(agents, env, d, f, Policy.PIBTTP))
    assert all(nxt[a.id] == a.position for a in agents)


def test_push_back_one_hop_per_step():
    env, d, f = build(*PUSH)
    pusher = agent(env, 0, (5, 1), (0, 1), eps=0.3)
    pushed = agent(env, 1, (4, 1), (6, 1), eps=0.7)
    trail = []
    for _ in range(3):
        compute_priorities([pusher, pushed], d, f, Policy.PIBTTP)
        nxt = plan_step(new_context([pusher, pushed], env, d, f, Policy.PIBTTP))
        pusher.position, pushed.position = nxt[0], nxt[1]
        trail.append(at(env, pushed.position))
    assert trail[:2] == [(3, 1), (2, 1)]


# --- tas_transition ----------------------------------------------------------------

def test_pushed_agent_enters_tas_and_reserves_pusher_node():
    env, d, f = build(*PUSH_TA)
    pushed = agent(env, 0, (4, 1), (6, 1), eps=0.7)
    pusher = agent(env, 1, (5, 1), (0, 1), eps=0.3)
    compute_priorities([pushed, pusher], d, f, Policy.PIBTTP_TA)
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    nxt = plan_step(ctx)
    assert at(env, nxt[0]) == (4, 0)
    assert pushed.tas and pushed.reserved_node == env.node_at(5, 1)
    assert ctx.reserved[env.node_at(5, 1)] == 1
    assert env.node_at(4, 0) in ctx.tas_nodes
    assert {"type": "reserve", "agent": 0, "node": env.node_at(5, 1)} in ctx.events

    # the pusher passes, the TAS agent steps back onto its path and reverts
    pushed.position, pusher.position = nxt[0], nxt[1]
    compute_priorities([pushed, pusher], d, f, Policy.PIBTTP_TA)
    assert pushed.priority == pytest.approx(0.7)
    ctx = new_context([pushed, pusher], env, d, f, Policy.PIBTTP_TA)
    nxt = plan_step(ctx)
    assert at(env, nxt[0]) == (4, 1)
    assert not pushed.tas and pushed.reserved_node is None
    assert not ctx.reserved and not ctx.tas_nodes


def test_tas_untouched_in_main_area():
    env, d, f = build(*PUSH_TA)
    a = agent(env, 0, (0, 0), (2, 2))
    ctx = new_context([a], env, d, f, Policy.PIBTTP_TA)
    engine.tas_transition(a, env.node_at(1, 0), ctx)
    assert not a.tas and not ctx.events and not ctx.reserved


def test_shared_reservation_survives_one_revert():
    env, d, f = build(*PUSH_TA)
    node = env.node_at(5, 1)
    a = agent(env, 0, (4, 0), (6, 1), tas=True, reserved_node=node)
    b = agent(env, 1, (3, 1), (6, 1), tas=True, reserved_node=node)
    ctx = new_context([a, b], env, d, f, Policy.PIBTTP_TA)
    assert ctx.reserved[node] == 2
    engine.tas_transition(a, env.node_at(4, 1), ctx)
    assert ctx.reserved[node] == 1


# --- run-level properties -------------------------------------------------------------

@pytest.mark.parametrize("policy", ["pibttp", "pibttp-ta"])
def test_priority_bands_and_call_bound(policy, monkeypatch):
    env, d, f = world("env2")
    calls = []
    original = engine.plan_step

    def checked(ctx):
        prios = [a.priority for a in ctx.agents]
        assert len(set(prios)) == len(prios)
        for a in ctx.agents:
            k = d.tree_of.get(a.position)
            if k is not None and k != d.tree_of.get(a.goal):
                assert 1 < a.priority < 2
            elif a.tas:
                assert 0 < a.priority < 1
            else:
                assert a.priority < 1 and (a.priority < 0 or a.position == a.goal)
        out = original(ctx)
        calls.append(ctx.calls)
        assert ctx.calls <= len(ctx.agents)
        assert len(out) == len(ctx.agents)
        return out

    monkeypatch.setattr(engine, "plan_step", checked)
    res = run_instance(env, d, 15, generate_taskset(env, d, 30, 5), policy, 5, fields=f)
    assert res.ok and calls


def test_push_back_never_moves_away():
    """While holding temporary priority in a tree, distance to the goal never grows."""
    env, d, f = world("env1")
    res = run_instance(env, d, 20, generate_taskset(env, d, 30, 2), "pibttp", 2, fields=f, trace=True)
    assert res.ok
    for rec, nxt in zip(res.trace, res.trace[1:]):
        after = {a["id"]: env.node_at(a["x"], a["y"]) for a in nxt.agents}
        for a in rec.agents:
            pos = env.node_at(a["x"], a["y"])
            if a["p"] > 1 and pos in d.tree_of and after[a["id"]] in d.tree_of:
                goal = env.node_at(*a["dest"]) if a["dest"] else env.parking_nodes[a["id"]]
                dist = distance_field(env, goal).dist
                assert dist[after[a["id"]]] <= dist[pos]
