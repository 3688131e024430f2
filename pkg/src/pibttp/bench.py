"""Benchmark harness: makespan sweeps over maps, policies and agent counts.

A sweep writes two CSV files into the output directory:

``runs.csv``
    one row per ``(map, policy, n, trial)`` with the instance seed, makespan,
    violation count, simulated timesteps and run status;
``aggregate.csv``
    mean and sample standard deviation of the makespan per ``(map, policy, n)``.

Both start with the schema line ``# pibttp-bench v1`` and are sorted by
``(map, policy, n, trial)`` so the bytes do not depend on the worker count.
"""
from __future__ import annotations

import csv
import io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .engine import Policy
from .sim import generate_taskset, run_instance
from .world import DistanceTable, MapError, decompose, load_map

SCHEMA = "# pibttp-bench v1"
RUN_COLUMNS = ["map", "policy", "n", "trial", "seed", "makespan", "violations", "timesteps", "status"]
AGG_COLUMNS = ["map", "policy", "n", "trials", "mean_makespan", "std_makespan"]
SHIPPED_MAPS = ("env1", "env2", "env3", "env4")


class BenchmarkError(RuntimeError):
    """A sweep could not run or one of its instances failed."""


class InstanceFailure(BenchmarkError):
    """An instance of the sweep ended without completing its tasks."""


@dataclass
class BenchConfig:
    maps: list[str] = field(default_factory=lambda: list(SHIPPED_MAPS))
    policies: list[str] = field(default_factory=lambda: ["pibttp", "pibttp-ta", "tp"])
    agent_counts: list[int] = field(default_factory=lambda: list(range(5, 45, 5)))
    trials: int = 20
    seed_base: int = 0
    tasks: int = 50
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise BenchmarkError("trials must be >= 1")
        if self.workers < 1:
            raise BenchmarkError("workers must be >= 1")
        if self.tasks < 0:
            raise BenchmarkError("tasks must be >= 0")
        if not self.maps or not self.policies or not self.agent_counts:
            raise BenchmarkError("maps, policies and agents must be non-empty")
        for p in self.policies:
            try:
                Policy(p)
            except ValueError:
                raise BenchmarkError(f"unknown policy {p!r}") from None

    _KEYS = {
        "maps": "list",
        "policies": "list",
        "agents": "ints",
        "trials": "int",
        "seed_base": "int",
        "tasks": "int",
        "workers": "int",
        "out": "str",
    }

    @classmethod
    def parse(cls, text: str) -> "BenchConfig":
        """Read ``key = value`` lines; ``#`` starts a comment, lists are comma separated.

        Keys: ``maps``, ``policies``, ``agents``, ``trials``, ``seed_base``,
        ``tasks``, ``workers``, ``out``. Values may be quoted; list values may
        be wrapped in brackets, so simple TOML files parse too.
        """
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and "=" not in line):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in cls._KEYS:
                raise BenchmarkError(f"config line {lineno}: unknown or malformed entry {raw.strip()!r}")
            kind = cls._KEYS[key]
            value = value.strip("[]")
            items = [v.strip().strip("\"'") for v in value.split(",") if v.strip()]
            try:
                if kind == "list":
                    parsed = items
                elif kind == "ints":
                    parsed = [int(v) for v in items]
                elif kind == "int":
                    parsed = int(value.strip("\"'"))
                else:
                    parsed = value.strip("\"'")
            except ValueError:
                raise BenchmarkError(f"config line {lineno}: bad value for {key}: {value!r}") from None
            kwargs["agent_counts" if key == "agents" else key] = parsed
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "BenchConfig":
        return cls.parse(Path(path).read_text())


def resolve_map(name: str) -> Path:
    """A shipped map name (``env1``) or a path to a ``.map`` file."""
    if name in SHIPPED_MAPS or name == "deadend":
        from . import map_path

        return Path(str(map_path(name)))
    return Path(name)


def _run_one(job):
    map_name, policy, n, trial, seed, tasks = job
    env = _world_cache(map_name)
    env_obj, decomp, fields = env
    taskset = generate_taskset(env_obj, decomp, tasks, seed)
    res = run_instance(env_obj, decomp, n, taskset, policy, seed, fields=fields)
    m = res.metrics
    return (map_name, policy, n, trial, seed, m.makespan, m.violations, m.timesteps, res.status, res.diagnostics)


_WORLDS: dict = {}


def _world_cache(map_name: str):
    if map_name not in _WORLDS:
        env = load_map(resolve_map(map_name))
        _WORLDS[map_name] = (env, decompose(env), DistanceTable(env))
    return _WORLDS[map_name]


def run_benchmark(config: BenchConfig, out_dir=None) -> tuple[list[tuple], list[tuple]]:
    """Run the sweep and write ``runs.csv`` / ``aggregate.csv`` when a directory is given.

    Instance ``trial`` uses seed ``seed_base + trial`` for both its taskset and
    its run. Returns ``(rows, aggregates)``.

    Raises:
        BenchmarkError: a map fails to load, an agent count breaks a map's
            capacity, or any instance ends without completing its tasks. The
            message names the offending ``(map, policy, n, trial)``.
    """
    for name in config.maps:
        try:
            env, decomp, _ = _world_cache(name)
        except (MapError, OSError) as exc:
            raise BenchmarkError(f"map {name!r}: {exc}") from exc
        cap = min(len(decomp.main_nodes) - 1, len(env.parking_nodes))
        for n in config.agent_counts:
            if not 1 <= n <= cap:
                raise BenchmarkError(f"map {name!r}: n={n} outside 1..{cap} allowed by its main area and parking")

    jobs = [
        (m, p, n, trial, config.seed_base + trial, config.tasks)
        for m in config.maps
        for p in config.policies
        for n in config.agent_counts
        for trial in range(config.trials)
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=8))
    else:
        results = [_run_one(j) for j in jobs]

    rows = []
    for r in results:
        if r[8] != "ok":
            raise InstanceFailure(
                f"instance (map={r[0]}, policy={r[1]}, n={r[2]}, trial={r[3]}, seed={r[4]}) ended with {r[8]}: {r[9]}"
            )
        rows.append(r[:9])
    rows.sort(key=lambda r: (r[0], r[1], r[2], r[3]))
    aggs = aggregate(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runs.csv").write_text(_csv(RUN_COLUMNS, rows))
        (out / "aggregate.csv").write_text(_csv(AGG_COLUMNS, aggs))
    return rows, aggs


def aggregate(rows) -> list[tuple]:
    """Mean and sample standard deviation (0 for one trial) of makespan per group."""
    groups: dict[tuple, list[int]] = {}
    for r in rows:
        groups.setdefault((r[0], r[1], r[2]), []).append(r[5])
    out = []
    for key in sorted(groups):
        ms = groups[key]
        std = statistics.stdev(ms) if len(ms) > 1 else 0.0
        out.append((*key, len(ms), f"{statistics.fmean(ms):.4f}", f"{std:.4f}"))
    return out


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    buf.write(SCHEMA + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    writer.writerows(rows)
    return buf.getvalue()


def read_csv(path) -> list[dict]:
    """Load a file written by :func:`run_benchmark`, checking the schema line."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SCHEMA:
        raise BenchmarkError(f"{path}: missing {SCHEMA!r} header")
    return list(csv.DictReader(lines[1:]))


@dataclass
class MapReport:
    ok: bool
    lines: list[str]

    def __str__(self) -> str:
        return "\n".join(self.lines)


def validate_map(path) -> MapReport:
    """Parse, decompose and check a map against the runner's assumptions.

    Checks the bi-connected main area, that parking nodes lie in it, the agent
    capacity it allows, and that at least one pickup/delivery pair spans two
    regions so tasks can be generated.
    """
    path = Path(path)
    try:
        env = load_map(path)
        decomp = decompose(env)
    except OSError as exc:
        return MapReport(False, [f"FAIL: cannot read {path}: {exc.strerror or exc}"])
    except MapError as exc:
        return MapReport(False, [f"FAIL: {exc}"])

    problems = []
    lines = [f"OK: main bi-connected, {decomp.tree_count} trees"]
    bad_parking = [v for v in env.parking_nodes if v not in decomp.main_nodes]
    if bad_parking:
        where = ", ".join("({},{})".format(*env.coord(v)) for v in bad_parking[:5])
        problems.append(f"parking node(s) inside a tree at {where}")
    capacity = min(len(decomp.main_nodes) - 1, len(env.parking_nodes))
    if capacity < 1:
        problems.append("no room for agents: need a parking node and a main area larger than the fleet")
    tree_of = decomp.tree_of
    feasible = any(
        p != d and (tree_of.get(p) is None or tree_of.get(p) != tree_of.get(d))
        for p in env.pickup_nodes for d in env.delivery_nodes
    )
    if not feasible:
        problems.append("no pickup/delivery pair outside a common tree; no task can be generated")

    lines += [
        f"nodes {len(env.nodes)}, edges {len(env.edges)}, main {len(decomp.main_nodes)}, diameter {env.diameter}",
        f"pickup {len(env.pickup_nodes)}, delivery {len(env.delivery_nodes)}, parking {len(env.parking_nodes)}",
        f"max agents {max(capacity, 0)}",
    ]
    for tree in decomp.trees:
        x, y = env.coord(tree.connecting_node)
        depth = max(tree.depth.values())
        lines.append(f"tree {tree.tree_id}: connecting node ({x},{y}), {len(tree.proper_nodes)} nodes, depth {depth}")
    if problems:
        return MapReport(False, [f"FAIL: {p}" for p in problems] + lines[1:])
    return MapReport(True, lines)
