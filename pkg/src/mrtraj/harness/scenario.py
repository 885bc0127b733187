"""Scenario model, warehouse generator and JSON file formats."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..corridor import subdivision_violations
from ..errors import ConfigurationError
from ..lattice import Heading, LatticeConfig, LatticeGraph, feasibility_violations
from ..workspace import OccupancyGrid, Pose, Rect, RobotModel, Task, dump_map, load_map, validate_tasks

SCENARIO_SCHEMA = "mrtraj.scenario/1"

WAREHOUSE_SIZE = (10.0, 12.0)
SHELF_SIZE = (3.0, 0.6)
SHELF_X = (1.0, 6.0)            # left edges of the two shelf columns
SHELF_Y = (2.5, 5.5, 8.5)       # centre lines of the three shelf rows


@dataclass
class Params:
    D: float = 1.0
    delta_T: float = 1.6
    h: int = 5
    w: float = 1.5
    origin: tuple[float, float] = (0.5, 0.5)
    P: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    Q: list = field(default_factory=lambda: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.1]])
    seed: int = 0

    @property
    def lattice(self) -> LatticeConfig:
        return LatticeConfig(self.D, self.delta_T, tuple(self.origin))

    def to_dict(self) -> dict:
        return {"D": self.D, "delta_T": self.delta_T, "h": self.h, "w": self.w, "origin": list(self.origin),
                "P": self.P, "Q": self.Q, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "Params":
        d = dict(d)
        if "origin" in d:
            d["origin"] = tuple(d["origin"])
        return cls(**d)


@dataclass
class Scenario:
    grid: OccupancyGrid
    robots: list[RobotModel]
    tasks: list[Task]
    params: Params = field(default_factory=Params)
    name: str = ""

    @property
    def N(self) -> int:
        return len(self.robots)

    def gate_violations(self) -> list[str]:
        lat = feasibility_violations(self.params.lattice, self.robots)
        sub = subdivision_violations(self.params.h, self.params.lattice, self.robots)
        return lat + sub

    def validate(self) -> None:
        problems = self.gate_violations()
        if problems:
            raise ConfigurationError("; ".join(problems))
        validate_tasks(self.grid, self.robots, self.tasks)

    def with_params(self, **changes) -> "Scenario":
        return replace(self, params=replace(self.params, **changes))

    def to_dict(self) -> dict:
        return {
            "schema": SCENARIO_SCHEMA,
            "name": self.name,
            "map": dump_map(self.grid),
            "robots": [{"id": r.id, "radius": r.radius, "v_max": r.v_max, "omega_max": r.omega_max}
                       for r in self.robots],
            "tasks": [{"robot": t.robot_id, "start": list(t.start), "goal": list(t.goal)} for t in self.tasks],
            "params": self.params.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        if d.get("schema") != SCENARIO_SCHEMA:
            raise ValueError(f"unsupported scenario schema {d.get('schema')!r}, expected {SCENARIO_SCHEMA!r}")
        robots = [RobotModel(r["id"], r["radius"], r["v_max"], r["omega_max"]) for r in d["robots"]]
        tasks = [Task(t["robot"], Pose(*t["start"]), Pose(*t["goal"])) for t in d["tasks"]]
        return cls(load_map(d["map"]), robots, tasks, Params.from_dict(d.get("params", {})), d.get("name", ""))

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "Scenario":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def warehouse_map(resolution: float = 0.1) -> OccupancyGrid:
    w, hgt = WAREHOUSE_SIZE
    sw, sh = SHELF_SIZE
    shelves = [Rect(x, y - sh / 2, x + sw, y + sh / 2) for y in SHELF_Y for x in SHELF_X]
    return OccupancyGrid.empty(w, hgt, resolution).with_boxes(shelves)


def warehouse_slots(cfg: LatticeConfig = LatticeConfig(origin=(0.5, 0.5))) -> list[tuple[int, int]]:
    """Lattice cells usable as starts/goals: the map boundary ring and one pick-up cell per shelf side."""
    w, hgt = WAREHOUSE_SIZE
    nx, ny = int(round(w / cfg.D)), int(round(hgt / cfg.D))
    ring = [(i, j) for j in range(ny) for i in range(nx) if i in (0, nx - 1) or j in (0, ny - 1)]
    pick = []
    for y in SHELF_Y:
        for x in SHELF_X:
            cx = (x + SHELF_SIZE[0] / 2 - cfg.origin[0]) / cfg.D
            cy = (y - cfg.origin[1]) / cfg.D
            for side in (-1, 1):
                pick.append((int(round(cx)), int(round(cy)) + side))
    return sorted(set(ring) | set(pick))


def gen_warehouse(seed: int, N: int, params: Params | None = None, radius: float = 0.15,
                  v_max: float = 1.0, omega_max: float = 1.0) -> Scenario:
    """Random warehouse instance; starts and goals are distinct slots drawn without replacement."""
    params = replace(params or Params(origin=(0.5, 0.5)), seed=seed)
    cfg = params.lattice
    slots = warehouse_slots(cfg)
    if N < 1:
        raise ValueError("N must be at least 1")
    if 2 * N > len(slots):
        raise ValueError(f"N={N} needs {2 * N} distinct start/goal slots, only {len(slots)} available")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(slots), size=2 * N, replace=False)
    heads = rng.integers(0, len(Heading), size=2 * N)
    robots = [RobotModel(i + 1, radius, v_max, omega_max) for i in range(N)]
    tasks = []
    for i in range(N):
        poses = []
        for k in (2 * i, 2 * i + 1):
            cx, cy = slots[int(chosen[k])]
            x, y = cfg.origin[0] + cx * cfg.D, cfg.origin[1] + cy * cfg.D
            poses.append(Pose(x, y, Heading(int(heads[k])).angle))
        tasks.append(Task(i + 1, poses[0], poses[1]))
    sc = Scenario(warehouse_map(), robots, tasks, params, name=f"warehouse-N{N}-s{seed}")
    sc.validate()
    return sc


def random_tasks_on_map(grid: OccupancyGrid, N: int, seed: int, params: Params | None = None,
                        radius: float = 0.15) -> Scenario:
    """Random starts/goals on the free lattice cells of an arbitrary map."""
    params = replace(params or Params(), seed=seed)
    cfg = params.lattice
    graph = LatticeGraph(grid, cfg, radius)
    free = sorted(graph.free_cells)
    if 2 * N > len(free):
        raise ValueError(f"N={N} needs {2 * N} free lattice cells, map has {len(free)}")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(free), size=2 * N, replace=False)
    heads = rng.integers(0, len(Heading), size=2 * N)
    robots = [RobotModel(i + 1, radius) for i in range(N)]
    tasks = []
    for i in range(N):
        poses = []
        for k in (2 * i, 2 * i + 1):
            cx, cy = free[int(chosen[k])]
            poses.append(Pose(cfg.origin[0] + cx * cfg.D, cfg.origin[1] + cy * cfg.D, Heading(int(heads[k])).angle))
        tasks.append(Task(i + 1, poses[0], poses[1]))
    sc = Scenario(grid, robots, tasks, params, name=f"random-N{N}-s{seed}")
    sc.validate()
    return sc


def crossing_scenario() -> Scenario:
    """Two robots crossing at the centre of a 9 m x 9 m map with four block obstacles."""
    grid = OccupancyGrid.empty(9.0, 9.0, 0.1, origin=(-4.5, -4.5))
    blocks = [Rect(-3.5, -3.5, -0.5, -0.5), Rect(0.5, -3.5, 3.5, -0.5),
              Rect(-3.5, 0.5, -0.5, 3.5), Rect(0.5, 0.5, 3.5, 3.5)]
    grid = grid.with_boxes(blocks)
    robots = [RobotModel(1), RobotModel(2)]
    tasks = [Task(1, Pose(4.0, 0.0, math.pi), Pose(-4.0, 0.0, math.pi)),
             Task(2, Pose(0.0, 4.0, -math.pi / 2), Pose(0.0, -4.0, -math.pi / 2))]
    return Scenario(grid, robots, tasks, Params(origin=(0.0, 0.0)), name="crossing")
