"""Non-learning coverage planner on a Voronoi decomposition.

Each agent owns the cells nearest its start (Chebyshev distance). It first
visits waypoints near the edge of its region in a greedy order, then sweeps
an inward spiral, and moves between waypoints along breadth-first shortest
paths. Planning sees the whole terrain; execution never replans.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..episode_log import EpisodeLog, EpisodeRecorder
from ..evaluation import Policy
from ..sim import DELTAS, Action, World, step

_NEIGHBOURS = [tuple(int(v) for v in d) for d in DELTAS[:8]]
_MOVE_OF = {d: Action(i) for i, d in enumerate(_NEIGHBOURS)}

Cell = tuple[int, int]


class NoPathError(RuntimeError):
    pass


@dataclass
class VoronoiPartition:
    """``assignment[r, c]`` is the owning agent of every cell, obstacles included."""

    assignment: np.ndarray
    seeds: list[Cell]
    free: np.ndarray

    def region(self, agent_id: int) -> np.ndarray:
        return self.assignment == agent_id

    def free_region(self, agent_id: int) -> np.ndarray:
        return self.region(agent_id) & self.free


def voronoi_partition(terrain: np.ndarray, seeds) -> VoronoiPartition:
    seeds = [tuple(int(v) for v in s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ValueError("Voronoi seeds must be distinct")
    if not seeds:
        raise ValueError("need at least one seed")
    m = terrain.shape[0]
    rr, cc = np.mgrid[0:m, 0:m]
    # Chebyshev distance first, squared Euclidean distance as tie-break; both fit one integer key
    scale = 2 * m * m + 1
    dist = np.stack([np.maximum(np.abs(rr - r), np.abs(cc - c)) * scale + (rr - r) ** 2 + (cc - c) ** 2
                     for r, c in seeds])
    # argmin returns the first minimum, so remaining ties go to the lowest agent id
    return VoronoiPartition(np.argmin(dist, axis=0), seeds, ~terrain.astype(bool))


def bfs_route(terrain: np.ndarray, start: Cell, goal: Cell) -> list[Cell]:
    """Shortest 8-connected path over Free cells, both ends included."""
    start, goal = tuple(start), tuple(goal)
    if start == goal:
        return [start]
    m = terrain.shape[0]
    parent = {start: None}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for dr, dc in _NEIGHBOURS:
            nxt = (cur[0] + dr, cur[1] + dc)
            if not (0 <= nxt[0] < m and 0 <= nxt[1] < m) or terrain[nxt] or nxt in parent:
                continue
            parent[nxt] = cur
            if nxt == goal:
                path = [nxt]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            queue.append(nxt)
    raise NoPathError(f"no free path from {start} to {goal}")


def bfs_distances(terrain: np.ndarray, start: Cell) -> np.ndarray:
    """Step counts from ``start`` to every Free cell; -1 where unreachable."""
    m = terrain.shape[0]
    dist = np.full((m, m), -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([tuple(start)])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _NEIGHBOURS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < m and 0 <= nc < m and not terrain[nr, nc] and dist[nr, nc] < 0:
                dist[nr, nc] = dist[r, c] + 1
                queue.append((nr, nc))
    return dist


def _depth(region: np.ndarray) -> np.ndarray:
    """Chebyshev distance from each region cell to the nearest cell outside it (map edge counts as outside)."""
    padded = np.pad(region, 1, constant_values=False)
    d = ndimage.distance_transform_cdt(padded, metric="chessboard")
    return d[1:-1, 1:-1]


def _footprint_mask(cell: Cell, k: int, m: int) -> tuple[slice, slice]:
    h = k // 2
    return slice(max(cell[0] - h, 0), cell[0] + h + 1), slice(max(cell[1] - h, 0), cell[1] + h + 1)


def _centroid_cell(cells: np.ndarray) -> Cell:
    """Region cell closest to the mean position (ties by raster order)."""
    mean = cells.mean(axis=0)
    d = np.max(np.abs(cells - mean), axis=1)
    best = cells[np.lexsort((cells[:, 1], cells[:, 0], d))[0]]
    return int(best[0]), int(best[1])


@dataclass
class BoundaryGraph:
    """Waypoints near the region edge plus the centroid; complete graph of BFS distances."""

    nodes: list[Cell] = field(default_factory=list)
    dist: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.int64))

    def __len__(self) -> int:
        return len(self.nodes)

    def connected(self) -> bool:
        return bool(len(self.nodes) == 0 or (self.dist >= 0).all())


def boundary_candidates(free_region: np.ndarray, sensor_k: int) -> np.ndarray:
    """Cells whose footprint just reaches the region edge, as a ``(N, 2)`` array in raster order."""
    if not free_region.any():
        return np.zeros((0, 2), dtype=np.int64)
    depth = _depth(free_region)
    target = min(sensor_k // 2 + 1, int(depth.max()))
    return np.argwhere(depth == target)


def sample_spaced(cells: np.ndarray, spacing: int) -> list[Cell]:
    """Raster-order greedy subset whose members are at Chebyshev distance >= ``spacing`` apart."""
    chosen: list[Cell] = []
    for r, c in cells:
        if all(max(abs(r - a), abs(c - b)) >= spacing for a, b in chosen):
            chosen.append((int(r), int(c)))
    return chosen


def build_boundary_graph(partition: VoronoiPartition, agent_id: int, sensor_k: int,
                         terrain: np.ndarray | None = None) -> BoundaryGraph:
    region = partition.free_region(agent_id)
    if not region.any():
        return BoundaryGraph()
    terrain = ~partition.free if terrain is None else terrain
    nodes = sample_spaced(boundary_candidates(region, sensor_k), sensor_k)
    centre = _centroid_cell(np.argwhere(region))
    if centre not in nodes:
        nodes.append(centre)
    maps = [bfs_distances(terrain, n) for n in nodes]
    dist = np.array([[maps[i][n] for n in nodes] for i in range(len(nodes))], dtype=np.int64)
    return BoundaryGraph(nodes, dist)


def greedy_visit_order(graph: BoundaryGraph, start: Cell, sensor_k: int, uncovered: np.ndarray,
                       terrain: np.ndarray) -> list[Cell]:
    """Visit every node, each time picking the one that senses most still-uncovered cells.

    Ties go to the shorter BFS distance from the current position, then to
    the lower raster index. ``uncovered`` is not modified.
    """
    m = uncovered.shape[0]
    remaining = list(graph.nodes)
    todo = uncovered.copy()
    order = []
    here = tuple(start)
    while remaining:
        dist = bfs_distances(terrain, here)
        def key(n):
            rs, cs = _footprint_mask(n, sensor_k, m)
            d = dist[n] if dist[n] >= 0 else np.iinfo(np.int64).max
            return (-int(todo[rs, cs].sum()), d, n[0] * m + n[1])
        best = min(remaining, key=key)
        remaining.remove(best)
        order.append(best)
        rs, cs = _footprint_mask(best, sensor_k, m)
        todo[rs, cs] = False
        here = best
    return order


def _ring_points(top, bottom, left, right, spacing) -> list[Cell]:
    """Clockwise ring from the top-left corner, sampled every ``spacing`` cells along each side."""
    def span(a, b):
        step = 1 if b >= a else -1
        n = abs(b - a)
        pts = list(range(0, n, spacing)) + [n]
        return [a + step * p for p in pts]
    pts = [(top, c) for c in span(left, right)]
    pts += [(r, right) for r in span(top, bottom)]
    pts += [(bottom, c) for c in span(right, left)]
    pts += [(r, left) for r in span(bottom, top)]
    out = []
    for p in pts:
        if p not in out:
            out.append(p)
    return out


def _nearest(cells: np.ndarray, target: Cell) -> tuple[Cell, int]:
    d = np.max(np.abs(cells - np.asarray(target)), axis=1)
    i = int(np.lexsort((cells[:, 1], cells[:, 0], d))[0])
    return (int(cells[i, 0]), int(cells[i, 1])), int(d[i])


def spiral_sweep(region: np.ndarray, sensor_k: int, entry: Cell, free: np.ndarray | None = None,
                 target: np.ndarray | None = None) -> list[Cell]:
    """Inward rectangular spiral over the region's bounding box with lanes ``sensor_k`` apart.

    Waypoints are snapped onto Free region cells. Any cell of ``target``
    (default: the region) left outside every footprint gets an extra
    waypoint, inserted where it lengthens the tour least.
    """
    free = np.ones_like(region, dtype=bool) if free is None else free
    target = region if target is None else target
    cells = np.argwhere(region & free)
    if cells.size == 0:
        return []
    m = region.shape[0]
    h = sensor_k // 2
    r0, c0 = np.argwhere(target).min(axis=0)
    r1, c1 = np.argwhere(target).max(axis=0)
    points: list[Cell] = []
    j = 0
    while r0 + j * sensor_k <= r1 - j * sensor_k and c0 + j * sensor_k <= c1 - j * sensor_k:
        top, bottom = r0 + h + j * sensor_k, r1 - h - j * sensor_k
        left, right = c0 + h + j * sensor_k, c1 - h - j * sensor_k
        if top > bottom:
            top = bottom = (r0 + r1) // 2
        if left > right:
            left = right = (c0 + c1) // 2
        ring = _ring_points(top, bottom, left, right, sensor_k)
        if j == 0:
            first = min(range(len(ring)), key=lambda i: (max(abs(ring[i][0] - entry[0]), abs(ring[i][1] - entry[1])), i))
            ring = ring[first:] + ring[:first]
        points += ring
        j += 1

    waypoints: list[Cell] = []
    for p in points:
        snapped, d = _nearest(cells, p)
        if d <= h and snapped not in waypoints:
            waypoints.append(snapped)

    covered = np.zeros_like(target, dtype=bool)
    for w in waypoints:
        covered[_footprint_mask(w, sensor_k, m)] = True
    free_cells = np.argwhere(free)
    while (target & ~covered).any():
        miss = tuple(int(v) for v in np.argwhere(target & ~covered)[0])
        pick, d = _nearest(cells, miss)
        if d > h:
            pick, _ = _nearest(free_cells, miss)
        waypoints = _cheapest_insert(waypoints, pick)
        covered[_footprint_mask(pick, sensor_k, m)] = True
    return waypoints


def _cheapest_insert(tour: list[Cell], cell: Cell) -> list[Cell]:
    if cell in tour:
        return tour
    def d(a, b):
        return max(abs(a[0] - b[0]), abs(a[1] - b[1]))
    best, where = None, len(tour)
    for i in range(len(tour) + 1):
        before = d(tour[i - 1], cell) if i > 0 else 0
        after = d(cell, tour[i]) if i < len(tour) else 0
        skip = d(tour[i - 1], tour[i]) if 0 < i < len(tour) else 0
        cost = before + after - skip
        if best is None or cost < best:
            best, where = cost, i
    return tour[:where] + [cell] + tour[where:]


@dataclass
class CoveragePlan:
    """Per agent: the ordered waypoints and the cell path that joins them."""

    waypoints: list[list[Cell]]
    paths: list[list[Cell]]

    def actions(self, agent_id: int) -> list[Action]:
        path = self.paths[agent_id]
        return [_MOVE_OF[(b[0] - a[0], b[1] - a[1])] for a, b in zip(path, path[1:])]


def plan_agent(terrain: np.ndarray, partition: VoronoiPartition, agent_id: int, sensor_k: int,
               start: Cell, covered: np.ndarray) -> tuple[list[Cell], list[Cell]]:
    """Waypoints (boundary graph in greedy order, then spiral) and the joining path.

    Waypoints whose footprint adds nothing new to the agent's own region
    by the time they are reached are skipped.
    """
    m = terrain.shape[0]
    region = partition.region(agent_id)
    todo = region & ~covered
    graph = build_boundary_graph(partition, agent_id, sensor_k, terrain)
    order = greedy_visit_order(graph, start, sensor_k, todo, terrain)
    entry = order[-1] if order else tuple(start)
    spiral = spiral_sweep(region, sensor_k, entry, partition.free)
    candidates = order + spiral

    path = [tuple(start)]
    seen = todo.copy()
    seen[_footprint_mask(path[0], sensor_k, m)] = False
    kept = []
    for w in candidates:
        if not seen[_footprint_mask(w, sensor_k, m)].any():
            continue
        leg = bfs_route(terrain, path[-1], w)
        for cell in leg[1:]:
            path.append(cell)
            seen[_footprint_mask(cell, sensor_k, m)] = False
        kept.append(w)
        if not seen.any():
            break
    return kept, path


def nrl_plan(world: World) -> tuple[VoronoiPartition, CoveragePlan]:
    partition = voronoi_partition(world.terrain, [a.position for a in world.agents])
    waypoints, paths = [], []
    for a in world.agents:
        w, p = plan_agent(world.terrain, partition, a.id, a.sensor_k, a.position, world.coverage)
        waypoints.append(w)
        paths.append(p)
    return partition, CoveragePlan(waypoints, paths)


class NrlPolicy(Policy):
    """Follows the precomputed paths.

    An agent pushed off its path (by wind) walks back to the next planned
    cell by BFS; an agent whose next cell is held by a teammate waits.
    Plans are never recomputed.
    """

    name = "nrl"

    def __init__(self):
        self.partition: VoronoiPartition | None = None
        self.plan: CoveragePlan | None = None
        self.progress: list[int] = []

    def begin(self, world: World) -> None:
        self.partition, self.plan = nrl_plan(world)
        self.progress = [0] * world.n_agents

    @staticmethod
    def log_extra(world: World) -> dict:
        partition = voronoi_partition(world.terrain, [a.position for a in world.agents])
        return {"partition": partition.assignment.tolist()}

    def select(self, world, observations, rng):
        # cells held now or claimed by a lower-id agent this step are off limits,
        # which rules out both shared targets and swaps
        held = {a.position for a in world.agents if a.active}
        claimed: set[Cell] = set()
        out = []
        for a in world.agents:
            path = self.plan.paths[a.id]
            idx = self.progress[a.id]
            # catch up if the agent already stands further along its path
            while idx + 1 < len(path) and a.position == path[idx + 1]:
                idx += 1
            if a.position != path[idx] and a.position in path[idx:]:
                idx = path.index(a.position, idx)
            self.progress[a.id] = idx
            if not a.active or idx + 1 >= len(path):
                out.append(Action.NO_MOVE)
                continue
            goal = path[idx + 1]
            if a.position != path[idx]:
                # displaced: head for the next planned cell
                route = bfs_route(world.terrain, a.position, goal)
                goal = route[1] if len(route) > 1 else goal
            blocked = (held | claimed) - {a.position}
            if goal in blocked:
                goal = self._detour(world, a.position, path[idx + 1:], blocked)
                if goal is None:
                    out.append(Action.NO_MOVE)
                    continue
            claimed.add(goal)
            d = (goal[0] - a.position[0], goal[1] - a.position[1])
            out.append(_MOVE_OF.get(d, Action.NO_MOVE))
        return out

    @staticmethod
    def _detour(world, here, ahead, occupied):
        """First step around teammates towards the next unoccupied cell of the path, or None."""
        target = next((c for c in ahead if c not in occupied), None)
        if target is None:
            return None
        blocked = world.terrain.copy()
        for cell in occupied:
            blocked[cell] = True
        try:
            route = bfs_route(blocked, here, target)
        except NoPathError:
            return None
        return route[1]


def nrl_execute(world: World) -> EpisodeLog:
    """Plan on the fully known map, run the episode open-loop and return its log."""
    policy = NrlPolicy()
    recorder = EpisodeRecorder(world, algo="nrl", extra=policy.log_extra(world))
    policy.begin(world)
    done = world.coverage.all()
    while not done:
        actions = policy.select(world, None, None)
        _, reward, done, info = step(world, actions)
        recorder.on_step(world, actions, reward, info)
    return recorder.log
