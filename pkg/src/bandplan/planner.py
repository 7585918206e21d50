"""Band-aware RRT planner: sampling, two-stage best-nearest, goal bias,
shortcut smoothing, and goal construction by clustering uncovered targets.

The tree lives in the product of robot space (two gripper centers, R^6) and
band space.  Bands ride along passively: extending an edge forward-propagates
the parent's band, and a vertex is only kept while the band stays below the
length budget.  Goal states need the grippers near the target cluster
centers with a band dissimilar from every blacklisted one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.vq import kmeans2

from .band import (
    Band,
    BandError,
    BandParams,
    Blacklist,
    band_distance,
    band_length,
    forward_propagate,
    vis_check,
)
from .worldgrid import WorldGrid


class PlanningFailure(RuntimeError):
    """The planner exhausted its time budget without reaching the goal."""


class TaskComplete(ValueError):
    """plan_path was asked to plan with no uncovered targets."""


@dataclass(frozen=True)
class PlannerParams:
    goal_bias: float = 0.1             # gamma_gb
    goal_radius: float = 0.02          # delta_goal
    best_nearest_radius: float = 0.001  # delta_BN
    band_weight: float = 1e-6          # lambda_b
    step: float = 0.04                 # extension step in robot space
    time_budget: float = 60.0          # seconds per plan
    restart_timeout: float = 60.0      # discard the tree and reseed after this
    smoothing_iters: int = 500
    max_band_points: int = 500         # N_b^max
    gripper_radius: float = 0.02
    goal_jitter: int = 8               # extra jittered goal configurations

    def __post_init__(self):
        if not (0.0 <= self.goal_bias <= 1.0):
            raise ValueError("goal_bias must be in [0, 1]")
        if self.best_nearest_radius <= 0 or self.band_weight <= 0:
            raise ValueError("best_nearest_radius and band_weight must be positive")


@dataclass
class FullConfig:
    """Planner state: two gripper centers stacked into R^6, plus a band."""

    q_r: np.ndarray
    band: Band

    def __post_init__(self):
        self.q_r = np.asarray(self.q_r, dtype=float).reshape(6)

    @property
    def grippers(self):
        return self.q_r[:3], self.q_r[3:]


@dataclass
class GoalSpec:
    ee_goals: np.ndarray               # (2, 3) cluster centers
    delta_goal: float
    blacklist: Blacklist
    goal_configs: np.ndarray           # (G, 6) candidate gripper configurations


class PlanTree:
    """Vertex store with parent links and robot-space path-length costs."""

    def __init__(self, root: FullConfig):
        self.configs = [root]
        self.parents = [-1]
        self.costs = [0.0]
        self._q = np.empty((64, 6))
        self._q[0] = root.q_r
        self._n = 1

    def __len__(self):
        return self._n

    @property
    def q_matrix(self):
        return self._q[: self._n]

    def add(self, config: FullConfig, parent: int) -> int:
        d = float(np.linalg.norm(config.q_r - self.configs[parent].q_r))
        self.configs.append(config)
        self.parents.append(parent)
        self.costs.append(self.costs[parent] + d)
        if self._n == len(self._q):
            grown = np.empty((2 * len(self._q), 6))
            grown[: self._n] = self._q
            self._q = grown
        self._q[self._n] = config.q_r
        self._n += 1
        return self._n - 1

    def path_to_root(self, idx: int):
        chain = []
        while idx >= 0:
            chain.append(idx)
            idx = self.parents[idx]
        return chain[::-1]


def full_distance(a: FullConfig, b: FullConfig, band_weight: float) -> float:
    """Additive metric: sqrt(d_r^2 + lambda_b * d_b^2)."""
    d_r2 = float(np.sum((a.q_r - b.q_r) ** 2))
    diff = a.band.upsampled() - b.band.upsampled()
    d_b2 = float(np.sum(diff * diff))
    return float(np.sqrt(d_r2 + band_weight * d_b2))


def sample_uniform(params: PlannerParams, bounds, rng) -> FullConfig:
    """Independent uniform samples of the robot and the band (no validity)."""
    lo, hi = bounds
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    q = rng.uniform(np.tile(lo, 2), np.tile(hi, 2))
    pts = rng.uniform(lo, hi, size=(params.max_band_points, 3))
    return FullConfig(q_r=q, band=Band(points=pts, max_points=params.max_band_points))


def best_nearest(tree: PlanTree, q_rand: FullConfig, delta_bn: float, band_weight: float, d_max_band2: float) -> int:
    """Two-stage nearest vertex selection.

    If any vertex lies within delta_bn in the full metric, the cheapest such
    vertex wins.  Otherwise the search radius in robot space is inflated by
    the band-space diameter bound, and the full metric decides among the
    robot-space candidates; this is exactly equivalent to a brute-force
    full-space argmin.
    """
    qm = tree.q_matrix
    d_r2 = np.sum((qm - q_rand.q_r[None, :]) ** 2, axis=1)
    up_rand = q_rand.band.upsampled()

    def full2(i):
        diff = tree.configs[i].band.upsampled() - up_rand
        return d_r2[i] + band_weight * float(np.sum(diff * diff))

    # Stage 0: min-cost vertex within delta_bn of the sample (full metric).
    close = np.flatnonzero(d_r2 <= delta_bn * delta_bn)
    if len(close):
        within = [i for i in close if full2(i) <= delta_bn * delta_bn]
        if within:
            costs = np.asarray([tree.costs[i] for i in within])
            return int(within[int(np.argmin(costs))])

    # Stage 1: nearest in robot space bounds the full-space radius.
    d_near_r2 = float(np.min(d_r2))
    radius2 = d_near_r2 + band_weight * d_max_band2
    candidates = np.flatnonzero(d_r2 <= radius2 + 1e-15)
    # Stage 2: full metric among candidates.
    vals = np.asarray([full2(i) for i in candidates])
    return int(candidates[int(np.argmin(vals))])


def _gripper_segments_free(grid: WorldGrid, q_from, q_to, radius: float) -> bool:
    return grid.segment_collision_free(q_from[:3], q_to[:3], radius) and grid.segment_collision_free(
        q_from[3:], q_to[3:], radius
    )


def connect(
    tree: PlanTree,
    from_idx: int,
    q_target_r,
    l_max: float,
    grid: WorldGrid,
    params: PlannerParams,
    band_params: BandParams,
):
    """Greedy straight-line extension toward a robot-space target.

    Steps at most ``params.step`` long; each step must keep both gripper
    spheres collision-free and the propagated band valid.  Returns the list
    of new vertex indices (possibly empty).
    """
    q_target_r = np.asarray(q_target_r, dtype=float).reshape(6)
    new_indices = []
    cur_idx = from_idx
    cur = tree.configs[from_idx]
    total = float(np.linalg.norm(q_target_r - cur.q_r))
    if total < 1e-12:
        return new_indices
    n_steps = max(int(np.ceil(total / params.step)), 1)
    waypoints = cur.q_r[None, :] + np.linspace(0.0, 1.0, n_steps + 1)[1:, None] * (q_target_r - cur.q_r)[None, :]
    for q_next in waypoints:
        if grid.sdf_at(q_next[:3]) < params.gripper_radius or grid.sdf_at(q_next[3:]) < params.gripper_radius:
            break
        if not _gripper_segments_free(grid, cur.q_r, q_next, params.gripper_radius):
            break
        try:
            b_next = forward_propagate(cur.band, (q_next[:3], q_next[3:]), grid, band_params)
        except BandError:
            break
        if band_length(b_next) > l_max:
            break
        cur = FullConfig(q_r=q_next.copy(), band=b_next)
        cur_idx = tree.add(cur, cur_idx)
        new_indices.append(cur_idx)
    return new_indices


def goal_check(tree: PlanTree, new_indices, goal: GoalSpec, grid: WorldGrid):
    """Index of the first new vertex satisfying the goal, else None."""
    for i in new_indices:
        cfg = tree.configs[i]
        g0, g1 = cfg.grippers
        if (
            np.linalg.norm(g0 - goal.ee_goals[0]) <= goal.delta_goal
            and np.linalg.norm(g1 - goal.ee_goals[1]) <= goal.delta_goal
            and vis_check(cfg.band, goal.blacklist, grid) == 0
        ):
            return i
    return None


@dataclass
class PlanStats:
    samples: int = 0
    vertices: int = 0
    nn_time: float = 0.0
    validity_time: float = 0.0
    total_time: float = 0.0
    smoothing_iters: int = 0
    smoothing_time: float = 0.0
    restarts: int = 0


def rrt_eb(
    start: FullConfig,
    goal: GoalSpec,
    params: PlannerParams,
    grid: WorldGrid,
    rng,
    l_max: float,
    stats: PlanStats = None,
):
    """RRT over (robot, band) space; returns the waypoint list to the goal.

    Samples uniformly, extends from the best-nearest vertex, and with
    probability goal_bias additionally tries to connect the latest
    configuration to the nearest precomputed goal configuration.  The tree is
    discarded and reseeded when the per-attempt timeout expires.  Raises
    PlanningFailure once the time budget runs out.
    """
    if stats is None:
        stats = PlanStats()
    band_params = BandParams.from_grid(grid, max_points=params.max_band_points)
    bounds = grid.scene.bounds
    d_max_w = grid.scene.diagonal
    d_max_band2 = params.max_band_points * d_max_w * d_max_w

    t0 = time.perf_counter()
    attempt_start = t0
    tree = PlanTree(start)

    hit = goal_check(tree, [0], goal, grid)
    if hit is not None:
        stats.total_time = time.perf_counter() - t0
        stats.vertices = len(tree)
        return [start.q_r.copy()], tree

    while True:
        now = time.perf_counter()
        if now - t0 > params.time_budget:
            stats.total_time = now - t0
            stats.vertices = len(tree)
            raise PlanningFailure(f"no path within {params.time_budget:.0f}s budget")
        if now - attempt_start > params.restart_timeout:
            tree = PlanTree(start)
            attempt_start = now
            stats.restarts += 1

        q_rand = sample_uniform(params, bounds, rng)
        stats.samples += 1
        t_nn = time.perf_counter()
        near_idx = best_nearest(tree, q_rand, params.best_nearest_radius, params.band_weight, d_max_band2)
        stats.nn_time += time.perf_counter() - t_nn

        t_v = time.perf_counter()
        new_indices = connect(tree, near_idx, q_rand.q_r, l_max, grid, params, band_params)
        stats.validity_time += time.perf_counter() - t_v

        hit = goal_check(tree, new_indices, goal, grid)
        if hit is not None:
            break

        if rng.uniform() <= params.goal_bias:
            last_idx = new_indices[-1] if new_indices else near_idx
            last_q = tree.configs[last_idx].q_r
            dists = np.linalg.norm(goal.goal_configs - last_q[None, :], axis=1)
            q_bias = goal.goal_configs[int(np.argmin(dists))]
            t_v = time.perf_counter()
            new_indices = connect(tree, last_idx, q_bias, l_max, grid, params, band_params)
            stats.validity_time += time.perf_counter() - t_v
            hit = goal_check(tree, new_indices, goal, grid)
            if hit is not None:
                break

    stats.total_time = time.perf_counter() - t0
    stats.vertices = len(tree)
    chain = tree.path_to_root(hit)
    return [tree.configs[i].q_r.copy() for i in chain], tree


def _propagate_along(band: Band, waypoints, grid: WorldGrid, band_params: BandParams, l_max: float,
                     cached=None, reconverge_tol: float = 2e-2):
    """Propagate a band along waypoints; returns the band list or None if invalid.

    ``cached`` may hold known-valid bands for the same waypoints; propagation
    is contractive, so once the fresh band lands within reconverge_tol of the
    cached one the remaining tail is reused instead of recomputed.
    """
    bands = []
    b = band
    for k, q in enumerate(waypoints):
        try:
            b = forward_propagate(b, (q[:3], q[3:]), grid, band_params)
        except BandError:
            return None
        if band_length(b) > l_max:
            return None
        bands.append(b)
        if cached is not None and k < len(cached) and band_distance(b, cached[k]) < reconverge_tol:
            bands.extend(cached[k + 1:])
            break
    return bands


def _path_length(waypoints) -> float:
    w = np.asarray(waypoints)
    return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))


def _densify(waypoints, step):
    out = [waypoints[0]]
    for q in waypoints[1:]:
        prev = out[-1]
        d = float(np.linalg.norm(q - prev))
        if d > step:
            k = int(np.ceil(d / step))
            for t in np.linspace(0.0, 1.0, k + 1)[1:]:
                out.append(prev + t * (q - prev))
        else:
            out.append(q)
    return out


def shortcut_smooth(
    path,
    start_band: Band,
    blacklist: Blacklist,
    grid: WorldGrid,
    params: PlannerParams,
    rng,
    l_max: float,
    stats: PlanStats = None,
):
    """Randomized shortcutting that respects band validity and the blacklist.

    Each iteration picks two path indices and a gripper subset (one gripper
    or both), straightens the chosen grippers between them while the other
    keeps its original motion, then revalidates the band along the changed
    segment and through to the end of the path.  A shortcut is kept only if
    everything stays valid, the final band stays dissimilar from the
    blacklist, and the robot-space length does not grow.
    """
    t0 = time.perf_counter()
    band_params = BandParams.from_grid(grid, max_points=params.max_band_points)
    path = [np.asarray(q, dtype=float).copy() for q in path]
    if len(path) >= 3:
        # bands[k] is the band at waypoint k (bands[0] = start_band), kept in
        # sync with the accepted path so shortcuts only re-propagate the tail.
        tail = _propagate_along(start_band, path[1:], grid, band_params, l_max)
        bands = [start_band] + (tail if tail is not None else [])
        for _ in range(params.smoothing_iters):
            n = len(path)
            if n < 3 or len(bands) != n:
                break
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            i, j = min(i, j), max(i, j)
            if j - i < 2:
                continue
            mode = int(rng.integers(0, 3))  # 0: gripper 0, 1: gripper 1, 2: both
            seg = np.asarray(path[i: j + 1])
            candidate = seg.copy()
            ts = np.linspace(0.0, 1.0, j - i + 1)
            straight = seg[0][None, :] + ts[:, None] * (seg[-1] - seg[0])[None, :]
            if mode == 0:
                candidate[:, :3] = straight[:, :3]
            elif mode == 1:
                candidate[:, 3:] = straight[:, 3:]
            else:
                candidate = straight
            new_path = path[:i] + [q for q in candidate] + path[j + 1:]
            if _path_length(new_path) > _path_length(path) + 1e-12:
                continue
            ok = True
            for k in range(1, len(candidate)):
                if not _gripper_segments_free(grid, candidate[k - 1], candidate[k], params.gripper_radius):
                    ok = False
                    break
                if (
                    grid.sdf_at(candidate[k][:3]) < params.gripper_radius
                    or grid.sdf_at(candidate[k][3:]) < params.gripper_radius
                ):
                    ok = False
                    break
            if not ok:
                continue
            seg_bands = _propagate_along(bands[i], candidate[1:], grid, band_params, l_max)
            if seg_bands is None:
                continue
            new_tail = _propagate_along(
                seg_bands[-1], new_path[j + 1:], grid, band_params, l_max, cached=bands[j + 1:]
            )
            if new_tail is None:
                continue
            full_tail = seg_bands + new_tail
            if vis_check(full_tail[-1], blacklist, grid) != 0:
                continue
            path = new_path
            bands = bands[: i + 1] + full_tail
    path = _densify(path, params.step)
    if stats is not None:
        stats.smoothing_iters = params.smoothing_iters
        stats.smoothing_time = time.perf_counter() - t0
    return path


def cluster_goal_centers(uncovered_targets, grid: WorldGrid, params: PlannerParams, rng):
    """2-means centers of the uncovered targets, pushed clear of obstacles."""
    pts = np.atleast_2d(np.asarray(uncovered_targets, dtype=float))
    if len(pts) == 1:
        centers = np.vstack([pts[0], pts[0]])
    else:
        best = None
        best_inertia = np.inf
        for _ in range(10):
            seed = int(rng.integers(0, 2**31 - 1))
            with np.errstate(invalid="ignore"):
                c, label = kmeans2(pts, 2, minit="++", seed=seed)
            if np.any(~np.isfinite(c)):
                continue
            inertia = float(np.sum((pts - c[label]) ** 2))
            if inertia < best_inertia:
                best_inertia = inertia
                best = c
        if best is None:
            mean = pts.mean(axis=0)
            best = np.vstack([mean, mean])
        centers = best
    return np.vstack([
        grid.project_out_of_collision(c, params.gripper_radius) for c in centers
    ])


def _assign_clusters(gripper_positions, centers):
    """Pair grippers with cluster centers by minimal total distance."""
    g0, g1 = gripper_positions
    direct = np.linalg.norm(g0 - centers[0]) + np.linalg.norm(g1 - centers[1])
    swapped = np.linalg.norm(g0 - centers[1]) + np.linalg.norm(g1 - centers[0])
    return centers if direct <= swapped else centers[::-1]


def make_goal_spec(
    centers,
    blacklist: Blacklist,
    params: PlannerParams,
    grid: WorldGrid,
    rng,
) -> GoalSpec:
    """Goal configurations are the stacked centers plus jittered variants."""
    base = np.concatenate([centers[0], centers[1]])
    configs = [base]
    for _ in range(params.goal_jitter):
        jit = base + rng.uniform(-params.goal_radius / 2, params.goal_radius / 2, size=6)
        if (
            grid.sdf_at(jit[:3]) >= params.gripper_radius
            and grid.sdf_at(jit[3:]) >= params.gripper_radius
        ):
            configs.append(jit)
    return GoalSpec(
        ee_goals=np.stack(centers),
        delta_goal=params.goal_radius,
        blacklist=blacklist,
        goal_configs=np.asarray(configs),
    )


def plan_path(
    gripper_positions,
    band: Band,
    targets,
    covered_mask,
    blacklist: Blacklist,
    params: PlannerParams,
    grid: WorldGrid,
    rng,
    l_max: float,
):
    """Cluster the uncovered targets, plan to the cluster centers, smooth.

    Returns (waypoints, PlanStats).  Raises TaskComplete when nothing is
    uncovered and PlanningFailure when the planner runs out of time.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    uncovered = targets[~np.asarray(covered_mask, dtype=bool)]
    if len(uncovered) == 0:
        raise TaskComplete("task already complete: no uncovered targets")
    stats = PlanStats()
    centers = cluster_goal_centers(uncovered, grid, params, rng)
    centers = _assign_clusters(gripper_positions, centers)
    goal = make_goal_spec(centers, blacklist, params, grid, rng)
    start = FullConfig(q_r=np.concatenate(gripper_positions), band=band)
    waypoints, _tree = rrt_eb(start, goal, params, grid, rng, l_max, stats)
    waypoints = shortcut_smooth(waypoints, band, blacklist, grid, params, rng, l_max, stats)
    return waypoints, stats
