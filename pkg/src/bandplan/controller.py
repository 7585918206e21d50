"""Local controller: correspondence-driven error reduction with stretch safety.

Pipeline per control step: assign uncovered targets to their nearest object
points (navigation-function distance), accumulate desired point motions,
overlay stretching correction, solve a small weighted least-squares problem
for the best gripper motion under per-gripper speed caps, then blend in
obstacle repulsion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .simulator import DeformConfig
from .worldgrid import WorldGrid


@dataclass(frozen=True)
class ControllerParams:
    """Gains and caps. Defaults follow the simulated-trials configuration."""

    v_max_ee: float = 0.2          # servoing cap per gripper (m/step)
    v_max_obs: float = 0.2         # obstacle-avoidance speed (m/step)
    beta: float = 200.0            # repulsion blend scale (1000 for rope)
    lambda_s: float = 1.17         # max stretching factor (1.15 for rope)
    lambda_w: float = 2000.0       # stretching weight multiplier
    jacobian_decay: float = 10.0   # 1/m decay of gripper influence with geodesic
    cover_threshold: float = 0.04  # targets closer than this are covered
    gripper_radius: float = 0.02

    def __post_init__(self):
        for name in ("v_max_ee", "v_max_obs", "beta", "lambda_s", "lambda_w", "jacobian_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class Correspondences:
    """Per object point: the uncovered targets it is responsible for."""

    assignments: list                 # per point j: list of (target_id, distance)
    covered: np.ndarray               # bool per target
    unreachable: int = 0              # targets no point can reach

    @property
    def n_uncovered(self):
        return int((~self.covered).sum()) - self.unreachable

    def total_error(self):
        """Task error: sum of assignment distances of uncovered targets."""
        return float(sum(d for lst in self.assignments for _, d in lst))


@dataclass
class DesiredMotion:
    velocities: np.ndarray            # (P, 3)
    weights: np.ndarray               # (P,)

    @classmethod
    def zeros(cls, n):
        return cls(velocities=np.zeros((n, 3)), weights=np.zeros(n))


def calculate_correspondences(
    deform: DeformConfig,
    grid: WorldGrid,
    cover_threshold: float,
    fixed_map=None,
) -> Correspondences:
    """Assign each uncovered target to its navigation-nearest object point.

    ``fixed_map`` (target index -> point index) pins assignments for tasks
    where the correspondence is known in advance; covered targets are still
    excluded.  Ties go to the lowest point index.
    """
    P = deform.n_points
    dmat = grid.nav_distance_matrix(deform.points)      # (T, P)
    T = dmat.shape[0]
    assignments = [[] for _ in range(P)]
    covered = np.zeros(T, dtype=bool)
    unreachable = 0
    if fixed_map is not None:
        idx = np.asarray(fixed_map, dtype=int)
        dist = dmat[np.arange(T), idx]
    else:
        idx = np.argmin(dmat, axis=1)
        dist = dmat[np.arange(T), idx]
    for i in range(T):
        d = float(dist[i])
        if not np.isfinite(d):
            unreachable += 1
            continue
        if d <= cover_threshold:
            covered[i] = True
            continue
        assignments[int(idx[i])].append((i, d))
    return Correspondences(assignments=assignments, covered=covered, unreachable=unreachable)


def follow_navigation_function(deform: DeformConfig, corr: Correspondences, grid: WorldGrid) -> DesiredMotion:
    """Sum the per-target navigation directions on each point.

    The per-point weight is the largest distance any of its targets still has
    to travel, which smooths over grid discretization effects.
    """
    P = deform.n_points
    out = DesiredMotion.zeros(P)
    pidx = [j for j, lst in enumerate(corr.assignments) for _ in lst]
    tids = [tid for lst in corr.assignments for tid, _ in lst]
    if not pidx:
        return out
    pidx = np.asarray(pidx)
    dirs, dists = grid.nav_pair_steps(tids, deform.points[pidx])
    reachable = np.isfinite(dists)
    np.add.at(out.velocities, pidx[reachable], dirs[reachable])
    np.maximum.at(out.weights, pidx[reachable], dists[reachable])
    return out


def stretching_correction(deform: DeformConfig, params: ControllerParams) -> DesiredMotion:
    """Opposing half-velocities on every pair stretched beyond lambda_s."""
    P = deform.n_points
    out = DesiredMotion.zeros(P)
    pts = deform.points
    D = deform.rest_distances
    diff = pts[None, :, :] - pts[:, None, :]           # diff[i, j] = P_j - P_i
    E = np.linalg.norm(diff, axis=2)
    iu, ju = np.triu_indices(P, k=1)
    over = E[iu, ju] > params.lambda_s * D[iu, ju]
    if not over.any():
        return out
    ii, jj = iu[over], ju[over]
    delta = E[ii, jj] - D[ii, jj]
    unit = diff[ii, jj] / E[ii, jj][:, None]
    v = delta[:, None] * unit
    np.add.at(out.velocities, ii, 0.5 * v)
    np.add.at(out.velocities, jj, -0.5 * v)
    np.maximum.at(out.weights, ii, delta)
    np.maximum.at(out.weights, jj, delta)
    return out


def combine_terms(e: DesiredMotion, s: DesiredMotion, lambda_w: float) -> DesiredMotion:
    """Stretching correction plus the error component orthogonal to it."""
    if e.velocities.shape != s.velocities.shape:
        raise ValueError("mismatched desired-motion dimensions")
    sv = s.velocities
    ev = e.velocities
    s_norm2 = np.einsum("ij,ij->i", sv, sv)
    coeff = np.zeros(len(sv))
    nz = s_norm2 > 1e-24
    coeff[nz] = np.einsum("ij,ij->i", ev[nz], sv[nz]) / s_norm2[nz]
    proj = coeff[:, None] * sv
    return DesiredMotion(
        velocities=sv + (ev - proj),
        weights=lambda_w * s.weights + e.weights,
    )


def proximity(center, radius: float, grid: WorldGrid):
    """Distance and escape direction for a spherical gripper.

    Returns (J_p, x_dot, d_g): the point Jacobian (identity for a sphere),
    the unit direction away from the nearest obstacle, and the surface
    distance.  On a flat/ambiguous gradient the nearest single obstacle's
    analytic direction breaks the tie.
    """
    center = np.asarray(center, dtype=float)
    d_g = float(grid.sdf_at(center)) - radius
    g = grid.sdf_grad_at(center)[0]
    gn = np.linalg.norm(g)
    if gn < 1e-9 and grid.scene.obstacles:
        dists = [float(np.atleast_1d(o.distance(center[None, :]))[0]) for o in grid.scene.obstacles]
        nearest = grid.scene.obstacles[int(np.argmin(dists))]
        eps = grid.resolution / 4.0
        g = np.array([
            (nearest.distance(center + np.eye(3)[a] * eps) - nearest.distance(center - np.eye(3)[a] * eps))
            for a in range(3)
        ]).reshape(3)
        gn = np.linalg.norm(g)
    x_dot = g / gn if gn > 1e-9 else np.array([0.0, 0.0, 1.0])
    return np.eye(3), x_dot, d_g


def obstacle_repulsion(q_dot, gripper_positions, grid: WorldGrid, params: ControllerParams):
    """Blend the command with an escape velocity as obstacles get close.

    With a spherical gripper the point Jacobian is the identity, so the
    null-space projector vanishes and the blend is
    gamma * avoidance + (1 - gamma) * command per gripper.
    """
    q_dot = np.asarray(q_dot, dtype=float).reshape(2, 3).copy()
    for g in range(2):
        _, x_dot, d_g = proximity(gripper_positions[g], params.gripper_radius, grid)
        gamma = float(np.exp(-params.beta * max(d_g, 0.0)))
        avoid = x_dot * params.v_max_obs
        q_dot[g] = gamma * avoid + (1.0 - gamma) * q_dot[g]
    return q_dot.reshape(6)


def _solve_weighted_ball_ls(a, c, weights, desired, v_max, tol=1e-12, max_iters=200):
    """min sum_i w_i ||a_i x + c_i y - d_i||^2  s.t. ||x|| <= v_max, ||y|| <= v_max.

    The per-gripper Hessian blocks are isotropic (scalar times identity), so
    clamping a block's unconstrained optimum onto the ball solves that block
    exactly; alternating the two blocks converges to the global optimum of
    this convex problem.
    """
    w = np.asarray(weights, dtype=float)
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    d = np.asarray(desired, dtype=float).reshape(-1, 3)
    waa = float(np.sum(w * a * a))
    wcc = float(np.sum(w * c * c))
    wac = float(np.sum(w * a * c))
    wad = np.sum((w * a)[:, None] * d, axis=0)
    wcd = np.sum((w * c)[:, None] * d, axis=0)
    if waa + wcc <= 0.0:
        return np.zeros(6)

    def solve_x(y):
        if waa <= 0.0:
            return np.zeros(3)
        x = (wad - wac * y) / waa
        n = np.linalg.norm(x)
        return x * (v_max / n) if n > v_max else x

    def solve_y(x):
        if wcc <= 0.0:
            return np.zeros(3)
        y = (wcd - wac * x) / wcc
        n = np.linalg.norm(y)
        return y * (v_max / n) if n > v_max else y

    x = np.zeros(3)
    y = np.zeros(3)
    for _ in range(max_iters):
        x_new = solve_x(y)
        y_new = solve_y(x_new)
        change = max(np.linalg.norm(x_new - x), np.linalg.norm(y_new - y))
        x, y = x_new, y_new
        if change < tol * max(v_max, 1.0):
            break
    return np.concatenate([x, y])


def find_best_robot_motion(deform: DeformConfig, desired: DesiredMotion, params: ControllerParams):
    """Best 6-DOF gripper motion for a desired weighted point motion.

    The object Jacobian uses diminishing rigidity: gripper g moves point i
    with gain exp(-k * geodesic(i, g)) in each axis.
    """
    if not np.any(desired.weights > 0):
        return np.zeros(6)
    geo = deform.gripper_geodesics()
    a = np.exp(-params.jacobian_decay * geo[0])
    c = np.exp(-params.jacobian_decay * geo[1])
    return _solve_weighted_ball_ls(a, c, desired.weights, desired.velocities, params.v_max_ee)


def local_controller(
    deform: DeformConfig,
    grid: WorldGrid,
    params: ControllerParams,
    fixed_map=None,
    corr: Correspondences = None,
):
    """One full control step; returns the 6-DOF gripper command."""
    if corr is None:
        corr = calculate_correspondences(deform, grid, params.cover_threshold, fixed_map)
    e = follow_navigation_function(deform, corr, grid)
    s = stretching_correction(deform, params)
    d = combine_terms(e, s, params.lambda_w)
    q_dot = find_best_robot_motion(deform, d, params)
    if not q_dot.any():
        return q_dot  # nothing to do; no motion to steer clear of obstacles
    g0, g1 = deform.gripper_positions()
    return obstacle_repulsion(q_dot, (g0, g1), grid, params)
