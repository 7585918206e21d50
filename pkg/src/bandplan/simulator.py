"""Quasi-static rope/cloth simulator (position-based constraint projection).

Stands in for an external physics engine: the rest of the framework treats it
as a black box that executes gripper commands and reports node positions.
Rope is a point chain, cloth a triangle-mesh grid; grippers rigidly own their
grasped nodes.  No gravity, friction, or bending: edges hold their rest
lengths, a stretch cap bounds edge elongation, and nodes stay clear of the
signed distance field.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _graph_dijkstra

from .worldgrid import WorldGrid


class ModelError(ValueError):
    """Deformable object description is inconsistent (disconnected mesh, ...)."""


@dataclass
class DeformConfig:
    """Tracked points of the object plus rest geometry and grasp assignment."""

    points: np.ndarray            # (P, 3) current positions
    rest_distances: np.ndarray    # (P, P) pairwise Euclidean distances, relaxed state
    edges: np.ndarray             # (E, 2) rest-connectivity mesh edges
    edge_rest: np.ndarray         # (E,) rest lengths
    grasped: tuple                # two disjoint, non-empty index tuples
    kind: str                     # "rope" | "cloth"
    flat_points: np.ndarray = None  # relaxed layout (defaults to initial points)
    _gripper_geo: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        P = len(self.points)
        D = np.asarray(self.rest_distances, dtype=float)
        if D.shape != (P, P) or not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
            raise ModelError("rest_distances must be symmetric with zero diagonal")
        g0, g1 = self.grasped
        if not g0 or not g1 or set(g0) & set(g1):
            raise ModelError("grasped sets must be non-empty and disjoint")
        if self.flat_points is None:
            self.flat_points = self.points.copy()

    @property
    def n_points(self):
        return len(self.points)

    def with_points(self, points) -> "DeformConfig":
        out = replace(self, points=np.asarray(points, dtype=float))
        out._gripper_geo = self._gripper_geo
        return out

    def gripper_positions(self):
        g0, g1 = self.grasped
        return self.points[list(g0)].mean(axis=0), self.points[list(g1)].mean(axis=0)

    # -- rest-connectivity graph ------------------------------------------

    def _edge_graph(self):
        P = self.n_points
        e = self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        w = np.concatenate([self.edge_rest, self.edge_rest])
        return csr_matrix((w, (rows, cols)), shape=(P, P))

    def gripper_geodesics(self) -> np.ndarray:
        """(2, P) graph distances from each grasped set to every node."""
        if self._gripper_geo is None:
            graph = self._edge_graph()
            out = np.empty((2, self.n_points))
            for g, nodes in enumerate(self.grasped):
                d = _graph_dijkstra(graph, directed=False, indices=list(nodes), min_only=True)
                out[g] = d
            if not np.all(np.isfinite(out)):
                raise ModelError("mesh graph is disconnected")
            self._gripper_geo = out
        return self._gripper_geo

    def geodesic_chain(self) -> np.ndarray:
        """Node index chain of the shortest rest-graph path between the grasps."""
        graph = self._edge_graph()
        g0, g1 = self.grasped
        dist, pred = _graph_dijkstra(
            graph, directed=False, indices=list(g0), return_predecessors=True
        )
        flat = dist[:, list(g1)]
        if not np.isfinite(flat).any():
            raise ModelError("grasped nodes are disconnected in the mesh graph")
        src_i, dst_i = np.unravel_index(np.argmin(flat), flat.shape)
        node = list(g1)[dst_i]
        chain = [node]
        p = pred[src_i]
        while p[node] >= 0:
            node = p[node]
            chain.append(node)
        return np.asarray(chain[::-1])


def geodesic_between_grippers(deform: DeformConfig) -> float:
    """Shortest rest-graph path length between the two grasped node sets."""
    g0, g1 = deform.grasped
    if set(g0) & set(g1) or any(n in g1 for n in g0):
        return 0.0
    graph = deform._edge_graph()
    d = _graph_dijkstra(graph, directed=False, indices=list(g0), min_only=True)
    val = float(np.min(d[list(g1)]))
    if not np.isfinite(val):
        raise ModelError("grasped nodes are disconnected in the mesh graph")
    return val


# ---------------------------------------------------------------------------
# Object factories
# ---------------------------------------------------------------------------

def make_rope(n_nodes: int, length: float, start, direction, grasped=None) -> DeformConfig:
    """Straight relaxed rope of n_nodes spanning `length` from `start`."""
    start = np.asarray(start, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    ts = np.linspace(0.0, length, n_nodes)
    pts = start[None, :] + ts[:, None] * d[None, :]
    edges = np.stack([np.arange(n_nodes - 1), np.arange(1, n_nodes)], axis=1)
    rest = np.full(n_nodes - 1, length / (n_nodes - 1))
    D = np.abs(ts[:, None] - ts[None, :])
    if grasped is None:
        grasped = ((0,), (n_nodes - 1,))
    return DeformConfig(
        points=pts, rest_distances=D, edges=edges, edge_rest=rest,
        grasped=tuple(tuple(g) for g in grasped), kind="rope",
    )


def make_cloth(nx: int, ny: int, size, origin, axis_u, axis_v, grasped) -> DeformConfig:
    """Flat cloth grid of nx*ny nodes spanning size=(su, sv) along two axes.

    Edges are the structural grid links plus shear diagonals (diagonals keep
    the net from collapsing in plane; they do not shorten axis-aligned
    geodesics).
    """
    su, sv = size
    origin = np.asarray(origin, dtype=float)
    u = np.asarray(axis_u, dtype=float)
    v = np.asarray(axis_v, dtype=float)
    u = u / np.linalg.norm(u)
    v = v / np.linalg.norm(v)
    iu, iv = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    du = su / (nx - 1)
    dv = sv / (ny - 1)
    pts = origin[None, :] + (iu.reshape(-1, 1) * du) * u[None, :] + (iv.reshape(-1, 1) * dv) * v[None, :]

    def nid(i, j):
        return i * ny + j

    edges = []
    for i in range(nx):
        for j in range(ny):
            if i + 1 < nx:
                edges.append((nid(i, j), nid(i + 1, j)))
            if j + 1 < ny:
                edges.append((nid(i, j), nid(i, j + 1)))
            if i + 1 < nx and j + 1 < ny:
                edges.append((nid(i, j), nid(i + 1, j + 1)))
                edges.append((nid(i + 1, j), nid(i, j + 1)))
    edges = np.asarray(edges)
    edge_rest = np.linalg.norm(pts[edges[:, 0]] - pts[edges[:, 1]], axis=1)
    D = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    return DeformConfig(
        points=pts, rest_distances=D, edges=edges, edge_rest=edge_rest,
        grasped=tuple(tuple(g) for g in grasped), kind="cloth",
    )


# ---------------------------------------------------------------------------
# Stepping
# ---------------------------------------------------------------------------

@dataclass
class SimState:
    """Simulator snapshot: object plus solver parameters and diagnostics."""

    deform: DeformConfig
    stretch_limit: float = 1.15          # lambda_s edge-elongation cap
    iterations: int = 10                 # constraint sweeps per block (4 rope / 10 cloth)
    settle_tol: float = 1e-4
    node_clearance: float = 0.01
    max_substep: float = 0.01            # gripper displacement per substep
    clipped: bool = False                # last command hit an obstacle
    max_stretch_ratio: float = 1.0

    @property
    def gripper_positions(self):
        return self.deform.gripper_positions()

    def command_vector(self):
        g0, g1 = self.gripper_positions
        return np.concatenate([g0, g1])


def make_state(deform: DeformConfig, grid_resolution: float, stretch_limit: float) -> SimState:
    iters = 4 if deform.kind == "rope" else 10
    return SimState(
        deform=deform,
        stretch_limit=stretch_limit,
        iterations=iters,
        node_clearance=grid_resolution / 2.0,
        max_substep=grid_resolution / 2.0,
    )


def sense_points(state: SimState) -> DeformConfig:
    """Perfect sensing: the current configuration, exactly."""
    return state.deform


def _project_constraints(pts, free_mask, edges, rest, anchors, anchor_caps, grid, clearance, sweeps, settle_tol):
    """Constraint projection sweep block; returns final-sweep max displacement.

    Per sweep: edge distance constraints (Jacobi, averaged), long-range
    attachment caps from each gripper anchor (these carry gross motion down
    the object in one pass instead of one edge per sweep), then collision.
    """
    e0 = edges[:, 0]
    e1 = edges[:, 1]
    w0 = free_mask[e0].astype(float)
    w1 = free_mask[e1].astype(float)
    wsum = w0 + w1
    active = wsum > 0
    inv = np.zeros_like(wsum)
    inv[active] = 1.0 / wsum[active]
    counts = np.zeros(len(pts))
    np.add.at(counts, e0, 1.0)
    np.add.at(counts, e1, 1.0)
    counts[counts == 0] = 1.0
    last_disp = np.inf
    for _ in range(sweeps):
        before = pts.copy()
        d = pts[e1] - pts[e0]
        lengths = np.maximum(np.linalg.norm(d, axis=1), 1e-12)
        # Distance constraints drive every edge to its rest length (this
        # subsumes the lambda_s stretch cap, since rest < cap); compressed
        # edges push back out so the net holds its shape.
        corr = (lengths - rest) / lengths
        shift = d * corr[:, None] * inv[:, None]
        delta = np.zeros_like(pts)
        np.add.at(delta, e0, shift * w0[:, None])
        np.add.at(delta, e1, -shift * w1[:, None])
        pts += delta / counts[:, None]
        # Long-range attachments: a node may not sit farther from a gripper
        # than its rest geodesic distance to that gripper.
        for anchor, caps in zip(anchors, anchor_caps):
            rel = pts - anchor[None, :]
            dist = np.maximum(np.linalg.norm(rel, axis=1), 1e-12)
            over = (dist > caps) & free_mask
            if over.any():
                pts[over] -= rel[over] / dist[over, None] * (dist[over] - caps[over])[:, None]
        # Collision: push free nodes out to the clearance shell.
        sd = grid.sdf_at(pts)
        bad = (sd < clearance) & free_mask
        if bad.any():
            g = grid.sdf_grad_at(pts[bad])
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            gn[gn < 1e-9] = 1.0
            pts[bad] += g / gn * (clearance - sd[bad])[:, None]
        last_disp = float(np.max(np.linalg.norm((pts - before)[free_mask], axis=1))) if free_mask.any() else 0.0
        if last_disp < settle_tol:
            break
    return last_disp


def step(state: SimState, gripper_cmd, grid: WorldGrid) -> SimState:
    """Advance one quasi-static step under a 6-DOF gripper command.

    Grasped nodes follow the grippers (clipped if the command would embed a
    gripper in an obstacle); remaining nodes relax through distance, stretch
    and collision constraints until quiescent.  Pure function of its inputs.
    """
    cmd = np.asarray(gripper_cmd, dtype=float).reshape(2, 3)
    deform = state.deform
    pts = deform.points.copy()
    g0, g1 = deform.grasped
    free_mask = np.ones(len(pts), dtype=bool)
    free_mask[list(g0)] = False
    free_mask[list(g1)] = False

    clipped = False
    gpos = np.stack(deform.gripper_positions())
    targets = gpos + cmd
    for g in range(2):
        if grid.sdf_at(targets[g]) < state.node_clearance:
            fixed = grid.project_out_of_collision(targets[g], state.node_clearance)
            clipped = clipped or bool(np.linalg.norm(fixed - targets[g]) > 1e-12)
            targets[g] = fixed
    moves = targets - gpos

    geo = deform.gripper_geodesics()
    grasp_lists = (list(g0), list(g1))
    n_sub = max(int(np.ceil(np.max(np.linalg.norm(moves, axis=1)) / state.max_substep)), 1)
    for s in range(n_sub):
        for g in range(2):
            pts[grasp_lists[g]] += moves[g] / n_sub
        # Quasi-static prediction: advect free nodes with the mean gripper
        # motion, then let the constraints resolve the residual.  Collision
        # projection undoes the advection wherever an obstacle blocks it.
        mean_move = moves.mean(axis=0) / n_sub
        pts[free_mask] += mean_move
        anchors = [pts[grasp_lists[g]].mean(axis=0) for g in range(2)]
        _project_constraints(
            pts, free_mask, deform.edges, deform.edge_rest, anchors, geo,
            grid, state.node_clearance, state.iterations, state.settle_tol,
        )
    # Extra sweeps until quiescent (bounded).
    anchors = [pts[grasp_lists[g]].mean(axis=0) for g in range(2)]
    for _ in range(100):
        disp = _project_constraints(
            pts, free_mask, deform.edges, deform.edge_rest, anchors, geo,
            grid, state.node_clearance, state.iterations, state.settle_tol / 2.0,
        )
        if disp < state.settle_tol / 2.0:
            break

    lengths = np.linalg.norm(pts[deform.edges[:, 1]] - pts[deform.edges[:, 0]], axis=1)
    ratio = float(np.max(lengths / deform.edge_rest))
    return replace(
        state,
        deform=deform.with_points(pts),
        clipped=clipped,
        max_stretch_ratio=ratio,
    )
