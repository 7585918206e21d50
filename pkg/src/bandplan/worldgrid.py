"""Voxelized world model: occupancy, signed distance, and per-target navigation fields.

The grid is built once per scene and is read-only afterwards.  All spatial
queries (distance, gradient, navigation direction) interpolate or look up
precomputed arrays, so they are cheap enough to sit inside control and
planning inner loops.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _csgraph_dijkstra


class ConfigurationError(ValueError):
    """Scene or query is malformed (wrong bounds, degenerate resolution, ...)."""


class UnreachableError(RuntimeError):
    """A navigation query landed on a voxel with no path to the target."""


# ---------------------------------------------------------------------------
# Scene description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box obstacle. ``extents`` are full edge lengths (m)."""

    center: tuple
    extents: tuple

    def contains(self, pts):
        c = np.asarray(self.center)
        h = np.asarray(self.extents) / 2.0
        return np.all(np.abs(pts - c) <= h, axis=-1)

    def distance(self, pts):
        """Exact Euclidean distance from points to the box surface (negative inside)."""
        c = np.asarray(self.center)
        h = np.asarray(self.extents) / 2.0
        d = np.abs(pts - c) - h
        outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
        inside = np.minimum(np.max(d, axis=-1), 0.0)
        return outside + inside

    def to_json(self):
        return {"type": "box", "center": list(self.center), "extents": list(self.extents)}


@dataclass(frozen=True)
class Cylinder:
    """Z-aligned cylinder obstacle. ``height`` is the full height (m)."""

    center: tuple
    radius: float
    height: float

    def contains(self, pts):
        c = np.asarray(self.center)
        r_xy = np.linalg.norm(pts[..., :2] - c[:2], axis=-1)
        dz = np.abs(pts[..., 2] - c[2])
        return (r_xy <= self.radius) & (dz <= self.height / 2.0)

    def distance(self, pts):
        c = np.asarray(self.center)
        dr = np.linalg.norm(pts[..., :2] - c[:2], axis=-1) - self.radius
        dz = np.abs(pts[..., 2] - c[2]) - self.height / 2.0
        outside = np.sqrt(np.maximum(dr, 0.0) ** 2 + np.maximum(dz, 0.0) ** 2)
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def to_json(self):
        return {
            "type": "cylinder",
            "center": list(self.center),
            "radius": self.radius,
            "height": self.height,
        }


@dataclass(frozen=True)
class Scene:
    """Static environment: obstacles plus a bounded axis-aligned workspace."""

    lower: tuple
    upper: tuple
    resolution: float
    obstacles: tuple = ()

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if self.resolution <= 0:
            raise ConfigurationError("resolution must be positive")
        if not np.all(hi > lo):
            raise ConfigurationError("workspace bounds must have positive volume")
        if np.any(hi - lo < self.resolution):
            raise ConfigurationError("workspace too small to contain a single voxel")

    @property
    def bounds(self):
        return np.asarray(self.lower, dtype=float), np.asarray(self.upper, dtype=float)

    @property
    def diagonal(self):
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    def content_hash(self):
        """Stable hash of the scene geometry, used as the grid cache key."""
        payload = {
            "lower": list(self.lower),
            "upper": list(self.upper),
            "resolution": self.resolution,
            "obstacles": [o.to_json() for o in self.obstacles],
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def obstacle_from_json(spec: dict):
    kind = spec.get("type")
    if kind == "box":
        return Box(center=tuple(spec["center"]), extents=tuple(spec["extents"]))
    if kind == "cylinder":
        return Cylinder(center=tuple(spec["center"]), radius=spec["radius"], height=spec["height"])
    raise ConfigurationError(f"unknown obstacle type {kind!r}")


# 26-connected neighbourhood offsets, ordered so that ties resolve to the
# lowest linear voxel index (offsets sorted lexicographically).
_OFFSETS = np.array(
    [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1) if (i, j, k) != (0, 0, 0)],
    dtype=np.int8,
)
_OFFSET_NORMS = np.linalg.norm(_OFFSETS.astype(float), axis=1)


@dataclass
class NavField:
    """Dijkstra distance-to-go plus a next-step offset index per voxel."""

    target: np.ndarray          # target point (3,)
    target_voxel: tuple
    dist: np.ndarray            # (nx, ny, nz) float32, +inf where unreachable/occupied
    next_step: np.ndarray       # (nx, ny, nz) int8 index into _OFFSETS, -1 at target/unreachable


@dataclass
class NavQuery:
    point: np.ndarray
    target_id: int


class WorldGrid:
    """Immutable voxel world: occupancy, signed distance, navigation fields.

    Do not mutate after ``register_targets``; the grid is shared read-only
    between workers.
    """

    def __init__(self, scene: Scene):
        self.scene = scene
        self.resolution = scene.resolution
        lo, hi = scene.bounds
        self.origin = lo
        shape = np.maximum(np.floor((hi - lo) / scene.resolution).astype(int), 1)
        self.shape = tuple(int(v) for v in shape)
        self.nav_fields: list[NavField] = []
        self._sdf_clamp = float(np.max(hi - lo))

        centers = [lo[a] + (np.arange(shape[a]) + 0.5) * scene.resolution for a in range(3)]
        gx, gy, gz = np.meshgrid(*centers, indexing="ij")
        pts = np.stack([gx, gy, gz], axis=-1)

        occ = np.zeros(self.shape, dtype=bool)
        for obs in scene.obstacles:
            occ |= obs.contains(pts)
        self.occupancy = occ

        res = scene.resolution
        if occ.any():
            d_out = ndimage.distance_transform_edt(~occ, sampling=res)
            d_in = ndimage.distance_transform_edt(occ, sampling=res)
            sdf = np.where(occ, -d_in, d_out)
        else:
            sdf = np.full(self.shape, self._sdf_clamp)
        self.sdf = np.minimum(sdf, self._sdf_clamp).astype(np.float64)

        # Nearest free voxel for occupied queries (identity on free voxels).
        if occ.any():
            _, idx = ndimage.distance_transform_edt(occ, sampling=res, return_indices=True)
            self._nearest_free = idx.astype(np.int32)
        else:
            self._nearest_free = None

        self._grad = np.stack(np.gradient(self.sdf, res), axis=0)
        self._setup_interp()
        self._free_graph = None       # lazily built for target registration

    def _setup_interp(self):
        self._sdf_flat = np.ascontiguousarray(self.sdf.ravel())
        self._grad_flat = [np.ascontiguousarray(g.ravel()) for g in self._grad]
        nx, ny, nz = self.shape
        self._inv_res = 1.0 / self.resolution
        self._f_hi = np.maximum(np.asarray(self.shape, dtype=float) - 1.0 - 1e-9, 0.0)
        self._strides = np.array([ny * nz, nz, 1], dtype=np.intp)
        ex = self._strides[0] if nx > 1 else 0
        ey = self._strides[1] if ny > 1 else 0
        ez = self._strides[2] if nz > 1 else 0
        self._corner_offsets = np.array(
            [dx * ex + dy * ey + dz * ez for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)],
            dtype=np.intp,
        )

    # -- coordinate helpers -------------------------------------------------

    def voxel_of(self, pts):
        """Voxel index triple(s) for world point(s), clipped to the grid."""
        pts = np.asarray(pts, dtype=float)
        ijk = np.floor((pts - self.origin) / self.resolution).astype(int)
        return np.clip(ijk, 0, np.asarray(self.shape) - 1)

    def voxel_center(self, ijk):
        return self.origin + (np.asarray(ijk, dtype=float) + 0.5) * self.resolution

    def free_voxel_of(self, pts):
        """Like ``voxel_of`` but occupied voxels project to the nearest free voxel."""
        ijk = self.voxel_of(pts)
        if self._nearest_free is None:
            return ijk
        single = ijk.ndim == 1
        ijk2 = ijk.reshape(-1, 3)
        occ = self.occupancy[ijk2[:, 0], ijk2[:, 1], ijk2[:, 2]]
        if occ.any():
            sub = ijk2[occ]
            proj = self._nearest_free[:, sub[:, 0], sub[:, 1], sub[:, 2]].T
            ijk2 = ijk2.copy()
            ijk2[occ] = proj
        return ijk2[0] if single else ijk2

    def _frac_coords(self, pts):
        # Fractional array coordinates for trilinear sampling at voxel centers.
        pts = np.asarray(pts, dtype=float)
        return (pts - self.origin) / self.resolution - 0.5

    # -- distance queries ---------------------------------------------------

    def _trilinear_setup(self, pts):
        """Shared corner indices and weights for trilinear sampling."""
        pts = np.atleast_2d(pts)
        n = len(pts)
        f = (pts - self.origin) * self._inv_res
        f -= 0.5
        np.clip(f, 0.0, self._f_hi, out=f)
        i0 = f.astype(np.intp)
        t = f - i0
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        ux, uy, uz = 1.0 - tx, 1.0 - ty, 1.0 - tz
        w = np.empty((n, 8))
        w[:, 0] = ux * uy * uz
        w[:, 1] = ux * uy * tz
        w[:, 2] = ux * ty * uz
        w[:, 3] = ux * ty * tz
        w[:, 4] = tx * uy * uz
        w[:, 5] = tx * uy * tz
        w[:, 6] = tx * ty * uz
        w[:, 7] = tx * ty * tz
        base = i0 @ self._strides
        flat = base[:, None] + self._corner_offsets[None, :]
        return flat, w

    def _gather(self, grid_flat, flat_idx, w):
        return np.einsum("ij,ij->i", grid_flat[flat_idx], w)

    def sdf_at(self, pts):
        """Trilinearly interpolated signed distance at world point(s)."""
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        flat, w = self._trilinear_setup(pts)
        vals = self._gather(self._sdf_flat, flat, w)
        return float(vals[0]) if single else vals

    def sdf_grad_at(self, pts):
        """Interpolated SDF gradient (not normalized). Shape (..., 3)."""
        flat, w = self._trilinear_setup(pts)
        return np.stack([self._gather(g, flat, w) for g in self._grad_flat], axis=-1)

    def sdf_and_grad_at(self, pts):
        """Fused signed distance + gradient query sharing one interpolation."""
        flat, w = self._trilinear_setup(pts)
        s = self._gather(self._sdf_flat, flat, w)
        g = np.stack([self._gather(gf, flat, w) for gf in self._grad_flat], axis=-1)
        return s, g

    def occupied_at(self, pts):
        ijk = self.voxel_of(np.atleast_2d(pts))
        return self.occupancy[ijk[:, 0], ijk[:, 1], ijk[:, 2]]

    # -- construction of navigation fields ----------------------------------

    def _build_free_graph(self):
        """CSR adjacency of the free-voxel graph (26-connectivity, Euclidean weights)."""
        nx, ny, nz = self.shape
        n = nx * ny * nz
        free = ~self.occupancy.ravel()
        rows, cols, data = [], [], []
        idx = np.arange(n).reshape(self.shape)
        res = self.resolution
        for off, norm in zip(_OFFSETS, _OFFSET_NORMS):
            di, dj, dk = (int(v) for v in off)
            src = idx[
                max(0, -di): nx - max(0, di),
                max(0, -dj): ny - max(0, dj),
                max(0, -dk): nz - max(0, dk),
            ].ravel()
            dst = src + (di * ny * nz + dj * nz + dk)
            ok = free[src] & free[dst]
            rows.append(src[ok])
            cols.append(dst[ok])
            data.append(np.full(int(ok.sum()), norm * res))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        data = np.concatenate(data)
        return csr_matrix((data, (rows, cols)), shape=(n, n))

    def register_targets(self, targets) -> "WorldGrid":
        """Attach one Dijkstra navigation field per target point.

        Targets inside obstacles are projected to the nearest free voxel with
        a warning.  Returns self for chaining.
        """
        targets = np.atleast_2d(np.asarray(targets, dtype=float))
        lo, hi = self.scene.bounds
        if np.any(targets < lo) or np.any(targets > hi):
            raise ConfigurationError("target outside workspace bounds")
        if self._free_graph is None:
            self._free_graph = self._build_free_graph()
        nx, ny, nz = self.shape

        tvox = []
        for t in targets:
            ijk = self.voxel_of(t)
            if self.occupancy[tuple(ijk)]:
                warnings.warn("target inside obstacle; projected to nearest free voxel")
                ijk = self.free_voxel_of(t)
            tvox.append(ijk)
        tvox = np.asarray(tvox)
        tlin = tvox[:, 0] * ny * nz + tvox[:, 1] * nz + tvox[:, 2]

        dist_flat = _csgraph_dijkstra(self._free_graph, directed=False, indices=tlin)
        dist_flat[:, self.occupancy.ravel()] = np.inf

        fields = []
        for k, t in enumerate(targets):
            dist = dist_flat[k].reshape(self.shape).astype(np.float32)
            fields.append(
                NavField(
                    target=t,
                    target_voxel=tuple(int(v) for v in tvox[k]),
                    dist=dist,
                    next_step=self._derive_next_steps(dist),
                )
            )
        self.nav_fields = fields
        return self

    def _derive_next_steps(self, dist):
        """Greedy-descent step index per voxel; ties go to the lowest voxel index."""
        best_val = np.full(self.shape, np.inf, dtype=np.float64)
        best_idx = np.full(self.shape, -1, dtype=np.int8)
        nx, ny, nz = self.shape
        res = self.resolution
        d64 = dist.astype(np.float64)
        # Offsets are visited in lexicographic order, and strict '<' keeps the
        # first (lowest-linear-index) winner on exact ties.
        for oi, (off, norm) in enumerate(zip(_OFFSETS, _OFFSET_NORMS)):
            di, dj, dk = (int(v) for v in off)
            ssrc = (
                slice(max(0, -di), nx - max(0, di)),
                slice(max(0, -dj), ny - max(0, dj)),
                slice(max(0, -dk), nz - max(0, dk)),
            )
            sdst = (
                slice(max(0, di), nx - max(0, -di)),
                slice(max(0, dj), ny - max(0, -dj)),
                slice(max(0, dk), nz - max(0, -dk)),
            )
            cand = d64[sdst] + norm * res
            better = cand < best_val[ssrc] - 1e-12
            best_val[ssrc][better] = cand[better]
            best_idx[ssrc][better] = oi
        # Only keep steps that are consistent with the Dijkstra distances:
        # descending a valid field means dist[next] < dist[here].
        reachable = np.isfinite(d64)
        best_idx[~reachable] = -1
        at_target = reachable & (d64 <= 0.0)
        best_idx[at_target] = -1
        return best_idx

    # -- navigation queries --------------------------------------------------

    def nav_next_step(self, query: NavQuery):
        """Unit direction along the Dijkstra field plus remaining distance.

        Occupied query voxels are first projected to the nearest free voxel.
        Raises UnreachableError when the voxel has no path to the target.
        """
        field = self.nav_fields[query.target_id]
        ijk = self.free_voxel_of(query.point)
        d = float(field.dist[tuple(ijk)])
        if not np.isfinite(d):
            raise UnreachableError(f"voxel {tuple(ijk)} cannot reach target {query.target_id}")
        oi = int(field.next_step[tuple(ijk)])
        if oi < 0:
            return np.zeros(3), 0.0
        off = _OFFSETS[oi].astype(float)
        return off / np.linalg.norm(off), d

    def nav_distance(self, target_id: int, pts):
        """Dijkstra distance-to-go at point(s); +inf when unreachable."""
        field = self.nav_fields[target_id]
        ijk = self.free_voxel_of(np.atleast_2d(pts))
        return field.dist[ijk[:, 0], ijk[:, 1], ijk[:, 2]].astype(float)

    def nav_distance_matrix(self, pts):
        """(T, N) matrix of Dijkstra distances from every target to every point."""
        pts = np.atleast_2d(pts)
        ijk = self.free_voxel_of(pts)
        out = np.empty((len(self.nav_fields), len(pts)))
        for k, f in enumerate(self.nav_fields):
            out[k] = f.dist[ijk[:, 0], ijk[:, 1], ijk[:, 2]]
        return out

    def nav_step_batch(self, target_id: int, pts):
        """Vectorized ``nav_next_step`` over many points.

        Returns (directions (N,3) unit or zero, distances (N,), reachable (N,) bool).
        """
        field = self.nav_fields[target_id]
        ijk = self.free_voxel_of(np.atleast_2d(pts))
        d = field.dist[ijk[:, 0], ijk[:, 1], ijk[:, 2]].astype(float)
        oi = field.next_step[ijk[:, 0], ijk[:, 1], ijk[:, 2]].astype(int)
        reachable = np.isfinite(d)
        dirs = np.zeros((len(ijk), 3))
        has_step = (oi >= 0) & reachable
        if has_step.any():
            offs = _OFFSETS[oi[has_step]].astype(float)
            dirs[has_step] = offs / np.linalg.norm(offs, axis=1, keepdims=True)
        d[~reachable] = np.inf
        return dirs, d, reachable

    def nav_pair_steps(self, target_ids, pts):
        """Per (target, point) pair: unit step direction and distance-to-go.

        Vectorizes the voxel projection once; unreachable pairs come back
        with a zero direction and +inf distance.
        """
        pts = np.atleast_2d(pts)
        target_ids = np.asarray(target_ids, dtype=int)
        ijk = self.free_voxel_of(pts)
        dirs = np.zeros((len(pts), 3))
        dists = np.full(len(pts), np.inf)
        for tid in np.unique(target_ids):
            rows = np.flatnonzero(target_ids == tid)
            f = self.nav_fields[tid]
            sub = ijk[rows]
            d = f.dist[sub[:, 0], sub[:, 1], sub[:, 2]].astype(float)
            oi = f.next_step[sub[:, 0], sub[:, 1], sub[:, 2]].astype(int)
            ok = np.isfinite(d)
            dists[rows[ok]] = d[ok]
            has = ok & (oi >= 0)
            if has.any():
                offs = _OFFSETS[oi[has]].astype(float)
                dirs[rows[has]] = offs / np.linalg.norm(offs, axis=1, keepdims=True)
        return dirs, dists

    # -- geometric utility queries -------------------------------------------

    def project_out_of_collision(self, p, clearance: float):
        """Move ``p`` along the interpolated SDF gradient until sdf >= clearance.

        Identity when the point is already clear.  Raises ConfigurationError
        when the workspace cannot provide the requested clearance.
        """
        if clearance < 0:
            raise ConfigurationError("clearance must be non-negative")
        p = np.asarray(p, dtype=float).copy()
        lo, hi = self.scene.bounds
        step = self.resolution / 2.0
        for _ in range(4 * int(max(self.shape))):
            d = float(self.sdf_at(p))
            if d >= clearance:
                return p
            g = self.sdf_grad_at(p)[0]
            gn = np.linalg.norm(g)
            if gn < 1e-9:
                # Flat/ambiguous gradient (deep inside or medial axis): hop to
                # the nearest free voxel center and continue from there.
                p = self.voxel_center(self.free_voxel_of(p))
            else:
                p = p + g / gn * max(step, clearance - d)
            p = np.clip(p, lo + 1e-9, hi - 1e-9)
        if float(self.sdf_at(p)) >= clearance:
            return p
        raise ConfigurationError("workspace saturated: no point achieves requested clearance")

    def segment_collision_free(self, a, b, radius: float) -> bool:
        """True iff sdf >= radius at samples spaced <= resolution/2 along [a, b]."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        length = np.linalg.norm(b - a)
        n = max(int(np.ceil(length / (self.resolution / 2.0))), 1)
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = a[None, :] + ts[:, None] * (b - a)[None, :]
        return bool(np.all(self.sdf_at(pts) >= radius))

    def segments_collision_free(self, starts, ends, radius: float):
        """Vectorized rung check: one bool per (start, end) pair."""
        starts = np.atleast_2d(starts)
        ends = np.atleast_2d(ends)
        lengths = np.linalg.norm(ends - starts, axis=1)
        n = max(int(np.ceil(lengths.max() / (self.resolution / 2.0))), 1) if len(lengths) else 1
        ts = np.linspace(0.0, 1.0, n + 1)
        pts = starts[:, None, :] + ts[None, :, None] * (ends - starts)[:, None, :]
        vals = self.sdf_at(pts.reshape(-1, 3)).reshape(len(starts), n + 1)
        return np.all(vals >= radius, axis=1)


# ---------------------------------------------------------------------------
# Construction and caching
# ---------------------------------------------------------------------------

def build_grid(scene: Scene) -> WorldGrid:
    """Rasterize a scene into a WorldGrid (no navigation fields yet)."""
    return WorldGrid(scene)


def register_targets(grid: WorldGrid, targets) -> WorldGrid:
    return grid.register_targets(targets)


_CACHE_VERSION = 1


def build_grid_cached(scene: Scene, targets=None, cache_dir=None) -> WorldGrid:
    """Build (or load from a binary sidecar cache) a grid with nav fields.

    The cache key hashes the scene geometry plus the target set; the format is
    internal and versioned.
    """
    targets = np.atleast_2d(np.asarray(targets, dtype=float)) if targets is not None else None
    if cache_dir is None:
        grid = build_grid(scene)
        if targets is not None:
            grid.register_targets(targets)
        return grid

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tkey = hashlib.sha256(targets.tobytes()).hexdigest()[:12] if targets is not None else "none"
    path = cache_dir / f"grid_v{_CACHE_VERSION}_{scene.content_hash()}_{tkey}.npz"
    if path.exists():
        try:
            return _load_grid(scene, path)
        except Exception:
            path.unlink(missing_ok=True)
    grid = build_grid(scene)
    if targets is not None:
        grid.register_targets(targets)
    _save_grid(grid, path)
    return grid


def _save_grid(grid: WorldGrid, path: Path):
    payload = {
        "occupancy": grid.occupancy,
        "sdf": grid.sdf,
        "n_fields": np.array(len(grid.nav_fields)),
    }
    for k, f in enumerate(grid.nav_fields):
        payload[f"t{k}_target"] = f.target
        payload[f"t{k}_voxel"] = np.asarray(f.target_voxel)
        payload[f"t{k}_dist"] = f.dist
        payload[f"t{k}_next"] = f.next_step
    tmp = path.with_suffix(".tmp.npz")
    np.savez_compressed(tmp, **payload)
    tmp.replace(path)


def _load_grid(scene: Scene, path: Path) -> WorldGrid:
    grid = WorldGrid.__new__(WorldGrid)
    grid.scene = scene
    grid.resolution = scene.resolution
    lo, hi = scene.bounds
    grid.origin = lo
    with np.load(path) as z:
        grid.occupancy = z["occupancy"]
        grid.sdf = z["sdf"]
        grid.shape = grid.occupancy.shape
        grid._sdf_clamp = float(np.max(hi - lo))
        fields = []
        for k in range(int(z["n_fields"])):
            fields.append(
                NavField(
                    target=z[f"t{k}_target"],
                    target_voxel=tuple(int(v) for v in z[f"t{k}_voxel"]),
                    dist=z[f"t{k}_dist"],
                    next_step=z[f"t{k}_next"],
                )
            )
    grid.nav_fields = fields
    if grid.occupancy.any():
        _, idx = ndimage.distance_transform_edt(
            grid.occupancy, sampling=scene.resolution, return_indices=True
        )
        grid._nearest_free = idx.astype(np.int32)
    else:
        grid._nearest_free = None
    grid._grad = np.stack(np.gradient(grid.sdf, scene.resolution), axis=0)
    grid._setup_interp()
    grid._free_graph = None
    return grid
