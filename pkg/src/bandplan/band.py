"""Virtual elastic band: the gripper-to-gripper geodesic proxy for the object.

A band is an ordered point sequence whose endpoints ride on the two grippers.
It is kept taut by an iterative contraction that respects a hard collision
clearance, so its length approximates the shortest path between the grippers
that does not cut through obstacles.  Band length against a stretch budget is
the only object constraint the planner and the deadlock predictor reason
about.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .worldgrid import WorldGrid

DEFAULT_MAX_POINTS = 500


class BandError(RuntimeError):
    """Raised when a band operation gets geometrically impossible inputs."""


@dataclass(frozen=True)
class BandParams:
    """Discretization and relaxation knobs, derived from the grid resolution."""

    max_segment_length: float
    clearance: float
    tighten_tol: float = 1e-4
    max_iters: int = 500
    max_points: int = DEFAULT_MAX_POINTS

    @classmethod
    def from_grid(cls, grid: WorldGrid, **overrides):
        base = dict(
            max_segment_length=grid.resolution,
            clearance=grid.resolution / 2.0,
        )
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class Band:
    """Ordered 3D point chain; first/last points are the gripper attachments."""

    points: np.ndarray                       # (N, 3)
    max_points: int = DEFAULT_MAX_POINTS
    _upsampled: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
            raise BandError("band needs at least two 3D points")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def endpoints(self):
        return self.points[0].copy(), self.points[-1].copy()

    def upsampled(self) -> np.ndarray:
        """Arc-length resample to exactly ``max_points`` points (cached)."""
        if self._upsampled is None:
            object.__setattr__(self, "_upsampled", resample_polyline(self.points, self.max_points))
        return self._upsampled


def resample_polyline(points: np.ndarray, n: int) -> np.ndarray:
    """Linear arc-length resampling of a polyline to n points."""
    pts = np.asarray(points, dtype=float)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 0.0:
        return np.repeat(pts[:1], n, axis=0)
    ts = np.linspace(0.0, total, n)
    return np.stack([np.interp(ts, s, pts[:, a]) for a in range(3)], axis=1)


@dataclass
class Blacklist:
    """Bands from which deadlock was predicted; goal bands must differ from all."""

    bands: list = field(default_factory=list)

    def add(self, band: Band):
        self.bands.append(band)

    def __len__(self):
        return len(self.bands)

    def __iter__(self):
        return iter(self.bands)


# ---------------------------------------------------------------------------
# Length and distance
# ---------------------------------------------------------------------------

def band_length(band: Band) -> float:
    return float(np.linalg.norm(np.diff(band.points, axis=0), axis=1).sum())


def band_distance(b1: Band, b2: Band) -> float:
    """Euclidean distance between arc-length-aligned bands, as one long vector."""
    return float(np.linalg.norm(b1.upsampled() - b2.upsampled()))


def overstretched(band: Band, l_max: float) -> bool:
    """True iff the band is strictly longer than the allowed maximum."""
    if l_max <= 0:
        raise BandError("l_max must be positive")
    return band_length(band) > l_max


# ---------------------------------------------------------------------------
# Geometry maintenance
# ---------------------------------------------------------------------------

def _interpolate(points: np.ndarray, max_seg: float) -> np.ndarray:
    """Subdivide segments so no gap exceeds max_seg."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    if np.all(seg <= max_seg):
        return points
    out = [points[0]]
    for i, d in enumerate(seg):
        if d > max_seg:
            k = int(np.ceil(d / max_seg))
            ts = np.linspace(0.0, 1.0, k + 1)[1:]
            out.extend(points[i] + t * (points[i + 1] - points[i]) for t in ts)
        else:
            out.append(points[i + 1])
    return np.asarray(out)


def _triangle_deviation(a, b, c):
    """Distance from b to segment [a, c], vectorized over rows."""
    ac = c - a
    nac2 = np.einsum("ij,ij->i", ac, ac)
    t = np.zeros(len(a))
    ok = nac2 > 1e-24
    t[ok] = np.clip(np.einsum("ij,ij->i", (b - a)[ok], ac[ok]) / nac2[ok], 0.0, 1.0)
    return np.linalg.norm(b - (a + t[:, None] * ac), axis=1)


def _remove_extra(points: np.ndarray, grid: WorldGrid, params: BandParams, passes: int = 3) -> np.ndarray:
    """Drop interior points whose neighbours connect freely with tiny deviation.

    Runs a few decimation passes; each pass removes a non-adjacent subset so
    the spans being merged never overlap.
    """
    pts = points
    for _ in range(passes):
        if len(pts) <= 2:
            break
        a, b, c = pts[:-2], pts[1:-1], pts[2:]
        cand = np.flatnonzero(_triangle_deviation(a, b, c) < params.tighten_tol)
        if len(cand) == 0:
            break
        picked = []
        last = -2
        for i in cand:
            if i > last + 1:
                picked.append(i)
                last = i
        picked = np.asarray(picked)
        ok = grid.segments_collision_free(a[picked], c[picked], params.clearance)
        drop = picked[ok] + 1
        if len(drop) == 0:
            break
        pts = np.delete(pts, drop, axis=0)
    if len(pts) > params.max_points:
        pts = resample_polyline(pts, params.max_points)
    return pts


def _project_clear(points: np.ndarray, grid: WorldGrid, clearance: float, passes: int = 3):
    """Push points to sdf >= clearance along the interpolated gradient (in place)."""
    for _ in range(passes):
        d = grid.sdf_at(points)
        bad = d < clearance
        if not bad.any():
            break
        g = grid.sdf_grad_at(points[bad])
        gn = np.linalg.norm(g, axis=1, keepdims=True)
        gn[gn < 1e-9] = 1.0
        points[bad] += g / gn * (clearance - d[bad])[:, None]
    return points


def pull_tight(band: Band, grid: WorldGrid, params: BandParams = None) -> Band:
    """Relax the band toward the taut geodesic, keeping endpoints fixed.

    Interior points contract toward their neighbours' midpoint (red-black
    over-relaxed sweeps) under a hard collision clearance.  Each point's move
    is capped at max(clearance, sdf - clearance), which makes it impossible
    for the band to jump across an obstacle interior.  Iterates until the
    largest net point displacement falls below tighten_tol.  The shortest
    iterate seen (including the input) is returned, so length never
    increases across the call.
    """
    if params is None:
        params = BandParams.from_grid(grid)
    pts = band.points.copy()
    n = len(pts)
    if n <= 2:
        return band
    omega = min(2.0 / (1.0 + np.sin(np.pi / (n - 1))), 1.95)
    clearance = params.clearance
    shell = 1.5 * clearance
    best = pts.copy()
    best_len = float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())
    reds = np.arange(1, n - 1, 2)
    blacks = np.arange(2, n - 1, 2)
    for _ in range(params.max_iters):
        prev = pts.copy()
        s = grid.sdf_at(pts)
        near_any = bool(np.min(s) < shell)
        if not near_any:
            # Free flight: plain over-relaxed contraction, no collision work.
            headroom = float(np.min(s) - clearance)
            for idx in (reds, blacks):
                if len(idx) == 0:
                    continue
                mid = 0.5 * (pts[idx - 1] + pts[idx + 1])
                delta = omega * (mid - pts[idx])
                norms = np.sqrt(np.einsum("ij,ij->i", delta, delta))
                scale = np.minimum(1.0, headroom / np.maximum(norms, 1e-30))
                pts[idx] += delta * scale[:, None]
        else:
            # Budget per point: free flight up to the clearance shell.
            # Points on the shell may only slide tangentially, which kills
            # the contract/project limit cycle at corners and makes crossing
            # an obstacle interior impossible by construction.
            caps = np.maximum(clearance, s - clearance)
            near = s < shell
            normals = np.zeros((n, 3))
            g = grid.sdf_grad_at(pts[near])
            gn = np.linalg.norm(g, axis=1, keepdims=True)
            gn[gn < 1e-9] = 1.0
            normals[near] = g / gn
            for idx in (reds, blacks):
                if len(idx) == 0:
                    continue
                mid = 0.5 * (pts[idx - 1] + pts[idx + 1])
                w = np.where(near[idx], 1.0, omega)
                delta = w[:, None] * (mid - pts[idx])
                inward = np.einsum("ij,ij->i", delta, normals[idx])
                clip = near[idx] & (inward < 0.0)
                if clip.any():
                    delta[clip] -= inward[clip, None] * normals[idx][clip]
                norms = np.sqrt(np.einsum("ij,ij->i", delta, delta))
                scale = np.minimum(1.0, caps[idx] / np.maximum(norms, 1e-30))
                pts[idx] += delta * scale[:, None]
            interior = pts[1:-1]
            s2, g2 = grid.sdf_and_grad_at(interior)
            bad = s2 < clearance
            if bad.any():
                gn = np.sqrt(np.einsum("ij,ij->i", g2[bad], g2[bad]))[:, None]
                gn[gn < 1e-9] = 1.0
                interior[bad] += g2[bad] / gn * (clearance - s2[bad])[:, None]
        diff = pts - prev
        disp = float(np.sqrt(np.einsum("ij,ij->i", diff, diff).max()))
        seg = np.diff(pts, axis=0)
        cur_len = float(np.sqrt(np.einsum("ij,ij->i", seg, seg)).sum())
        if cur_len < best_len:
            best_len = cur_len
            best = pts.copy()
        if disp < params.tighten_tol:
            break
    return Band(points=best, max_points=band.max_points)


def forward_propagate(band: Band, gripper_targets, grid: WorldGrid, params: BandParams = None) -> Band:
    """Advance the band to new gripper endpoints.

    New endpoints are attached to the old chain, the chain is re-interpolated
    to the segment-length bound, straight clear runs are pruned, and the
    result is pulled tight.  Raises BandError when an endpoint penetrates an
    obstacle interior (callers must pre-check gripper targets).
    """
    if params is None:
        params = BandParams.from_grid(grid)
    p0 = np.asarray(gripper_targets[0], dtype=float)
    p1 = np.asarray(gripper_targets[1], dtype=float)
    if grid.sdf_at(p0) < 0.0 or grid.sdf_at(p1) < 0.0:
        raise BandError("invalid gripper target: endpoint inside obstacle")

    # Warm start: warp the old chain toward the new endpoints, blending the
    # endpoint displacements by arc length.  Each point's move is capped by
    # its distance budget to the clearance shell, so the warp cannot push the
    # band into (or across) an obstacle; constrained points simply stay and
    # the relaxation below resolves the small residual locally.
    old = band.points
    d0 = p0 - old[0]
    d1 = p1 - old[-1]
    if np.linalg.norm(d0) > 1e-12 or np.linalg.norm(d1) > 1e-12:
        seg_len = np.linalg.norm(np.diff(old, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg_len)])
        ts = s / s[-1] if s[-1] > 0 else np.linspace(0.0, 1.0, len(old))
        warp = (1.0 - ts)[:, None] * d0[None, :] + ts[:, None] * d1[None, :]
        budget = np.maximum(grid.sdf_at(old) - params.clearance, 0.0)
        wn = np.linalg.norm(warp, axis=1)
        scale = np.minimum(1.0, budget / np.maximum(wn, 1e-30))
        old = old + warp * scale[:, None]
    pts = np.vstack([p0[None, :], old, p1[None, :]])

    # Uniform arc-length spacing keeps the contraction's tangential flow near
    # zero.  The spacing bound is load-bearing: with points at the clearance
    # shell and segments no longer than the resolution, the interpolated path
    # cannot reach an obstacle interior, so point removal must never run on a
    # chain that is about to be relaxed.
    seg = 0.9 * params.max_segment_length
    seg_now = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if seg_now.max() > params.max_segment_length or seg_now.min() < 0.25 * seg:
        total = float(seg_now.sum())
        n = min(max(int(np.ceil(total / seg)) + 1, 2), params.max_points)
        pts = resample_polyline(pts, n)
    else:
        pts = pts.copy()
    _project_clear(pts[1:-1], grid, params.clearance)
    tight = pull_tight(Band(points=pts, max_points=band.max_points), grid, params)
    pts = _remove_extra(tight.points, grid, params)
    pts = _interpolate(pts, params.max_segment_length).copy()
    pts[0], pts[-1] = p0, p1
    return Band(points=pts, max_points=band.max_points)


# ---------------------------------------------------------------------------
# Initialization from the deformable object
# ---------------------------------------------------------------------------

def initialize_band(deform, grid: WorldGrid, params: BandParams = None) -> Band:
    """Band = pulled-tight geodesic node chain between the grasped node sets."""
    if params is None:
        params = BandParams.from_grid(grid)
    chain = deform.geodesic_chain()
    pts = deform.points[chain]
    g0, g1 = deform.gripper_positions()
    if np.linalg.norm(pts[0] - g0) > 1e-12:
        pts = np.vstack([g0[None, :], pts])
    if np.linalg.norm(pts[-1] - g1) > 1e-12:
        pts = np.vstack([pts, g1[None, :]])
    pts = _interpolate(pts, params.max_segment_length)
    _project_clear(pts[1:-1], grid, params.clearance)
    band = Band(points=pts, max_points=params.max_points)
    return pull_tight(band, grid, params)


# ---------------------------------------------------------------------------
# Similarity (visibility deformation)
# ---------------------------------------------------------------------------

def bands_similar(b1: Band, b2: Band, grid: WorldGrid) -> bool:
    """Visibility-deformation check: every straight rung between the two
    arc-length-aligned bands must be obstacle-free."""
    n = max(len(b1), len(b2))
    r1 = resample_polyline(b1.points, n)
    r2 = resample_polyline(b2.points, n)
    return bool(np.all(grid.segments_collision_free(r1, r2, 0.0)))


def vis_check(band: Band, blacklist: Blacklist, grid: WorldGrid) -> int:
    """1 iff the band is visibility-similar to any blacklisted band, else 0."""
    for other in blacklist:
        if bands_similar(band, other, grid):
            return 1
    return 0
