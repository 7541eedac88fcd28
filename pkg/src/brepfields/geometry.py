"""Analytic geometry kernel: evaluation, inversion, clip masks, SDF sampling.

Surface parameterizations (o = origin, a = axis, r = ref_dir, y = a x r):

    plane     S(u,v) = o + u r + v y                       normal a
    cylinder  S(u,v) = o + R(cos u r + sin u y) + v a       u periodic 2pi
    cone      S(u,v) = o + (R + v sin g)(cos u r + sin u y) + v cos g a
              g = half_angle; v measures arc length along the slant, so the
              radius at height v cos g is R + v sin g       u periodic 2pi
    sphere    S(u,v) = o + R(cos v cos u r + cos v sin u y + sin v a)
              u longitude (periodic 2pi), v latitude in [-pi/2, pi/2]
    torus     S(u,v) = o + (Rmaj + rmin cos v)(cos u r + sin u y)
                         + rmin sin v a                     both periodic 2pi

Curve parameterizations:

    line      C(t) = o + t a
    circle    C(t) = o + R(cos t r + sin t y)
    ellipse   C(t) = o + ra cos t r + rb sin t y

A face's clip mask lives in the raw (u,v) plane of its supporting surface:
boundary loops are sampled along their edges, inverted into uv, and unwrapped
continuously across periodic seams. Faces on periodic surfaces are expected
to carry seam edges (so every loop closes with zero net winding, the way
production modelers emit them); a loop that spans a full period without a
seam marks that axis periodic-full and contributes no clipping there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .autodiff import Tensor, concat
from .brep import BRep, CurveGeometry, Face, GeometryError, SurfaceGeometry

TWO_PI = 2.0 * np.pi


class SamplingError(RuntimeError):
    """A face whose probe points never straddle the boundary."""


# -- evaluation ----------------------------------------------------------------

def eval_surface(surf: SurfaceGeometry, u, v) -> np.ndarray:
    """Evaluate the unbounded supporting surface at (u, v); broadcasts."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    o, a, r = surf.frame.origin, surf.frame.axis, surf.frame.ref_dir
    y = surf.frame.ydir
    k = surf.kind
    if k == "plane":
        return o + np.multiply.outer(u, r) + np.multiply.outer(v, y)
    if k == "cylinder":
        R = surf.params["radius"]
        return (o + np.multiply.outer(R * np.cos(u), r)
                + np.multiply.outer(R * np.sin(u), y)
                + np.multiply.outer(v, a))
    if k == "cone":
        R = surf.params["radius"]
        g = surf.params["half_angle"]
        rad = R + v * np.sin(g)
        return (o + np.multiply.outer(rad * np.cos(u), r)
                + np.multiply.outer(rad * np.sin(u), y)
                + np.multiply.outer(v * np.cos(g), a))
    if k == "sphere":
        R = surf.params["radius"]
        return (o + np.multiply.outer(R * np.cos(v) * np.cos(u), r)
                + np.multiply.outer(R * np.cos(v) * np.sin(u), y)
                + np.multiply.outer(R * np.sin(v), a))
    if k == "torus":
        Rm = surf.params["major_radius"]
        rm = surf.params["minor_radius"]
        rad = Rm + rm * np.cos(v)
        return (o + np.multiply.outer(rad * np.cos(u), r)
                + np.multiply.outer(rad * np.sin(u), y)
                + np.multiply.outer(rm * np.sin(v), a))
    raise GeometryError(f"cannot evaluate surface kind {surf.kind!r}")


def eval_curve(curve: CurveGeometry, t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    o, a, r = curve.frame.origin, curve.frame.axis, curve.frame.ref_dir
    y = curve.frame.ydir
    k = curve.kind
    if k == "line":
        return o + np.multiply.outer(t, a)
    if k == "circle":
        R = curve.params["radius"]
        return (o + np.multiply.outer(R * np.cos(t), r)
                + np.multiply.outer(R * np.sin(t), y))
    if k == "ellipse":
        ra = curve.params["major_radius"]
        rb = curve.params["minor_radius"]
        return (o + np.multiply.outer(ra * np.cos(t), r)
                + np.multiply.outer(rb * np.sin(t), y))
    raise GeometryError(f"cannot evaluate curve kind {curve.kind!r}")


def surface_periods(surf: SurfaceGeometry) -> tuple:
    """(period_u, period_v), None on aperiodic axes."""
    return {
        "plane": (None, None),
        "cylinder": (TWO_PI, None),
        "cone": (TWO_PI, None),
        "sphere": (TWO_PI, None),
        "torus": (TWO_PI, TWO_PI),
    }[surf.kind]


def _surface_v_domain(surf: SurfaceGeometry):
    """Natural v-extent for surfaces bounded in v, else None."""
    if surf.kind == "sphere":
        return (-np.pi / 2, np.pi / 2)
    if surf.kind == "torus":
        return (0.0, TWO_PI)
    return None


_SINGULAR_EPS = 1e-12


def invert_surface(surf: SurfaceGeometry, points: np.ndarray,
                   tol: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Recover raw (u, v) for points on the surface (within ``tol``).

    Periodic coordinates land in [0, period). At parameterization
    singularities (sphere poles, cone apex) the undefined angular
    coordinate is returned as 0 by convention.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    o, a, r = surf.frame.origin, surf.frame.axis, surf.frame.ref_dir
    y = surf.frame.ydir
    q = pts - o
    qa = q @ a
    qr = q @ r
    qy = q @ y
    k = surf.kind

    if k == "plane":
        u, v = qr, qy
        resid = np.abs(qa)
    elif k == "cylinder":
        R = surf.params["radius"]
        u = np.arctan2(qy, qr) % TWO_PI
        v = qa
        resid = np.abs(np.hypot(qr, qy) - R)
    elif k == "cone":
        R = surf.params["radius"]
        g = surf.params["half_angle"]
        v = qa / np.cos(g)
        rad = R + v * np.sin(g)
        rho = np.hypot(qr, qy)
        sign = np.where(rad >= 0.0, 1.0, -1.0)
        u = np.arctan2(sign * qy, sign * qr) % TWO_PI
        u = np.where(rho < _SINGULAR_EPS, 0.0, u)
        resid = np.abs(rho - np.abs(rad))
    elif k == "sphere":
        R = surf.params["radius"]
        v = np.arcsin(np.clip(qa / R, -1.0, 1.0))
        rho = np.hypot(qr, qy)
        u = np.arctan2(qy, qr) % TWO_PI
        u = np.where(rho < _SINGULAR_EPS, 0.0, u)
        resid = np.abs(np.linalg.norm(q, axis=-1) - R)
    elif k == "torus":
        Rm = surf.params["major_radius"]
        rm = surf.params["minor_radius"]
        rho = np.hypot(qr, qy)
        u = np.arctan2(qy, qr) % TWO_PI
        u = np.where(rho < _SINGULAR_EPS, 0.0, u)
        v = np.arctan2(qa, rho - Rm) % TWO_PI
        resid = np.abs(np.hypot(rho - Rm, qa) - rm)
    else:
        raise GeometryError(f"cannot invert surface kind {surf.kind!r}")

    if np.any(resid > tol):
        worst = float(resid.max())
        raise GeometryError(f"point off {surf.kind} surface by {worst:g} "
                            f"(tol {tol:g})")
    if single:
        return float(u[0]), float(v[0])
    return u, v


# -- autodiff evaluation ---------------------------------------------------------

def _cross_t(a: Tensor, b: Tensor) -> Tensor:
    cx = a[1] * b[2] - a[2] * b[1]
    cy = a[2] * b[0] - a[0] * b[2]
    cz = a[0] * b[1] - a[1] * b[0]
    return concat([cx.reshape(1), cy.reshape(1), cz.reshape(1)], axis=0)


def _outer_t(coef: Tensor, vec: Tensor) -> Tensor:
    # (n,) coefficients times a (3,) direction -> (n, 3)
    return coef.reshape(-1, 1) @ vec.reshape(1, 3)


def eval_surface_ad(surf_kind: str, origin: Tensor, axis: Tensor,
                    ref_dir: Tensor, params: dict, u: Tensor, v: Tensor
                    ) -> Tensor:
    """Tape-based twin of :func:`eval_surface` (same formulas), so surface
    points stay differentiable w.r.t. u, v, and every shape parameter."""
    y = _cross_t(axis, ref_dir)
    n = u.shape[0]
    ones = u * 0.0 + 1.0
    base = _outer_t(ones, origin)
    if surf_kind == "plane":
        return base + _outer_t(u, ref_dir) + _outer_t(v, y)
    if surf_kind == "cylinder":
        R = params["radius"]
        return (base + _outer_t(u.cos() * R, ref_dir)
                + _outer_t(u.sin() * R, y) + _outer_t(v, axis))
    if surf_kind == "cone":
        R = params["radius"]
        g = params["half_angle"]
        rad = v * g.sin() + R
        return (base + _outer_t(rad * u.cos(), ref_dir)
                + _outer_t(rad * u.sin(), y) + _outer_t(v * g.cos(), axis))
    if surf_kind == "sphere":
        R = params["radius"]
        cv = v.cos()
        return (base + _outer_t(cv * u.cos() * R, ref_dir)
                + _outer_t(cv * u.sin() * R, y) + _outer_t(v.sin() * R, axis))
    if surf_kind == "torus":
        Rm = params["major_radius"]
        rm = params["minor_radius"]
        rad = v.cos() * rm + Rm
        return (base + _outer_t(rad * u.cos(), ref_dir)
                + _outer_t(rad * u.sin(), y) + _outer_t(v.sin() * rm, axis))
    raise GeometryError(f"cannot evaluate surface kind {surf_kind!r}")


# -- bounds ---------------------------------------------------------------------

def brep_bounds(brep: BRep, curve_samples: int = 33) -> tuple[np.ndarray, np.ndarray]:
    """Axis-aligned bounds over vertices and edge samples. Faces without any
    loop (full spheres/tori) contribute surface samples so closed primitives
    still get finite bounds."""
    pts = [v.position for v in brep.vertices]
    for e in brep.edges:
        if e.curve.supported:
            ts = np.linspace(e.t_start, e.t_end, curve_samples)
            pts.append(eval_curve(e.curve, ts))
    for f in brep.faces:
        if not any(True for _ in f.loop_entries()) and f.surface.supported:
            pu, pv = surface_periods(f.surface)
            vdom = _surface_v_domain(f.surface) or (0.0, 1.0)
            us = np.linspace(0.0, pu if pu else 1.0, 17)
            vs = np.linspace(vdom[0], vdom[1], 17)
            uu, vv = np.meshgrid(us, vs)
            pts.append(eval_surface(f.surface, uu.ravel(), vv.ravel()))
    if not pts:
        raise GeometryError("cannot bound an empty model")
    allp = np.vstack([np.atleast_2d(p) for p in pts])
    return allp.min(axis=0), allp.max(axis=0)


# -- clip masks -------------------------------------------------------------------

@dataclass
class ClipMask:
    """Boundary loops of one face in its raw uv plane.

    ``loops`` are closed polylines used for parity classification;
    ``boundary`` holds the true trimming polylines used for distance
    queries (seam traversals are excluded there: both of their sides are
    face material, so they carry no signed distance). ``window`` is the
    mask bounding box; on periodic-full axes it spans one whole period.
    """

    loops: list                       # closed (k,2) polylines
    boundary: list                    # open (k,2) polylines, distance targets
    periods: tuple                    # per-axis period or None
    full_axis: tuple                  # per-axis: boundary covers whole period
    window: np.ndarray                # (2,2): [[u_lo,u_hi],[v_lo,v_hi]]
    seam_offset: tuple                # branch-cut origin per periodic axis
    _parity_packed: tuple = field(default=None, repr=False)
    _distance_packed: tuple = field(default=None, repr=False)

    def parity_packed(self):
        if self._parity_packed is None:
            self._parity_packed = _kernels.pack_loops(self.loops)
        return self._parity_packed

    def distance_packed(self):
        if self._distance_packed is None:
            self._distance_packed = _kernels.pack_loops(self.boundary)
        return self._distance_packed


def _entry_params(edge, entry, n: int) -> np.ndarray:
    """Curve parameter sequence traversing the edge in loop direction."""
    ts = np.linspace(edge.t_start, edge.t_end, n + 1)
    forward = entry.orientation != edge.reversed  # topo direction vs params
    return ts if forward else ts[::-1]


def _unwrap_against(prev: np.ndarray, cur: np.ndarray, periods) -> np.ndarray:
    out = cur.copy()
    for ax, p in enumerate(periods):
        if p is not None:
            out[..., ax] += p * np.round((prev[..., ax] - out[..., ax]) / p)
    return out


_MIN_EDGE_SEGMENTS = 64
_REFINE_FRACTION = 1e-2
_FULL_AXIS_GAP = 0.05  # of the period


def _sample_loop(brep: BRep, face: Face, loop, periods, n_per_edge):
    """Sample a loop's edges into one unwrapped uv polyline.

    Returns (points, ranges) where ranges[i] = (lo, hi) bounds entry i's
    samples (inclusive; lo is the junction shared with the previous edge).
    """
    pts_list = []
    ranges = []
    total = 0
    prev = None
    for idx, entry in enumerate(loop):
        edge = brep.edges[entry.edge]
        ts = _entry_params(edge, entry, n_per_edge[idx])
        xyz = eval_curve(edge.curve, ts)
        u, v = invert_surface(face.surface, xyz)
        uv = np.stack([u, v], axis=-1)
        # unwrap within the edge, then against the previous edge's tail
        for i in range(1, len(uv)):
            uv[i] = _unwrap_against(uv[i - 1], uv[i], periods)
        lo = total
        if prev is not None:
            shift = _unwrap_against(prev, uv[0], periods) - uv[0]
            uv = uv + shift
            if np.linalg.norm(uv[0] - prev) < 1e-9:
                uv = uv[1:]
                lo = total - 1
        pts_list.append(uv)
        total += len(uv)
        ranges.append((lo, total - 1))
        prev = uv[-1]
    return np.vstack(pts_list), ranges


def build_clip_mask(face: Face, brep: BRep) -> ClipMask:
    """Project a face's boundary loops into its raw uv plane.

    Loops are sampled adaptively (at least 64 points per edge, refined so
    adjacent samples are closer than 1% of the mask extent), inverted, and
    unwrapped continuously across periodic seams. The branch cut on a
    periodic axis is placed mid-way across the largest angular gap between
    boundary samples; if there is no gap the axis is periodic-full.
    """
    surf = face.surface
    periods = surface_periods(surf)
    loops = [loop for loop in face.loops if loop]

    if not loops:
        vdom = _surface_v_domain(surf)
        if periods[0] is None or (periods[1] is None and vdom is None):
            raise GeometryError("face without loops on an unbounded surface")
        window = np.array([[0.0, periods[0]],
                           [vdom[0], vdom[1]] if periods[1] is None
                           else [0.0, periods[1]]])
        return ClipMask([], [], periods, (True, periods[1] is not None),
                        window, (0.0, 0.0))

    # pass 1: coarse sampling to estimate extent and per-edge uv lengths
    coarse = [_sample_loop(brep, face, loop, periods,
                           [_MIN_EDGE_SEGMENTS] * len(loop)) for loop in loops]
    allc = np.vstack([pts for pts, _ in coarse])
    extent = max(float(np.ptp(allc[:, 0])), float(np.ptp(allc[:, 1])), 1e-9)
    target = _REFINE_FRACTION * extent

    sampled = []
    for loop, (cpts, cranges) in zip(loops, coarse):
        n_per_edge = []
        for lo, hi in cranges:
            seg = cpts[lo:hi + 1]
            length = float(np.linalg.norm(np.diff(seg, axis=0), axis=1).sum())
            n_per_edge.append(max(_MIN_EDGE_SEGMENTS,
                                  int(np.ceil(1.5 * length / target))))
        sampled.append(_sample_loop(brep, face, loop, periods, n_per_edge))

    # closure and winding per loop
    closed = []
    wound_axes = [False, False]
    for (pts, ranges), loop in zip(sampled, loops):
        delta = pts[-1] - pts[0]
        winding = [0, 0]
        for ax, p in enumerate(periods):
            if p is not None:
                winding[ax] = int(np.round(delta[ax] / p))
        resid = delta - np.array([winding[0] * (periods[0] or 0.0),
                                  winding[1] * (periods[1] or 0.0)])
        if np.linalg.norm(resid) > 1e-6 * max(extent, 1.0):
            raise GeometryError("boundary loop does not close in uv "
                                f"(gap {np.linalg.norm(resid):g})")
        wound = bool(winding[0] or winding[1])
        if wound:
            if winding[0] and winding[1]:
                raise GeometryError("loop winds both periodic axes")
            wound_axes[0] |= bool(winding[0])
            wound_axes[1] |= bool(winding[1])
        else:
            pts = np.vstack([pts, pts[:1]])  # snap exactly closed
        closed.append([pts, wound, loop, ranges])

    # branch cut per periodic axis from the largest sample gap
    full_axis = [False, False]
    seam_offset = [0.0, 0.0]
    allpts = np.vstack([c[0] for c in closed])
    for ax, p in enumerate(periods):
        if p is None:
            continue
        if wound_axes[ax]:
            full_axis[ax] = True
            continue
        coords = np.sort(allpts[:, ax] % p)
        gaps = np.diff(coords, append=coords[0] + p)
        gi = int(np.argmax(gaps))
        if gaps[gi] < _FULL_AXIS_GAP * p:
            full_axis[ax] = True
            continue
        seam_offset[ax] = float((coords[gi] + gaps[gi] / 2.0) % p)

    # shift each loop by whole periods so it sits just above the branch cut
    for c in closed:
        pts = c[0].copy()
        for ax, p in enumerate(periods):
            if p is None or full_axis[ax]:
                continue
            lo = pts[:, ax].min()
            pts[:, ax] -= p * np.floor((lo - seam_offset[ax]) / p)
        c[0] = pts

    parity_loops = [c[0] for c in closed if not c[1]]
    window = np.empty((2, 2))
    allpts = np.vstack([c[0] for c in closed])
    for ax in range(2):
        p = periods[ax]
        if p is not None and full_axis[ax]:
            lo = float(allpts[:, ax].min())
            window[ax] = (lo, lo + p)
        else:
            window[ax] = (float(allpts[:, ax].min()), float(allpts[:, ax].max()))
    if (window[:, 1] - window[:, 0]).min() < 1e-12:
        raise GeometryError("degenerate (zero-extent) clip mask")

    boundary = _boundary_polylines(face, closed)
    return ClipMask(parity_loops, boundary, periods, tuple(full_axis),
                    window, tuple(seam_offset))


def _boundary_polylines(face: Face, closed) -> list:
    """Split loop polylines into true-boundary runs.

    Seam traversals (edges bounding this face twice) are dropped: both of
    their sides are face material, so they carry no clip distance. Wound
    loops clip nothing (their axis is periodic-full) and are dropped whole.
    """
    counts: dict[int, int] = {}
    for entry in face.loop_entries():
        counts[entry.edge] = counts.get(entry.edge, 0) + 1
    seams = {e for e, c in counts.items() if c >= 2}

    out = []
    for pts, wound, loop, ranges in closed:
        if wound:
            continue
        if not seams.intersection(entry.edge for entry in loop):
            out.append(pts)
            continue
        runs = []
        cur: list[np.ndarray] = []
        for entry, (lo, hi) in zip(loop, ranges):
            if entry.edge in seams:
                if len(cur) > 1:
                    runs.append(np.asarray(cur))
                cur = []
            else:
                sl = pts[lo:hi + 1]
                cur.extend(sl if not cur else sl[1:])
        if len(cur) > 1:
            runs.append(np.asarray(cur))
        out.extend(runs)
    return out


# -- classification ----------------------------------------------------------------

def _wrap_into_window(mask: ClipMask, uv: np.ndarray) -> np.ndarray:
    uv = np.array(uv, dtype=np.float64, copy=True)
    uv = np.atleast_2d(uv)
    for ax, p in enumerate(mask.periods):
        if p is not None:
            w0 = mask.window[ax, 0]
            uv[:, ax] = w0 + np.mod(uv[:, ax] - w0, p)
    return uv


def classify_batch(mask: ClipMask, uv: np.ndarray) -> np.ndarray:
    """Even-odd inside test for many raw uv points; True = inside."""
    if not mask.loops:
        return np.ones(len(np.atleast_2d(uv)), dtype=bool)
    pts = _wrap_into_window(mask, uv)
    verts, starts = mask.parity_packed()
    return _kernels.polygon_parity(pts, verts, starts).astype(bool)


def classify_uv(mask: ClipMask, uv) -> bool:
    """Single-point inside test. A query landing exactly on a polyline is
    perturbed by 1e-12 before the parity test (documented convention)."""
    pt = np.asarray(uv, dtype=np.float64).reshape(1, 2)
    if mask.loops:
        wrapped = _wrap_into_window(mask, pt)
        verts, starts = mask.parity_packed()
        if float(_kernels.polyline_distance(wrapped, verts, starts)[0]) == 0.0:
            pt = pt + 1e-12
    return bool(classify_batch(mask, pt)[0])


# -- reparameterization ---------------------------------------------------------------

@dataclass
class Reparam:
    """Affine raw-uv -> normalized-uv map: n = raw * scale + offset."""

    scale: tuple
    offset: tuple

    def apply(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return uv * np.asarray(self.scale) + np.asarray(self.offset)

    def invert(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return (uv - np.asarray(self.offset)) / np.asarray(self.scale)


def reparameterize(mask: ClipMask) -> Reparam:
    """Affine map sending the mask window exactly onto the unit square."""
    lo = mask.window[:, 0]
    hi = mask.window[:, 1]
    scale = 1.0 / (hi - lo)
    return Reparam(scale=tuple(scale), offset=tuple(-lo * scale))


# -- SDF sampling -----------------------------------------------------------------------

PROBE_COUNT = 5000
KEEP_COUNT = 500
BOUNDARY_FRACTION = 0.4
PROBE_RANGE = (-0.1, 1.1)


@dataclass
class FaceSampleSet:
    """Per-face training samples: rows of (u, v, x, y, z, d).

    u, v are normalized face coordinates; x, y, z the surface point in the
    normalized part frame; d the signed clip distance in normalized uv
    units, negative inside.
    """

    face_index: int
    samples: np.ndarray

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)

    @property
    def uv(self):
        return self.samples[:, 0:2]

    @property
    def xyz(self):
        return self.samples[:, 2:5]

    @property
    def d(self):
        return self.samples[:, 5]


@dataclass
class FaceGeometry:
    """Cached mask + reparam bundle for one face."""

    face_index: int
    mask: ClipMask
    reparam: Reparam


def face_geometry(brep: BRep, face_index: int) -> FaceGeometry:
    mask = build_clip_mask(brep.faces[face_index], brep)
    return FaceGeometry(face_index, mask, reparameterize(mask))


def _normalized_boundary(mask: ClipMask, reparam: Reparam) -> list:
    """Boundary polylines in normalized coordinates, with one-period-shifted
    copies on periodic axes so distances near the seam see both sides."""
    polys = [reparam.apply(b) for b in mask.boundary]
    out = list(polys)
    for ax, p in enumerate(mask.periods):
        if p is None:
            continue
        shift = np.zeros(2)
        shift[ax] = p * reparam.scale[ax]
        for poly in polys:
            out.append(poly + shift)
            out.append(poly - shift)
    return out


def oracle_sdf_points(mask: ClipMask, reparam: Reparam,
                      uv_norm: np.ndarray) -> np.ndarray:
    """Exact signed distance (normalized units) from points to the true
    boundary polylines; negative inside. Test oracle for the sampled SDF."""
    uv_norm = np.atleast_2d(np.asarray(uv_norm, dtype=np.float64))
    raw = reparam.invert(uv_norm)
    inside = classify_batch(mask, raw)
    polys = _normalized_boundary(mask, reparam)
    if not polys:
        return np.where(inside, -np.inf, np.inf)
    verts, starts = _kernels.pack_loops(polys)
    dist = _kernels.polyline_distance(uv_norm, verts, starts)
    return np.where(inside, -dist, dist)


def approx_sdf_oracle(mask: ClipMask, reparam: Reparam, resolution: int
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense brute-force SDF grid over the probe range [-0.1, 1.1]^2."""
    axis = np.linspace(PROBE_RANGE[0], PROBE_RANGE[1], resolution)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    d = oracle_sdf_points(mask, reparam, pts).reshape(resolution, resolution)
    return axis, axis, d


def sample_sdf(brep: BRep, face_index: int, seed: int,
               geo: FaceGeometry | None = None,
               n_keep: int = KEEP_COUNT,
               n_probe: int = PROBE_COUNT) -> FaceSampleSet:
    """Draw the per-face training sample set.

    Probes ``n_probe`` uniform points in normalized [-0.1, 1.1]^2,
    classifies them against the clip mask, and approximates |d| at each
    probe as the distance to its nearest neighbor in the opposite class
    (KD-tree). Keeps the 40% of ``n_keep`` with smallest |d| plus a
    seeded uniform draw from the remainder. Raises :class:`SamplingError`
    when the probes never straddle the boundary (after one retry at 4x
    density), which happens for faces that cover their whole domain.
    """
    if geo is None:
        geo = face_geometry(brep, face_index)
    face = brep.faces[face_index]
    mask, reparam = geo.mask, geo.reparam
    rng = np.random.default_rng(seed)

    for attempt, count in enumerate((n_probe, 4 * n_probe)):
        uv_n = rng.uniform(PROBE_RANGE[0], PROBE_RANGE[1], size=(count, 2))
        raw = reparam.invert(uv_n)
        inside = classify_batch(mask, raw)
        if inside.any() and (~inside).any():
            break
    else:
        raise SamplingError(
            f"face {face_index}: all probe points classify "
            f"{'inside' if inside.all() else 'outside'}; no boundary to learn")

    d = np.empty(len(uv_n))
    tree_out = cKDTree(uv_n[~inside])
    tree_in = cKDTree(uv_n[inside])
    d[inside] = -tree_out.query(uv_n[inside])[0]
    d[~inside] = tree_in.query(uv_n[~inside])[0]

    n_boundary = int(round(BOUNDARY_FRACTION * n_keep))
    order = np.argsort(np.abs(d), kind="stable")
    nearest = order[:n_boundary]
    rest = order[n_boundary:]
    pick = rng.choice(len(rest), size=n_keep - n_boundary, replace=False)
    chosen = np.concatenate([nearest, rest[pick]])

    # both signs must be present; swap in the closest missing-sign probe
    signs = d[chosen] < 0
    if signs.all() or not signs.any():
        cand = rest[(d[rest] < 0) != bool(signs.all())]
        chosen[-1] = cand[0]

    uv_k = uv_n[chosen]
    raw_k = reparam.invert(uv_k)
    xyz = eval_surface(face.surface, raw_k[:, 0], raw_k[:, 1])
    samples = np.concatenate([uv_k, xyz, d[chosen, None]], axis=1)
    return FaceSampleSet(face_index, samples)
