"""Synthetic B-Rep corpus: part generators, normalization, dataset I/O.

Eight part families with randomized dimensions stand in for real CAD
collections at desk scale. Per-face labels are construction-style classes
(hole wall, chamfer, cap, ...) assigned by each family's build rule; the
part label is the family itself.

Conventions the builders guarantee (and the parser's checks verify):
  * outer loops run counterclockwise in the surface's uv plane around the
    face normal (geometric normal, flipped by ``reversed_normal``); hole
    loops run clockwise;
  * the ``side`` flag of a loop entry is "left" when the entry traverses
    the edge start-to-end ("right" otherwise), matching the usual co-edge
    convention, so the two faces sharing an edge see opposite sides;
  * periodic faces (cylinder/cone walls) carry an explicit seam edge that
    appears twice in their loop.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .brep import (BRep, CurveGeometry, Edge, Face, Frame, GeometryError,
                   LoopEntry, SurfaceGeometry, Vertex, brep_to_doc, parse_brep)
from .geometry import FaceSampleSet, SamplingError, face_geometry, sample_sdf

GENERATOR_VERSION = 1

FACE_CLASSES = ("stock", "side", "hole_wall", "hole_bottom",
                "chamfer", "lateral", "cap", "donut")
STOCK, SIDE, HOLE_WALL, HOLE_BOTTOM, CHAMFER, LATERAL, CAP, DONUT = range(8)

FAMILIES = ("box", "box_through_hole", "box_blind_hole", "cylinder",
            "wedge", "chamfer_box", "torus", "cone_frustum")

_X = np.array([1.0, 0.0, 0.0])
_Y = np.array([0.0, 1.0, 0.0])
_Z = np.array([0.0, 0.0, 1.0])


def _unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


def _perp(v):
    v = _unit(v)
    probe = _X if abs(v[0]) < 0.9 else _Y
    return _unit(np.cross(v, probe))


def _frame(origin, axis, ref_dir=None) -> Frame:
    axis = _unit(axis)
    if ref_dir is None:
        ref_dir = _perp(axis)
    else:
        ref_dir = _unit(ref_dir)
    return Frame(np.asarray(origin, dtype=np.float64), axis, ref_dir)


# -- low-level builders ---------------------------------------------------------

class _Builder:
    """Accumulates vertices/edges/faces, then orients loops and validates."""

    def __init__(self, name: str):
        self.name = name
        self.vertices: list[Vertex] = []
        self.edges: list[Edge] = []
        self.faces: list[Face] = []
        self.labels: list[int] = []

    def vertex(self, xyz) -> int:
        self.vertices.append(Vertex(np.asarray(xyz, dtype=np.float64)))
        return len(self.vertices) - 1

    def line(self, v0: int, v1: int) -> int:
        p0 = self.vertices[v0].position
        p1 = self.vertices[v1].position
        length = float(np.linalg.norm(p1 - p0))
        curve = CurveGeometry("line", _frame(p0, (p1 - p0) / length), {})
        self.edges.append(Edge(curve, v0, v1, 0.0, length, False))
        return len(self.edges) - 1

    def circle(self, center, axis, radius: float, vertex: int,
               reversed_flag: bool = False) -> int:
        """Full circle through ``vertex`` (which must lie on it at angle 0)."""
        center = np.asarray(center, dtype=np.float64)
        p = self.vertices[vertex].position
        ref = _unit(p - center)
        curve = CurveGeometry("circle", _frame(center, axis, ref),
                              {"radius": radius})
        self.edges.append(Edge(curve, vertex, vertex, 0.0, 2.0 * np.pi,
                               reversed_flag))
        return len(self.edges) - 1

    def face(self, surface: SurfaceGeometry, loops, label: int,
             reversed_normal: bool = False) -> int:
        entries = tuple(tuple(LoopEntry(e, o, "left") for e, o in loop)
                        for loop in loops)
        self.faces.append(Face(surface, entries, reversed_normal))
        self.labels.append(label)
        return len(self.faces) - 1

    def plane_face(self, origin, normal, ref_dir, vertex_cycle, label: int,
                   holes=()) -> int:
        """Planar face bounded by a cycle of vertices connected by existing
        line edges (plus optional hole loops given as prepared entry lists)."""
        surf = SurfaceGeometry("plane", _frame(origin, normal, ref_dir), {})
        loop = []
        n = len(vertex_cycle)
        for i in range(n):
            va, vb = vertex_cycle[i], vertex_cycle[(i + 1) % n]
            loop.append(self._find_line(va, vb))
        return self.face(surf, [loop, *holes], label)

    def _find_line(self, va: int, vb: int):
        for ei, e in enumerate(self.edges):
            if e.curve.kind != "line":
                continue
            if (e.v_start, e.v_end) == (va, vb):
                return (ei, True)
            if (e.v_start, e.v_end) == (vb, va):
                return (ei, False)
        raise KeyError(f"no line edge between vertices {va} and {vb}")

    def finish(self) -> BRep:
        draft = BRep(self.name, self.vertices, self.edges, self.faces)
        oriented = [_orient_face(draft, f) for f in draft.faces]
        draft = BRep(self.name, self.vertices, self.edges, oriented)
        # round-trip through the parser: validates every invariant and
        # freezes the arrays
        return parse_brep(brep_to_doc(draft))


def _loop_area(brep: BRep, face: Face, loop) -> float:
    pts, _ = geometry._sample_loop(brep, face, loop,
                                   geometry.surface_periods(face.surface),
                                   [12] * len(loop))
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _orient_face(brep: BRep, face: Face) -> Face:
    """Flip loops so outer loops are CCW (CW when the normal is reversed)
    and holes the opposite, then derive side flags from orientation."""
    out_loops = []
    for li, loop in enumerate(face.loops):
        if not loop:
            out_loops.append(loop)
            continue
        outer = li == 0
        want_positive = outer != face.reversed_normal
        area = _loop_area(brep, face, loop)
        if (area > 0.0) != want_positive:
            loop = tuple(LoopEntry(e.edge, not e.orientation, e.side)
                         for e in reversed(loop))
        loop = tuple(LoopEntry(e.edge, e.orientation,
                               "left" if e.orientation else "right")
                     for e in loop)
        out_loops.append(loop)
    return Face(face.surface, tuple(out_loops), face.reversed_normal)


# -- part families -----------------------------------------------------------------

def make_box(w: float, d: float, h: float, name: str = "box") -> tuple[BRep, list]:
    b = _Builder(name)
    v = [b.vertex(p) for p in [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
                               (0, 0, h), (w, 0, h), (w, d, h), (0, d, h)]]
    for a_, b_ in [(0, 1), (1, 2), (2, 3), (3, 0),
                   (4, 5), (5, 6), (6, 7), (7, 4),
                   (0, 4), (1, 5), (2, 6), (3, 7)]:
        b.line(v[a_], v[b_])
    b.plane_face((0, 0, 0), -_Z, _X, [v[0], v[1], v[2], v[3]], STOCK)
    b.plane_face((0, 0, h), _Z, _X, [v[4], v[5], v[6], v[7]], STOCK)
    b.plane_face((0, 0, 0), -_Y, _X, [v[0], v[1], v[5], v[4]], SIDE)
    b.plane_face((w, 0, 0), _X, _Y, [v[1], v[2], v[6], v[5]], SIDE)
    b.plane_face((0, d, 0), _Y, _X, [v[3], v[2], v[6], v[7]], SIDE)
    b.plane_face((0, 0, 0), -_X, _Y, [v[0], v[3], v[7], v[4]], SIDE)
    brep = b.finish()
    return brep, b.labels


def _wall_loop(b: _Builder, surf: SurfaceGeometry, c_lo: int, seam: int,
               c_hi: int) -> list:
    """Seam-rectangle loop [circle, seam, circle, seam] around a periodic
    wall. The closing circle's traversal direction depends on how the frames
    line up, so probe both and keep the one with zero net winding."""
    anchor = b.edges[c_lo].v_start  # circles are closed: start == end
    s1 = b.edges[seam].v_start == anchor
    for ori_hi in (True, False):
        entries = [(c_lo, True), (seam, s1), (c_hi, ori_hi), (seam, not s1)]
        loop = tuple(LoopEntry(e, o, "left") for e, o in entries)
        face = Face(surf, (loop,), False)
        draft = BRep("probe", b.vertices, b.edges, [face])
        pts, _ = geometry._sample_loop(draft, face, loop,
                                       geometry.surface_periods(surf),
                                       [8, 2, 8, 2])
        if np.linalg.norm(pts[-1] - pts[0]) < 1e-6:
            return entries
    raise GeometryError("wall loop does not close for either orientation")


def _add_hole_wall(b: _Builder, center_xy, r: float, z_lo: float, z_hi: float):
    """Cylindrical hole wall between two heights, with seam; returns
    (bottom_circle, top_circle, wall_face_index)."""
    cx, cy = center_xy
    v_lo = b.vertex((cx + r, cy, z_lo))
    v_hi = b.vertex((cx + r, cy, z_hi))
    c_lo = b.circle((cx, cy, z_lo), _Z, r, v_lo)
    c_hi = b.circle((cx, cy, z_hi), _Z, r, v_hi, reversed_flag=True)
    seam = b.line(v_lo, v_hi)
    surf = SurfaceGeometry("cylinder", _frame((cx, cy, 0.0), _Z, _X),
                           {"radius": r})
    wall = b.face(surf, [_wall_loop(b, surf, c_lo, seam, c_hi)], HOLE_WALL,
                  reversed_normal=True)
    return c_lo, c_hi, wall


def make_box_through_hole(w, d, h, r, name="box_through_hole"):
    b = _Builder(name)
    v = [b.vertex(p) for p in [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
                               (0, 0, h), (w, 0, h), (w, d, h), (0, d, h)]]
    for a_, b_ in [(0, 1), (1, 2), (2, 3), (3, 0),
                   (4, 5), (5, 6), (6, 7), (7, 4),
                   (0, 4), (1, 5), (2, 6), (3, 7)]:
        b.line(v[a_], v[b_])
    c_lo, c_hi, _ = _add_hole_wall(b, (w / 2, d / 2), r, 0.0, h)
    b.plane_face((0, 0, 0), -_Z, _X, [v[0], v[1], v[2], v[3]], STOCK,
                 holes=[[(c_lo, True)]])
    b.plane_face((0, 0, h), _Z, _X, [v[4], v[5], v[6], v[7]], STOCK,
                 holes=[[(c_hi, True)]])
    b.plane_face((0, 0, 0), -_Y, _X, [v[0], v[1], v[5], v[4]], SIDE)
    b.plane_face((w, 0, 0), _X, _Y, [v[1], v[2], v[6], v[5]], SIDE)
    b.plane_face((0, d, 0), _Y, _X, [v[3], v[2], v[6], v[7]], SIDE)
    b.plane_face((0, 0, 0), -_X, _Y, [v[0], v[3], v[7], v[4]], SIDE)
    brep = b.finish()
    return brep, b.labels


def make_box_blind_hole(w, d, h, r, depth, name="box_blind_hole"):
    b = _Builder(name)
    v = [b.vertex(p) for p in [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
                               (0, 0, h), (w, 0, h), (w, d, h), (0, d, h)]]
    for a_, b_ in [(0, 1), (1, 2), (2, 3), (3, 0),
                   (4, 5), (5, 6), (6, 7), (7, 4),
                   (0, 4), (1, 5), (2, 6), (3, 7)]:
        b.line(v[a_], v[b_])
    z0 = h - depth
    c_lo, c_hi, _ = _add_hole_wall(b, (w / 2, d / 2), r, z0, h)
    disk = SurfaceGeometry("plane", _frame((w / 2, d / 2, z0), _Z, _X), {})
    b.face(disk, [[(c_lo, True)]], HOLE_BOTTOM)
    b.plane_face((0, 0, 0), -_Z, _X, [v[0], v[1], v[2], v[3]], STOCK)
    b.plane_face((0, 0, h), _Z, _X, [v[4], v[5], v[6], v[7]], STOCK,
                 holes=[[(c_hi, True)]])
    b.plane_face((0, 0, 0), -_Y, _X, [v[0], v[1], v[5], v[4]], SIDE)
    b.plane_face((w, 0, 0), _X, _Y, [v[1], v[2], v[6], v[5]], SIDE)
    b.plane_face((0, d, 0), _Y, _X, [v[3], v[2], v[6], v[7]], SIDE)
    b.plane_face((0, 0, 0), -_X, _Y, [v[0], v[3], v[7], v[4]], SIDE)
    brep = b.finish()
    return brep, b.labels


def make_cylinder(r: float, h: float, name: str = "cylinder"):
    b = _Builder(name)
    v_lo = b.vertex((r, 0, 0))
    v_hi = b.vertex((r, 0, h))
    c_lo = b.circle((0, 0, 0), _Z, r, v_lo)
    c_hi = b.circle((0, 0, h), _Z, r, v_hi, reversed_flag=True)
    seam = b.line(v_lo, v_hi)
    wall = SurfaceGeometry("cylinder", _frame((0, 0, 0), _Z, _X), {"radius": r})
    b.face(wall, [_wall_loop(b, wall, c_lo, seam, c_hi)], LATERAL)
    cap_lo = SurfaceGeometry("plane", _frame((0, 0, 0), -_Z, _X), {})
    b.face(cap_lo, [[(c_lo, True)]], CAP)
    cap_hi = SurfaceGeometry("plane", _frame((0, 0, h), _Z, _X), {})
    b.face(cap_hi, [[(c_hi, True)]], CAP)
    brep = b.finish()
    return brep, b.labels


def make_wedge(w, d, h0, h1, name="wedge"):
    """Box with its top plane tilted about the y axis (h0 at x=0, h1 at x=w)."""
    b = _Builder(name)
    v = [b.vertex(p) for p in [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),
                               (0, 0, h0), (w, 0, h1), (w, d, h1), (0, d, h0)]]
    for a_, b_ in [(0, 1), (1, 2), (2, 3), (3, 0),
                   (4, 5), (5, 6), (6, 7), (7, 4),
                   (0, 4), (1, 5), (2, 6), (3, 7)]:
        b.line(v[a_], v[b_])
    top_n = _unit((-(h1 - h0), 0.0, w))
    top_r = _unit((w, 0.0, h1 - h0))
    b.plane_face((0, 0, 0), -_Z, _X, [v[0], v[1], v[2], v[3]], STOCK)
    b.plane_face((0, 0, h0), top_n, top_r, [v[4], v[5], v[6], v[7]], CHAMFER)
    b.plane_face((0, 0, 0), -_Y, _X, [v[0], v[1], v[5], v[4]], SIDE)
    b.plane_face((w, 0, 0), _X, _Y, [v[1], v[2], v[6], v[5]], SIDE)
    b.plane_face((0, d, 0), _Y, _X, [v[3], v[2], v[6], v[7]], SIDE)
    b.plane_face((0, 0, 0), -_X, _Y, [v[0], v[3], v[7], v[4]], SIDE)
    brep = b.finish()
    return brep, b.labels


def make_chamfer_box(w, d, h, c, name="chamfer_box"):
    """Box with the top edge at x=w chamfered by ``c`` at 45 degrees."""
    b = _Builder(name)
    pts = [(0, 0, 0), (w, 0, 0), (w, d, 0), (0, d, 0),          # bottom
           (0, 0, h), (w - c, 0, h), (w - c, d, h), (0, d, h),  # top
           (w, 0, h - c), (w, d, h - c)]                        # chamfer base
    v = [b.vertex(p) for p in pts]
    for a_, b_ in [(0, 1), (1, 2), (2, 3), (3, 0),
                   (4, 5), (5, 6), (6, 7), (7, 4),
                   (8, 9), (0, 4), (1, 8), (2, 9), (3, 7),
                   (5, 8), (6, 9)]:
        b.line(v[a_], v[b_])
    ch_n = _unit((1.0, 0.0, 1.0))
    ch_r = _unit((-1.0, 0.0, 1.0))
    b.plane_face((0, 0, 0), -_Z, _X, [v[0], v[1], v[2], v[3]], STOCK)
    b.plane_face((0, 0, h), _Z, _X, [v[4], v[5], v[6], v[7]], STOCK)
    b.plane_face((w, 0, h - c), ch_n, ch_r, [v[8], v[5], v[6], v[9]], CHAMFER)
    b.plane_face((0, 0, 0), -_Y, _X, [v[0], v[1], v[8], v[5], v[4]], SIDE)
    b.plane_face((w, 0, 0), _X, _Y, [v[1], v[2], v[9], v[8]], SIDE)
    b.plane_face((0, d, 0), _Y, _X, [v[3], v[2], v[9], v[6], v[7]], SIDE)
    b.plane_face((0, 0, 0), -_X, _Y, [v[0], v[3], v[7], v[4]], SIDE)
    brep = b.finish()
    return brep, b.labels


def make_torus(major: float, minor: float, name: str = "torus"):
    """Full torus: a single face with no bounding loops."""
    b = _Builder(name)
    surf = SurfaceGeometry("torus", _frame((0, 0, 0), _Z, _X),
                           {"major_radius": major, "minor_radius": minor})
    b.face(surf, [], DONUT)
    brep = b.finish()
    return brep, b.labels


def make_cone_frustum(r_lo: float, r_hi: float, h: float, name="cone_frustum"):
    """Truncated cone: r_lo at z=0, r_hi < r_lo at z=h, plus two caps."""
    b = _Builder(name)
    v_lo = b.vertex((r_lo, 0, 0))
    v_hi = b.vertex((r_hi, 0, h))
    c_lo = b.circle((0, 0, 0), _Z, r_lo, v_lo)
    c_hi = b.circle((0, 0, h), _Z, r_hi, v_hi, reversed_flag=True)
    seam = b.line(v_hi, v_lo)
    half_angle = float(np.arctan2(r_lo - r_hi, h))
    # apex-down frame: origin at the top center, axis pointing down, so the
    # radius R + v sin(g) grows along +v and stays positive on the face
    surf = SurfaceGeometry("cone", _frame((0, 0, h), -_Z, _X),
                           {"radius": r_hi, "half_angle": half_angle})
    b.face(surf, [_wall_loop(b, surf, c_lo, seam, c_hi)], LATERAL)
    b.face(SurfaceGeometry("plane", _frame((0, 0, 0), -_Z, _X), {}),
           [[(c_lo, True)]], CAP)
    b.face(SurfaceGeometry("plane", _frame((0, 0, h), _Z, _X), {}),
           [[(c_hi, True)]], CAP)
    brep = b.finish()
    return brep, b.labels


# -- corpus generation -----------------------------------------------------------

@dataclass
class PartRecord:
    brep: BRep
    face_labels: list
    part_label: int
    split: str = "train"

    @property
    def name(self) -> str:
        return self.brep.name


def _make_family_part(family: str, rng: np.random.Generator, name: str):
    u = rng.uniform
    if family == "box":
        return make_box(u(0.5, 2.0), u(0.5, 2.0), u(0.5, 2.0), name)
    if family == "box_through_hole":
        w, d, h = u(0.8, 2.0), u(0.8, 2.0), u(0.5, 2.0)
        return make_box_through_hole(w, d, h, u(0.15, 0.35) * min(w, d), name)
    if family == "box_blind_hole":
        w, d, h = u(0.8, 2.0), u(0.8, 2.0), u(0.8, 2.0)
        return make_box_blind_hole(w, d, h, u(0.15, 0.35) * min(w, d),
                                   u(0.3, 0.8) * h, name)
    if family == "cylinder":
        return make_cylinder(u(0.3, 1.0), u(0.5, 2.0), name)
    if family == "wedge":
        w, d, h0 = u(0.8, 2.0), u(0.5, 2.0), u(0.6, 1.6)
        h1 = h0 * u(0.3, 0.75)
        if rng.random() < 0.5:
            h0, h1 = h1, h0
        return make_wedge(w, d, h0, h1, name)
    if family == "chamfer_box":
        w, d, h = u(0.8, 2.0), u(0.8, 2.0), u(0.8, 2.0)
        return make_chamfer_box(w, d, h, u(0.15, 0.45) * min(w, h), name)
    if family == "torus":
        major = u(0.5, 1.0)
        return make_torus(major, u(0.15, 0.45) * major, name)
    if family == "cone_frustum":
        r_lo = u(0.5, 1.2)
        return make_cone_frustum(r_lo, r_lo * u(0.3, 0.7), u(0.5, 1.5), name)
    raise ValueError(f"unknown family {family!r}")


def even_counts(total: int) -> dict:
    base = total // len(FAMILIES)
    counts = {f: base for f in FAMILIES}
    for f in FAMILIES[: total - base * len(FAMILIES)]:
        counts[f] += 1
    return counts


def generate_corpus(counts: dict, seed: int) -> list[PartRecord]:
    """Deterministically generate labeled parts and assign stratified
    train/val/test splits (every family lands in every split when its
    count permits)."""
    records = []
    for fi, family in enumerate(FAMILIES):
        n = counts.get(family, 0)
        fam_records = []
        for k in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([seed, fi, k]))
            brep, labels = _make_family_part(family, rng, f"{family}_{k:04d}")
            fam_records.append(PartRecord(brep, labels, fi))
        _assign_splits(fam_records, np.random.default_rng(
            np.random.SeedSequence([seed, fi, 0xC0FFEE])))
        records.extend(fam_records)
    return records


def _assign_splits(records: list, rng: np.random.Generator,
                   val_frac: float = 0.15, test_frac: float = 0.15) -> None:
    n = len(records)
    if n == 0:
        return
    order = rng.permutation(n)
    if n == 1:
        picks = {"train": [0]}
    elif n == 2:
        picks = {"train": [order[0]], "test": [order[1]]}
    else:
        n_val = max(1, int(round(val_frac * n)))
        n_test = max(1, int(round(test_frac * n)))
        picks = {"val": order[:n_val],
                 "test": order[n_val:n_val + n_test],
                 "train": order[n_val + n_test:]}
    for split, idxs in picks.items():
        for i in idxs:
            records[i].split = split


# -- normalization ------------------------------------------------------------------

@dataclass
class NormalizeTransform:
    """model -> normalized frame: p_norm = (p - center) * scale."""

    center: np.ndarray
    scale: float

    def to_doc(self):
        return {"center": self.center.tolist(), "scale": self.scale}

    @staticmethod
    def from_doc(doc):
        return NormalizeTransform(np.asarray(doc["center"], dtype=np.float64),
                                  float(doc["scale"]))


_LENGTH_PARAMS = ("radius", "major_radius", "minor_radius")


def normalize_part(brep: BRep) -> tuple[BRep, NormalizeTransform]:
    """Rigid translation + uniform scale mapping the part's bounds onto the
    centered unit cube (longest axis spans exactly 1)."""
    lo, hi = geometry.brep_bounds(brep)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise GeometryError(f"{brep.name}: degenerate (zero-extent) part")
    center = (lo + hi) / 2.0
    scale = 1.0 / extent
    if abs(scale - 1.0) < 1e-12 and np.abs(center).max() < 1e-12:
        return brep, NormalizeTransform(np.zeros(3), 1.0)  # exact idempotence

    def map_point(p):
        return (p - center) * scale

    def map_frame(fr: Frame) -> Frame:
        return Frame(map_point(fr.origin), fr.axis.copy(), fr.ref_dir.copy())

    def map_params(params):
        return {k: (v * scale if k in _LENGTH_PARAMS else v)
                for k, v in params.items()}

    vertices = [Vertex(map_point(v.position)) for v in brep.vertices]
    edges = []
    for e in brep.edges:
        t0, t1 = e.t_start, e.t_end
        if e.curve.kind == "line":
            t0, t1 = t0 * scale, t1 * scale
        edges.append(Edge(CurveGeometry(e.curve.kind, map_frame(e.curve.frame),
                                        map_params(e.curve.params)),
                          e.v_start, e.v_end, t0, t1, e.reversed))
    faces = [Face(SurfaceGeometry(f.surface.kind, map_frame(f.surface.frame),
                                  map_params(f.surface.params)),
                  f.loops, f.reversed_normal) for f in brep.faces]
    out = BRep(brep.name, vertices, edges, faces)
    return out, NormalizeTransform(center, scale)


# -- dataset ---------------------------------------------------------------------------

@dataclass
class Dataset:
    """Normalized parts plus their cached per-face sample sets."""

    parts: list
    transforms: list
    samples: list            # per part: {face_index: FaceSampleSet}
    sampling_errors: list    # (part_name, face_index, message)
    manifest: dict = field(default_factory=dict)

    def split_indices(self, split: str) -> list:
        return [i for i, p in enumerate(self.parts) if p.split == split]

    def total_faces(self) -> int:
        return sum(len(p.brep.faces) for p in self.parts)


def build_dataset(records: list, seed: int, n_keep: int = 500,
                  threads: int = 1) -> Dataset:
    """Normalize every part and precompute its per-face sample sets.

    Sampling is seeded per (dataset seed, part index, face index), so the
    result is identical under any thread count. Faces whose probes never
    straddle the boundary are recorded as sampling errors, not dropped.
    """
    parts = []
    transforms = []
    for rec in records:
        norm, tf = normalize_part(rec.brep)
        parts.append(PartRecord(norm, list(rec.face_labels), rec.part_label,
                                rec.split))
        transforms.append(tf)

    def sample_one(pi: int, fi: int):
        seq = np.random.SeedSequence([seed, pi, fi])
        return sample_sdf(parts[pi].brep, fi, seq, n_keep=n_keep)

    jobs = [(pi, fi) for pi, p in enumerate(parts)
            for fi in range(len(p.brep.faces))]
    results: dict = {}
    errors = []
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = {(pi, fi): pool.submit(sample_one, pi, fi)
                    for pi, fi in jobs}
        for (pi, fi), fut in futs.items():
            try:
                results[(pi, fi)] = fut.result()
            except SamplingError as exc:
                errors.append((parts[pi].name, fi, str(exc)))
    else:
        for pi, fi in jobs:
            try:
                results[(pi, fi)] = sample_one(pi, fi)
            except SamplingError as exc:
                errors.append((parts[pi].name, fi, str(exc)))

    samples = [{fi: results[(pi, fi)] for fi in range(len(p.brep.faces))
                if (pi, fi) in results} for pi, p in enumerate(parts)]
    ds = Dataset(parts, transforms, samples, sorted(errors))
    ds.manifest = _build_manifest(ds, seed, n_keep)
    return ds


def _sample_blob(part_samples: dict) -> bytes:
    chunks = []
    for fi in sorted(part_samples):
        sset = part_samples[fi]
        chunks.append(struct.pack("<q", fi))
        chunks.append(np.ascontiguousarray(sset.samples, dtype="<f8").tobytes())
    return b"".join(chunks)


def _part_doc(part: PartRecord, tf: NormalizeTransform) -> dict:
    return brep_to_doc(part.brep, extra={
        "face_labels": [int(x) for x in part.face_labels],
        "part_label": int(part.part_label),
        "split": part.split,
        "normalization": tf.to_doc(),
    })


def _doc_bytes(doc: dict) -> bytes:
    return (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode()


def _build_manifest(ds: Dataset, seed: int, n_keep: int) -> dict:
    hasher = hashlib.sha256()
    part_entries = []
    for part, tf, psamples in zip(ds.parts, ds.transforms, ds.samples):
        hasher.update(_doc_bytes(_part_doc(part, tf)))
        hasher.update(_sample_blob(psamples))
        part_entries.append({
            "name": part.name,
            "split": part.split,
            "n_faces": len(part.brep.faces),
            "sampled_faces": len(psamples),
        })
    return {
        "format_version": 1,
        "generator_version": GENERATOR_VERSION,
        "seed": seed,
        "samples_per_face": n_keep,
        "n_parts": len(ds.parts),
        "n_faces": ds.total_faces(),
        "parts": part_entries,
        "sampling_errors": [{"part": p, "face": f, "error": m}
                            for p, f, m in ds.sampling_errors],
        "content_hash": hasher.hexdigest(),
    }


def save_dataset(ds: Dataset, outdir) -> None:
    from pathlib import Path

    outdir = Path(outdir)
    (outdir / "parts").mkdir(parents=True, exist_ok=True)
    (outdir / "samples").mkdir(parents=True, exist_ok=True)
    for part, tf, psamples in zip(ds.parts, ds.transforms, ds.samples):
        (outdir / "parts" / f"{part.name}.json").write_bytes(
            _doc_bytes(_part_doc(part, tf)))
        (outdir / "samples" / f"{part.name}.bin").write_bytes(
            _sample_blob(psamples))
    (outdir / "manifest.json").write_bytes(_doc_bytes(ds.manifest))


def load_dataset(path) -> Dataset:
    from pathlib import Path

    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    n_keep = manifest["samples_per_face"]
    parts, transforms, samples = [], [], []
    for entry in manifest["parts"]:
        doc = json.loads((path / "parts" / f"{entry['name']}.json").read_text())
        brep = parse_brep(doc)
        parts.append(PartRecord(brep, list(doc["face_labels"]),
                                int(doc["part_label"]), doc["split"]))
        transforms.append(NormalizeTransform.from_doc(doc["normalization"]))
        blob = (path / "samples" / f"{entry['name']}.bin").read_bytes()
        rec_size = 8 + n_keep * 6 * 8
        psamples = {}
        for off in range(0, len(blob), rec_size):
            (fi,) = struct.unpack_from("<q", blob, off)
            arr = np.frombuffer(blob, dtype="<f8", count=n_keep * 6,
                                offset=off + 8).reshape(n_keep, 6).copy()
            psamples[fi] = FaceSampleSet(fi, arr)
        samples.append(psamples)
    errors = [(e["part"], e["face"], e["error"])
              for e in manifest["sampling_errors"]]
    ds = Dataset(parts, transforms, samples, errors, manifest)
    check = _build_manifest(ds, manifest["seed"], n_keep)
    if check["content_hash"] != manifest["content_hash"]:
        raise ValueError(f"{path}: dataset content does not match its manifest")
    return ds
