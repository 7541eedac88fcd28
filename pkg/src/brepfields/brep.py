"""B-Rep data model, document parser, and derived face-adjacency graph.

The topology is hierarchical: faces reference edges through ordered loops,
edges reference vertices. Geometry is carried as fixed-parameter analytic
primitives (plane/cylinder/cone/sphere/torus surfaces; line/circle/ellipse
curves), each positioned by an origin/axis/ref_dir frame.

Document format: JSON per ``schema/brep-v1.schema.json`` (field names are
frozen there; ``version`` is mandatory). Loops are directed so consecutive
edges chain head-to-tail; on faces whose surface is periodic, seam edges may
appear twice in one loop.
"""

from __future__ import annotations

import importlib.resources
import json
from dataclasses import dataclass, field

import numpy as np

SURFACE_KINDS = ("plane", "cylinder", "cone", "sphere", "torus")
CURVE_KINDS = ("line", "circle", "ellipse")

# scalar parameter names per kind, in feature-layout order
SURFACE_PARAMS = {
    "plane": (),
    "cylinder": ("radius",),
    "cone": ("radius", "half_angle"),
    "sphere": ("radius",),
    "torus": ("major_radius", "minor_radius"),
}
CURVE_PARAMS = {
    "line": (),
    "circle": ("radius",),
    "ellipse": ("major_radius", "minor_radius"),
}

FRAME_ORTHO_TOL = 1e-9
# geometric closure checks scale with the model bounding box (floored so
# tiny parts are not held to an impossible absolute bar)
CLOSURE_REL_TOL = 1e-6


class SchemaError(ValueError):
    """Document violates the structural schema or references dangle."""


class UnsupportedPrimitiveError(ValueError):
    """Geometry kind outside the fixed-parameter supported set."""


class GeometryError(ValueError):
    """Structurally valid document with inconsistent geometry."""


def _vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    v.flags.writeable = False
    return v


@dataclass(frozen=True)
class Frame:
    """Origin plus a right-handed axis/ref_dir pair (axis ⟂ ref_dir)."""

    origin: np.ndarray
    axis: np.ndarray
    ref_dir: np.ndarray

    @property
    def ydir(self) -> np.ndarray:
        return np.cross(self.axis, self.ref_dir)

    def to_doc(self) -> dict:
        return {"origin": self.origin.tolist(), "axis": self.axis.tolist(),
                "ref_dir": self.ref_dir.tolist()}

    @staticmethod
    def from_doc(doc: dict) -> "Frame":
        return Frame(_vec(doc["origin"]), _vec(doc["axis"]), _vec(doc["ref_dir"]))


@dataclass(frozen=True)
class SurfaceGeometry:
    kind: str
    frame: Frame
    params: dict

    @property
    def supported(self) -> bool:
        return self.kind in SURFACE_KINDS


@dataclass(frozen=True)
class CurveGeometry:
    kind: str
    frame: Frame
    params: dict

    @property
    def supported(self) -> bool:
        return self.kind in CURVE_KINDS


@dataclass(frozen=True)
class Vertex:
    position: np.ndarray


@dataclass(frozen=True)
class Edge:
    curve: CurveGeometry
    v_start: int
    v_end: int
    t_start: float
    t_end: float
    reversed: bool


@dataclass(frozen=True)
class LoopEntry:
    edge: int
    orientation: bool  # True: traverse edge start->end
    side: str          # which side of the edge this face lies on


@dataclass(frozen=True)
class Face:
    surface: SurfaceGeometry
    loops: tuple
    reversed_normal: bool

    def loop_entries(self):
        for loop in self.loops:
            yield from loop


@dataclass
class BRep:
    name: str
    vertices: list
    edges: list
    faces: list

    def counts(self) -> tuple[int, int, int]:
        return len(self.vertices), len(self.edges), len(self.faces)


# -- schema ------------------------------------------------------------------

def _schema() -> dict:
    text = importlib.resources.files("brepfields").joinpath(
        "schema/brep-v1.schema.json").read_text()
    return json.loads(text)


_SCHEMA_CACHE: dict = {}


def validate_document(doc: dict) -> None:
    """Structural validation against the shipped JSON schema."""
    import jsonschema

    if "validator" not in _SCHEMA_CACHE:
        _SCHEMA_CACHE["validator"] = jsonschema.Draft7Validator(_schema())
    errors = sorted(_SCHEMA_CACHE["validator"].iter_errors(doc),
                    key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        path = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise SchemaError(f"{path}: {e.message}")


# -- parsing -------------------------------------------------------------------

def _check_frame(frame: Frame, where: str) -> None:
    na = np.linalg.norm(frame.axis)
    nr = np.linalg.norm(frame.ref_dir)
    if abs(na - 1.0) > FRAME_ORTHO_TOL or abs(nr - 1.0) > FRAME_ORTHO_TOL:
        raise GeometryError(f"{where}: frame axis/ref_dir not unit length")
    if abs(float(frame.axis @ frame.ref_dir)) > FRAME_ORTHO_TOL:
        raise GeometryError(f"{where}: frame axis and ref_dir not orthogonal")
    if not (np.isfinite(frame.origin).all() and np.isfinite(frame.axis).all()
            and np.isfinite(frame.ref_dir).all()):
        raise GeometryError(f"{where}: non-finite frame")


def _check_params(kind, params, table, where):
    names = table[kind]
    for p in names:
        if p not in params:
            raise SchemaError(f"{where}: missing parameter {p!r} for kind {kind!r}")
    for p, val in params.items():
        if p not in names:
            raise SchemaError(f"{where}: unexpected parameter {p!r} for kind {kind!r}")
        if not np.isfinite(val):
            raise GeometryError(f"{where}: non-finite parameter {p!r}")
    for p in ("radius", "major_radius", "minor_radius"):
        if p in params and params[p] <= 0.0:
            raise GeometryError(f"{where}: {p} must be positive")
    if "half_angle" in params and not (0.0 < params["half_angle"] < np.pi / 2):
        raise GeometryError(f"{where}: half_angle outside (0, pi/2)")


def parse_brep(doc: dict, strict: bool = True) -> BRep:
    """Parse and validate a B-Rep document.

    With ``strict`` (default) any geometry kind outside the supported
    fixed-parameter set is rejected with :class:`UnsupportedPrimitiveError`.
    With ``strict=False`` such entities are kept as inert placeholders
    (useful to answer :func:`is_supported`); geometric consistency checks
    are then skipped because placeholder geometry cannot be evaluated.
    """
    validate_document(doc)

    vertices = []
    for i, v in enumerate(doc["vertices"]):
        pos = _vec(v["xyz"])
        if not np.isfinite(pos).all():
            raise GeometryError(f"vertices[{i}]: non-finite position")
        vertices.append(Vertex(pos))

    edges = []
    any_unsupported = False
    for i, e in enumerate(doc["edges"]):
        where = f"edges[{i}]"
        kind = e["kind"]
        if kind not in CURVE_KINDS:
            if strict:
                raise UnsupportedPrimitiveError(f"{where}: curve kind {kind!r}")
            any_unsupported = True
            curve = CurveGeometry(kind, Frame.from_doc(e["frame"]), dict(e["params"]))
        else:
            frame = Frame.from_doc(e["frame"])
            _check_frame(frame, where)
            _check_params(kind, e["params"], CURVE_PARAMS, where)
            curve = CurveGeometry(kind, frame, dict(e["params"]))
        for ref in (e["v_start"], e["v_end"]):
            if ref >= len(vertices):
                raise SchemaError(f"{where}: vertex reference {ref} out of range")
        if not e["t_start"] < e["t_end"]:
            raise GeometryError(f"{where}: t_start must be < t_end")
        edges.append(Edge(curve, e["v_start"], e["v_end"],
                          float(e["t_start"]), float(e["t_end"]), e["reversed"]))

    faces = []
    for i, f in enumerate(doc["faces"]):
        where = f"faces[{i}]"
        kind = f["kind"]
        if kind not in SURFACE_KINDS:
            if strict:
                raise UnsupportedPrimitiveError(f"{where}: surface kind {kind!r}")
            any_unsupported = True
            surface = SurfaceGeometry(kind, Frame.from_doc(f["frame"]), dict(f["params"]))
        else:
            frame = Frame.from_doc(f["frame"])
            _check_frame(frame, where)
            _check_params(kind, f["params"], SURFACE_PARAMS, where)
            surface = SurfaceGeometry(kind, frame, dict(f["params"]))
        loops = []
        for li, loop in enumerate(f["loops"]):
            entries = []
            for ei, entry in enumerate(loop):
                if entry["edge"] >= len(edges):
                    raise SchemaError(f"{where}.loops[{li}][{ei}]: edge reference "
                                      f"{entry['edge']} out of range")
                entries.append(LoopEntry(entry["edge"], entry["orientation"],
                                         entry["side"]))
            loops.append(tuple(entries))
        faces.append(Face(surface, tuple(loops), f["reversed_normal"]))

    brep = BRep(doc["name"], vertices, edges, faces)
    if not any_unsupported:
        _check_geometry(brep)
    return brep


def _check_geometry(brep: BRep) -> None:
    """Endpoint coincidence and loop-closure checks (supported kinds only)."""
    from .geometry import brep_bounds, eval_curve

    lo, hi = brep_bounds(brep)
    diag = float(np.linalg.norm(hi - lo))
    tol = CLOSURE_REL_TOL * max(diag, 1.0)

    for i, e in enumerate(brep.edges):
        p0 = eval_curve(e.curve, np.array(e.t_start))
        p1 = eval_curve(e.curve, np.array(e.t_end))
        if e.reversed:
            p0, p1 = p1, p0
        vs = brep.vertices[e.v_start].position
        ve = brep.vertices[e.v_end].position
        if np.linalg.norm(p0 - vs) > tol or np.linalg.norm(p1 - ve) > tol:
            raise GeometryError(f"edges[{i}]: endpoints do not coincide with "
                                f"referenced vertices (tol {tol:g})")

    for fi, face in enumerate(brep.faces):
        for li, loop in enumerate(face.loops):
            if not loop:
                continue
            pts = []
            for entry in loop:
                e = brep.edges[entry.edge]
                start = brep.vertices[e.v_start].position
                end = brep.vertices[e.v_end].position
                pts.append((start, end) if entry.orientation else (end, start))
            for k in range(len(pts)):
                tail = pts[k][1]
                head = pts[(k + 1) % len(pts)][0]
                if np.linalg.norm(tail - head) > tol:
                    raise GeometryError(
                        f"faces[{fi}].loops[{li}]: edges do not chain into a "
                        f"closed cycle at position {k} (tol {tol:g})")


def is_supported(brep: BRep) -> bool:
    """True iff every surface and curve kind is in the supported sets."""
    return (all(f.surface.supported for f in brep.faces)
            and all(e.curve.supported for e in brep.edges))


# -- serialization -------------------------------------------------------------

def brep_to_doc(brep: BRep, extra: dict | None = None) -> dict:
    doc = {
        "version": 1,
        "name": brep.name,
        "vertices": [{"xyz": v.position.tolist()} for v in brep.vertices],
        "edges": [{
            "kind": e.curve.kind,
            "frame": e.curve.frame.to_doc(),
            "params": {k: float(v) for k, v in e.curve.params.items()},
            "v_start": e.v_start, "v_end": e.v_end,
            "t_start": e.t_start, "t_end": e.t_end,
            "reversed": e.reversed,
        } for e in brep.edges],
        "faces": [{
            "kind": f.surface.kind,
            "frame": f.surface.frame.to_doc(),
            "params": {k: float(v) for k, v in f.surface.params.items()},
            "reversed_normal": f.reversed_normal,
            "loops": [[{"edge": en.edge, "orientation": en.orientation,
                        "side": en.side} for en in loop] for loop in f.loops],
        } for f in brep.faces],
    }
    if extra:
        doc.update(extra)
    return doc


def save_brep(brep: BRep, path, extra: dict | None = None) -> None:
    with open(path, "w") as f:
        json.dump(brep_to_doc(brep, extra), f, indent=1, sort_keys=True)
        f.write("\n")


def load_brep(path, strict: bool = True) -> BRep:
    with open(path) as f:
        return parse_brep(json.load(f), strict=strict)


# -- face adjacency -------------------------------------------------------------

@dataclass
class FaceAdjacencyGraph:
    """Faces as nodes; one link per B-Rep edge with exactly two incidences.

    Parallel links (two faces sharing several edges) are preserved, and a
    seam edge bounded twice by one face becomes a self-link. ``neighbors``
    lists, for every face, the partner face of each of its loop entries in
    loop order; this ordering is intrinsic to the face definition, so
    downstream reductions over it are stable under entity re-labelling.
    """

    n_faces: int
    links: list = field(default_factory=list)       # (face_a, face_b, edge)
    neighbors: list = field(default_factory=list)   # per face: [face, ...]

    def degree(self, face: int) -> int:
        return len(self.neighbors[face])


def face_adjacency(brep: BRep) -> FaceAdjacencyGraph:
    incidences: dict[int, list[tuple[int, int]]] = {}
    for fi, face in enumerate(brep.faces):
        for pos, entry in enumerate(face.loop_entries()):
            incidences.setdefault(entry.edge, []).append((fi, pos))

    links = []
    partner: dict[tuple[int, int], int] = {}
    for ei in range(len(brep.edges)):
        inc = incidences.get(ei, [])
        if len(inc) != 2:
            # boundary or non-manifold edge: contributes no link
            continue
        (fa, pa), (fb, pb) = inc
        links.append((min(fa, fb), max(fa, fb), ei))
        partner[(fa, pa)] = fb
        partner[(fb, pb)] = fa

    neighbors = []
    for fi, face in enumerate(brep.faces):
        row = []
        for pos, entry in enumerate(face.loop_entries()):
            if (fi, pos) in partner:
                row.append(partner[(fi, pos)])
        neighbors.append(row)
    return FaceAdjacencyGraph(len(brep.faces), links, neighbors)
