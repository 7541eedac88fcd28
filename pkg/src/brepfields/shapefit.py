"""Gradient-based shape-parameter fitting against a target point cloud.

The trained encoder/decoder acts as a differentiable rasterizer: decoded
surface samples depend on the face codes, which depend on the raw shape
parameters through featurization. The fit objective is a symmetric Chamfer
distance in which each decoded sample is soft-weighted by sigmoid(-d/tau),
keeping the inside-the-clip-mask selection differentiable. Optimization is
plain SGD over the selected (free) parameters only; frames touched by a
step are re-orthonormalized so the model stays a valid B-Rep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .autodiff import Tape, backward, gather_rows, rows_dot
from .brep import (BRep, CurveGeometry, Edge, Face, Frame, SurfaceGeometry,
                   Vertex)
from .decoder import decode
from .encoder import GraphIndex, encode, featurize_t
from .geometry import classify_batch, face_geometry

FIT_GRID = 32
FIT_RANGE = (-0.1, 1.1)


@dataclass
class FitProblem:
    brep: BRep                      # normalized initial model
    free: list                      # parameter names, e.g. "face:5:origin"
    target: np.ndarray              # (M, 3) point cloud
    tau: float = 0.02
    step_size: float = 1e-2
    steps: int = 200
    grid: int = FIT_GRID

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.target.ndim != 2 or self.target.shape[1] != 3 \
                or len(self.target) < 1:
            raise ValueError("target cloud must be (M, 3) with M >= 1")


@dataclass
class FitTrace:
    losses: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    chamfer_initial: float = 0.0
    chamfer_final: float = 0.0


# -- shape parameter state ---------------------------------------------------------

def shape_state(brep: BRep) -> dict:
    """Flatten every geometry scalar/frame (and vertex position) into a
    named array dict. Topology is not represented and cannot move."""
    state = {}
    for i, v in enumerate(brep.vertices):
        state[f"vertex:{i}:position"] = v.position.copy()
    for i, e in enumerate(brep.edges):
        state[f"edge:{i}:origin"] = e.curve.frame.origin.copy()
        state[f"edge:{i}:axis"] = e.curve.frame.axis.copy()
        state[f"edge:{i}:ref_dir"] = e.curve.frame.ref_dir.copy()
        for name, val in e.curve.params.items():
            state[f"edge:{i}:{name}"] = np.asarray(float(val))
    for i, f in enumerate(brep.faces):
        state[f"face:{i}:origin"] = f.surface.frame.origin.copy()
        state[f"face:{i}:axis"] = f.surface.frame.axis.copy()
        state[f"face:{i}:ref_dir"] = f.surface.frame.ref_dir.copy()
        for name, val in f.surface.params.items():
            state[f"face:{i}:{name}"] = np.asarray(float(val))
    return state


def apply_state(brep: BRep, state: dict) -> BRep:
    """Rebuild a BRep with geometry taken from a state dict."""
    def frame(prefix):
        return Frame(state[f"{prefix}:origin"].copy(),
                     state[f"{prefix}:axis"].copy(),
                     state[f"{prefix}:ref_dir"].copy())

    vertices = [Vertex(state[f"vertex:{i}:position"].copy())
                for i in range(len(brep.vertices))]
    edges = []
    for i, e in enumerate(brep.edges):
        params = {name: float(state[f"edge:{i}:{name}"])
                  for name in e.curve.params}
        edges.append(Edge(CurveGeometry(e.curve.kind, frame(f"edge:{i}"),
                                        params),
                          e.v_start, e.v_end, e.t_start, e.t_end, e.reversed))
    faces = []
    for i, f in enumerate(brep.faces):
        params = {name: float(state[f"face:{i}:{name}"])
                  for name in f.surface.params}
        faces.append(Face(SurfaceGeometry(f.surface.kind, frame(f"face:{i}"),
                                          params),
                          f.loops, f.reversed_normal))
    return BRep(brep.name, vertices, edges, faces)


def _orthonormalize_frames(state: dict, touched: set) -> None:
    prefixes = {name.rsplit(":", 1)[0] for name in touched
                if name.endswith((":axis", ":ref_dir"))}
    for prefix in prefixes:
        a = state[f"{prefix}:axis"]
        r = state[f"{prefix}:ref_dir"]
        a /= np.linalg.norm(a)
        r -= (r @ a) * a
        r /= np.linalg.norm(r)


def _geo_tensors(tape: Tape, brep: BRep, state: dict, leaves: dict):
    """Per-entity geometry tensor dicts; free params come from ``leaves``."""
    def get(name):
        if name in leaves:
            return leaves[name]
        return tape.tensor(state[name])

    vertex_t = [get(f"vertex:{i}:position")
                for i in range(len(brep.vertices))]
    edge_t = []
    for i, e in enumerate(brep.edges):
        geo = {k: get(f"edge:{i}:{k}") for k in ("origin", "axis", "ref_dir")}
        for name in e.curve.params:
            geo[name] = get(f"edge:{i}:{name}")
        edge_t.append(geo)
    face_t = []
    for i, f in enumerate(brep.faces):
        geo = {k: get(f"face:{i}:{k}") for k in ("origin", "axis", "ref_dir")}
        for name in f.surface.params:
            geo[name] = get(f"face:{i}:{name}")
        face_t.append(geo)
    return vertex_t, edge_t, face_t


def _fit_grid_uv(grid: int) -> np.ndarray:
    axis = np.linspace(FIT_RANGE[0], FIT_RANGE[1], grid)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def fit_loss(problem: FitProblem, model_params: dict, state: dict,
             tape: Tape, notes: list | None = None):
    """Soft-weighted symmetric Chamfer between the decoded surface and the
    target cloud; returns (loss tensor, free-parameter leaves)."""
    brep = problem.brep
    leaves = {name: tape.tensor(state[name], name=name)
              for name in problem.free}
    pt = {k: tape.tensor(v, name=k) for k, v in model_params.items()}
    vertex_t, edge_t, face_t = _geo_tensors(tape, brep, state, leaves)
    vfeat, efeat, ffeat = featurize_t(tape, brep, vertex_t, edge_t, face_t)
    codes = encode(pt, GraphIndex.from_brep(brep), vfeat, efeat, ffeat)

    uv = _fit_grid_uv(problem.grid)
    n_pts = len(uv)
    from .autodiff import repeat_rows
    code_rows = repeat_rows(codes, np.full(len(brep.faces), n_pts))
    uv_all = np.tile(uv, (len(brep.faces), 1))
    pred = decode(pt, code_rows, tape.tensor(uv_all))
    xyz = pred[:, 0:3]
    dcol = pred[:, 3:4]
    w = (dcol * (-1.0 / problem.tau)).sigmoid()

    positions = xyz.value
    dvals = dcol.value[:, 0]
    target = problem.target

    # decoded -> target: soft-weighted mean squared nearest distance
    nn = cKDTree(target).query(positions)[1]
    diff1 = xyz - tape.tensor(target[nn])
    per_row = rows_dot(diff1.square(), tape.tensor(np.ones(3)))
    term1 = (per_row * w).sum() / (w.sum() + 1e-12)

    # target -> decoded: nearest among inside-predicted samples
    inside = np.where(dvals < 0.0)[0]
    if len(inside) == 0:
        if notes is not None:
            notes.append("no inside predictions; unweighted chamfer fallback")
        inside = np.arange(len(positions))
    nn2 = cKDTree(positions[inside]).query(target)[1]
    matched = gather_rows(xyz, inside[nn2])
    diff2 = matched - tape.tensor(target)
    term2 = diff2.square().sum() * (1.0 / len(target))

    return term1 + term2, leaves


def hard_chamfer(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Plain symmetric Chamfer (mean squared nearest-neighbor distance)."""
    if len(points_a) == 0 or len(points_b) == 0:
        return float("inf")
    d_ab = cKDTree(points_b).query(points_a)[0]
    d_ba = cKDTree(points_a).query(points_b)[0]
    return float((d_ab ** 2).mean() + (d_ba ** 2).mean())


def decoded_surface(problem: FitProblem, model_params: dict,
                    state: dict) -> np.ndarray:
    """Decoded surface samples with the hard d<0 filter applied."""
    tape = Tape()
    loss_uv = _fit_grid_uv(problem.grid)
    from .autodiff import repeat_rows
    brep = apply_state(problem.brep, state)
    from .encoder import featurize
    feats = featurize(brep)
    pt = {k: tape.tensor(v) for k, v in model_params.items()}
    codes = encode(pt, GraphIndex.from_brep(brep), tape.tensor(feats.vertex),
                   tape.tensor(feats.edge), tape.tensor(feats.face))
    code_rows = repeat_rows(codes, np.full(len(brep.faces), len(loss_uv)))
    uv_all = np.tile(loss_uv, (len(brep.faces), 1))
    pred = decode(pt, code_rows, tape.tensor(uv_all)).value
    return pred[pred[:, 3] < 0.0, 0:3]


def fit(problem: FitProblem, model_params: dict) -> tuple[FitTrace, BRep]:
    """SGD over the free shape parameters; everything else is untouched."""
    state = shape_state(problem.brep)
    unknown = [n for n in problem.free if n not in state]
    if unknown:
        raise KeyError(f"unknown free parameters: {unknown}")
    trace = FitTrace()
    trace.chamfer_initial = hard_chamfer(
        decoded_surface(problem, model_params, state), problem.target)

    for step in range(problem.steps):
        tape = Tape()
        loss, leaves = fit_loss(problem, model_params, state, tape,
                                trace.notes)
        trace.losses.append(float(loss.value))
        backward(loss)
        grads = {name: leaves[name].grad for name in problem.free}
        if any(not np.isfinite(g).all() for g in grads.values()):
            trace.notes.append(f"step {step}: non-finite gradient, skipped")
            continue
        for name in problem.free:
            state[name] = state[name] - problem.step_size * grads[name]
        _orthonormalize_frames(state, set(problem.free))

    trace.chamfer_final = hard_chamfer(
        decoded_surface(problem, model_params, state), problem.target)
    return trace, apply_state(problem.brep, state)


# -- target cloud I/O ------------------------------------------------------------------

def sample_surface_cloud(brep: BRep, n: int, seed: int) -> np.ndarray:
    """Points on the model's faces (clip-mask aware), split evenly."""
    from .geometry import eval_surface

    per_face = max(1, int(np.ceil(n / max(1, len(brep.faces)))))
    points = []
    for fi, face in enumerate(brep.faces):
        geo = face_geometry(brep, fi)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC10D, fi]))
        lo, hi = geo.mask.window[:, 0], geo.mask.window[:, 1]
        got = 0
        for _ in range(200):
            uv = rng.uniform(lo, hi, size=(4 * per_face, 2))
            keep = classify_batch(geo.mask, uv)
            uv = uv[keep][: per_face - got]
            if len(uv):
                points.append(eval_surface(face.surface, uv[:, 0], uv[:, 1]))
                got += len(uv)
            if got >= per_face:
                break
    return np.concatenate(points, axis=0)[:n]


def load_cloud(path) -> np.ndarray:
    """XYZ text (one point per line) or ASCII PLY."""
    from pathlib import Path

    text = Path(path).read_text()
    lines = text.splitlines()
    if lines and lines[0].strip() == "ply":
        n = 0
        body_at = 0
        for i, line in enumerate(lines):
            parts = line.split()
            if parts[:2] == ["element", "vertex"]:
                n = int(parts[2])
            if line.strip() == "end_header":
                body_at = i + 1
                break
        rows = [[float(x) for x in lines[body_at + k].split()[:3]]
                for k in range(n)]
        return np.asarray(rows, dtype=np.float64)
    rows = [[float(x) for x in line.split()[:3]]
            for line in lines if line.strip() and not line.startswith("#")]
    return np.asarray(rows, dtype=np.float64)


def save_cloud(points: np.ndarray, path) -> None:
    from pathlib import Path

    lines = [f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}" for p in points]
    Path(path).write_text("\n".join(lines) + "\n")
