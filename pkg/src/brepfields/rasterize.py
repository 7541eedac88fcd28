"""Grid rasterization of decoded faces and OBJ export.

A face is rasterized by decoding the field on a uv grid over
[-0.1, 1.1]^2, dropping vertices whose predicted clip distance is
nonnegative, and triangulating grid cells whose four corners all survive
(conservative: no boundary extraction).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .decoder import decode_checkpoint

GRID_LO = -0.1
GRID_HI = 1.1
DEFAULT_RESOLUTION = 100


@dataclass
class FaceMesh:
    resolution: int
    vertices: np.ndarray     # (n, 3)
    triangles: np.ndarray    # (m, 3) indices into vertices
    d: np.ndarray            # (n,) predicted clip distance, all < 0
    color_id: int = 0

    @property
    def empty(self) -> bool:
        return len(self.vertices) == 0


def rasterize_field(field_fn, resolution: int = DEFAULT_RESOLUTION,
                    color_id: int = 0) -> FaceMesh:
    """Rasterize any uv->(x,y,z,d) field on the standard grid."""
    axis = np.linspace(GRID_LO, GRID_HI, resolution)
    uu, vv = np.meshgrid(axis, axis, indexing="ij")
    uv = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    pred = np.asarray(field_fn(uv), dtype=np.float64)
    if pred.shape != (resolution * resolution, 4):
        raise ValueError(f"field returned shape {pred.shape}")
    keep = pred[:, 3] < 0.0

    index = np.full(resolution * resolution, -1, dtype=np.int64)
    index[keep] = np.arange(int(keep.sum()))
    tris = []
    kept2d = keep.reshape(resolution, resolution)
    idx2d = index.reshape(resolution, resolution)
    for i in range(resolution - 1):
        for j in range(resolution - 1):
            if (kept2d[i, j] and kept2d[i + 1, j] and kept2d[i, j + 1]
                    and kept2d[i + 1, j + 1]):
                a, b = idx2d[i, j], idx2d[i + 1, j]
                c, dd = idx2d[i, j + 1], idx2d[i + 1, j + 1]
                tris.append((a, b, c))
                tris.append((b, dd, c))
    verts = pred[keep, 0:3]
    return FaceMesh(resolution, verts,
                    np.asarray(tris, dtype=np.int64).reshape(-1, 3),
                    pred[keep, 3], color_id)


def rasterize_face(params: dict, code: np.ndarray,
                   resolution: int = DEFAULT_RESOLUTION,
                   color_id: int = 0) -> FaceMesh:
    return rasterize_field(lambda uv: decode_checkpoint(params, code, uv),
                           resolution, color_id)


def rasterize_part(params: dict, codes: np.ndarray,
                   resolution: int = DEFAULT_RESOLUTION) -> list:
    return [rasterize_face(params, codes[fi], resolution, color_id=fi)
            for fi in range(codes.shape[0])]


def face_color(color_id: int) -> tuple:
    """Stable pseudo-random color from the face index."""
    digest = hashlib.md5(str(color_id).encode()).digest()
    return tuple(0.15 + 0.7 * b / 255.0 for b in digest[:3])


def export_obj(meshes: list, path) -> None:
    """Write one OBJ (plus a sibling .mtl) with a group and material per
    face; empty meshes are skipped. Output bytes are deterministic."""
    path = Path(path)
    mtl_path = path.with_suffix(".mtl")
    obj = [f"mtllib {mtl_path.name}"]
    mtl = []
    offset = 1
    for mesh in meshes:
        if mesh.empty:
            continue
        tag = f"face_{mesh.color_id:04d}"
        r, g, b = face_color(mesh.color_id)
        mtl.append(f"newmtl mat_{tag}")
        mtl.append(f"Kd {r:.6f} {g:.6f} {b:.6f}")
        obj.append(f"g {tag}")
        obj.append(f"usemtl mat_{tag}")
        for v in mesh.vertices:
            obj.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
        for t in mesh.triangles:
            obj.append(f"f {t[0] + offset} {t[1] + offset} {t[2] + offset}")
        offset += len(mesh.vertices)
    path.write_text("\n".join(obj) + "\n")
    mtl_path.write_text("\n".join(mtl) + "\n")


def read_obj_vertices(path) -> np.ndarray:
    verts = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:4]])
    return np.asarray(verts, dtype=np.float64)
