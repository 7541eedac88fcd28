"""Hierarchical message-passing face encoder.

Raw parametric definitions are the only inputs: each entity is a one-hot of
its geometry kind, its frame and scalar parameters zero-padded to a fixed
width, and an orientation-reversal flag. Messages pass strictly upward,
once per level: edges attend over their two endpoint vertices (2 heads,
keys and scores see a start/end relation embedding), then faces attend over
their incident edge states in loop order (16 heads, left/right relation
embedding). Each level ends with head concatenation, a linear projection,
ReLU, and a residual add of the destination's own projected features; a
final linear layer emits the 64-d face code.

Reductions follow the loop order stored on each face (and the fixed
start/end order on edges), which is intrinsic to the topology, so encoding
is bit-exactly equivariant under relabeling of the entity lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tape, Tensor, add_rowvec, concat, gather_rows,
                       mul_colvec, repeat_rows, rows_dot, softmax_last)
from .brep import (CURVE_KINDS, CURVE_PARAMS, SURFACE_KINDS, SURFACE_PARAMS,
                   BRep)

VERTEX_DIM = 3
EDGE_DIM = len(CURVE_KINDS) + 11 + 1      # one-hot + params + reversed
FACE_DIM = len(SURFACE_KINDS) + 11 + 1
CODE_DIM = 64

V2E_HEADS = 2
E2F_HEADS = 16
REL_DIM = 8
SCORE_HIDDEN = 16

# parameter slot layout shared by edges and faces:
#   origin(3), axis(3), ref_dir(3), scalar0, scalar1


def _geometry_slots(kind: str, frame, params: dict, table) -> list:
    slots = list(frame.origin) + list(frame.axis) + list(frame.ref_dir)
    names = table[kind]
    for name in names:
        slots.append(params[name])
    slots.extend([0.0] * (2 - len(names)))
    return slots


@dataclass
class EntityFeatures:
    vertex: np.ndarray   # (V, 3)
    edge: np.ndarray     # (E, 15)
    face: np.ndarray     # (F, 17)


def featurize(brep: BRep) -> EntityFeatures:
    vfeat = np.array([v.position for v in brep.vertices],
                     dtype=np.float64).reshape(len(brep.vertices), 3)
    efeat = np.zeros((len(brep.edges), EDGE_DIM))
    for i, e in enumerate(brep.edges):
        efeat[i, CURVE_KINDS.index(e.curve.kind)] = 1.0
        efeat[i, 3:14] = _geometry_slots(e.curve.kind, e.curve.frame,
                                         e.curve.params, CURVE_PARAMS)
        efeat[i, 14] = 1.0 if e.reversed else 0.0
    ffeat = np.zeros((len(brep.faces), FACE_DIM))
    for i, f in enumerate(brep.faces):
        ffeat[i, SURFACE_KINDS.index(f.surface.kind)] = 1.0
        ffeat[i, 5:16] = _geometry_slots(f.surface.kind, f.surface.frame,
                                         f.surface.params, SURFACE_PARAMS)
        ffeat[i, 16] = 1.0 if f.reversed_normal else 0.0
    return EntityFeatures(vfeat, efeat, ffeat)


@dataclass
class GraphIndex:
    """Topology distilled for message passing: edge endpoints and each
    face's loop-ordered (edge, relation) incidences."""

    edge_endpoints: np.ndarray          # (E, 2) vertex ids
    face_entries: list                  # per face: [(edge_id, rel_id)], rel 0=left

    @staticmethod
    def from_brep(brep: BRep) -> "GraphIndex":
        endpoints = np.array([[e.v_start, e.v_end] for e in brep.edges],
                             dtype=np.int64).reshape(len(brep.edges), 2)
        entries = []
        for f in brep.faces:
            entries.append([(en.edge, 0 if en.side == "left" else 1)
                            for en in f.loop_entries()])
        return GraphIndex(endpoints, entries)


# -- parameters -----------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / (fan_in + fan_out)),
                      size=(fan_in, fan_out))


def init_encoder_params(seed: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xE0C]))
    p = {}
    head1 = CODE_DIM // V2E_HEADS
    p["enc.v2e.Wq"] = _glorot(rng, EDGE_DIM, CODE_DIM)
    p["enc.v2e.Wk"] = _glorot(rng, VERTEX_DIM + REL_DIM, CODE_DIM)
    p["enc.v2e.Wv"] = _glorot(rng, VERTEX_DIM, CODE_DIM)
    p["enc.v2e.rel"] = rng.normal(0.0, 0.5, size=(2, REL_DIM))
    for h in range(V2E_HEADS):
        fan = 2 * head1 + REL_DIM
        p[f"enc.v2e.score{h}.W1"] = _glorot(rng, fan, SCORE_HIDDEN)
        p[f"enc.v2e.score{h}.b1"] = np.zeros(SCORE_HIDDEN)
        p[f"enc.v2e.score{h}.w2"] = _glorot(rng, SCORE_HIDDEN, 1)[:, 0]
    p["enc.v2e.Wo"] = _glorot(rng, CODE_DIM, CODE_DIM)
    p["enc.v2e.bo"] = np.zeros(CODE_DIM)
    p["enc.v2e.Wself"] = _glorot(rng, EDGE_DIM, CODE_DIM)

    head2 = CODE_DIM // E2F_HEADS
    p["enc.e2f.Wq"] = _glorot(rng, FACE_DIM, CODE_DIM)
    p["enc.e2f.Wk"] = _glorot(rng, CODE_DIM + REL_DIM, CODE_DIM)
    p["enc.e2f.Wv"] = _glorot(rng, CODE_DIM, CODE_DIM)
    p["enc.e2f.rel"] = rng.normal(0.0, 0.5, size=(2, REL_DIM))
    for h in range(E2F_HEADS):
        fan = 2 * head2 + REL_DIM
        p[f"enc.e2f.score{h}.W1"] = _glorot(rng, fan, SCORE_HIDDEN)
        p[f"enc.e2f.score{h}.b1"] = np.zeros(SCORE_HIDDEN)
        p[f"enc.e2f.score{h}.w2"] = _glorot(rng, SCORE_HIDDEN, 1)[:, 0]
    p["enc.e2f.Wo"] = _glorot(rng, CODE_DIM, CODE_DIM)
    p["enc.e2f.bo"] = np.zeros(CODE_DIM)
    p["enc.e2f.Wself"] = _glorot(rng, FACE_DIM, CODE_DIM)

    p["enc.out.W"] = _glorot(rng, CODE_DIM, CODE_DIM)
    p["enc.out.b"] = np.zeros(CODE_DIM)
    return p


# -- forward ---------------------------------------------------------------------

def _edge_states(pt: dict, vfeat: Tensor, efeat: Tensor,
                 endpoints: np.ndarray, attn_out: list | None) -> Tensor:
    n_edges = endpoints.shape[0]
    head = CODE_DIM // V2E_HEADS
    q_all = efeat @ pt["enc.v2e.Wq"]
    rel = pt["enc.v2e.rel"]
    r_start = repeat_rows(rel[0:1, :], [n_edges])
    r_end = repeat_rows(rel[1:2, :], [n_edges])
    starts = gather_rows(vfeat, endpoints[:, 0])
    ends = gather_rows(vfeat, endpoints[:, 1])
    k_start = concat([starts, r_start], axis=1) @ pt["enc.v2e.Wk"]
    k_end = concat([ends, r_end], axis=1) @ pt["enc.v2e.Wk"]
    v_start = starts @ pt["enc.v2e.Wv"]
    v_end = ends @ pt["enc.v2e.Wv"]

    msgs = []
    for h in range(V2E_HEADS):
        sl = slice(h * head, (h + 1) * head)
        q_h = q_all[:, sl]
        s_parts = []
        for k_t, r_t in ((k_start, r_start), (k_end, r_end)):
            inp = concat([q_h, k_t[:, sl], r_t], axis=1)
            hdn = add_rowvec(inp @ pt[f"enc.v2e.score{h}.W1"],
                             pt[f"enc.v2e.score{h}.b1"]).tanh()
            s_parts.append(rows_dot(hdn, pt[f"enc.v2e.score{h}.w2"]))
        alpha = softmax_last(concat(s_parts, axis=1))
        if attn_out is not None:
            attn_out.append(alpha.value)
        msgs.append(mul_colvec(v_start[:, sl], alpha[:, 0:1])
                    + mul_colvec(v_end[:, sl], alpha[:, 1:2]))
    pooled = concat(msgs, axis=1)
    hidden = add_rowvec(pooled @ pt["enc.v2e.Wo"], pt["enc.v2e.bo"]).relu()
    return hidden + efeat @ pt["enc.v2e.Wself"]


def _face_state(pt: dict, ffeat: Tensor, face_idx: int, entries,
                edge_states: Tensor, attn_out: list | None) -> Tensor:
    head = CODE_DIM // E2F_HEADS
    own = ffeat[face_idx:face_idx + 1, :]
    self_proj = own @ pt["enc.e2f.Wself"]
    if not entries:
        pooled = self_proj  # degenerate rule: no bounding edges
    else:
        k = len(entries)
        idx = [e for e, _ in entries]
        rels = [r for _, r in entries]
        S = gather_rows(edge_states, idx)
        R = gather_rows(pt["enc.e2f.rel"], rels)
        K = concat([S, R], axis=1) @ pt["enc.e2f.Wk"]
        V = S @ pt["enc.e2f.Wv"]
        q = own @ pt["enc.e2f.Wq"]
        msgs = []
        for h in range(E2F_HEADS):
            sl = slice(h * head, (h + 1) * head)
            inp = concat([repeat_rows(q[:, sl], [k]), K[:, sl], R], axis=1)
            hdn = add_rowvec(inp @ pt[f"enc.e2f.score{h}.W1"],
                             pt[f"enc.e2f.score{h}.b1"]).tanh()
            scores = rows_dot(hdn, pt[f"enc.e2f.score{h}.w2"]).reshape(1, k)
            alpha = softmax_last(scores)
            if attn_out is not None:
                attn_out.append(alpha.value)
            msgs.append(alpha @ V[:, sl])
        pooled = concat(msgs, axis=1)
    hidden = add_rowvec(pooled @ pt["enc.e2f.Wo"], pt["enc.e2f.bo"]).relu()
    return hidden + self_proj


def encode(pt: dict, graph: GraphIndex, vfeat: Tensor, efeat: Tensor,
           ffeat: Tensor, attention: list | None = None) -> Tensor:
    """Face codes (F, 64) from lifted parameter tensors and feature tensors.

    ``attention`` (optional list) collects every softmax row for tests.
    """
    if graph.edge_endpoints.shape[0] > 0:
        estates = _edge_states(pt, vfeat, efeat, graph.edge_endpoints,
                               attention)
    else:
        estates = None
    rows = []
    for fi, entries in enumerate(graph.face_entries):
        rows.append(_face_state(pt, ffeat, fi, entries if estates is not None
                                else [], estates, attention))
    faces = concat(rows, axis=0) if len(rows) > 1 else rows[0]
    return add_rowvec(faces @ pt["enc.out.W"], pt["enc.out.b"])


def featurize_t(tape: Tape, brep: BRep, vertex_t: list, edge_geo_t: list,
                face_geo_t: list):
    """Assemble feature tensors from per-entity geometry tensors.

    ``vertex_t[i]`` is a (3,) tensor; ``edge_geo_t[i]`` / ``face_geo_t[i]``
    are dicts with (3,) ``origin``/``axis``/``ref_dir`` tensors and one
    0-d tensor per scalar parameter. Rows follow the same layout as
    :func:`featurize`, so gradients flow from codes back to any shape
    parameter supplied as a leaf.
    """
    def _one(n, i):
        row = np.zeros((1, n))
        row[0, i] = 1.0
        return row

    def geo_row(kind, onehot, geo, table, reversed_flag):
        parts = [tape.tensor(onehot),
                 geo["origin"].reshape(1, 3), geo["axis"].reshape(1, 3),
                 geo["ref_dir"].reshape(1, 3)]
        names = table[kind]
        for name in names:
            parts.append(geo[name].reshape(1, 1))
        pad = 2 - len(names)
        if pad:
            parts.append(tape.tensor(np.zeros((1, pad))))
        parts.append(tape.tensor([[1.0 if reversed_flag else 0.0]]))
        return concat(parts, axis=1)

    if brep.vertices:
        vrows = [v.reshape(1, 3) for v in vertex_t]
        vfeat = concat(vrows, axis=0) if len(vrows) > 1 else vrows[0]
    else:
        vfeat = tape.tensor(np.zeros((0, VERTEX_DIM)))
    erows = [geo_row(e.curve.kind, _one(len(CURVE_KINDS),
                                        CURVE_KINDS.index(e.curve.kind)),
                     edge_geo_t[i], CURVE_PARAMS, e.reversed)
             for i, e in enumerate(brep.edges)]
    if erows:
        efeat = concat(erows, axis=0) if len(erows) > 1 else erows[0]
    else:
        efeat = tape.tensor(np.zeros((0, EDGE_DIM)))
    frows = [geo_row(f.surface.kind, _one(len(SURFACE_KINDS),
                                          SURFACE_KINDS.index(f.surface.kind)),
                     face_geo_t[i], SURFACE_PARAMS, f.reversed_normal)
             for i, f in enumerate(brep.faces)]
    ffeat = concat(frows, axis=0) if len(frows) > 1 else frows[0]
    return vfeat, efeat, ffeat


def encode_brep(params: dict, brep: BRep, tape: Tape | None = None,
                feats: EntityFeatures | None = None) -> np.ndarray:
    """Convenience wrapper: numpy face codes for a whole part."""
    from .autodiff import lift

    tape = tape or Tape()
    feats = feats or featurize(brep)
    graph = GraphIndex.from_brep(brep)
    pt = lift(tape, params)
    vfeat = tape.tensor(feats.vertex)
    efeat = tape.tensor(feats.edge)
    ffeat = tape.tensor(feats.face)
    return encode(pt, graph, vfeat, efeat, ffeat).value
