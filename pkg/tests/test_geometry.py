import numpy as np
import pytest

from brepfields import corpus, geometry
from brepfields.autodiff import Tape, backward
from brepfields.brep import Frame, GeometryError, SurfaceGeometry
from brepfields.geometry import (ClipMask, Reparam, SamplingError,
                                 approx_sdf_oracle, build_clip_mask,
                                 classify_batch, classify_uv, eval_curve,
                                 eval_surface, eval_surface_ad, face_geometry,
                                 invert_surface, oracle_sdf_points,
                                 reparameterize, sample_sdf)
from brepfields.gradcheck import max_rel_error


def _frame(origin=(0, 0, 0), axis=(0, 0, 1), ref=(1, 0, 0)):
    return Frame(np.asarray(origin, float), np.asarray(axis, float),
                 np.asarray(ref, float))


def _surf(kind, params=None, **frame_kw):
    return SurfaceGeometry(kind, _frame(**frame_kw), params or {})


SURF_FIXTURES = {
    "plane": _surf("plane"),
    "cylinder": _surf("cylinder", {"radius": 0.7}),
    "cone": _surf("cone", {"radius": 0.5, "half_angle": 0.4}),
    "sphere": _surf("sphere", {"radius": 2.0}),
    "torus": _surf("torus", {"major_radius": 1.0, "minor_radius": 0.3}),
}


# --- evaluation fixtures -----------------------------------------------------

def test_plane_eval():
    p = eval_surface(SURF_FIXTURES["plane"], 1.0, 2.0)
    np.testing.assert_allclose(p, [1.0, 2.0, 0.0], atol=1e-15)


def test_cylinder_eval():
    s = _surf("cylinder", {"radius": 1.0})
    p = eval_surface(s, np.pi / 2, 3.0)
    np.testing.assert_allclose(p, [0.0, 1.0, 3.0], atol=1e-15)


def test_sphere_eval_latitude_convention():
    p = eval_surface(SURF_FIXTURES["sphere"], 0.0, 0.0)
    np.testing.assert_allclose(p, [2.0, 0.0, 0.0], atol=1e-15)
    pole = eval_surface(SURF_FIXTURES["sphere"], 0.3, np.pi / 2)
    np.testing.assert_allclose(pole, [0.0, 0.0, 2.0], atol=1e-15)


def test_line_eval():
    from brepfields.brep import CurveGeometry
    c = CurveGeometry("line", _frame(axis=(1, 0, 0), ref=(0, 1, 0)), {})
    np.testing.assert_allclose(eval_curve(c, 5.0), [5.0, 0.0, 0.0], atol=1e-15)


def test_circle_eval():
    from brepfields.brep import CurveGeometry
    c = CurveGeometry("circle", _frame(), {"radius": 1.0})
    np.testing.assert_allclose(eval_curve(c, np.pi), [-1.0, 0.0, 0.0], atol=1e-12)


def test_ellipse_eval():
    from brepfields.brep import CurveGeometry
    c = CurveGeometry("ellipse", _frame(),
                      {"major_radius": 2.0, "minor_radius": 1.0})
    np.testing.assert_allclose(eval_curve(c, 0.0), [2.0, 0.0, 0.0], atol=1e-15)


# --- inversion ------------------------------------------------------------------

def _random_frame(rng):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    probe = rng.normal(size=3)
    ref = np.cross(axis, probe)
    ref /= np.linalg.norm(ref)
    return Frame(rng.normal(size=3), axis, ref)


def _random_surface(kind, rng):
    frame = _random_frame(rng)
    if kind == "plane":
        return SurfaceGeometry(kind, frame, {})
    if kind == "cylinder":
        return SurfaceGeometry(kind, frame, {"radius": rng.uniform(0.2, 2)})
    if kind == "cone":
        return SurfaceGeometry(kind, frame, {"radius": rng.uniform(0.2, 2),
                                             "half_angle": rng.uniform(0.1, 1.2)})
    if kind == "sphere":
        return SurfaceGeometry(kind, frame, {"radius": rng.uniform(0.2, 2)})
    if kind == "torus":
        major = rng.uniform(0.5, 2)
        return SurfaceGeometry(kind, frame,
                               {"major_radius": major,
                                "minor_radius": rng.uniform(0.1, 0.8) * major})
    raise AssertionError(kind)


def _uv_domain(kind, rng, n):
    u = rng.uniform(0, 2 * np.pi, n)
    if kind == "plane":
        u = rng.uniform(-3, 3, n)
        v = rng.uniform(-3, 3, n)
    elif kind in ("cylinder",):
        v = rng.uniform(-3, 3, n)
    elif kind == "cone":
        v = rng.uniform(0.05, 3, n)  # stay on the positive-radius branch
    elif kind == "sphere":
        v = rng.uniform(-np.pi / 2 + 1e-3, np.pi / 2 - 1e-3, n)
    else:
        v = rng.uniform(0, 2 * np.pi, n)
    return u, v


@pytest.mark.parametrize("kind", sorted(SURF_FIXTURES))
def test_invert_round_trip_1000_points(kind):
    rng = np.random.default_rng(hash(kind) % 2**31)
    n = 1000
    surf = _random_surface(kind, rng)
    u, v = _uv_domain(kind, rng, n)
    pts = eval_surface(surf, u, v)
    uu, vv = invert_surface(surf, pts)
    back = eval_surface(surf, uu, vv)
    err = np.linalg.norm(back - pts, axis=-1)
    assert err.max() < 1e-6


def test_sphere_pole_singularity_rule():
    s = SURF_FIXTURES["sphere"]
    u, v = invert_surface(s, np.array([0.0, 0.0, 2.0]))
    assert u == 0.0 and v == pytest.approx(np.pi / 2)


def test_cone_apex_singularity_rule():
    s = _surf("cone", {"radius": 0.5, "half_angle": np.arctan(0.5)})
    # apex: radius 0 at v = -R/sin(g); axial coordinate v*cos(g)
    g = s.params["half_angle"]
    v_apex = -s.params["radius"] / np.sin(g)
    apex = eval_surface(s, 0.0, v_apex)
    u, v = invert_surface(s, apex)
    assert u == 0.0


def test_cylinder_angle_range_convention():
    s = _surf("cylinder", {"radius": 1.0})
    eps = 1e-9
    pt = eval_surface(s, 2 * np.pi - eps, 0.5)
    u, _ = invert_surface(s, pt)
    assert 0.0 <= u < 2 * np.pi


def test_invert_rejects_off_surface_point():
    with pytest.raises(GeometryError):
        invert_surface(SURF_FIXTURES["sphere"], np.array([10.0, 0.0, 0.0]))


# --- autodiff evaluation ----------------------------------------------------------

@pytest.mark.parametrize("kind", sorted(SURF_FIXTURES))
def test_eval_surface_ad_matches_numpy_and_finite_differences(kind):
    rng = np.random.default_rng(17)
    surf = _random_surface(kind, rng)
    u, v = _uv_domain(kind, rng, 4)

    def run(frame_o, frame_a, frame_r, pvals, uv):
        tape = Tape()
        o = tape.tensor(frame_o)
        a = tape.tensor(frame_a)
        r = tape.tensor(frame_r)
        params = {k: tape.tensor(val) for k, val in pvals.items()}
        ut = tape.tensor(uv[:, 0])
        vt = tape.tensor(uv[:, 1])
        pts = eval_surface_ad(kind, o, a, r, params, ut, vt)
        return tape, (o, a, r, params, ut, vt), pts

    uv = np.stack([u, v], axis=-1)
    _, _, pts = run(surf.frame.origin, surf.frame.axis, surf.frame.ref_dir,
                    surf.params, uv)
    np.testing.assert_allclose(pts.value, eval_surface(surf, u, v), atol=1e-12)

    # gradient of a weighted sum of coordinates w.r.t. uv and shape params
    w = np.random.default_rng(3).normal(size=pts.value.shape)
    tape, leaves, pts = run(surf.frame.origin, surf.frame.axis,
                            surf.frame.ref_dir, surf.params, uv)
    loss = (pts * tape.tensor(w)).sum()
    backward(loss)
    o, a, r, params, ut, vt = leaves

    h = 1e-6
    for leaf, base in [(ut, u.copy()), (vt, v.copy())]:
        fd = np.zeros_like(base)
        for i in range(len(base)):
            for sgn in (1, -1):
                bumped_u = u.copy()
                bumped_v = v.copy()
                (bumped_u if leaf is ut else bumped_v)[i] += sgn * h
                val = (eval_surface(surf, bumped_u, bumped_v) * w).sum()
                fd[i] += sgn * val / (2 * h)
        assert max_rel_error(leaf.grad, fd) < 1e-4


# --- clip masks --------------------------------------------------------------------

def test_square_face_mask_is_rectangle(cube):
    brep, _ = cube
    mask = build_clip_mask(brep.faces[1], brep)
    assert len(mask.loops) == 1
    assert mask.full_axis == (False, False)
    np.testing.assert_allclose(mask.window, [[0, 1], [0, 1]], atol=1e-12)
    loop = mask.loops[0]
    np.testing.assert_allclose(loop[0], loop[-1], atol=1e-9)


def test_cylinder_wall_mask_is_periodic_band(cylinder):
    brep, _ = cylinder
    mask = build_clip_mask(brep.faces[0], brep)
    assert mask.full_axis[0] and not mask.full_axis[1]
    w = mask.window
    assert w[0, 1] - w[0, 0] == pytest.approx(2 * np.pi)
    assert w[1, 0] == pytest.approx(0.0, abs=1e-9)
    assert w[1, 1] == pytest.approx(1.2, abs=1e-9)
    # seam traversals are excluded from the distance boundary
    assert len(mask.boundary) == 2


def test_plane_with_hole_mask_has_two_loops(through_hole):
    brep, _ = through_hole
    top = next(i for i, f in enumerate(brep.faces)
               if f.surface.kind == "plane" and len(f.loops) == 2)
    mask = build_clip_mask(brep.faces[top], brep)
    assert len(mask.loops) == 2


def test_torus_mask_covers_whole_domain():
    brep, _ = corpus.make_torus(0.8, 0.3)
    mask = build_clip_mask(brep.faces[0], brep)
    assert mask.full_axis == (True, True)
    assert mask.loops == []
    assert classify_uv(mask, (1.0, 2.0)) and classify_uv(mask, (-9.0, 30.0))


def test_loopless_plane_rejected():
    from brepfields.brep import BRep, Face
    face = Face(_surf("plane"), (), False)
    brep = BRep("bad", [], [], [face])
    with pytest.raises(GeometryError):
        build_clip_mask(face, brep)


# --- classification ------------------------------------------------------------------

def _square_mask(lo=0.0, hi=1.0):
    loop = np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi], [lo, lo]])
    return ClipMask([loop], [loop], (None, None), (False, False),
                    np.array([[lo, hi], [lo, hi]]), (0.0, 0.0))


def _circle_loop(cx, cy, r, n=2048):
    t = np.linspace(0.0, 2 * np.pi, n + 1)
    return np.stack([cx + r * np.cos(t), cy + r * np.sin(t)], axis=-1)


def test_classify_square_fixture():
    mask = _square_mask()
    assert classify_uv(mask, (0.5, 0.5))
    assert not classify_uv(mask, (2.0, 2.0))


def test_classify_square_with_hole_fixture():
    outer = _square_mask().loops[0]
    hole = _circle_loop(0.5, 0.5, 0.2)
    mask = ClipMask([outer, hole], [outer, hole], (None, None), (False, False),
                    np.array([[0.0, 1.0], [0.0, 1.0]]), (0.0, 0.0))
    assert not classify_uv(mask, (0.5, 0.5))     # hole center: parity 2
    assert classify_uv(mask, (0.05, 0.05))
    assert not classify_uv(mask, (1.5, 0.5))


def test_classify_matches_analytic_membership_on_disk_and_annulus():
    rng = np.random.default_rng(0)
    disk = ClipMask([_circle_loop(0, 0, 0.8)], [], (None, None),
                    (False, False), np.array([[-0.8, 0.8], [-0.8, 0.8]]),
                    (0.0, 0.0))
    annulus = ClipMask([_circle_loop(0, 0, 0.8), _circle_loop(0, 0, 0.3)],
                       [], (None, None), (False, False),
                       np.array([[-0.8, 0.8], [-0.8, 0.8]]), (0.0, 0.0))
    pts = rng.uniform(-1.2, 1.2, size=(4000, 2))
    rad = np.linalg.norm(pts, axis=1)
    # stay clear of the polygonization sagitta (~5e-7 at n=2048)
    keep = (np.abs(rad - 0.8) > 1e-3) & (np.abs(rad - 0.3) > 1e-3)
    pts, rad = pts[keep], rad[keep]
    np.testing.assert_array_equal(classify_batch(disk, pts), rad < 0.8)
    np.testing.assert_array_equal(classify_batch(annulus, pts),
                                  (rad < 0.8) & (rad > 0.3))


def test_classify_wraps_periodic_queries(cylinder):
    brep, _ = cylinder
    mask = build_clip_mask(brep.faces[0], brep)
    v_mid = 0.6
    assert classify_uv(mask, (0.5, v_mid))
    assert classify_uv(mask, (0.5 + 2 * np.pi, v_mid))
    assert classify_uv(mask, (0.5 - 6 * np.pi, v_mid))
    assert not classify_uv(mask, (0.5, 1.3))


def test_classify_on_boundary_perturbs():
    mask = _square_mask()
    # exactly on the bottom edge: documented 1e-12 nudge keeps it total
    assert classify_uv(mask, (0.5, 0.0)) in (True, False)


# --- reparameterization -----------------------------------------------------------------

def test_reparam_identity_for_unit_window():
    rep = reparameterize(_square_mask())
    assert rep.scale == (1.0, 1.0)
    assert rep.offset == (0.0, 0.0)


def test_reparam_affine_example():
    mask = ClipMask([], [], (None, None), (False, False),
                    np.array([[2.0, 4.0], [0.0, 10.0]]), (0.0, 0.0))
    rep = reparameterize(mask)
    assert rep.scale == (0.5, 0.1)
    assert rep.offset == (-1.0, 0.0)


def test_reparam_compose_inverse_is_identity():
    rng = np.random.default_rng(9)
    mask = ClipMask([], [], (None, None), (False, False),
                    np.array([[-2.0, 3.0], [1.0, 1.5]]), (0.0, 0.0))
    rep = reparameterize(mask)
    uv = rng.uniform(-5, 5, size=(100, 2))
    np.testing.assert_allclose(rep.invert(rep.apply(uv)), uv, atol=1e-12)


# --- sdf sampling ------------------------------------------------------------------------

FIXTURE_FACES = []


def _fixture_faces():
    if not FIXTURE_FACES:
        b1, _ = corpus.make_box(1, 1, 1)
        b2, _ = corpus.make_cylinder(0.5, 1.2)
        b3, _ = corpus.make_box_through_hole(1.5, 1.2, 1.0, 0.3)
        b4, _ = corpus.make_cone_frustum(0.8, 0.4, 1.0)
        FIXTURE_FACES.extend([(b1, 1), (b2, 0), (b2, 1), (b3, 0), (b3, 2),
                              (b4, 0)])
    return FIXTURE_FACES


def test_sample_sdf_contract(cube):
    brep, _ = cube
    s = sample_sdf(brep, 1, seed=42)
    assert s.samples.shape == (500, 6)
    assert (s.d < 0).any() and (s.d > 0).any()


def test_sample_sdf_boundary_quota_is_recomputable(cube):
    brep, _ = cube
    s = sample_sdf(brep, 1, seed=42)
    absd = np.abs(s.d)
    # first 200 rows are the boundary-nearest picks, sorted ascending
    assert np.all(np.diff(absd[:200]) >= 0)
    assert absd[:200].max() <= absd[200:].min() + 1e-12


def test_sample_sdf_deterministic(cube):
    brep, _ = cube
    s1 = sample_sdf(brep, 1, seed=7)
    s2 = sample_sdf(brep, 1, seed=7)
    assert np.array_equal(s1.samples, s2.samples)
    s3 = sample_sdf(brep, 1, seed=8)
    assert not np.array_equal(s1.samples, s3.samples)


def test_sample_sdf_sign_agrees_with_classify(cube):
    brep, _ = cube
    geo = face_geometry(brep, 1)
    s = sample_sdf(brep, 1, seed=3, geo=geo)
    raw = geo.reparam.invert(s.uv)
    inside = classify_batch(geo.mask, raw)
    np.testing.assert_array_equal(s.d < 0, inside)


def test_sample_sdf_square_center_value(cube):
    brep, _ = cube
    geo = face_geometry(brep, 1)
    s = sample_sdf(brep, 1, seed=11, geo=geo)
    # analytic square SDF at the center is -0.5; take kept samples near it
    near = np.linalg.norm(s.uv - 0.5, axis=1) < 0.05
    if near.any():
        assert np.all(np.abs(s.d[near] + 0.5) < 0.1)
    d_c = oracle_sdf_points(geo.mask, geo.reparam, np.array([[0.5, 0.5]]))
    assert d_c[0] == pytest.approx(-0.5, abs=1e-6)


def test_sample_sdf_disk_center_value(cylinder):
    brep, _ = cylinder
    cap = 1
    geo = face_geometry(brep, cap)
    d_c = oracle_sdf_points(geo.mask, geo.reparam, np.array([[0.5, 0.5]]))
    # cap disk occupies the unit square snugly: center distance 0.5
    assert d_c[0] == pytest.approx(-0.5, abs=1e-3)
    s = sample_sdf(brep, cap, seed=5, geo=geo)
    near = np.linalg.norm(s.uv - 0.5, axis=1) < 0.05
    if near.any():
        assert np.all(np.abs(s.d[near] + 0.5) < 0.1)


def test_sample_sdf_xyz_lies_on_surface(cube):
    brep, _ = cube
    geo = face_geometry(brep, 1)
    s = sample_sdf(brep, 1, seed=13, geo=geo)
    raw = geo.reparam.invert(s.uv)
    xyz = eval_surface(brep.faces[1].surface, raw[:, 0], raw[:, 1])
    np.testing.assert_allclose(s.xyz, xyz, atol=1e-12)


def test_sampling_error_on_full_torus():
    brep, _ = corpus.make_torus(0.8, 0.3)
    with pytest.raises(SamplingError):
        sample_sdf(brep, 0, seed=1)


# --- brute-force oracle ---------------------------------------------------------------------

def test_oracle_square_grid_matches_analytic_sdf(cube):
    brep, _ = cube
    geo = face_geometry(brep, 1)
    xs, ys, grid = approx_sdf_oracle(geo.mask, geo.reparam, 512)
    uu, vv = np.meshgrid(xs, ys, indexing="ij")
    dx = np.maximum.reduce([-uu, uu - 1.0, np.zeros_like(uu)])
    dy = np.maximum.reduce([-vv, vv - 1.0, np.zeros_like(vv)])
    outside = np.hypot(dx, dy)
    inside = np.minimum(np.minimum(uu, 1 - uu), np.minimum(vv, 1 - vv))
    analytic = np.where(outside > 0, outside, -inside)
    assert np.abs(grid - analytic).max() < 1e-3


def test_oracle_sign_equals_classify(cube):
    brep, _ = cube
    geo = face_geometry(brep, 1)
    rng = np.random.default_rng(2)
    uv = rng.uniform(-0.1, 1.1, size=(500, 2))
    d = oracle_sdf_points(geo.mask, geo.reparam, uv)
    raw = geo.reparam.invert(uv)
    np.testing.assert_array_equal(d < 0, classify_batch(geo.mask, raw))


def test_sampled_sdf_close_to_oracle_on_fixture_suite():
    worst_mean = worst_max = 0.0
    for brep, fi in _fixture_faces():
        geo = face_geometry(brep, fi)
        s = sample_sdf(brep, fi, seed=0, geo=geo)
        ref = oracle_sdf_points(geo.mask, geo.reparam, s.uv)
        dev = np.abs(np.abs(s.d) - np.abs(ref))
        worst_mean = max(worst_mean, float(dev.mean()))
        worst_max = max(worst_max, float(dev.max()))
        assert (np.sign(s.d) == np.sign(ref)).all()
    assert worst_mean < 0.02
    assert worst_max < 0.05
