import numpy as np
import pytest

from brepfields import corpus
from brepfields.autodiff import Tape, backward
from brepfields.brep import brep_to_doc
from brepfields.corpus import normalize_part
from brepfields.gradcheck import max_rel_error
from brepfields.shapefit import (FitProblem, apply_state, fit, fit_loss,
                                 hard_chamfer, load_cloud,
                                 sample_surface_cloud, save_cloud,
                                 shape_state)
from brepfields.training import TrainConfig, init_model_params


@pytest.fixture(scope="module")
def model_params():
    return init_model_params(TrainConfig(seed=11, hidden=16))


@pytest.fixture(scope="module")
def norm_cube():
    brep, _ = corpus.make_box(1.0, 1.0, 1.0)
    return normalize_part(brep)[0]


def test_shape_state_round_trip(norm_cube):
    state = shape_state(norm_cube)
    rebuilt = apply_state(norm_cube, state)
    assert brep_to_doc(rebuilt) == brep_to_doc(norm_cube)


def test_unknown_free_parameter_rejected(norm_cube, model_params):
    problem = FitProblem(norm_cube, ["face:0:wobble"], np.zeros((4, 3)),
                         steps=1)
    with pytest.raises(KeyError):
        fit(problem, model_params)


def test_frozen_parameters_bit_unchanged(norm_cube, model_params):
    target = sample_surface_cloud(norm_cube, 64, seed=0)
    problem = FitProblem(norm_cube, ["face:1:origin"], target, steps=5,
                         grid=8)
    state_before = shape_state(norm_cube)
    _, fitted = fit(problem, model_params)
    state_after = shape_state(fitted)
    for name in state_before:
        if name == "face:1:origin":
            continue
        assert np.array_equal(state_before[name], state_after[name]), name


def test_loss_invariant_to_target_order(norm_cube, model_params):
    rng = np.random.default_rng(0)
    target = sample_surface_cloud(norm_cube, 50, seed=1)
    state = shape_state(norm_cube)

    def loss_of(cloud):
        problem = FitProblem(norm_cube, ["face:1:origin"], cloud, grid=8)
        tape = Tape()
        loss, _ = fit_loss(problem, model_params, state, tape)
        return float(loss.value)

    base = loss_of(target)
    assert loss_of(target[rng.permutation(len(target))]) == \
        pytest.approx(base, rel=1e-12)


def test_fit_loss_gradient_matches_finite_differences(model_params):
    brep, _ = corpus.make_cylinder(0.5, 1.2)
    norm, _ = normalize_part(brep)
    target = sample_surface_cloud(norm, 40, seed=2)
    free = ["face:0:radius"]
    problem = FitProblem(norm, free, target, grid=8)
    state = shape_state(norm)

    tape = Tape()
    loss, leaves = fit_loss(problem, model_params, state, tape)
    backward(loss)
    g_ad = leaves["face:0:radius"].grad.copy()

    h = 1e-5
    vals = []
    for sign in (+1, -1):
        bumped = {k: v.copy() for k, v in state.items()}
        bumped["face:0:radius"] = bumped["face:0:radius"] + sign * h
        tape = Tape()
        loss_b, _ = fit_loss(problem, model_params, bumped, tape)
        vals.append(float(loss_b.value))
    g_fd = (vals[0] - vals[1]) / (2 * h)
    assert max_rel_error(np.asarray(g_ad), np.asarray(g_fd)) < 1e-3


def test_soft_weights_converge_to_hard_filter(norm_cube, model_params):
    from brepfields.autodiff import lift
    from brepfields.decoder import decode_np
    from brepfields.encoder import featurize
    from brepfields.training import build_part_cache

    # decode the cube under the model and compare sigmoid(-d/tau) with the
    # hard d<0 indicator as tau shrinks
    from brepfields.encoder import GraphIndex, encode

    feats = featurize(norm_cube)
    tape = Tape()
    pt = lift(tape, model_params)
    codes = encode(pt, GraphIndex.from_brep(norm_cube),
                   tape.tensor(feats.vertex), tape.tensor(feats.edge),
                   tape.tensor(feats.face)).value
    rng = np.random.default_rng(3)
    uv = rng.uniform(-0.1, 1.1, size=(400, 2))
    rows = np.repeat(codes, 400 // len(codes) + 1, axis=0)[:400]
    pred = decode_np(model_params, rows, uv)
    d = pred[:, 3]
    hard = (d < 0).astype(float)
    agreement = []
    for tau in (0.1, 0.02, 0.004):
        w = 1.0 / (1.0 + np.exp(d / tau))
        agreement.append(np.mean(np.abs(w - hard) < 0.1))
    assert agreement[0] <= agreement[1] <= agreement[2]
    assert agreement[2] > 0.95


def test_unweighted_fallback_note(norm_cube):
    # a decoder that predicts d > 0 everywhere triggers the fallback
    params = init_model_params(TrainConfig(seed=1, hidden=8))
    for k in params:
        if k.startswith("dec."):
            params[k] = np.zeros_like(params[k])
    params["dec.b4"] = np.array([0.0, 0.0, 0.0, 5.0])
    target = sample_surface_cloud(norm_cube, 16, seed=4)
    problem = FitProblem(norm_cube, ["face:1:origin"], target, steps=1,
                         grid=6)
    trace, _ = fit(problem, params)
    assert any("fallback" in n for n in trace.notes)


def test_fit_orthonormalizes_free_frames(norm_cube, model_params):
    target = sample_surface_cloud(norm_cube, 32, seed=5)
    problem = FitProblem(norm_cube, ["face:1:axis", "face:1:ref_dir"],
                         target, steps=3, grid=6, step_size=0.1)
    _, fitted = fit(problem, model_params)
    fr = fitted.faces[1].surface.frame
    assert np.linalg.norm(fr.axis) == pytest.approx(1.0, abs=1e-12)
    assert abs(fr.axis @ fr.ref_dir) < 1e-12


def test_hard_chamfer_zero_for_identical_clouds():
    rng = np.random.default_rng(6)
    pts = rng.normal(size=(30, 3))
    assert hard_chamfer(pts, pts.copy()) == 0.0
    assert hard_chamfer(pts, pts + 0.1) > 0.0


def test_cloud_io_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(25, 3))
    path = tmp_path / "cloud.xyz"
    save_cloud(pts, path)
    np.testing.assert_array_equal(load_cloud(path), pts)


def test_cloud_ply_parsing(tmp_path):
    pts = np.array([[0.0, 1.0, 2.0], [3.5, -1.0, 0.25]])
    ply = "\n".join([
        "ply", "format ascii 1.0", "element vertex 2",
        "property float x", "property float y", "property float z",
        "end_header",
        "0 1 2", "3.5 -1 0.25", ""])
    path = tmp_path / "cloud.ply"
    path.write_text(ply)
    np.testing.assert_allclose(load_cloud(path), pts)


def test_sample_surface_cloud_on_cube(norm_cube):
    pts = sample_surface_cloud(norm_cube, 120, seed=8)
    assert pts.shape == (120, 3)
    # every point lies on the cube's surface: one coordinate at +-0.5
    on_face = np.isclose(np.abs(pts), 0.5, atol=1e-9).any(axis=1)
    assert on_face.all()
    again = sample_surface_cloud(norm_cube, 120, seed=8)
    np.testing.assert_array_equal(pts, again)
