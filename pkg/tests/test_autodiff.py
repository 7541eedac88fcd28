import numpy as np
import pytest

from brepfields import autodiff as ad
from brepfields.autodiff import (AdamState, NonFiniteGradientError, ShapeError,
                                 Tape, adam_step, backward)
from brepfields.checkpoint import load_checkpoint, save_checkpoint
from brepfields.gradcheck import check_gradients


def test_relu_values():
    t = Tape()
    x = t.tensor([-1.0, 0.0, 2.0])
    assert np.array_equal(x.relu().value, [0.0, 0.0, 2.0])


def test_softmax_uniform_logits():
    t = Tape()
    x = t.tensor([3.7, 3.7, 3.7])
    np.testing.assert_allclose(ad.softmax_last(x).value, [1 / 3] * 3, atol=1e-15)


def test_matmul_against_triple_loop_oracle():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(3, 4))
    want = np.zeros((2, 4))
    for i in range(2):
        for j in range(4):
            for k in range(3):
                want[i, j] += a[i, k] * b[k, j]
    t = Tape()
    got = (t.tensor(a) @ t.tensor(b)).value
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_dx_x_squared():
    t = Tape()
    x = t.tensor(3.0)
    y = x * x
    backward(y)
    assert float(x.grad) == pytest.approx(6.0)


def test_mean_gradient_is_one_over_n():
    t = Tape()
    x = t.tensor(np.arange(5.0))
    backward(x.mean())
    np.testing.assert_array_equal(x.grad, np.full(5, 0.2))


def test_backward_rejects_non_scalar():
    t = Tape()
    x = t.tensor([1.0, 2.0])
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_shape_mismatch_reports_both_shapes():
    t = Tape()
    a = t.tensor(np.zeros((2, 3)))
    b = t.tensor(np.zeros((3, 2)))
    with pytest.raises(ShapeError) as err:
        a + b
    assert "(2, 3)" in str(err.value) and "(3, 2)" in str(err.value)


def test_off_path_leaf_gets_exact_zero():
    t = Tape()
    x = t.tensor([1.0, 2.0])
    unused = t.tensor([5.0])
    backward(x.sum())
    assert unused.grad is not None and (unused.grad == 0.0).all()


# --- finite-difference checks over the whole op set -------------------------

def _rand(rng, shape, lo=0.2, hi=1.5):
    # magnitudes bounded away from relu/sqrt kinks so h=1e-5 stays valid
    mag = rng.uniform(lo, hi, size=shape)
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return mag * sign


OP_CASES = {
    "add": lambda t, lv: (lv["a"] + lv["b"]).sum(),
    "sub": lambda t, lv: (lv["a"] - lv["b"]).sum(),
    "mul": lambda t, lv: (lv["a"] * lv["b"]).sum(),
    "div": lambda t, lv: (lv["a"] / lv["p"]).sum(),
    "scalar_mul": lambda t, lv: (lv["a"] * 0.37).sum(),
    "matmul": lambda t, lv: (lv["m1"] @ lv["m2"]).sum(),
    "relu": lambda t, lv: lv["a"].relu().sum(),
    "square": lambda t, lv: lv["a"].square().sum(),
    "sqrt": lambda t, lv: lv["p"].sqrt().sum(),
    "sin": lambda t, lv: lv["a"].sin().sum(),
    "cos": lambda t, lv: lv["a"].cos().sum(),
    "log": lambda t, lv: lv["p"].log().sum(),
    "tanh": lambda t, lv: lv["a"].tanh().sum(),
    "sigmoid": lambda t, lv: lv["a"].sigmoid().sum(),
    "softmax": lambda t, lv: (ad.softmax_last(lv["m1"]) * lv["w1"]).sum(),
    "log_softmax": lambda t, lv: (ad.log_softmax_last(lv["m1"]) * lv["w1"]).sum(),
    "concat": lambda t, lv: (ad.concat([lv["a"], lv["b"]], axis=0) * lv["w2"]).sum(),
    "slice": lambda t, lv: lv["m1"][1:, :2].sum(),
    "reshape": lambda t, lv: (lv["m1"].reshape(8) * lv["w3"]).sum(),
    "mean": lambda t, lv: lv["a"].mean(),
    "sum": lambda t, lv: lv["a"].sum(),
    "add_rowvec": lambda t, lv: (ad.add_rowvec(lv["m1"], lv["bias"]) * lv["wm"]).sum(),
    "repeat_rows": lambda t, lv: (ad.repeat_rows(lv["m1"], [2, 0, 3, 1]) * lv["w5"]).sum(),
    "gather_rows": lambda t, lv: (ad.gather_rows(lv["m1"], [2, 0, 0, 1]) * lv["w4"]).sum(),
    "max_rows": lambda t, lv: (ad.max_rows(lv["m1"]) * lv["bias"]).sum(),
    "mul_colvec": lambda t, lv: (ad.mul_colvec(lv["m1"], lv["col"]) * lv["wm"]).sum(),
    "rows_dot": lambda t, lv: (ad.rows_dot(lv["m1"], lv["bias"]) * lv["col"]).sum(),
    "mean_rows": lambda t, lv: (ad.mean_rows(lv["m1"]) * lv["bias"]).sum(),
}


@pytest.mark.parametrize("op", sorted(OP_CASES))
def test_gradients_match_finite_differences(op):
    build = OP_CASES[op]
    for trial in range(5):
        rng = np.random.default_rng(100 * trial + hash(op) % 97)
        arrays = {
            "a": _rand(rng, (6,)),
            "b": _rand(rng, (6,)),
            "p": _rand(rng, (6,), lo=0.5, hi=2.0) ** 2,
            "m1": _rand(rng, (4, 2)),
            "m2": _rand(rng, (2, 3)),
            "w1": _rand(rng, (4, 2)),
            "w2": _rand(rng, (12,)),
            "w3": _rand(rng, (8,)),
            "w4": _rand(rng, (4, 2)),
            "w5": _rand(rng, (6, 2)),
            "wm": _rand(rng, (4, 2)),
            "bias": _rand(rng, (2,)),
            "col": _rand(rng, (4, 1)),
        }
        err = check_gradients(build, arrays)
        assert err < 1e-4, f"{op}: rel err {err}"


def test_backward_is_linear():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(5,))
    a, b = rng.normal(size=2)

    def grads_of(fn):
        t = Tape()
        x = t.tensor(x0)
        backward(fn(x))
        return x.grad.copy()

    f = lambda x: (x * x).sum()
    g = lambda x: x.sin().sum()
    combined = grads_of(lambda x: f(x) * a + g(x) * b)
    np.testing.assert_allclose(combined, a * grads_of(f) + b * grads_of(g),
                               rtol=1e-12)


def test_forward_and_backward_deterministic():
    rng = np.random.default_rng(3)
    x0 = rng.normal(size=(4, 3))
    w0 = rng.normal(size=(3, 2))

    def run():
        t = Tape()
        x, w = t.tensor(x0), t.tensor(w0)
        out = (x @ w).relu().sum()
        backward(out)
        return out.value.copy(), x.grad.copy(), w.grad.copy()

    o1, gx1, gw1 = run()
    o2, gx2, gw2 = run()
    assert np.array_equal(o1, o2)
    assert np.array_equal(gx1, gx2) and np.array_equal(gw1, gw2)


# --- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    before = params["w"].copy()
    st = AdamState()
    adam_step(params, {"w": np.zeros(3)}, st)
    np.testing.assert_array_equal(params["w"], before)
    assert st.step == 1


def test_adam_first_step_magnitude_is_lr():
    rng = np.random.default_rng(11)
    g = rng.normal(size=(8,)) * 10.0
    params = {"w": np.zeros(8)}
    st = AdamState(lr=0.0005)
    adam_step(params, {"w": g.copy()}, st)
    np.testing.assert_allclose(np.abs(params["w"]),
                               np.full(8, st.lr), rtol=1e-6)
    np.testing.assert_array_equal(np.sign(params["w"]), -np.sign(g))


def test_adam_descends_quadratic():
    params = {"x": np.array([0.0])}
    st = AdamState(lr=0.1)
    for _ in range(200):
        grad = {"x": 2.0 * (params["x"] - 5.0)}
        adam_step(params, grad, st)
    assert abs(params["x"][0] - 5.0) < 0.1


def test_adam_rejects_non_finite_gradient():
    params = {"bad_param": np.zeros(2)}
    with pytest.raises(NonFiniteGradientError) as err:
        adam_step(params, {"bad_param": np.array([np.nan, 0.0])}, AdamState())
    assert "bad_param" in str(err.value)


def test_adam_rejects_shape_mismatch():
    params = {"w": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(3)}, AdamState())


# --- checkpoint ---------------------------------------------------------------

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    params = {"enc.w": rng.normal(size=(3, 4)), "dec.b": rng.normal(size=(7,))}
    st = AdamState(lr=1e-3, step=17)
    st.m = {k: rng.normal(size=v.shape) for k, v in params.items()}
    st.v = {k: rng.normal(size=v.shape) ** 2 for k, v in params.items()}
    cfg = {"hidden": 256, "seed": 3, "lam": 1.0}
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, params, st, cfg)
    ck = load_checkpoint(path)
    assert ck.config == cfg
    assert ck.adam.step == 17 and ck.adam.lr == 1e-3
    for k in params:
        assert np.array_equal(ck.params[k], params[k])
        assert np.array_equal(ck.adam.m[k], st.m[k])
        assert np.array_equal(ck.adam.v[k], st.v[k])


def test_checkpoint_bytes_deterministic(tmp_path):
    params = {"w": np.linspace(0, 1, 10).reshape(2, 5)}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(p1, params, None, {"s": 1})
    save_checkpoint(p2, params, None, {"s": 1})
    assert p1.read_bytes() == p2.read_bytes()
