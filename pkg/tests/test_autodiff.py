import numpy as np
import pytest

from calstm import autodiff as ad
from calstm.errors import ConfigurationError, UsageError


def test_affine_identity():
    out = ad.affine(ad.const([3.0, 4.0]), ad.const(np.eye(2)), ad.const([0.0, 0.0]))
    assert np.array_equal(out.data, [3.0, 4.0])


def test_affine_zero_map():
    out = ad.affine(ad.const([7.0, -2.0]), ad.const(np.zeros((2, 2))), ad.const([1.0, 2.0]))
    assert np.array_equal(out.data, [1.0, 2.0])


def test_affine_hand_multiply():
    w = ad.const([[1.0, 1.0], [1.0, -1.0]])
    out = ad.affine(ad.const([2.0, 3.0]), w, ad.const([0.0, 0.0]))
    assert np.array_equal(out.data, [5.0, -1.0])


def test_affine_shape_mismatch_names_shapes():
    with pytest.raises(ConfigurationError, match=r"\(2, 2\).*\(3,\)"):
        ad.affine(ad.const([1.0, 2.0, 3.0]), ad.const(np.eye(2)), ad.const([0.0, 0.0]))


def test_activation_trivials():
    assert ad.activate(ad.const([0.0]), "sigmoid").data[0] == 0.5
    assert ad.activate(ad.const([0.0]), "tanh").data[0] == 0.0
    assert ad.activate(ad.const([-3.0]), "relu").data[0] == 0.0


def test_activation_unknown_kind():
    with pytest.raises(ConfigurationError):
        ad.activate(ad.const([0.0]), "softplus")


def test_backward_square():
    tape = ad.Tape()
    x = tape.leaf(3.0)
    loss = ad.mul(x, x)
    ad.backward(tape, loss)
    assert x.grad == pytest.approx(6.0, abs=0)


def test_backward_sigmoid_dot():
    tape = ad.Tape()
    w = tape.leaf([0.0])
    loss = ad.sum_all(ad.sigmoid(ad.mul(w, ad.const([1.0]))))
    ad.backward(tape, loss)
    assert w.grad[0] == pytest.approx(0.25, abs=1e-15)


def test_backward_chain_matches_finite_differences():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 4))
    b = rng.normal(size=3)
    x = rng.normal(size=4)

    def f(leaves):
        return ad.sum_all(ad.tanh(ad.affine(ad.const(x), leaves["w"], leaves["b"])))

    report = ad.finite_diff_check(f, {"w": w, "b": b})
    assert report.max_rel_err < 1e-6


def test_finite_diff_square():
    def f(leaves):
        return ad.mul(leaves["x"], leaves["x"])

    report = ad.finite_diff_check(f, {"x": np.asarray(3.0)})
    assert report.fd_at_worst == pytest.approx(6.0, rel=1e-9)
    assert report.max_rel_err < 1e-9


def test_finite_diff_constant_function():
    def f(leaves):
        return ad.sum_all(ad.mul(leaves["x"], ad.const(np.zeros(3))))

    report = ad.finite_diff_check(f, {"x": np.ones(3)})
    assert report.max_rel_err == 0.0


def test_finite_diff_rejects_nondeterministic_f():
    state = {"n": 0.0}

    def f(leaves):
        state["n"] += 1.0
        return ad.mul(leaves["x"], ad.const(state["n"]))

    with pytest.raises(UsageError, match="deterministic"):
        ad.finite_diff_check(f, {"x": np.asarray(1.0)})


def _random_unary_cases(rng):
    ops = [
        ("sigmoid", lambda t: ad.sum_all(ad.sigmoid(t))),
        ("tanh", lambda t: ad.sum_all(ad.tanh(t))),
        ("relu", lambda t: ad.sum_all(ad.relu(t))),
        ("exp", lambda t: ad.sum_all(ad.exp(t))),
        ("square", lambda t: ad.sum_all(ad.square(t))),
        ("neg", lambda t: ad.sum_all(ad.neg(t))),
    ]
    name, fn = ops[rng.integers(len(ops))]
    x = rng.normal(size=rng.integers(1, 6))
    if name == "relu":
        # keep away from the kink, where finite differences are one-sided
        x = x + np.sign(x) * 0.1
    return name, fn, x


def test_primitive_ops_match_finite_differences_100_instances():
    rng = np.random.default_rng(42)
    for _ in range(60):
        name, fn, x = _random_unary_cases(rng)
        report = ad.finite_diff_check(lambda lv: fn(lv["x"]), {"x": x})
        assert report.max_rel_err < 1e-4, f"{name}: {report}"

    for i in range(40):
        m, k, n = rng.integers(1, 4, size=3)
        a = rng.normal(size=(m, k))
        b = rng.normal(size=(k, n))
        c = rng.normal(size=n) + 2.0  # bounded away from 0 for div/log/sqrt

        def f(lv):
            y = ad.matmul(lv["a"], lv["b"])
            y = ad.add(y, lv["c"])
            y = ad.div(ad.mul(y, y), ad.const(2.0))
            y = ad.log(ad.add(ad.exp(ad.neg(y)), ad.const(1.0)))
            z = ad.sqrt(ad.add(ad.square(lv["c"]), ad.const(1.0)))
            return ad.add(ad.sum_all(y), ad.sum_all(z))

        report = ad.finite_diff_check(f, {"a": a, "b": b, "c": c})
        assert report.max_rel_err < 1e-4, f"instance {i}: {report}"


def test_concat_narrow_reshape_gradients():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(2, 2))

    def f(lv):
        joined = ad.concat([lv["a"], lv["b"]], axis=1)
        left = ad.narrow(joined, 1, 3, axis=1)
        flat = ad.reshape(left, (6,))
        return ad.sum_all(ad.mul(flat, flat))

    report = ad.finite_diff_check(f, {"a": a, "b": b})
    assert report.max_rel_err < 1e-6


def test_tape_replay_is_deterministic():
    rng = np.random.default_rng(3)
    w = rng.normal(size=(4, 4))
    x = rng.normal(size=4)

    def run():
        tape = ad.Tape()
        wt = tape.leaf(w)
        loss = ad.sum_all(ad.tanh(ad.matmul(wt, ad.const(x))))
        tape.backward(loss)
        return float(loss.data), wt.grad.copy()

    loss1, grad1 = run()
    loss2, grad2 = run()
    assert loss1 == loss2
    assert np.array_equal(grad1, grad2)


def test_backward_twice_is_forbidden():
    tape = ad.Tape()
    x = tape.leaf(2.0)
    loss = ad.mul(x, x)
    tape.backward(loss)
    with pytest.raises(UsageError):
        tape.backward(loss)
    tape.reset()
    assert x.grad is None
    tape.backward(loss)
    assert x.grad == pytest.approx(4.0)


def test_backward_loss_not_on_tape():
    tape = ad.Tape()
    tape.leaf(1.0)
    other = ad.Tape()
    y = other.leaf(1.0)
    loss = ad.mul(y, y)
    with pytest.raises(UsageError):
        tape.backward(loss)


def test_backward_rejects_vector_loss():
    tape = ad.Tape()
    x = tape.leaf([1.0, 2.0])
    with pytest.raises(UsageError):
        tape.backward(ad.mul(x, x))


def test_mixed_tapes_rejected():
    t1, t2 = ad.Tape(), ad.Tape()
    a = t1.leaf(1.0)
    b = t2.leaf(2.0)
    with pytest.raises(UsageError):
        ad.add(a, b)


def test_fanout_accumulates_additively():
    tape = ad.Tape()
    x = tape.leaf(2.0)
    # x*x + 3x: gradient 2x + 3 = 7
    loss = ad.add(ad.mul(x, x), ad.mul(x, ad.const(3.0)))
    tape.backward(loss)
    assert x.grad == pytest.approx(7.0)


def test_bias_broadcast_gradient():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(5, 3))
    b = rng.normal(size=3)

    def f(lv):
        return ad.sum_all(ad.square(ad.add(ad.const(x), lv["b"])))

    report = ad.finite_diff_check(f, {"b": b})
    assert report.max_rel_err < 1e-6


def test_forward_backward_finite():
    rng = np.random.default_rng(5)
    tape = ad.Tape()
    w = tape.leaf(rng.normal(size=(6, 6)))
    x = ad.const(rng.normal(size=6))
    h = ad.tanh(ad.matmul(w, x))
    loss = ad.sum_all(ad.square(h))
    tape.backward(loss)
    assert np.isfinite(loss.data)
    assert np.all(np.isfinite(w.grad))
