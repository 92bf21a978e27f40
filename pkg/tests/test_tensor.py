import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from aeroop import tensor as T
from conftest import check_gradients, scalarize


def rand(gen, shape, complex_=False):
    x = gen.uniform(-1, 1, size=shape)
    if complex_:
        x = x + 1j * gen.uniform(-1, 1, size=shape)
    return x


# -- forward examples -------------------------------------------------------


def test_square_value_and_gradient():
    x = T.parameter(3.0)
    y, tape = T.record_forward(lambda: x * x)
    assert y.item() == 9.0
    assert T.backward(tape, y)[x] == pytest.approx(6.0)


def test_zeros_plus_zeros():
    x = T.parameter(np.zeros(4))
    y, _ = T.record_forward(lambda: x + x)
    assert np.array_equal(y.data, np.zeros(4))


def test_recorded_matmul_equals_eager(rng):
    a = T.parameter(rand(rng, (3, 3), True))
    b = T.parameter(rand(rng, (3, 3), True))
    y, _ = T.record_forward(lambda: T.matmul(a, b))
    assert np.abs(y.data - a.data @ b.data).max() < 1e-15


def test_real_part_and_sum():
    assert T.real(T.tensor(2 + 3j)).item() == 2.0
    assert T.reduce_sum(T.tensor(np.ones(5))).item() == 5.0


def test_complex_norm_descent():
    z = T.parameter(np.array([1 + 2j]))
    loss_fn = lambda: T.reduce_sum(T.mul(T.absolute(z), T.absolute(z)))
    loss, tape = T.record_forward(loss_fn)
    g = T.backward(tape, loss)[z]
    assert g[0] == pytest.approx(2 * (1 + 2j))
    before = loss.item()
    z.data = z.data - 1e-3 * g
    assert loss_fn().item() < before


# -- errors -----------------------------------------------------------------


def test_shape_mismatch_names_primitive():
    with pytest.raises(T.ShapeError, match=r"add.*\(2,\).*\(3,\)"):
        T.add(T.tensor(np.zeros(2)), T.tensor(np.zeros(3)))
    with pytest.raises(T.ShapeError, match="matmul"):
        T.matmul(T.tensor(np.zeros((2, 3))), T.tensor(np.zeros((2, 3))))


def test_nonfinite_rejected():
    with pytest.raises(T.NonFiniteError):
        T.tensor(np.array([1.0, np.nan]))
    with pytest.raises(T.NonFiniteError):
        T.parameter(np.inf)


def test_nonscalar_output_needs_seed():
    x = T.parameter(np.ones(3))
    y, tape = T.record_forward(lambda: x * 2.0)
    with pytest.raises(ValueError):
        T.backward(tape, y)
    g = T.backward(tape, y, seed=np.ones(3))
    assert np.array_equal(g[x], np.full(3, 2.0))


def test_replay_detects_corruption(rng):
    x = T.parameter(rand(rng, (4,)))
    y, tape = T.record_forward(lambda: T.reduce_sum(T.mul(x, x)))
    assert tape.replay() is y
    x.data = x.data + 1.0
    with pytest.raises(T.TapeReplayError):
        T.backward(tape, y, verify=True)


# -- tape structure ---------------------------------------------------------


def test_tape_topological_and_leaves(rng):
    a = T.parameter(rand(rng, (3,)), "a")
    b = T.parameter(rand(rng, (3,)), "b")
    const = T.tensor(rand(rng, (3,)))
    _, tape = T.record_forward(lambda: T.reduce_sum(T.mul(T.add(a, const), b)))
    seen = set()
    for node in tape.nodes:
        for t in node.inputs:
            assert not t.requires_grad or t in (a, b) or id(t) in seen
        seen.add(id(node.output))
    assert tape.leaves() == [a, b]


def test_constant_ops_not_recorded():
    c = T.tensor(np.ones(3))
    with T.Tape() as tape:
        T.mul(c, c)
    assert tape.nodes == []


def test_gradient_set_one_entry_per_leaf(rng):
    a = T.parameter(rand(rng, (2, 3)))
    unused = T.parameter(rand(rng, (2,)))
    y, tape = T.record_forward(lambda: T.reduce_sum(T.mul(a, a)))
    g = T.backward(tape, y)
    assert set(g) == {a} and g[a].shape == a.shape
    assert unused not in g


def test_backward_linear_in_seed(rng):
    x = T.parameter(rand(rng, (4, 3), True))
    w = T.tensor(rand(rng, (3, 2), True))
    y, tape = T.record_forward(lambda: T.split_gelu(T.matmul(x, w)))
    seed = rand(rng, y.shape, True)
    g1 = T.backward(tape, y, seed)[x]
    g2 = T.backward(tape, y, 2.5 * seed)[x]
    assert np.abs(g2 - 2.5 * g1).max() < 1e-14


def test_replay_determinism(rng):
    x = T.parameter(rand(rng, (5, 5), True))
    f = lambda: T.reduce_sum(T.absolute(T.fft2(T.split_gelu(x))))
    y1, t1 = T.record_forward(f)
    y2, t2 = T.record_forward(f)
    assert y1.data.tobytes() == y2.data.tobytes()
    g1, g2 = T.backward(t1, y1)[x], T.backward(t2, y2)[x]
    assert g1.tobytes() == g2.tobytes()


def test_tapes_are_thread_local(rng):
    x = T.parameter(rand(rng, (3,)))
    results = {}

    def work(key, c):
        y, tape = T.record_forward(lambda: T.reduce_sum(T.scale(T.mul(x, x), c)))
        results[key] = (len(tape.nodes), T.backward(tape, y)[x])

    threads = [threading.Thread(target=work, args=(i, float(i + 1))) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for i in range(4):
        assert results[i][0] == 3
        assert np.allclose(results[i][1], 2 * (i + 1) * x.data)


# -- finite-difference checks of every primitive ----------------------------

PRIMITIVES = {
    "add": (lambda a, b: T.add(a, b), [(3, 4), (3, 4)], (True, False)),
    "add_broadcast": (lambda a, b: T.add(a, b), [(3, 4), (4,)], (False, True)),
    "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 4)], (True, True)),
    "mul": (lambda a, b: T.mul(a, b), [(3, 4), (3, 4)], (True, True)),
    "mul_real_complex": (lambda a, b: T.mul(a, b), [(3, 4), (3, 4)], (False, True)),
    "scale": (lambda a: T.scale(a, 0.7 - 0.2j), [(3, 4)], (True,)),
    "matmul": (lambda a, b: T.matmul(a, b), [(2, 3, 4), (2, 4, 5)], (True, True)),
    "dense": (lambda a, w, b: T.dense(a, w, b), [(2, 3, 4), (4, 5), (5,)], (True, True, True)),
    "contract": (lambda a, b: T.contract("bixy,ioxy->boxy", a, b), [(2, 3, 2, 2), (3, 4, 2, 2)], (True, True)),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)], (True,)),
    "reshape": (lambda a: T.reshape(a, (6, 4)), [(2, 3, 4)], (False,)),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 5)], (True, True)),
    "slice": (lambda a: a[:, 1:3], [(3, 4)], (True,)),
    "take": (lambda a: T.take(a, [0, 2, 2], axis=1), [(3, 4)], (True,)),
    "scatter": (lambda a: T.scatter(a, [1, 3], axis=0, size=5), [(2, 3)], (True,)),
    "relu": (lambda a: T.relu(a), [(4, 5)], (False,)),
    "gelu": (lambda a: T.gelu(a), [(4, 5)], (False,)),
    "split_gelu": (lambda a: T.split_gelu(a), [(4, 5)], (True,)),
    "make_complex": (lambda a, b: T.make_complex(a, b), [(3,), (3,)], (False, False)),
    "real": (lambda a: T.real(a), [(3, 2)], (True,)),
    "imag": (lambda a: T.imag(a), [(3, 2)], (True,)),
    "conj": (lambda a: T.conj(a), [(3, 2)], (True,)),
    "absolute": (lambda a: T.absolute(a), [(3, 2)], (True,)),
    "absolute_real": (lambda a: T.absolute(a), [(3, 2)], (False,)),
    "reduce_sum_axis": (lambda a: T.reduce_sum(a, axis=(0, 2)), [(2, 3, 4)], (True,)),
    "reduce_mean": (lambda a: T.reduce_mean(a, axis=1), [(2, 3)], (False,)),
    "sqrt": (lambda a: T.sqrt(T.add(T.mul(a, a), T.tensor(0.5))), [(5,)], (False,)),
    "fft2": (lambda a: T.fft2(a), [(4, 5)], (True,)),
    "fft2_real_in": (lambda a: T.fft2(a, axes=(0, 1)), [(4, 3, 2)], (False,)),
    "ifft2": (lambda a: T.ifft2(a), [(4, 5)], (True,)),
    "axis_apply": (lambda a: T.axis_apply(a, np.arange(12).reshape(3, 4) * (0.1 + 0.3j), 1), [(2, 4, 3)], (True,)),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name, rng):
    fn, shapes, cplx = PRIMITIVES[name]
    params = [T.parameter(rand(rng, s, c), f"p{i}") for i, (s, c) in enumerate(zip(shapes, cplx))]
    probe = np.random.default_rng(7)
    weights_seed = probe.integers(1 << 30)

    def loss():
        return scalarize(fn(*params), np.random.default_rng(weights_seed))

    errs = check_gradients(loss, params)
    assert max(errs.values()) < 1e-6, errs


def test_axis_transform_order_gradient(rng):
    from aeroop import frft

    basis = frft.build_basis(6)
    x = T.parameter(rand(rng, (3, 6, 2), True), "x")
    a = T.parameter(np.array(0.37), "alpha")

    def loss():
        y = T.axis_transform(x, lambda s: frft.frft_matrix(s, basis), lambda s: frft.frft_matrix_dalpha(s, basis), a, 1)
        return scalarize(y, np.random.default_rng(3))

    errs = check_gradients(loss, [x, a])
    assert max(errs.values()) < 1e-6, errs


def test_two_layer_pointwise_network(rng):
    w1 = T.parameter(rand(rng, (3, 6), True), "w1")
    b1 = T.parameter(rand(rng, (6,), True), "b1")
    w2 = T.parameter(rand(rng, (6, 2)), "w2")
    b2 = T.parameter(rand(rng, (2,)), "b2")
    x = T.tensor(rand(rng, (5, 3)))

    def loss():
        h = T.split_gelu(T.dense(x, w1, b1))
        out = T.dense(T.gelu(T.real(h)), w2, b2)
        return T.reduce_mean(T.mul(out, out))

    errs = check_gradients(loss, [w1, b1, w2, b2])
    assert max(errs.values()) < 1e-6, errs


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matmul_adjoint_property(n, m, seed):
    gen = np.random.default_rng(seed)
    a = T.parameter(rand(gen, (n, m), True))
    b = T.tensor(rand(gen, (m, 2), True))
    y, tape = T.record_forward(lambda: T.matmul(a, b))
    seed_g = rand(gen, y.shape, True)
    g = T.backward(tape, y, seed_g)[a]
    assert np.allclose(g, seed_g @ b.data.conj().T, atol=1e-13)
