import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def test_matmul_values():
    from img2rna.autodiff import Tensor, matmul

    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.shape == (2, 1)
    assert np.array_equal(out.data, np.array([[17.0], [39.0]]))


def test_matmul_shape_mismatch_names_both_shapes():
    from img2rna.autodiff import Tensor, matmul
    from img2rna.exceptions import DimensionError

    with pytest.raises(DimensionError) as e:
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))
    assert "(2, 3)" in str(e.value)
    assert "(4, 2)" in str(e.value)


def test_matmul_gradient_matches_finite_differences(rng):
    from img2rna.autodiff import Tensor, matmul, numerical_gradient

    a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(rng.normal(size=(4, 2)), requires_grad=True)

    def loss():
        out = matmul(a, b)
        return (out * out).sum()

    loss().backward()
    assert np.allclose(a.grad, numerical_gradient(loss, a), rtol=1e-6, atol=1e-8)
    assert np.allclose(b.grad, numerical_gradient(loss, b), rtol=1e-6, atol=1e-8)


def test_elementwise_examples():
    from img2rna.autodiff import elementwise

    assert np.array_equal(elementwise("add", [1.0, 2.0], [3.0, 4.0]).data, [4.0, 6.0])
    assert np.array_equal(elementwise("mul", [2.0, 3.0], [4.0, 5.0]).data, [8.0, 15.0])
    assert np.array_equal(elementwise("relu", [-1.0, 0.0, 2.0]).data, [0.0, 0.0, 2.0])
    assert elementwise("gelu", [0.0]).data[0] == 0.0

    with pytest.raises(ValueError):
        elementwise("tanh", [1.0])


@pytest.mark.parametrize("op", ["relu", "gelu"])
def test_unary_gradients(rng, op):
    from img2rna.autodiff import Tensor, elementwise, numerical_gradient

    # Keep away from the relu kink
    values = rng.normal(size=10)
    values[np.abs(values) < 1e-3] = 0.5
    x = Tensor(values, requires_grad=True)

    def loss():
        return elementwise(op, x).sum()

    loss().backward()
    assert np.allclose(x.grad, numerical_gradient(loss, x), rtol=1e-5, atol=1e-7)


def test_broadcast_gradient_is_summed():
    from img2rna.autodiff import Tensor

    x = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.zeros(4), requires_grad=True)
    (x + b).sum().backward()
    assert np.array_equal(b.grad, np.full(4, 3.0))


def test_softmax_rows_sum_to_one_and_are_stable():
    from img2rna.autodiff import Tensor, softmax_lastaxis

    out = softmax_lastaxis(Tensor([[1000.0, 1000.0], [1.0, 2.0]]))
    assert np.all(np.isfinite(out.data))
    assert np.allclose(out.data[0], [0.5, 0.5])
    assert np.allclose(out.data.sum(axis=-1), 1.0)


def test_softmax_gradient(rng):
    from img2rna.autodiff import Tensor, softmax_lastaxis, numerical_gradient

    x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
    weights = rng.normal(size=(2, 5))

    def loss():
        return (softmax_lastaxis(x) * weights).sum()

    loss().backward()
    assert np.allclose(x.grad, numerical_gradient(loss, x), rtol=1e-5, atol=1e-8)


def test_backward_simple_polynomial():
    from img2rna.autodiff import Tensor

    x = Tensor(3.0, requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad == pytest.approx(7.0)


def test_backward_visits_shared_nodes_once():
    from img2rna.autodiff import Tensor

    x = Tensor(2.0, requires_grad=True)
    a = x * 2.0
    y = a * a
    y.backward()
    # y = 4x^2
    assert x.grad == pytest.approx(16.0)


def test_backward_accumulates_across_calls():
    from img2rna.autodiff import Tensor

    x = Tensor(1.5, requires_grad=True)
    (x * 2.0).backward()
    (x * 2.0).backward()
    assert x.grad == pytest.approx(4.0)


def test_backward_needs_scalar():
    from img2rna.autodiff import Tensor
    from img2rna.exceptions import DimensionError

    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DimensionError):
        (x * 2.0).backward()


def test_no_grad_records_nothing():
    from img2rna.autodiff import Tensor, no_grad

    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert y.requires_grad is False
    assert (x * 2.0).requires_grad is True


def test_tape_orders_operations_after_inputs():
    from img2rna.autodiff import Tensor, build_tape

    x = Tensor(np.ones(2), requires_grad=True)
    a = x * 2.0
    b = a + x
    loss = (a * b).sum()
    tape = build_tape(loss)
    position = {id(node): i for i, node in enumerate(tape)}
    for node in tape:
        for parent in node._parents:
            if id(parent) in position:
                assert position[id(parent)] < position[id(node)]
    assert len(position) == len(tape)


def test_item_needs_single_element():
    from img2rna.autodiff import Tensor
    from img2rna.exceptions import DimensionError

    assert Tensor([2.5]).item() == 2.5
    with pytest.raises(DimensionError):
        Tensor([1.0, 2.0]).item()


def test_inputs_are_not_modified(rng):
    from img2rna.autodiff import Tensor

    values = rng.normal(size=(3, 3))
    x = Tensor(values, requires_grad=True)
    before = x.data.copy()
    ((x @ x) - x).sum().backward()
    assert np.array_equal(x.data, before)


def test_softmax_known_values_and_shift_invariance(rng):
    from img2rna.autodiff import Tensor, softmax_lastaxis

    out = softmax_lastaxis(Tensor([0.0, np.log(3.0)]))
    assert np.allclose(out.data, [0.25, 0.75], rtol=0, atol=1e-12)

    x = rng.normal(size=(4, 6))
    shifted = softmax_lastaxis(Tensor(x + 1000.0)).data
    assert np.allclose(softmax_lastaxis(Tensor(x)).data, shifted, rtol=0, atol=1e-12)


def test_matmul_agrees_with_loops(rng):
    from img2rna.autodiff import Tensor, matmul

    for n, k, m in [(1, 1, 1), (3, 7, 2), (32, 32, 32), (5, 32, 17)]:
        a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
        expected = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                for s in range(k):
                    expected[i, j] += a[i, s] * b[s, j]
        out = matmul(Tensor(a), Tensor(b)).data
        assert np.allclose(out, expected, rtol=1e-12, atol=1e-12), (n, k, m)
