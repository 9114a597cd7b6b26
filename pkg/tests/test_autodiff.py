import numpy as np
import pytest

from autodiff import Tape, Tensor, backward, check_gradients, relative_error
from autodiff import functional as F
from errors import ContractError, DimensionError


def leaf(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestTape:
    def test_nothing_recorded_outside_a_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = F.mul(x, x)
        assert not y.requires_grad

    def test_frozen_inputs_are_not_recorded(self):
        frozen = Tensor(np.ones(3))
        with Tape() as tape:
            F.exp(frozen)
        assert len(tape) == 0

    def test_backward_populates_leaf_gradients(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = F.sum(F.square(x))
            tape.backward(loss)
            np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_gradient_accumulates_over_reuse(self):
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = F.sum(F.add(F.mul(x, x), x))
            tape.backward(loss)
            np.testing.assert_allclose(x.grad, [7.0])

    def test_clear_drops_gradients(self):
        x = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(F.sum(F.square(x)))
        tape.clear()
        assert x.grad is None
        assert len(tape) == 0

    def test_backward_needs_a_scalar(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = F.square(x)
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_backward_needs_an_active_tape(self):
        with pytest.raises(ContractError):
            backward(Tensor(1.0))

    def test_tensors_are_immutable(self):
        x = Tensor(np.zeros(2))
        with pytest.raises(ValueError):
            x.data[0] = 1.0


class TestFunctional:
    def test_broadcast_gradient_is_summed_back(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            tape.backward(F.sum(F.add(a, b)))
            np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 5)) * 50)
        np.testing.assert_allclose(F.softmax_rows(x).data.sum(axis=-1), np.ones(4))

    def test_layer_norm_normalises(self):
        x = Tensor(np.random.default_rng(0).normal(3.0, 2.0, size=(5, 16)))
        out = F.layer_norm(x, Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-3)

    def test_gather_tokens_picks_per_batch_column(self):
        x = Tensor(np.arange(12, dtype=float).reshape(3, 2, 2))
        out = F.gather_tokens(x, np.array([[2, 0]]))
        np.testing.assert_array_equal(out.data, [[[8.0, 9.0], [2.0, 3.0]]])

    def test_gather_tokens_rejects_out_of_range(self):
        with pytest.raises(ContractError):
            F.gather_tokens(Tensor(np.zeros((2, 1, 1))), np.array([[2]]))

    def test_embedding_rejects_unknown_ids(self):
        with pytest.raises(ContractError):
            F.embedding(Tensor(np.zeros((4, 2))), np.array([4]))

    def test_l2_normalize_gives_unit_rows(self):
        x = Tensor(np.random.default_rng(1).normal(size=(3, 4)))
        np.testing.assert_allclose(np.linalg.norm(F.l2_normalize(x).data, axis=-1), 1.0)


class TestGradCheck:
    def test_relative_error_floor(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        error = relative_error(np.array([1.0]), np.array([1.1]))
        assert error == pytest.approx(0.1 / 1.1)

    def test_composite_ops_match_finite_differences(self):
        rng = np.random.default_rng(0)
        params = {
            "w": leaf(rng, 4, 4),
            "gain": leaf(rng, 4),
            "bias": leaf(rng, 4),
            "table": leaf(rng, 6, 4),
        }
        ids = np.array([[0, 3], [5, 1], [2, 2]])
        index = np.array([[2, 0], [0, 1]])
        readout = Tensor(rng.normal(size=(2, 2, 4)))

        def objective(p):
            x = F.embedding(p["table"], ids)  # [3, 2, 4]
            x = F.layer_norm(x, p["gain"], p["bias"])
            x = F.gelu(F.matmul(x, p["w"]))
            x = F.gather_tokens(x, index)
            attention = F.softmax_rows(F.matmul(x, F.transpose(x, (0, 2, 1))))
            return F.sum(F.mul(F.l2_normalize(F.matmul(attention, x)), readout))

        report = check_gradients(objective, params, tolerance=1e-5)
        assert report.passed, report.worst

    def test_frozen_tensor_must_not_receive_gradient(self):
        rng = np.random.default_rng(1)
        frozen = Tensor(rng.normal(size=(3,)))
        params = {"x": leaf(rng, 3)}
        report = check_gradients(
            lambda p: F.sum(F.mul(p["x"], frozen)), params, frozen=[frozen]
        )
        assert report.frozen_without_grad
        assert report.passed
