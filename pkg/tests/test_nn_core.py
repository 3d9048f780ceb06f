import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mvaction import nn
from mvaction.errors import ContractViolation, ShapeError, ValidationError
from mvaction.gradcheck_suites import OP_TOLERANCE, ops_suite


def _param(x, name="p"):
    return nn.Parameter(np.asarray(x, dtype=np.float64), name)


class TestDense:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        out = nn.dense(nn.Tensor(x), nn.Tensor(np.eye(4)), nn.Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x)

    def test_hand_example(self):
        out = nn.dense(nn.Tensor([[1.0, 2.0]]), nn.Tensor([[1.0], [1.0]]), nn.Tensor([3.0]))
        assert out.data.tolist() == [[6.0]]

    def test_shape_error_names_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 1\)"):
            nn.dense(nn.Tensor(np.zeros((2, 3))), nn.Tensor(np.zeros((4, 1))))

    def test_gradient_wrt_weights(self):
        rng = np.random.default_rng(1)
        x, W, b = nn.Tensor(rng.normal(size=(4, 3))), _param(rng.normal(size=(3, 2)), "W"), _param(np.zeros(2), "b")
        assert nn.gradcheck(lambda: nn.dense(x, W, b), [W, b], tolerance=1e-6).passed


class TestConv:
    def test_unit_kernel_identity(self):
        x = np.random.default_rng(2).normal(size=(1, 4, 5, 1))
        out = nn.conv2d(nn.Tensor(x), nn.Tensor(np.ones((1, 1, 1, 1))))
        np.testing.assert_allclose(out.data, x, atol=1e-15)

    def test_ones_valid(self):
        out = nn.conv2d(nn.Tensor(np.ones((1, 2, 2, 1))), nn.Tensor(np.ones((2, 2, 1, 1))), padding="valid")
        assert out.data.reshape(-1).tolist() == [4.0]

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            nn.conv2d(nn.Tensor(np.ones((1, 2, 2, 1))), nn.Tensor(np.ones((3, 3, 1, 1))), padding="valid")

    def test_same_padding_shape_and_stride(self):
        x = nn.Tensor(np.ones((2, 5, 6, 3)))
        K = nn.Tensor(np.ones((3, 3, 3, 4)))
        assert nn.conv2d(x, K).shape == (2, 5, 6, 4)
        assert nn.conv2d(x, K, stride=2).shape == (2, 3, 3, 4)

    def test_conv3d_time_valid(self):
        out = nn.conv3d(nn.Tensor(np.ones((1, 5, 4, 4, 2))), nn.Tensor(np.ones((3, 3, 3, 2, 1))))
        assert out.shape == (1, 3, 4, 4, 1)
        # interior voxel sums 3*3*3*2 ones
        assert out.data[0, 0, 1, 1, 0] == 54.0


class TestGDC:
    def test_ones_kernel_spatial_sum(self):
        x = np.arange(8.0).reshape(1, 2, 2, 2)
        out = nn.global_depthwise_conv(nn.Tensor(x), nn.Tensor(np.ones((2, 2, 2))), nn.Tensor(np.zeros(2)))
        assert out.shape == (1, 1, 1, 2)
        assert out.data.reshape(-1).tolist() == [0 + 2 + 4 + 6, 1 + 3 + 5 + 7]

    def test_zero_input_gives_bias(self):
        out = nn.global_depthwise_conv(nn.Tensor(np.zeros((3, 2, 4, 5))), nn.Tensor(np.ones((2, 4, 5))),
                                       nn.Tensor(np.arange(5.0)))
        np.testing.assert_array_equal(out.data.reshape(3, 5), np.tile(np.arange(5.0), (3, 1)))

    def test_spatial_mismatch(self):
        with pytest.raises(ShapeError):
            nn.global_depthwise_conv(nn.Tensor(np.zeros((1, 3, 3, 2))), nn.Tensor(np.zeros((2, 3, 2))))


class TestSoftmaxGroups:
    def test_equal_logits(self):
        out = nn.softmax_over_groups(nn.Tensor(np.zeros((2, 5))))
        np.testing.assert_allclose(out.data, 0.5)

    def test_ln3(self):
        out = nn.softmax_over_groups(nn.Tensor(np.array([[np.log(3.0)], [0.0]])))
        np.testing.assert_allclose(out.data.reshape(-1), [0.75, 0.25], atol=1e-15)

    @given(st.integers(1, 5), st.integers(1, 6), st.floats(-50, 50), st.integers(0, 10_000))
    def test_normalised_and_shift_invariant(self, m, c, shift, seed):
        x = np.random.default_rng(seed).normal(size=(3, m, c)) * 5
        out = nn.softmax_over_groups(nn.Tensor(x)).data
        assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-12
        shifted = nn.softmax_over_groups(nn.Tensor(x + shift)).data
        assert np.max(np.abs(shifted - out)) <= 1e-12

    def test_large_logits_stable(self):
        out = nn.softmax_over_groups(nn.Tensor(np.array([[1000.0], [0.0]]))).data
        assert np.all(np.isfinite(out)) and out[0, 0] == 1.0


class TestPrimitives:
    def test_cross_entropy_perfect(self):
        logits = np.full((3, 4), -50.0)
        logits[np.arange(3), [0, 2, 3]] = 50.0
        assert nn.cross_entropy_loss(nn.Tensor(logits), [0, 2, 3]).item() < 1e-9

    def test_cross_entropy_uniform(self):
        assert nn.cross_entropy_loss(nn.Tensor(np.zeros((2, 5))), [1, 4]).item() == pytest.approx(np.log(5))

    def test_concat_channels_shape(self):
        out = nn.concat_channels([nn.Tensor(np.zeros((4, 5, 2))), nn.Tensor(np.zeros((4, 5, 3)))])
        assert out.shape == (4, 5, 5)

    def test_sgd_step_example(self):
        p = _param([1.0])
        p.grad = np.array([2.0])
        nn.sgd_step(p, lr=0.1)
        assert p.data[0] == pytest.approx(0.8, abs=1e-15)

    def test_sgd_momentum_buffer(self):
        p = _param([0.0])
        v = np.zeros(1)
        for _ in range(2):
            p.grad = np.array([1.0])
            nn.sgd_step(p, lr=1.0, momentum=0.5, velocity=v)
        # buffer 1 then 1.5
        assert p.data[0] == pytest.approx(-2.5)

    def test_optimizer_clip(self):
        p = _param([0.0, 0.0])
        opt = nn.SGD([p], lr=1.0)
        p.grad = np.array([3.0, 4.0])
        assert opt.clip_grad_norm(1.0) == pytest.approx(5.0)
        np.testing.assert_allclose(p.grad, [0.6, 0.8])

    def test_avg_pool_and_gap(self):
        x = np.arange(16.0).reshape(1, 4, 4, 1)
        assert nn.avg_pool(nn.Tensor(x)).data.reshape(-1).tolist() == [2.5, 4.5, 10.5, 12.5]
        assert nn.global_avg_pool(nn.Tensor(x)).data.reshape(-1).tolist() == [7.5]

    def test_mismatch_shapes(self):
        with pytest.raises(ShapeError):
            nn.add(nn.Tensor(np.zeros((2, 3))), nn.Tensor(np.zeros((4, 3))))

    def test_no_grad_records_nothing(self):
        p = _param(np.ones(3))
        with nn.no_grad():
            out = nn.mul(p, 2.0)
        assert not out.requires_grad

    def test_forward_bit_deterministic(self):
        rng = np.random.default_rng(4)
        x, K = rng.normal(size=(2, 6, 6, 3)), rng.normal(size=(3, 3, 3, 4))
        a = nn.conv2d(nn.Tensor(x), nn.Tensor(K)).data
        b = nn.conv2d(nn.Tensor(x), nn.Tensor(K)).data
        assert a.tobytes() == b.tobytes()


class TestGradcheck:
    def test_every_op_passes(self):
        results = ops_suite(seed=0)
        assert len(results) >= 20
        for name, report in results:
            assert report.passed, f"{name}: {report.summary()}"

    @pytest.mark.parametrize("seed", [1, 2])
    def test_randomised_seeds(self, seed):
        for name, report in ops_suite(seed=seed, tolerance=OP_TOLERANCE):
            assert report.passed, f"{name}: {report.summary()}"

    def test_corrupted_backward_fails(self):
        x = nn.Tensor(np.random.default_rng(5).normal(size=(3, 2)))

        def bad_square():
            out = nn.Tensor(x.data ** 2, (x,), "bad_square")
            out._backward = lambda g: x.accumulate(g * 3.0 * x.data)   # should be 2x
            return out

        report = nn.gradcheck(bad_square, [x])
        assert not report.passed and "FAIL" in report.summary()

    def test_non_determinism_detected(self):
        x = nn.Tensor(np.ones(3))
        state = {"n": 0}

        def drifting():
            state["n"] += 1
            return nn.mul(x, float(state["n"]))

        with pytest.raises(ContractViolation):
            nn.gradcheck(drifting, [x])

    def test_restores_flags(self):
        x = nn.Tensor(np.ones((2, 2)))
        nn.gradcheck(lambda: nn.tanh(x), [x])
        assert not x.requires_grad and x.grad is None


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        params = {"a.w": _param(np.random.default_rng(0).normal(size=(3, 2)), "a.w"),
                  "a.b": _param(np.arange(2.0), "a.b"), "s": _param(np.array(1.5), "s")}
        nn.save_checkpoint(tmp_path / "m.mvck", params)
        back = nn.load_checkpoint(tmp_path / "m.mvck")
        assert list(back) == ["a.w", "a.b", "s"]
        for k, p in params.items():
            assert back[k].shape == p.data.shape
            np.testing.assert_array_equal(back[k], p.data)

    def test_bad_magic_and_version(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ValidationError):
            nn.load_checkpoint(tmp_path / "x")
        (tmp_path / "y").write_bytes(b"MVCK" + (9).to_bytes(4, "little") + bytes(4))
        with pytest.raises(ValidationError, match="version"):
            nn.load_checkpoint(tmp_path / "y")
