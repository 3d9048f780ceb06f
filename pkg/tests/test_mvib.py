import os
from pathlib import Path

import numpy as np
import pytest

from mvaction import nn
from mvaction.errors import ConfigError, DataError, ShapeError
from mvaction.mvib import (
    MultiStreamConfig, build_multistream, count_parameters, init_mvib_params, mvib_forward, predict, train_multiview,
)
from mvaction.training import TrainConfig

DATA = Path(__file__).parent / "data"
TINY = MultiStreamConfig(num_views=2, num_classes=3, input_shape=(16, 16, 3), widths=(4, 4, 8, 8),
                         mvib_points=(2, 4), reduction=4)


def _views(rng, n, m=2, shape=(3, 4, 5)):
    return [nn.Tensor(rng.normal(size=(n,) + shape)) for _ in range(m)]


class TestBlock:
    def test_zero_fc2_uniform_weights(self):
        rng = np.random.default_rng(0)
        for m in (2, 3):
            params = init_mvib_params(rng, m, 5, 3, 4, reduction=5)
            params["fc2_w"].data[...] = 0.0
            params["fc2_b"].data[...] = 0.0
            views = _views(rng, 2, m, (3, 4, 5))
            out, w = mvib_forward(views, params, return_weights=True)
            np.testing.assert_allclose(w.data, 1.0 / m, atol=1e-15)
            for a, p in zip(views, out):
                np.testing.assert_allclose(p.data, (1 + 1.0 / m) * a.data, atol=1e-14)

    def test_zero_features_stay_zero(self):
        rng = np.random.default_rng(1)
        params = init_mvib_params(rng, 2, 4, 2, 2, reduction=2)
        for p in params.values():
            p.data[...] = rng.normal(size=p.data.shape)
        out = mvib_forward([nn.Tensor(np.zeros((3, 2, 2, 4)))] * 2, params)
        assert all(np.all(p.data == 0.0) for p in out)

    def test_hand_set_logits(self):
        params = init_mvib_params(np.random.default_rng(2), 2, 1, 2, 2, reduction=2)
        params["fc2_w"].data[...] = 0.0
        params["fc2_b"].data[...] = [np.log(3.0), 0.0]
        rng = np.random.default_rng(3)
        a1, a2 = rng.normal(size=(1, 2, 2, 1)), rng.normal(size=(1, 2, 2, 1))
        (p1, p2), w = mvib_forward([a1, a2], params, return_weights=True)
        np.testing.assert_allclose(w.data.reshape(-1), [0.75, 0.25], atol=1e-15)
        np.testing.assert_allclose(p1.data, 1.75 * a1, atol=1e-14)
        np.testing.assert_allclose(p2.data, 1.25 * a2, atol=1e-14)

    def test_shape_preserved_and_mismatch(self):
        rng = np.random.default_rng(4)
        params = init_mvib_params(rng, 2, 5, 3, 4, reduction=5)
        out = mvib_forward(_views(rng, 2), params)
        assert [p.shape for p in out] == [(2, 3, 4, 5)] * 2
        with pytest.raises(ShapeError):
            mvib_forward([nn.Tensor(np.zeros((2, 3, 4, 5))), nn.Tensor(np.zeros((2, 3, 4, 4)))], params)

    def test_symmetric_parameters_identical_outputs(self):
        rng = np.random.default_rng(5)
        c, m = 4, 2
        params = init_mvib_params(rng, m, c, 3, 3, reduction=2)
        k = params["gdc_kernel"].data
        k[..., c:] = k[..., :c]
        params["gdc_bias"].data[c:] = params["gdc_bias"].data[:c]
        params["fc1_w"].data[c:] = params["fc1_w"].data[:c]
        params["fc2_w"].data[:, c:] = params["fc2_w"].data[:, :c]
        params["fc2_b"].data[c:] = params["fc2_b"].data[:c]
        a = rng.normal(size=(2, 3, 3, c))
        p1, p2 = mvib_forward([a, a.copy()], params)
        np.testing.assert_array_equal(p1.data, p2.data)

    def test_normalisation_1000_trials(self):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(1000):
            m = int(rng.integers(2, 5))
            c = int(rng.integers(1, 5))
            params = init_mvib_params(rng, m, c, 2, 3, reduction=1)
            for p in params.values():
                p.data[...] = rng.normal(size=p.data.shape) * 3
            _, w = mvib_forward(_views(rng, 1, m, (2, 3, c)), params, return_weights=True)
            worst = max(worst, float(np.abs(w.data.sum(axis=1) - 1.0).max()))
        assert worst <= 1e-12

    def test_reduction_must_divide(self):
        with pytest.raises(ConfigError):
            init_mvib_params(np.random.default_rng(0), 2, 3, 2, 2, reduction=4)


class TestNetwork:
    def test_logits_width(self):
        cfg = MultiStreamConfig(input_shape=(16, 32, 3), widths=(4, 4, 8, 8))
        net = build_multistream(cfg, 0)
        out = net.forward([np.zeros((2, 16, 32, 3))] * 2)
        assert out.shape == (2, 30)

    def test_parameter_count_by_hand(self):
        # backbone per view: 3*3*3*4+4, 3*3*4*4+4, 3*3*4*8+8, 3*3*8*8+8
        backbone = 2 * (112 + 148 + 296 + 584)
        # stage-2 block on 4x4 maps, M*C = 8, hidden 2; stage-4 block on 1x1, M*C = 16, hidden 4
        block2 = (4 * 4 * 8 + 8) + (8 * 2 + 2) + (2 * 8 + 8)
        block4 = (1 * 1 * 16 + 16) + (16 * 4 + 4) + (4 * 16 + 16)
        head = 16 * 3 + 3
        expected = backbone + block2 + block4 + head
        assert expected == 2689
        assert count_parameters(TINY) == expected == build_multistream(TINY).num_parameters()

    def test_no_mvib_is_concatenation(self):
        cfg = MultiStreamConfig(**{**TINY.__dict__, "mvib_points": ()})
        net = build_multistream(cfg, 0)
        assert not net.mvib and not any(k.startswith("mvib") for k in net.params)
        assert count_parameters(cfg) == 2 * 1140 + 51

    @pytest.mark.parametrize("kwargs", [{"mvib_points": (1,)}, {"mvib_points": (5,)}, {"num_views": 1},
                                        {"widths": (4, 8, 8)}, {"input_shape": (8, 16, 3)}])
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            MultiStreamConfig(**{**TINY.__dict__, **kwargs})

    def test_wrong_input_shape(self):
        net = build_multistream(TINY)
        with pytest.raises(ShapeError):
            net.forward([np.zeros((1, 16, 15, 3))] * 2)
        with pytest.raises(ShapeError):
            net.forward([np.zeros((1, 16, 16, 3))])

    def test_predict_probabilities(self):
        net = build_multistream(TINY, 1)
        rng = np.random.default_rng(0)
        views = [rng.random((4, 16, 16, 3)) for _ in range(2)]
        p = predict(net, views)
        assert p.shape == (4, 3) and np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-9)
        single = predict(net, [v[0] for v in views])
        np.testing.assert_allclose(single, p[0], atol=1e-14)

    def test_checkpoint_round_trip(self, tmp_path):
        a, b = build_multistream(TINY, 1), build_multistream(TINY, 2)
        a.save(tmp_path / "m.mvck")
        b.load(tmp_path / "m.mvck")
        for k in a.params:
            np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
        with pytest.raises(ShapeError):
            build_multistream(MultiStreamConfig(**{**TINY.__dict__, "num_classes": 4})).load(tmp_path / "m.mvck")


def _golden_inputs():
    rng = np.random.default_rng(2024)
    return [rng.random((3, 16, 16, 3)) for _ in range(2)]


def test_golden_output():
    ckpt, probs_path = DATA / "tiny_multistream.mvck", DATA / "tiny_multistream_probs.npy"
    if os.environ.get("MVACTION_REGEN_GOLDEN"):
        DATA.mkdir(exist_ok=True)
        net = build_multistream(TINY, 11)
        net.save(ckpt)
        np.save(probs_path, net.predict(_golden_inputs()))
    net = build_multistream(TINY, 0)
    net.load(ckpt)
    np.testing.assert_allclose(net.predict(_golden_inputs()), np.load(probs_path), rtol=0, atol=1e-12)


def _items(n, seed=0):
    rng = np.random.default_rng(seed)
    return {f"S{i}": ([rng.random((16, 16, 3)) for _ in range(2)], 1 + i % 3) for i in range(n)}


class TestTraining:
    def test_single_sample_memorised(self):
        net = build_multistream(TINY, 0)
        history, scores = train_multiview(net, _items(1), ({"S0"}, set()),
                                          TrainConfig(epochs=200, batch_size=1, lr=0.05, schedule="constant"), 0)
        assert history.loss[-1] < 1e-3 and scores is None

    def test_seed_determinism(self):
        hyper = TrainConfig(epochs=2, batch_size=2)
        states = []
        for _ in range(2):
            net = build_multistream(TINY, 3)
            train_multiview(net, _items(6), ({"S0", "S1", "S2", "S3"}, {"S4", "S5"}), hyper, seed=9)
            states.append(net.state_dict())
        for k in states[0]:
            assert states[0][k].tobytes() == states[1][k].tobytes()

    def test_history_and_scores(self):
        net = build_multistream(TINY, 0)
        history, scores = train_multiview(net, _items(6), ({"S0", "S1", "S2", "S3"}, {"S4", "S5"}),
                                          TrainConfig(epochs=3, batch_size=2), 0)
        assert history.epochs == [1, 2, 3] and all(0 <= a <= 1 for a in history.accuracy)
        assert scores.sample_ids == ("S4", "S5")

    def test_missing_view_names_sample(self):
        items = _items(3)
        items["S1"] = (items["S1"][0][:1], 2)
        with pytest.raises(DataError, match="S1"):
            train_multiview(build_multistream(TINY), items, ({"S0", "S1"}, {"S2"}), TrainConfig(epochs=1))
