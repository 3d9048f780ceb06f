import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvaction import nn
from mvaction.data_model import ProtocolSplit
from mvaction.errors import ConfigError, DataError, ShapeError
from mvaction.si3d import (
    ConvLSTMState, StreamConfig, StreamNet, classify_stream, convlstm_step, init_stream_params, resize_maps,
    si3d_extract, train_stream, video_to_maps,
)
from mvaction.synth import BlobConfig, generate_blob_videos
from mvaction.training import TrainConfig

SMALL = StreamConfig(num_classes=4, in_channels=1, map_size=8, num_maps=4, extractor_widths=(3,), hidden=4,
                     dense_hidden=8)


class TestExtractor:
    def test_identity_kernels(self):
        cfg = StreamConfig(in_channels=2, num_maps=4, extractor_widths=(2,), extractor_kernel=(1, 1, 1),
                           extractor_pool=False, map_size=5)
        params = init_stream_params(cfg)
        params["conv3d1.kernel"].data[...] = np.eye(2).reshape(1, 1, 1, 2, 2)
        x = np.random.default_rng(0).normal(size=(2, 4, 5, 5, 2))
        out = si3d_extract(x, params, cfg)
        np.testing.assert_allclose(out.data, np.maximum(x, 0.0), atol=1e-15)

    def test_default_shape_contract(self):
        cfg = StreamConfig()
        assert (cfg.output_length(), cfg.output_size()) == (4, 8)
        params = init_stream_params(cfg)
        out = si3d_extract(np.zeros((1, 8, 32, 32, 3)), params, cfg)
        assert out.shape == (1, 4, 8, 8, 16)

    def test_too_few_maps(self):
        params = init_stream_params(StreamConfig())
        with pytest.raises(ShapeError):
            si3d_extract(np.zeros((1, 2, 32, 32, 3)), params, StreamConfig())

    @pytest.mark.parametrize("kwargs", [{"convlstm_layers": 0}, {"convlstm_layers": 4}, {"num_maps": 4},
                                        {"map_size": 2}])
    def test_config_errors(self, kwargs):
        with pytest.raises(ConfigError):
            StreamConfig(**kwargs)


def _lstm(rng, cin, hidden, scale=0.5):
    return (nn.Tensor(rng.normal(size=(3, 3, cin + hidden, 4 * hidden)) * scale),
            nn.Tensor(rng.normal(size=4 * hidden) * scale))


class TestConvLSTM:
    def test_zero_params_zero_state(self):
        x = np.random.default_rng(1).normal(size=(2, 4, 4, 3))
        state = convlstm_step(x, ConvLSTMState.zeros(2, 4, 4, 5), np.zeros((3, 3, 8, 20)), np.zeros(20))
        assert np.all(state.c.data == 0.0) and np.all(state.h.data == 0.0)

    @settings(max_examples=30)
    @given(st.integers(0, 10_000), st.floats(0.1, 5.0))
    def test_gates_and_cell_bound(self, seed, scale):
        rng = np.random.default_rng(seed)
        K, b = _lstm(rng, 2, 3, scale)
        x = rng.normal(size=(1, 4, 4, 2)) * scale
        h, c = rng.uniform(-1, 1, size=(1, 4, 4, 3)), rng.normal(size=(1, 4, 4, 3)) * 3
        z = nn.conv2d(nn.Tensor(np.concatenate([x, h], axis=-1)), K, b).data
        gates = 1.0 / (1.0 + np.exp(-z[..., :9]))
        finite = np.abs(z[..., :9]) < 30      # beyond this float64 rounds sigmoid to exactly 0 or 1
        assert np.all((gates[finite] > 0) & (gates[finite] < 1))
        new = convlstm_step(x, ConvLSTMState(nn.Tensor(h), nn.Tensor(c)), K, b)
        assert np.all(np.abs(new.c.data) <= np.abs(c) + 1.0)
        assert np.all(np.abs(new.h.data) <= 1.0)

    def test_shape_mismatch(self):
        K, b = _lstm(np.random.default_rng(2), 2, 3)
        with pytest.raises(ShapeError):
            convlstm_step(np.zeros((1, 4, 4, 3)), ConvLSTMState.zeros(1, 4, 4, 3), K, b)
        with pytest.raises(ShapeError):
            convlstm_step(np.zeros((1, 5, 4, 2)), ConvLSTMState.zeros(1, 4, 4, 3), K, b)

    def test_forget_bias_initialised_open(self):
        p = init_stream_params(SMALL)
        bias = p["lstm1.bias"].data
        assert np.all(bias[4:8] == 1.0) and np.all(bias[:4] == 0.0) and np.all(bias[8:] == 0.0)


class TestStream:
    def test_probabilities(self):
        params = init_stream_params(SMALL, 3)
        maps = np.random.default_rng(0).random((5, 4, 8, 8, 1))
        p = classify_stream(maps, SMALL, params)
        assert p.shape == (5, 4) and np.all(np.abs(p.sum(axis=1) - 1.0) <= 1e-9)
        np.testing.assert_allclose(classify_stream(maps[0], SMALL, params), p[0], atol=1e-14)

    def test_three_layers(self):
        cfg = StreamConfig(**{**SMALL.__dict__, "convlstm_layers": 3})
        net = StreamNet(cfg, 0)
        assert "lstm3.kernel" in net.params
        assert net.predict([np.zeros((2, 4, 8, 8, 1))]).shape == (2, 4)

    def test_single_sample_memorised(self):
        maps = {"S": (np.random.default_rng(1).random((4, 8, 8, 1)), 2)}
        _, history, _ = train_stream(None, ({"S"}, set()), SMALL,
                                     TrainConfig(epochs=200, batch_size=1, lr=0.05, schedule="constant"), maps=maps)
        assert history.loss[-1] < 1e-3

    def test_checkpoint_round_trip(self, tmp_path):
        a, b = StreamNet(SMALL, 1), StreamNet(SMALL, 2)
        a.save(tmp_path / "s.mvck")
        b.load(tmp_path / "s.mvck")
        x = [np.random.default_rng(0).random((2, 4, 8, 8, 1))]
        np.testing.assert_array_equal(a.predict(x), b.predict(x))

    def test_resize_and_video_maps(self):
        stack = np.random.default_rng(2).random((4, 16, 16, 1))
        assert resize_maps(stack, 8).shape == (4, 8, 8, 1)
        assert resize_maps(stack, 16) is stack
        video = generate_blob_videos(BlobConfig(num_groups=1, repeats=1, image_size=16), 0)[0]
        maps = video_to_maps(video, SMALL)
        assert maps.shape == (4, 8, 8, 1)
        with pytest.raises(ConfigError):
            video_to_maps(video, SMALL, {"num_windows": 8})


def _blob_data(seed):
    videos = generate_blob_videos(BlobConfig(num_groups=4, repeats=1, image_size=16, frames=(12, 16)), seed)
    train = {v.sample_id for v in videos if v.group_id != 4}
    test = {v.sample_id for v in videos if v.group_id == 4}
    split = ProtocolSplit("cs_first", frozenset(f"{s}/front/depth" for s in train),
                          frozenset(f"{s}/front/depth" for s in test))
    return videos, split


class TestTrainStream:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_loss_decreases_first_epochs(self, seed):
        videos, split = _blob_data(seed)
        _, history, scores = train_stream(videos, split, SMALL, TrainConfig(epochs=5, batch_size=4), seed)
        assert history.loss[-1] < history.loss[0]
        assert len(scores.sample_ids) == len(split.test_ids)

    def test_determinism(self):
        videos, split = _blob_data(0)
        runs = [train_stream(videos, split, SMALL, TrainConfig(epochs=1, batch_size=4), 5) for _ in range(2)]
        for k in runs[0][0].params:
            assert runs[0][0].params[k].data.tobytes() == runs[1][0].params[k].data.tobytes()
        np.testing.assert_array_equal(runs[0][2].probs, runs[1][2].probs)

    def test_missing_modality(self):
        videos, split = _blob_data(0)
        with pytest.raises(DataError, match="rgb"):
            train_stream(videos, split, SMALL, TrainConfig(epochs=1), modality="rgb")
