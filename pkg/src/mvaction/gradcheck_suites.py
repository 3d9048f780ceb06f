"""Named finite-difference suites: every autograd op, the MVIB block and the ConvLSTM unroll."""
from __future__ import annotations

import numpy as np

from . import nn
from .mvib import init_mvib_params, mvib_forward
from .si3d import ConvLSTMState, StreamConfig, convlstm_step, init_stream_params, si3d_extract

OP_TOLERANCE = 1e-6
BLOCK_TOLERANCE = 1e-4
TARGETS = ("ops", "mvib", "convlstm", "si3d", "all")


def _t(rng, *shape, away_from_zero=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        # keep relu inputs clear of the kink so central differences are exact
        x = np.sign(x) * (np.abs(x) + 0.1)
    return nn.Tensor(x)


def _op_cases(rng):
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    row = _t(rng, 1, 4)
    r = _t(rng, 2, 3, 4, away_from_zero=True)
    img = _t(rng, 2, 5, 6, 3)
    k2 = _t(rng, 3, 3, 3, 2)
    b2 = _t(rng, 2)
    vol = _t(rng, 2, 4, 5, 5, 2)
    k3 = _t(rng, 3, 3, 3, 2, 3)
    b3 = _t(rng, 3)
    gdc_x = _t(rng, 2, 3, 4, 5)
    gdc_k = _t(rng, 3, 4, 5)
    gdc_b = _t(rng, 5)
    x2 = _t(rng, 4, 6)
    W = _t(rng, 6, 3)
    bd = _t(rng, 3)
    grp = _t(rng, 2, 3, 4)
    logits = _t(rng, 5, 4)
    labels = np.array([0, 3, 1, 2, 3])
    return [
        ("add", lambda: nn.add(a, b), [a, b]),
        ("add_broadcast", lambda: nn.add(a, row), [a, row]),
        ("mul", lambda: nn.mul(a, b), [a, b]),
        ("mul_broadcast", lambda: nn.mul(a, row), [a, row]),
        ("tensor_operators", lambda: (a - b) * a + (-b), [a, b]),
        ("relu", lambda: nn.relu(r), [r]),
        ("sigmoid", lambda: nn.sigmoid(a), [a]),
        ("tanh", lambda: nn.tanh(a), [a]),
        ("reshape", lambda: nn.reshape(r, (6, 4)), [r]),
        ("concat", lambda: nn.concat([a, b], axis=0), [a, b]),
        ("concat_channels", lambda: nn.concat_channels([a, b]), [a, b]),
        ("slice_axis", lambda: nn.slice_axis(r, 1, 3, axis=1), [r]),
        ("split", lambda: nn.mul(*nn.split(x2, 2, axis=1)), [x2]),
        ("sum_all", lambda: nn.sum_all(a), [a]),
        ("mean_all", lambda: nn.mean_all(a), [a]),
        ("global_avg_pool", lambda: nn.global_avg_pool(img), [img]),
        ("avg_pool", lambda: nn.avg_pool(img), [img]),
        ("dense", lambda: nn.dense(x2, W, bd), [x2, W, bd]),
        ("conv2d_same", lambda: nn.conv2d(img, k2, b2), [img, k2, b2]),
        ("conv2d_valid", lambda: nn.conv2d(img, k2, b2, padding="valid"), [img, k2, b2]),
        ("conv2d_stride2", lambda: nn.conv2d(img, k2, b2, stride=2), [img, k2, b2]),
        ("conv3d", lambda: nn.conv3d(vol, k3, b3), [vol, k3, b3]),
        ("global_depthwise_conv", lambda: nn.global_depthwise_conv(gdc_x, gdc_k, gdc_b), [gdc_x, gdc_k, gdc_b]),
        ("softmax_over_groups", lambda: nn.softmax_over_groups(grp), [grp]),
        ("cross_entropy_loss", lambda: nn.cross_entropy_loss(logits, labels), [logits]),
    ]


def ops_suite(seed: int = 0, tolerance: float = OP_TOLERANCE, step: float = 1e-5) -> list:
    rng = np.random.default_rng(seed)
    return [(name, nn.gradcheck(fn, ts, tolerance, step, seed)) for name, fn, ts in _op_cases(rng)]


def mvib_suite(seed: int = 0, tolerance: float = BLOCK_TOLERANCE, step: float = 1e-5, num_views: int = 2) -> list:
    """Whole interaction block, gradients w.r.t. every view input and parameter."""
    rng = np.random.default_rng(seed)
    params = init_mvib_params(rng, num_views, 4, 3, 5, reduction=2)
    for p in params.values():
        # non-zero biases so every path of the block is exercised
        p.data[...] = rng.standard_normal(p.data.shape) * 0.5
    views = [_t(rng, 2, 3, 5, 4) for _ in range(num_views)]
    ts = views + list(params.values())
    names = [f"view{i}" for i in range(num_views)] + list(params)
    report = nn.gradcheck(lambda: nn.concat(mvib_forward(views, params), axis=0), ts, tolerance, step, seed, names)
    return [("mvib_block", report)]


def convlstm_suite(seed: int = 0, tolerance: float = BLOCK_TOLERANCE, step: float = 1e-5, steps: int = 3) -> list:
    """``steps`` unrolled ConvLSTM updates from a random initial state."""
    rng = np.random.default_rng(seed)
    xs = [_t(rng, 2, 4, 4, 3) for _ in range(steps)]
    h0, c0 = _t(rng, 2, 4, 4, 2), _t(rng, 2, 4, 4, 2)
    kernel = nn.Tensor(rng.standard_normal((3, 3, 5, 8)) * 0.3)
    bias = nn.Tensor(rng.standard_normal(8) * 0.3)

    def unroll():
        state = ConvLSTMState(h0, c0)
        hs = []
        for x in xs:
            state = convlstm_step(x, state, kernel, bias)
            hs.append(state.h)
        return nn.concat(hs + [state.c], axis=0)

    names = [f"x{t}" for t in range(steps)] + ["h0", "c0", "kernel", "bias"]
    report = nn.gradcheck(unroll, xs + [h0, c0, kernel, bias], tolerance, step, seed, names)
    return [(f"convlstm_unroll_{steps}", report)]


def si3d_suite(seed: int = 0, tolerance: float = 1e-5, step: float = 1e-5) -> list:
    rng = np.random.default_rng(seed)
    cfg = StreamConfig(num_classes=3, in_channels=1, map_size=8, num_maps=5, extractor_widths=(2, 3), hidden=2)
    params = init_stream_params(cfg, seed)
    maps = nn.Tensor(rng.random((2, 5, 8, 8, 1)))
    ts = [maps, params["conv3d1.kernel"], params["conv3d2.kernel"], params["conv3d1.bias"]]
    report = nn.gradcheck(lambda: si3d_extract(maps, params, cfg), ts, tolerance, step, seed,
                          ["maps", "conv3d1.kernel", "conv3d2.kernel", "conv3d1.bias"])
    return [("si3d_extract", report)]


def run_suite(target: str, seed: int = 0, tolerance: float | None = None, step: float = 1e-5) -> list:
    if target not in TARGETS:
        raise ValueError(f"unknown gradcheck target {target!r}; choose from {TARGETS}")
    out = []
    if target in ("ops", "all"):
        out += ops_suite(seed, tolerance or OP_TOLERANCE, step)
    if target in ("mvib", "all"):
        out += mvib_suite(seed, tolerance or BLOCK_TOLERANCE, step)
    if target in ("convlstm", "all"):
        out += convlstm_suite(seed, tolerance or BLOCK_TOLERANCE, step)
    if target in ("si3d", "all"):
        out += si3d_suite(seed, tolerance or 1e-5, step)
    return out
