"""Multi-view interaction block and the multi-stream skeleton classifier.

The block concatenates same-layer features from all views, summarises each
channel with a global depthwise convolution, maps the summary through two
dense layers, splits the result back into one vector per view and
softmax-normalises across views per channel. Each view is then reweighted
channel-wise and added to itself (residual).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError
from .training import TrainConfig, TrainHistory, collect_items, fit_classifier, split_ids

VALID_INSERTION_POINTS = (2, 3, 4)


def init_mvib_params(rng, num_views: int, channels: int, height: int, width: int,
                     reduction: int = 4, prefix: str = "mvib") -> OrderedDict:
    mc = num_views * channels
    if mc % reduction:
        raise ConfigError(f"reduction ratio {reduction} must divide M*C = {mc}")
    hidden = mc // reduction
    p = OrderedDict()
    p["gdc_kernel"] = nn.fan_in_uniform(rng, (height, width, mc), height * width, f"{prefix}.gdc_kernel")
    p["gdc_bias"] = nn.zeros((mc,), f"{prefix}.gdc_bias")
    p["fc1_w"] = nn.fan_in_uniform(rng, (mc, hidden), mc, f"{prefix}.fc1_w")
    p["fc1_b"] = nn.zeros((hidden,), f"{prefix}.fc1_b")
    p["fc2_w"] = nn.fan_in_uniform(rng, (hidden, mc), hidden, f"{prefix}.fc2_w")
    p["fc2_b"] = nn.zeros((mc,), f"{prefix}.fc2_b")
    return p


def mvib_forward(views, params, return_weights: bool = False):
    """Interact ``M`` same-shaped ``(n, F, J, C)`` view features."""
    views = [nn.as_tensor(v) for v in views]
    shape = views[0].shape
    if any(v.shape != shape for v in views):
        raise ShapeError(f"view features must share a shape, got {[v.shape for v in views]}")
    n, _, _, c = shape
    m = len(views)
    integrated = nn.concat_channels(views)
    desc = nn.global_depthwise_conv(integrated, params["gdc_kernel"], params["gdc_bias"])
    hidden = nn.relu(nn.dense(nn.reshape(desc, (n, m * c)), params["fc1_w"], params["fc1_b"]))
    logits = nn.dense(hidden, params["fc2_w"], params["fc2_b"])
    weights = nn.softmax_over_groups(nn.reshape(logits, (n, m, c)))
    out = []
    for i, view in enumerate(views):
        w = nn.reshape(nn.slice_axis(weights, i, i + 1, axis=1), (n, 1, 1, c))
        out.append(nn.add(nn.mul(w, view), view))
    return (out, weights) if return_weights else out


@dataclass(frozen=True)
class MultiStreamConfig:
    num_views: int = 2
    num_classes: int = 30
    input_shape: tuple = (64, 130, 3)     # (frames, expanded joints, coordinates)
    widths: tuple = (8, 16, 32, 64)
    mvib_points: tuple = (2, 3, 4)        # stages after which views interact
    reduction: int = 4
    kernel: int = 3
    input_offset: float = 0.5          # subtracted so [0, 1] pseudo-images are zero-centred

    def __post_init__(self):
        bad = [p for p in self.mvib_points if p not in VALID_INSERTION_POINTS]
        if bad:
            raise ConfigError(f"MVIB insertion points {bad} invalid; allowed {VALID_INSERTION_POINTS}")
        if self.mvib_points and self.num_views < 2:
            raise ConfigError("MVIB needs at least two views")
        if len(self.widths) != 4:
            raise ConfigError("backbone has exactly four stages")
        h, w = self.input_shape[:2]
        if h >> 4 < 1 or w >> 4 < 1:
            raise ConfigError(f"input {self.input_shape[:2]} too small for four 2x2 pooling stages")

    def stage_shapes(self) -> list:
        """Spatial size after each stage's pooling."""
        h, w = self.input_shape[:2]
        out = []
        for _ in self.widths:
            h, w = h // 2, w // 2
            out.append((h, w))
        return out


class MultiStreamNet:
    def __init__(self, config: MultiStreamConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        p = OrderedDict()
        k = config.kernel
        for v in range(config.num_views):
            cin = config.input_shape[2]
            for s, width in enumerate(config.widths, start=1):
                p[f"view{v}.stage{s}.kernel"] = nn.fan_in_uniform(rng, (k, k, cin, width), k * k * cin,
                                                                   f"view{v}.stage{s}.kernel")
                p[f"view{v}.stage{s}.bias"] = nn.zeros((width,), f"view{v}.stage{s}.bias")
                cin = width
        self.mvib = {}
        for s, (h, w) in enumerate(config.stage_shapes(), start=1):
            if s in config.mvib_points:
                block = init_mvib_params(rng, config.num_views, config.widths[s - 1], h, w,
                                         config.reduction, prefix=f"mvib{s}")
                self.mvib[s] = block
                for name, param in block.items():
                    p[param.name] = param
        feat = config.num_views * config.widths[-1]
        p["classifier.w"] = nn.fan_in_uniform(rng, (feat, config.num_classes), feat, "classifier.w")
        p["classifier.b"] = nn.zeros((config.num_classes,), "classifier.b")
        self.params = p

    def parameters(self) -> list:
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def forward(self, views):
        """``views``: list of ``(n, F, J, 3)`` arrays/tensors -> logits ``(n, classes)``."""
        cfg = self.config
        if len(views) != cfg.num_views:
            raise ShapeError(f"network expects {cfg.num_views} views, got {len(views)}")
        feats = [nn.as_tensor(v) for v in views]
        for f in feats:
            if f.shape[1:] != tuple(cfg.input_shape):
                raise ShapeError(f"view input {f.shape[1:]} does not match configured {tuple(cfg.input_shape)}")
        if cfg.input_offset:
            feats = [nn.add(f, -cfg.input_offset) for f in feats]
        for s in range(1, len(cfg.widths) + 1):
            feats = [
                nn.avg_pool(nn.relu(nn.conv2d(f, self.params[f"view{v}.stage{s}.kernel"],
                                              self.params[f"view{v}.stage{s}.bias"])))
                for v, f in enumerate(feats)
            ]
            if s in self.mvib:
                feats = mvib_forward(feats, self.mvib[s])
        pooled = nn.concat([nn.global_avg_pool(f) for f in feats], axis=1)
        return nn.dense(pooled, self.params["classifier.w"], self.params["classifier.b"])

    def predict(self, views) -> np.ndarray:
        with nn.no_grad():
            logits = self.forward(views)
        return nn.softmax(logits.data, axis=1)

    def state_dict(self) -> OrderedDict:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state):
        for k, p in self.params.items():
            if k not in state:
                raise ShapeError(f"checkpoint lacks parameter {k!r}")
            if state[k].shape != p.data.shape:
                raise ShapeError(f"checkpoint parameter {k!r} has shape {state[k].shape}, expected {p.data.shape}")
            p.data[...] = state[k]

    def save(self, path):
        nn.save_checkpoint(path, self.params)

    def load(self, path):
        self.load_state_dict(nn.load_checkpoint(path))


def build_multistream(config: MultiStreamConfig, seed: int = 0) -> MultiStreamNet:
    return MultiStreamNet(config, seed)


def count_parameters(config: MultiStreamConfig) -> int:
    """Closed-form parameter count for ``config``."""
    k, total, cin = config.kernel, 0, config.input_shape[2]
    for width in config.widths:
        total += k * k * cin * width + width
        cin = width
    total *= config.num_views
    for s, (h, w) in enumerate(config.stage_shapes(), start=1):
        if s in config.mvib_points:
            mc = config.num_views * config.widths[s - 1]
            hid = mc // config.reduction
            total += h * w * mc + mc + mc * hid + hid + hid * mc + mc
    feat = config.num_views * config.widths[-1]
    return total + feat * config.num_classes + config.num_classes


# ---------------------------------------------------------------------------
# training

def train_multiview(network: MultiStreamNet, items: dict, split, hyper: TrainConfig | None = None,
                    seed: int = 0):
    """Mini-batch momentum SGD on cross-entropy.

    ``items`` maps sample_id -> (list of per-view pseudo-image arrays, class_id).
    Returns ``(history, test_scores)``; ``test_scores`` is None when the split has
    no test samples present in ``items``.
    """
    train_ids, test_ids = split_ids(split)
    m = network.config.num_views
    train = collect_items(items, train_ids, m, "views")
    test = collect_items(items, test_ids, m, "views")
    return fit_classifier(network, train, test, hyper, seed, {"model": "multistream"})


def predict(network: MultiStreamNet, views) -> np.ndarray:
    """Class probabilities for one sample (list of per-view arrays) or a batch."""
    views = [np.asarray(v, dtype=np.float64) for v in views]
    single = views[0].ndim == 3
    if single:
        views = [v[None] for v in views]
    probs = network.predict(views)
    return probs[0] if single else probs
