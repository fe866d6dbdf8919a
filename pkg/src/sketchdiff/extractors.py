"""Frozen feature extractors for the two domains, plus the noise-aware
classifier trainer.

The sketch extractor is a three-stage strided conv pyramid with fixed-seed
orthogonal weights; the image extractor reuses the trained classifier's
penultimate activations. Both are frozen after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradNode
from .dataset import NUM_CLASSES, ToyImage, as_batch
from .nn import Activation, Conv2d, Network, make_classifier, orthogonal_rows
from .optim import OptimizerState, optimizer_step
from .schedule import NoiseSchedule, q_sample

SKETCH_FEATURE_SEED = 90217
_STAGES = ((1, 8), (8, 16), (16, 32))
_NORM_EPS = 1e-10


@dataclass
class FeaturePyramid:
    """Per-stage activations in (H, W, C) layout with channel weights."""

    layers: list  # list of (H_l, W_l, C_l) arrays
    weights: list  # list of (C_l,) nonnegative arrays

    def __post_init__(self):
        if len(self.layers) < 1 or len(self.layers) != len(self.weights):
            raise ValueError("pyramid needs >= 1 layer and one weight vector per layer")
        for f, w in zip(self.layers, self.weights):
            if f.shape[-1] != w.shape[0]:
                raise ValueError(f"layer channels {f.shape[-1]} != weight size {w.shape[0]}")
            if np.any(w < 0.0):
                raise ValueError("channel weights must be nonnegative")


class SketchFeatureExtractor:
    """Frozen random-orthogonal conv pyramid over sketches."""

    def __init__(self, seed: int = SKETCH_FEATURE_SEED):
        rng = np.random.default_rng(seed)
        layers = []
        for i, (cin, cout) in enumerate(_STAGES):
            k = orthogonal_rows(rng, cout, cin * 9).reshape(cout, cin, 3, 3)
            layers.append(Conv2d(cin, cout, 3, stride=2, pad=1, name=f"fs{i}", init=k))
            layers.append(Activation("relu", name=f"fs{i}_a"))
        self.net = Network(layers, meta={"kind": "sketch_features"}).freeze()
        self.weights = [np.full(cout, 1.0 / cout) for _, cout in _STAGES]

    def pyramid_nodes(self, s: GradNode) -> list:
        """Channel-normalized stage outputs as graph nodes (NCHW)."""
        node = s
        out = []
        for layer in self.net.layers:
            node = layer(node, {})
            if isinstance(layer, Activation):
                sq = ad.sum_(ad.mul(node, node), axis=1, keepdims=True)
                out.append(ad.div(node, ad.sqrt(ad.add(sq, _NORM_EPS))))
        return out

    def features(self, s: np.ndarray) -> FeaturePyramid:
        node = ad.constant(np.asarray(s, dtype=np.float64).reshape(1, 1, 32, 32))
        stages = [n.value[0].transpose(1, 2, 0) for n in self.pyramid_nodes(node)]
        return FeaturePyramid(stages, [w.copy() for w in self.weights])


class ImageFeatureExtractor:
    """64-dim embedding from the trained classifier's penultimate layer."""

    def __init__(self, classifier: Network):
        if classifier.meta.get("kind") != "classifier":
            raise ValueError("image features require a trained classifier network")
        self.classifier = classifier
        self.dim = classifier.meta["feature_dim"]

    def features_node(self, x: GradNode) -> GradNode:
        return self.classifier.forward(x, t=0, upto=-1)

    def features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None, None]
        return self.features_node(ad.constant(x)).value[0]


@dataclass
class Extractors:
    sketch: SketchFeatureExtractor
    image: ImageFeatureExtractor


def build_extractors(classifier: Network) -> Extractors:
    return Extractors(SketchFeatureExtractor(), ImageFeatureExtractor(classifier))


def train_classifier(
    dataset: list[ToyImage],
    noise_aware: bool,
    sched: NoiseSchedule,
    seed: int,
    *,
    steps: int = 2600,
    batch_size: int = 64,
    lr: float = 2e-3,
) -> Network:
    """Train the shape classifier; with noise_aware the inputs are noisy
    marginal draws at uniformly random t, with t fed to the network."""
    labels = {im.label for im in dataset}
    if len(labels) < 2:
        raise ValueError("classifier training requires at least two classes in the dataset")
    xs, ys = as_batch(dataset)
    rng = np.random.default_rng(seed)
    net = make_classifier(seed, num_classes=NUM_CLASSES)
    params = net.params()
    state = OptimizerState(lr=lr)
    n = xs.shape[0]
    for step in range(steps):
        if step == int(steps * 0.62):
            state.lr = lr * 0.25
        elif step == int(steps * 0.88):
            state.lr = lr * 0.1
        idx = rng.integers(0, n, size=batch_size)
        xb, yb = xs[idx], ys[idx]
        if noise_aware:
            t = rng.integers(1, sched.T + 1, size=batch_size)
            ab = sched.alpha_bars[t][:, None, None, None]
            xb = np.sqrt(ab) * xb + np.sqrt(1.0 - ab) * rng.standard_normal(xb.shape)
        else:
            t = 0
        logits = net.forward(xb, t=t)
        loss = ad.neg(ad.mean_(ad.take_columns(ad.log_softmax(logits, axis=1), yb)))
        grads = ad.backward(loss)
        optimizer_step(params, grads, state)
    net.freeze()
    return net


def classify(net: Network, xs: np.ndarray, t: int = 0) -> np.ndarray:
    """Predicted labels for a (B, 1, 32, 32) batch at noise level t."""
    return np.argmax(net.forward(xs, t=t).value, axis=1)


def classifier_accuracy(net: Network, images: list[ToyImage], t: int = 0, sched=None, seed: int = 0) -> float:
    xs, ys = as_batch(images)
    if t > 0:
        rng = np.random.default_rng(seed)
        xs = q_sample(xs, t, rng.standard_normal(xs.shape), sched)
    return float(np.mean(classify(net, xs, t=t) == ys))


def image_features(classifier: Network, image) -> np.ndarray:
    """Public 64-dim embedding of a single image."""
    pixels = image.pixels if isinstance(image, ToyImage) else np.asarray(image)
    return ImageFeatureExtractor(classifier).features(pixels)
