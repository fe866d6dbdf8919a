"""The three training objectives: perceptual sketch distance, cosine identity
constraint, and their lambda-blended total."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradNode
from .extractors import Extractors, FeaturePyramid
from .sketchconv import to_sketch

_MIN_FEATURE_NORM = 1e-12


@dataclass
class LossReport:
    l_p: float
    l_i: float
    total: float
    lam: float

    def __post_init__(self):
        if self.total != self.lam * self.l_i + (1.0 - self.lam) * self.l_p:
            raise ValueError("total must equal lam * l_i + (1 - lam) * l_p exactly")

    def log_row(self, step: int) -> str:
        return f"{step} {self.l_p:.10g} {self.l_i:.10g} {self.total:.10g} {self.lam:g}"


def _sketch_batch_node(s) -> GradNode:
    node = ad.as_node(s)
    if node.value.ndim == 2:
        node = ad.reshape(node, (1, 1) + node.value.shape)
    if node.value.ndim != 4 or node.value.shape[1] != 1:
        raise ValueError(f"expected a (32,32) sketch or (B,1,32,32) batch, got {node.value.shape}")
    return node


def perceptual_loss(s0, s0_hat, extractors: Extractors) -> GradNode:
    """Layer-weighted squared feature distance, averaged over space, summed
    over channels and stages; batch-averaged when s0_hat is a batch.
    Differentiable with respect to either argument."""
    a = _sketch_batch_node(s0)
    b = _sketch_batch_node(s0_hat)
    if a.value.shape[2:] != b.value.shape[2:]:
        raise ValueError(f"sketch shape mismatch {a.value.shape} vs {b.value.shape}")
    fs = extractors.sketch
    pyr_a = fs.pyramid_nodes(a)
    pyr_b = fs.pyramid_nodes(b)
    total = None
    for fa, fb, w in zip(pyr_a, pyr_b, fs.weights):
        _, _, h, wid = fa.value.shape
        d = ad.mul(ad.sub(fb, fa), ad.constant(w.reshape(1, -1, 1, 1)))
        term = ad.mul(ad.mean_(ad.sum_(ad.mul(d, d), axis=(1, 2, 3))), 1.0 / (h * wid))
        total = term if total is None else ad.add(total, term)
    return total


def pyramid_distance(a: FeaturePyramid, b: FeaturePyramid) -> float:
    """Same distance on plain (H, W, C) pyramids, for hand-built cases."""
    if len(a.layers) != len(b.layers):
        raise ValueError("pyramids have different depths")
    total = 0.0
    for fa, fb, w in zip(a.layers, b.layers, a.weights):
        if fa.shape != fb.shape:
            raise ValueError(f"stage shape mismatch {fa.shape} vs {fb.shape}")
        h, wid, _ = fa.shape
        diff = w[None, None, :] * (fb - fa)
        total += float((diff**2).sum() / (h * wid))
    return total


def _cosine(u: GradNode, v: GradNode) -> GradNode:
    dot = ad.sum_(ad.mul(u, v), axis=1)
    nu = ad.sqrt(ad.sum_(ad.mul(u, u), axis=1))
    nv = ad.sqrt(ad.sum_(ad.mul(v, v), axis=1))
    return ad.div(dot, ad.mul(nu, nv))


def identity_loss(x0, x0_hat, extractors: Extractors) -> GradNode:
    """1 - cosine similarity between image feature embeddings; in [0, 2],
    zero iff the features are positively parallel."""
    fi = extractors.image
    a = ad.as_node(x0)
    if a.value.ndim == 2:
        a = ad.reshape(a, (1, 1) + a.value.shape)
    b = ad.as_node(x0_hat)
    if b.value.ndim == 2:
        b = ad.reshape(b, (1, 1) + b.value.shape)
    fa = fi.features_node(a)
    fb = fi.features_node(b)
    for name, f in (("x0", fa), ("x0_hat", fb)):
        norms = np.linalg.norm(f.value, axis=1)
        if np.any(norms < _MIN_FEATURE_NORM):
            raise ValueError(f"degenerate extractor output: zero-norm feature vector for {name}")
    return ad.mean_(ad.sub(1.0, _cosine(fa, fb)))


def total_loss(x0, x0_hat, s0, lam: float, extractors: Extractors, s0_hat=None):
    """Blend lam * identity + (1 - lam) * perceptual.

    x0_hat may be a GradNode (e.g. a rollout output), in which case the
    returned node is differentiable through both loss branches. When lam is
    exactly 0 or 1, the zero-weight branch is left out of the graph and only
    evaluated for reporting. Returns (LossReport, total GradNode).
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    if s0_hat is None:
        s0_hat = to_sketch(x0_hat if isinstance(x0_hat, GradNode) else ad.as_node(x0_hat))
    detached = ad.constant(x0_hat.value if isinstance(x0_hat, GradNode) else x0_hat)
    s_detached = ad.constant(s0_hat.value if isinstance(s0_hat, GradNode) else s0_hat)
    if lam == 0.0:
        lp = perceptual_loss(s0, s0_hat, extractors)
        li_val = identity_loss(x0, detached, extractors).item()
        report = LossReport(lp.item(), li_val, lam * li_val + (1.0 - lam) * lp.item(), lam)
        return report, lp
    if lam == 1.0:
        li = identity_loss(x0, x0_hat, extractors)
        lp_val = perceptual_loss(s0, s_detached, extractors).item()
        report = LossReport(lp_val, li.item(), lam * li.item() + (1.0 - lam) * lp_val, lam)
        return report, li
    lp = perceptual_loss(s0, s0_hat, extractors)
    li = identity_loss(x0, x0_hat, extractors)
    node = ad.add(ad.mul(li, lam), ad.mul(lp, 1.0 - lam))
    report = LossReport(lp.item(), li.item(), lam * li.item() + (1.0 - lam) * lp.item(), lam)
    return report, node
