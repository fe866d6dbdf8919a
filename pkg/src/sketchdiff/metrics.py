"""Quantitative generation metrics over the 64-dim image feature space:
Frechet distance, classification-entropy score, and k-NN precision/recall."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Network


@dataclass
class MetricsReport:
    fd: float
    is_score: float
    precision: float
    recall: float
    n_real: int
    n_fake: int
    k: int

    def as_table(self) -> str:
        header = f"{'FID (down)':>12} {'IS (up)':>10} {'Precision (up)':>15} {'Recall (up)':>12}"
        row = f"{self.fd:>12.4f} {self.is_score:>10.4f} {self.precision:>15.4f} {self.recall:>12.4f}"
        note = f"# n_real={self.n_real} n_fake={self.n_fake} k={self.k}"
        return "\n".join([note, header, row]) + "\n"


def frechet_distance(feats_real: np.ndarray, feats_fake: np.ndarray) -> float:
    """|mu_r - mu_f|^2 + Tr(S_r + S_f - 2 (S_r S_f)^{1/2}).

    The matrix square root is taken via symmetric eigendecomposition of
    S_r^{1/2} S_f S_r^{1/2}; eigenvalues below 1e-10 are clamped to zero and
    a tiny negative total is clamped to 0.
    """
    fr = np.asarray(feats_real, dtype=np.float64)
    ff = np.asarray(feats_fake, dtype=np.float64)
    if fr.ndim != 2 or ff.ndim != 2 or fr.shape[1] != ff.shape[1]:
        raise ValueError(f"feature matrices must be 2-D with equal width, got {fr.shape}, {ff.shape}")
    d = fr.shape[1]
    if fr.shape[0] < d + 1 or ff.shape[0] < d + 1:
        raise ValueError(f"need at least d+1={d + 1} rows per set for a nondegenerate covariance")
    mu_r, mu_f = fr.mean(axis=0), ff.mean(axis=0)
    cov_r = np.cov(fr, rowvar=False).reshape(d, d)
    cov_f = np.cov(ff, rowvar=False).reshape(d, d)
    w, u = np.linalg.eigh(cov_r)
    w = np.where(w < 1e-10, 0.0, w)
    root_r = (u * np.sqrt(w)) @ u.T
    m = root_r @ cov_f @ root_r
    lam = np.linalg.eigvalsh((m + m.T) / 2.0)
    lam = np.where(lam < 1e-10, 0.0, lam)
    fd = float(((mu_r - mu_f) ** 2).sum() + np.trace(cov_r) + np.trace(cov_f) - 2.0 * np.sqrt(lam).sum())
    return max(0.0, fd)


def inception_score(images, classifier, splits: int = 1) -> float:
    """exp(mean KL(p(y|x) || mean_x p(y|x))), averaged over contiguous splits.

    classifier maps an image batch to class probabilities; a Network is
    wrapped with a softmax at t=0.
    """
    if splits < 1:
        raise ValueError("splits must be >= 1")
    probs = _class_probs(images, classifier)
    n = probs.shape[0]
    if n < splits * 10:
        raise ValueError(f"need at least {splits * 10} images for {splits} splits, got {n}")
    scores = []
    bounds = np.linspace(0, n, splits + 1, dtype=int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        p = probs[lo:hi]
        marginal = p.mean(axis=0, keepdims=True)
        kl = np.where(p > 0.0, p * (np.log(np.where(p > 0.0, p, 1.0)) - np.log(marginal)), 0.0)
        scores.append(np.exp(kl.sum(axis=1).mean()))
    return max(1.0, float(np.mean(scores)))


def _class_probs(images, classifier) -> np.ndarray:
    if isinstance(classifier, Network):
        xs = np.asarray(images, dtype=np.float64)
        logits = classifier.forward(xs, t=0).value
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)
    return np.asarray(classifier(images), dtype=np.float64)


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1), 0.0))


def _knn_radii(feats: np.ndarray, k: int) -> np.ndarray:
    d = _pairwise(feats, feats)
    return np.sort(d, axis=1)[:, k]  # column 0 is the self-distance


def precision_recall(feats_real: np.ndarray, feats_fake: np.ndarray, k: int = 3):
    """k-NN manifold estimates: precision is the fraction of fake samples
    inside some real sample's k-th-neighbor ball, recall the same with the
    roles exchanged."""
    fr = np.asarray(feats_real, dtype=np.float64)
    ff = np.asarray(feats_fake, dtype=np.float64)
    if fr.ndim != 2 or ff.ndim != 2:
        raise ValueError("feature sets must be 2-D matrices")
    if k >= fr.shape[0] or k >= ff.shape[0]:
        raise ValueError(f"k={k} must be smaller than both set sizes {fr.shape[0]}, {ff.shape[0]}")
    return _coverage(fr, ff, k), _coverage(ff, fr, k)


def _coverage(anchor: np.ndarray, query: np.ndarray, k: int) -> float:
    radii = _knn_radii(anchor, k)
    d = _pairwise(anchor, query)
    return float((d <= radii[:, None]).any(axis=0).mean())


def compute_report(feats_real, feats_fake, images_fake, classifier, *, k: int = 3, splits: int = 1) -> MetricsReport:
    precision, recall = precision_recall(feats_real, feats_fake, k=k)
    return MetricsReport(
        fd=frechet_distance(feats_real, feats_fake),
        is_score=inception_score(images_fake, classifier, splits=splits),
        precision=precision,
        recall=recall,
        n_real=int(np.asarray(feats_real).shape[0]),
        n_fake=int(np.asarray(feats_fake).shape[0]),
        k=k,
    )
