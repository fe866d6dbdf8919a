"""Reverse generation, classifier guidance, deterministic inversion, and
spherical interpolation over latents."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import GradNode
from .nn import Network
from .schedule import NoiseSchedule, validate_timesteps


@dataclass
class SamplerConfig:
    timesteps: tuple
    eta: float = 0.0
    guidance_scale: float = 1.0
    target_class: int | None = None
    seed: int = 0

    def __post_init__(self):
        self.timesteps = tuple(int(t) for t in self.timesteps)
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not np.isfinite(self.guidance_scale) or self.guidance_scale < 0.0:
            raise ValueError(f"guidance_scale must be finite and >= 0, got {self.guidance_scale}")


@dataclass
class Trajectory:
    """(t, x_t) pairs recorded from T down to 0."""

    entries: list = field(default_factory=list)

    def append(self, t: int, x: np.ndarray):
        self.entries.append((int(t), np.array(x)))

    def __len__(self):
        return len(self.entries)


def _transport_coeffs(ab_from: float, ab_to: float, eta: float = 0.0):
    """Coefficients (a, b, sigma) of the update a*x + b*eps_hat + sigma*z
    moving between noise levels ab_from -> ab_to."""
    sigma = 0.0
    if eta > 0.0 and ab_to < 1.0:
        sigma = eta * np.sqrt((1.0 - ab_to) / (1.0 - ab_from)) * np.sqrt(1.0 - ab_from / ab_to)
    a = np.sqrt(ab_to / ab_from)
    b = np.sqrt(1.0 - ab_to - sigma * sigma) - np.sqrt(ab_to * (1.0 - ab_from) / ab_from)
    return a, b, sigma


def ddim_step(x_t, t: int, t_prev: int, eps_hat, sched: NoiseSchedule, eta: float = 0.0, noise=None):
    """One denoising step from level t to t_prev (reads every alpha in the
    update as the cumulative product). Accepts arrays or graph nodes; with
    eta=0 the update is the deterministic transport."""
    if t_prev >= t:
        raise ValueError(f"ddim_step requires t_prev < t, got t_prev={t_prev}, t={t}")
    a, b, sigma = _transport_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev), eta)
    graph = isinstance(x_t, GradNode) or isinstance(eps_hat, GradNode)
    if graph:
        out = ad.add(ad.mul(ad.as_node(x_t), a), ad.mul(ad.as_node(eps_hat), b))
        if sigma > 0.0:
            if noise is None:
                raise ValueError("eta > 0 requires a noise tensor")
            out = ad.add(out, ad.constant(sigma * np.asarray(noise)))
        return out
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(eps_hat, dtype=np.float64)
    if x_t.shape != eps_hat.shape:
        raise ValueError(f"x_t shape {x_t.shape} != eps_hat shape {eps_hat.shape}")
    out = a * x_t + b * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ValueError("eta > 0 requires a noise tensor")
        out = out + sigma * np.asarray(noise, dtype=np.float64)
    return out


def grad_log_prob(clf, x_t: np.ndarray, t: int, y: int) -> np.ndarray:
    """Gradient of log p(y | x_t, t) with respect to x_t.

    clf is either a classifier Network (autodiff through it) or a callable
    (x_t, t, y) -> gradient for closed-form oracles.
    """
    if not isinstance(clf, Network):
        return np.asarray(clf(x_t, t, y), dtype=np.float64)
    num_classes = clf.meta.get("num_classes")
    if num_classes is not None and not 0 <= int(y) < num_classes:
        raise ValueError(f"class label {y} outside 0..{num_classes - 1}")
    node = GradNode(x_t, requires_grad=True)
    logits = clf.forward(node, t=t)
    logp = ad.take_columns(ad.log_softmax(logits, axis=1), np.full(x_t.shape[0], int(y)))
    ad.backward(ad.sum_(logp))
    return node.grad


def guided_epsilon(x_t: np.ndarray, t: int, y: int, eps_net, clf, scale: float, sched: NoiseSchedule) -> np.ndarray:
    """Classifier-guided noise prediction:
    eps(x_t, t) - scale * sqrt(1 - abar_t) * grad_x log p(y | x_t, t)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    eps = _eval_eps(eps_net, x_t, t)
    if scale == 0.0:
        return eps
    g = grad_log_prob(clf, x_t, t, y)
    return eps - scale * np.sqrt(1.0 - sched.alpha_bar(t)) * g


def _eval_eps(eps_model, x: np.ndarray, t: int, y=None) -> np.ndarray:
    if isinstance(eps_model, Network):
        return eps_model.forward(x, t=t, y=y).value
    return np.asarray(eps_model(x, t), dtype=np.float64)


def _step_pairs(timesteps):
    ts = list(timesteps)
    return list(zip(ts[::-1], ts[-2::-1] + [0]))


def sample(
    eps_model,
    sched: NoiseSchedule,
    cfg: SamplerConfig,
    n: int,
    *,
    clf=None,
    shape=(1, 32, 32),
    x_T: np.ndarray | None = None,
    y_cond=None,
    return_trajectory: bool = False,
):
    """Generate n samples by running the reverse process along cfg.timesteps.

    Deterministic given cfg.seed; with eta=0 and a provided x_T the result
    does not consume the seed at all.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    validate_timesteps(cfg.timesteps, sched.T)
    rng = np.random.default_rng(cfg.seed)
    if x_T is None:
        x = rng.standard_normal((n, *shape))
    else:
        x = np.array(x_T, dtype=np.float64)
        if x.shape[0] != n:
            raise ValueError(f"x_T batch {x.shape[0]} != n={n}")
    traj = Trajectory() if return_trajectory else None
    if traj is not None:
        traj.append(sched.T, x)
    guided = cfg.target_class is not None and cfg.guidance_scale > 0.0 and clf is not None
    for t, t_prev in _step_pairs(cfg.timesteps):
        if guided:
            eps = guided_epsilon(x, t, cfg.target_class, eps_model, clf, cfg.guidance_scale, sched)
        else:
            eps = _eval_eps(eps_model, x, t, y=y_cond)
        noise = rng.standard_normal(x.shape) if cfg.eta > 0.0 and t_prev > 0 else None
        x = ddim_step(x, t, t_prev, eps, sched, eta=cfg.eta, noise=noise)
        if traj is not None:
            traj.append(t_prev, x)
    if not np.all(np.isfinite(x)):
        raise FloatingPointError("sampler produced non-finite values")
    return (x, traj) if return_trajectory else x


def invert(x0: np.ndarray, eps_model, sched: NoiseSchedule, timesteps) -> np.ndarray:
    """Deterministically encode an image into its latent x_T by running the
    eta=0 transport in the increasing-noise direction. The noise prediction
    at each hop is evaluated at the hop's source level."""
    validate_timesteps(timesteps, sched.T)
    x = np.asarray(x0, dtype=np.float64)
    ts = list(timesteps)
    for t_from, t_to in zip([0] + ts[:-1], ts):
        eps = _eval_eps(eps_model, x, t_from)
        a, b, _ = _transport_coeffs(sched.alpha_bar(t_from), sched.alpha_bar(t_to), 0.0)
        x = a * x + b * eps
    return x


def slerp(a: np.ndarray, b: np.ndarray, alpha: float) -> np.ndarray:
    """Spherical linear interpolation between two latents.

    theta = arccos(<a, b> / (|a| |b|)). Falls back to linear interpolation
    when theta is numerically zero; rejects antiparallel inputs.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("slerp requires nonzero inputs")
    cos = np.clip(float(np.vdot(a, b)) / (na * nb), -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-6:
        return (1.0 - alpha) * a + alpha * b
    if np.pi - theta < 1e-6:
        raise ValueError("slerp is undefined for antiparallel inputs")
    s = np.sin(theta)
    return (np.sin((1.0 - alpha) * theta) / s) * a + (np.sin(alpha * theta) / s) * b
