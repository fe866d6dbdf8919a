"""Pretraining of the noise predictor and the class-guidance fine-tuning loop
that backpropagates the blended objective through a full sampler rollout."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import GradNode
from .dataset import ToyImage, as_batch
from .extractors import Extractors
from .losses import total_loss
from .nn import Network, make_eps_net
from .optim import OptimizerState, optimizer_step
from .sampler import _step_pairs, _transport_coeffs, grad_log_prob, invert
from .schedule import NoiseSchedule, make_timesteps, q_sample


@dataclass
class PretrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 2e-3
    class_conditional: bool = False

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0.0:
            raise ValueError("pretrain config values must be positive")


@dataclass
class FineTuneConfig:
    lam: float = 0.5
    rollout_steps: int = 16
    iterations: int = 200
    lr: float = 1e-4
    guidance_scale: float = 1.0
    target_class: int | None = None
    encode_mode: str = "stochastic"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.rollout_steps < 2:
            raise ValueError("rollout_steps must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.encode_mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown encode_mode {self.encode_mode!r}")


def pretrain(
    dataset: list[ToyImage],
    sched: NoiseSchedule,
    cfg: PretrainConfig,
    seed: int,
    *,
    channels: int = 16,
    history: list | None = None,
    log_path=None,
) -> Network:
    """Train the noise predictor on the plain squared-error objective
    || eps - eps_net(sqrt(abar_t) x0 + sqrt(1-abar_t) eps, t) ||^2."""
    if not dataset:
        raise ValueError("pretraining requires a nonempty dataset")
    xs, ys = as_batch(dataset)
    n = xs.shape[0]
    rng = np.random.default_rng(seed)
    num_classes = int(ys.max()) + 1 if cfg.class_conditional else None
    net = make_eps_net(seed, channels=channels, num_classes=num_classes)
    params = net.params()
    state = OptimizerState(lr=cfg.lr)
    steps_per_epoch = max(1, n // cfg.batch_size)
    log_lines = []
    step = 0
    for _ in range(cfg.epochs):
        for _ in range(steps_per_epoch):
            idx = rng.integers(0, n, size=cfg.batch_size)
            x0 = xs[idx]
            t = rng.integers(1, sched.T + 1, size=cfg.batch_size)
            ab = sched.alpha_bars[t][:, None, None, None]
            eps = rng.standard_normal(x0.shape)
            xt = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
            pred = net.forward(xt, t=t, y=ys[idx] if cfg.class_conditional else None)
            diff = ad.sub(pred, ad.constant(eps))
            loss = ad.mean_(ad.mul(diff, diff))
            grads = ad.backward(loss)
            optimizer_step(params, grads, state)
            step += 1
            mse = loss.item()
            if history is not None:
                history.append(mse)
            log_lines.append(f"{step} {mse:.10g}")
    if log_path is not None:
        with open(log_path, "a") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return net


def differentiable_rollout(
    eps_net: Network,
    x_hat_T: np.ndarray,
    sched: NoiseSchedule,
    timesteps,
    *,
    guidance=None,
    y_cond=None,
) -> GradNode:
    """Run the deterministic reverse chain with the autodiff graph intact so
    gradients of any scalar of x_hat_0 reach the network parameters.

    guidance, when given, is a (classifier, target_class, scale) triple; the
    classifier gradient is injected as a constant (it steers the values but
    is not differentiated through).
    """
    if not eps_net.params():
        raise ValueError("differentiable rollout requires a network with parameters")
    if len(timesteps) > sched.T:
        raise ValueError(f"timestep map of length {len(timesteps)} exceeds schedule length {sched.T}")
    node = ad.constant(x_hat_T)
    for t, t_prev in _step_pairs(timesteps):
        eps = eps_net.forward(node, t=t, y=y_cond)
        if guidance is not None:
            clf, target, scale = guidance
            g = grad_log_prob(clf, node.value, t, target)
            eps = ad.sub(eps, ad.constant(scale * np.sqrt(1.0 - sched.alpha_bar(t)) * g))
        a, b, _ = _transport_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev), 0.0)
        node = ad.add(ad.mul(node, a), ad.mul(eps, b))
    return node


def encode_latent(x0: np.ndarray, eps_net: Network, sched: NoiseSchedule, timesteps, mode: str, rng) -> np.ndarray:
    if mode == "deterministic":
        return invert(x0, eps_net, sched, timesteps)
    return q_sample(x0, sched.T, rng.standard_normal(np.asarray(x0).shape), sched)


def finetune(
    eps_net: Network,
    x0: ToyImage | np.ndarray,
    s0: np.ndarray,
    cfg: FineTuneConfig,
    sched: NoiseSchedule,
    extractors: Extractors,
    *,
    clf: Network | None = None,
    history: list | None = None,
    log_path=None,
    checkpoint_dir=None,
) -> Network:
    """Adapt the noise predictor so rollouts match the sketch/image pair
    under the blended objective. Works on a copy; the input network is left
    untouched. Aborts with the last finite-loss parameters on divergence."""
    pixels = x0.pixels if isinstance(x0, ToyImage) else np.asarray(x0, dtype=np.float64)
    x0_batch = pixels[None, None] if pixels.ndim == 2 else pixels
    s0 = np.asarray(s0, dtype=np.float64)
    net = eps_net.clone()
    params = net.params()
    state = OptimizerState(lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed)
    timesteps = make_timesteps(sched, cfg.rollout_steps)
    guidance = None
    if cfg.target_class is not None:
        if clf is None:
            raise ValueError("target_class guidance requires a classifier")
        guidance = (clf, cfg.target_class, cfg.guidance_scale)
    last_good = {name: p.value.copy() for name, p in params.items()}
    log_lines = []
    for it in range(cfg.iterations):
        latent = encode_latent(x0_batch, net, sched, timesteps, cfg.encode_mode, rng)
        x_hat0 = differentiable_rollout(net, latent, sched, timesteps, guidance=guidance)
        report, loss = total_loss(x0_batch, x_hat0, s0, cfg.lam, extractors)
        if not np.isfinite(report.total):
            for name, p in params.items():
                p.value = last_good[name]
            break
        grads = ad.backward(loss)
        optimizer_step(params, grads, state)
        last_good = {name: p.value.copy() for name, p in params.items()}
        if history is not None:
            history.append(report)
        log_lines.append(report.log_row(it))
        if checkpoint_dir is not None and (it + 1) % 50 == 0:
            _write_checkpoint(checkpoint_dir, net, sched, it + 1)
    if checkpoint_dir is not None:
        _write_checkpoint(checkpoint_dir, net, sched, "final")
    if log_path is not None and log_lines:
        with open(log_path, "a") as fh:
            fh.write("\n".join(log_lines) + "\n")
    return net


def _write_checkpoint(checkpoint_dir, net, sched, tag):
    from pathlib import Path

    from .checkpoint import save_checkpoint

    path = Path(checkpoint_dir) / f"finetune_{tag}.ckpt"
    save_checkpoint(path, net, sched)


def edit(
    x0: ToyImage | np.ndarray,
    s_new: np.ndarray,
    cfg: FineTuneConfig,
    eps_net: Network,
    sched: NoiseSchedule,
    extractors: Extractors,
    *,
    clf: Network | None = None,
) -> np.ndarray:
    """Sketch-guided edit: briefly fine-tune on (x0, s_new), then invert x0
    with the tuned network and regenerate deterministically from that latent
    so texture is retained while pose follows the new sketch."""
    pixels = x0.pixels if isinstance(x0, ToyImage) else np.asarray(x0, dtype=np.float64)
    tuned = finetune(eps_net, pixels, s_new, cfg, sched, extractors, clf=clf)
    timesteps = make_timesteps(sched, cfg.rollout_steps)
    latent = invert(pixels[None, None], tuned, sched, timesteps)
    x = latent
    for t, t_prev in _step_pairs(timesteps):
        eps = tuned.forward(x, t=t).value
        a, b, _ = _transport_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev), 0.0)
        x = a * x + b * eps
    return np.clip(x[0, 0], -1.0, 1.0)
