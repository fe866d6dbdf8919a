"""Noise schedules and the forward (noising) process.

The closed-form marginal x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps is the
workhorse used by the sampler, the classifier trainer, and the fine-tuner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T = 200
DEFAULT_BETA_START = 1e-4
# 0.06 rather than the conventional 0.02: at T=200 the chain must still end
# near pure noise (abar_T <= 0.01), which 0.02 does not reach.
DEFAULT_BETA_END = 0.06


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_1..beta_T with cached products.

    alpha_bar(0) == 1 by convention; alpha_bar is strictly decreasing.
    Immutable after construction and safe to share.
    """

    betas: np.ndarray
    kind: str = "linear"
    alphas: np.ndarray = field(init=False, repr=False)
    alpha_bars: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1-D array")
        if np.any(betas <= 0.0) or np.any(betas >= 1.0):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        object.__setattr__(self, "betas", betas)
        object.__setattr__(self, "alphas", 1.0 - betas)
        # index 0 holds the t=0 convention alpha_bar = 1
        object.__setattr__(self, "alpha_bars", np.concatenate([[1.0], np.cumprod(1.0 - betas)]))
        if np.any(np.diff(self.alpha_bars) >= 0.0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def T(self) -> int:
        return self.betas.size

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"timestep {t} outside 0..{self.T}")
        return float(self.alpha_bars[t])

    def dump_text(self) -> str:
        lines = ["# t beta_t alpha_bar_t"]
        for t in range(1, self.T + 1):
            lines.append(f"{t} {self.betas[t - 1]:.12g} {self.alpha_bars[t]:.12g}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "betas": self.betas.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSchedule":
        return NoiseSchedule(np.asarray(d["betas"], dtype=np.float64), kind=d.get("kind", "linear"))


def make_schedule(kind: str, T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        # squared-cosine alpha_bar profile, betas clipped into the valid range
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        ab = np.cos((steps / T + s) / (1.0 + s) * np.pi / 2.0) ** 2
        ab = ab / ab[0]
        betas = np.clip(1.0 - ab[1:] / ab[:-1], beta_start, beta_end)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    return NoiseSchedule(betas, kind=kind)


def default_schedule() -> NoiseSchedule:
    sched = make_schedule("linear", DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END)
    assert sched.alpha_bar(sched.T) <= 0.01, "default schedule must end near pure noise"
    return sched


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form noisy marginal sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def marginal_stats(x0: np.ndarray, t: int, sched: NoiseSchedule):
    """Mean tensor and scalar variance of the closed-form marginal."""
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * np.asarray(x0, dtype=np.float64), 1.0 - ab


def make_timesteps(sched: NoiseSchedule, S: int, spacing: str = "uniform") -> tuple:
    """Strictly increasing sub-sequence of {1..T}, length S, ending at T."""
    T = sched.T
    if not 2 <= S <= T:
        raise ValueError(f"need 2 <= S <= T={T}, got S={S}")
    if spacing == "uniform":
        ts = [int(round(T * (i + 1) / S)) for i in range(S)]
    elif spacing == "angle":
        # uniform in the diffusion angle arccos(sqrt(abar)); spreads steps
        # where the marginal rotates fastest
        phi = np.arccos(np.clip(np.sqrt(sched.alpha_bars), -1.0, 1.0))
        targets = np.linspace(phi[1], phi[T], S)
        ts = sorted(set(int(np.argmin(np.abs(phi[1:] - tv))) + 1 for tv in targets) | {T})
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    ts = tuple(ts)
    validate_timesteps(ts, T)
    return ts


def validate_timesteps(ts, T: int) -> None:
    ts = tuple(int(t) for t in ts)
    if len(ts) < 2:
        raise ValueError("timestep map must have length >= 2")
    if ts[-1] != T:
        raise ValueError(f"timestep map must end at T={T}, got {ts[-1]}")
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("timestep map must be strictly increasing")
    if ts[0] < 1:
        raise ValueError("timesteps must lie in 1..T")
