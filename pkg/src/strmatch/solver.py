"""Noise schedule, deterministic DDIM stepping, and guidance combination.

The schedule is defined by a continuous log-SNR profile over the normalized
time u = t/T, so discretizations with different step counts T sample the
same underlying process (T=10 and T=50 visit the same curve, just more or
less densely).  Both directions of travel use the single `ddim_step`
implementation: inversion runs it with t_to = t_from + 1, generation with
t_to = t_from - 1, and replaying a step with the same noise prediction is
an algebraic inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from .model import DenoiserWeights, PromptEmbedding, denoise, embed_prompt
from .relevance import Neighborhood, str_score

# Continuous variance-preserving profile: log alpha_bar(u) integrates a
# linearly growing decay rate from BETA_MIN to BETA_MAX.  The terminal
# signal-to-noise is fixed by the profile alone, independent of T:
# sigma(1)/alpha(1) ~ 128, comfortably past the "noise dominates" floor.
BETA_MIN = 0.4
BETA_MAX = 19.0
COSINE_SHIFT = 0.008


def _alpha_bar(u: float, kind: str = "linear-beta") -> float:
    if kind == "linear-beta":
        return math.exp(-(BETA_MIN * u + 0.5 * (BETA_MAX - BETA_MIN) * u * u))
    if kind == "cosine":
        s = COSINE_SHIFT
        top = math.cos((u + s) / (1.0 + s) * math.pi / 2.0)
        bot = math.cos(s / (1.0 + s) * math.pi / 2.0)
        return (top * top) / (bot * bot)
    raise ConfigError(f"unknown schedule kind {kind!r}; expected linear-beta or cosine")


def alpha_sigma(u: float, kind: str = "linear-beta") -> tuple:
    """(alpha, sigma) of the continuous profile at normalized time u."""
    if not 0.0 <= u <= 1.0:
        raise InputError(f"normalized time {u} outside [0, 1]")
    ab = _alpha_bar(u, kind)
    return math.sqrt(ab), math.sqrt(1.0 - ab)


@dataclass
class NoiseSchedule:
    """Discretized schedule: alpha[t], sigma[t] for t = 0..T inclusive."""
    T: int
    alpha: np.ndarray
    sigma: np.ndarray
    kind: str = "linear-beta"

    def __post_init__(self):
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.alpha.shape != (self.T + 1,) or self.sigma.shape != (self.T + 1,):
            raise ShapeError(
                f"schedule arrays must have T+1={self.T + 1} entries, "
                f"got {self.alpha.shape} and {self.sigma.shape}")

    def validate(self, min_terminal_ratio: float = 100.0) -> None:
        if self.alpha[0] != 1.0 or self.sigma[0] != 0.0:
            raise ConfigError("schedule must start at alpha=1, sigma=0 exactly")
        if np.any(np.diff(self.alpha) >= 0.0):
            raise ConfigError("alpha must be strictly decreasing")
        if np.any(np.diff(self.sigma) <= 0.0):
            raise ConfigError("sigma must be strictly increasing")
        if self.terminal_ratio() < min_terminal_ratio:
            raise ConfigError(
                f"sigma_T/alpha_T = {self.terminal_ratio():.2f} below "
                f"floor {min_terminal_ratio}")

    def terminal_ratio(self) -> float:
        return float(self.sigma[self.T] / self.alpha[self.T])


def make_schedule(T: int = 50, kind: str = "linear-beta",
                  min_terminal_ratio: float = 100.0) -> NoiseSchedule:
    if T < 2:
        raise ConfigError(f"schedule needs T >= 2, got {T}")
    ab = np.array([_alpha_bar(t / T, kind) for t in range(T + 1)])
    sched = NoiseSchedule(T=T, alpha=np.sqrt(ab), sigma=np.sqrt(1.0 - ab), kind=kind)
    sched.validate(min_terminal_ratio)
    return sched


def ddim_step(z, eps_hat, t_from: int, t_to: int, sched: NoiseSchedule):
    """One deterministic solver step between adjacent timesteps.

    Works for both directions; accepts arrays or Tensors (the arithmetic is
    the same and stays differentiable for Tensors).
    """
    if abs(t_from - t_to) != 1:
        raise InputError(f"ddim_step needs adjacent timesteps, got {t_from} -> {t_to}")
    if not (0 <= t_from <= sched.T and 0 <= t_to <= sched.T):
        raise InputError(f"timesteps {t_from} -> {t_to} outside [0, {sched.T}]")
    a_from = float(sched.alpha[t_from])
    s_from = float(sched.sigma[t_from])
    a_to = float(sched.alpha[t_to])
    s_to = float(sched.sigma[t_to])
    x0_hat = (z - s_from * eps_hat) * (1.0 / a_from)
    return a_to * x0_hat + s_to * eps_hat


def cfg_combine(eps_cond, eps_uncond, scale: float):
    """Classifier-free guidance: eps_uncond + scale * (eps_cond - eps_uncond).

    scale == 1 returns eps_cond itself, bit for bit, so an unguided pipeline
    is exactly the single-prompt pipeline.
    """
    cshape = getattr(eps_cond, "shape", None)
    ushape = getattr(eps_uncond, "shape", None)
    if cshape != ushape:
        raise ShapeError(f"guidance operands differ in shape: {cshape} vs {ushape}")
    if scale == 1.0:
        return eps_cond
    return eps_uncond + scale * (eps_cond - eps_uncond)


# ---------------------------------------------------------------------------
# inversion
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryEntry:
    t: int
    z: np.ndarray                      # latent at timestep t (before stepping on)
    omega: Optional[object] = None     # STRScore, detached
    eps: Optional[np.ndarray] = None   # noise prediction used at t
    maps: Optional[dict] = None        # block -> (self_map, temporal_map), detached


@dataclass
class TrajectoryRecord:
    entries: list
    z_terminal: np.ndarray
    T: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.entries) != self.T:
            raise InputError(
                f"trajectory has {len(self.entries)} entries, expected T={self.T}")
        ts = [e.t for e in self.entries]
        if ts != sorted(set(ts)):
            raise InputError(f"trajectory timesteps not strictly ordered: {ts}")

    def entry(self, t: int) -> TrajectoryEntry:
        for e in self.entries:
            if e.t == t:
                return e
        raise InputError(f"no trajectory entry stored for timestep {t}")

    def has(self, t: int) -> bool:
        return any(e.t == t for e in self.entries)


def invert(z0: np.ndarray, src_prompt: PromptEmbedding, weights: DenoiserWeights,
           sched: NoiseSchedule, cfg_scale_inv: float = 1.0, *,
           neighborhood: Optional[Neighborhood] = None,
           uncond_prompt: Optional[PromptEmbedding] = None,
           store_eps: bool = True, store_maps: bool = False,
           frame_pos: bool = True) -> TrajectoryRecord:
    """Deterministic forward diffusion of a clean latent video.

    Walks t = 0 .. T-1, at each step predicting noise under the source
    prompt, scoring the attention record, saving (z_t, omega_t, eps_t), and
    advancing with the shared solver step.  The terminal z_T sits on the
    record as `z_terminal`.
    """
    z0 = np.asarray(z0)
    if not np.all(np.isfinite(z0)):
        raise InputError("source latent contains non-finite values")
    meta = {"cfg_scale_inv": cfg_scale_inv, "schedule": sched.kind}
    if isinstance(src_prompt, str):
        meta["prompt"] = src_prompt
        src_prompt = embed_prompt(src_prompt, weights)
    if isinstance(uncond_prompt, str):
        uncond_prompt = embed_prompt(uncond_prompt, weights)
    if neighborhood is None:
        neighborhood = Neighborhood()
    z = z0
    entries = []
    for t in range(sched.T):
        eps_t, record = denoise(z, t, src_prompt, weights,
                                num_steps=sched.T, frame_pos=frame_pos)
        if cfg_scale_inv != 1.0:
            if uncond_prompt is None:
                raise ConfigError("guided inversion needs an unconditional prompt")
            eps_u, _ = denoise(z, t, uncond_prompt, weights,
                               num_steps=sched.T, frame_pos=frame_pos)
            eps_t = cfg_combine(eps_t, eps_u, cfg_scale_inv)
        omega = str_score(record, neighborhood).detached()
        maps = None
        if store_maps:
            maps = {m.block: (m.self_map.detach_copy(), m.temporal_map.detach_copy())
                    for m in record.maps}
        entries.append(TrajectoryEntry(
            t=t, z=np.array(z, copy=True), omega=omega,
            eps=eps_t.detach_copy() if store_eps else None, maps=maps))
        z = ddim_step(z, eps_t.data, t, t + 1, sched)
    return TrajectoryRecord(entries=entries, z_terminal=np.array(z, copy=True),
                            T=sched.T, meta=meta)
