"""Training-free editing of an inverted latent video.

The generation pass replays the solver from the stored terminal latent
under a new prompt.  Before each solver step the current latent is nudged
down the gradient of a matching objective that ties the target clip's
relevance scores to the ones recorded during inversion — motion transfers
because the scores encode who-attends-whom across frames, not pixels.
An optional latent mask re-imposes the stored source latent outside the
(dilated) edit region after every step, so preservation is exact by
construction rather than by hope.

Two objectives are available: the default cosine distance on relevance
volumes, and a plain L2 on concatenated raw attention maps kept as the
ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import maximum_filter

from .errors import (ConfigError, DegenerateInputError, InputError,
                     ShapeError)
from .model import DenoiserWeights, PromptEmbedding, denoise, embed_prompt
from .relevance import Neighborhood, STRScore, str_score
from .solver import (NoiseSchedule, TrajectoryRecord, cfg_combine, ddim_step,
                     make_schedule)
from .tensor import backward, concat, cosine_loss, mul, reshape, sub, tensor, tmean, tsum

OBJECTIVES = ("str_cosine", "concat_l2")


@dataclass(frozen=True)
class EditConfig:
    """Knobs of a single edit run.  Defaults are the desk-scale settings."""

    lambda_str: float = 0.01       # gradient step size on the latent
    T: int = 50                    # solver steps (must match the trajectory)
    cfg_scale: float = 7.5         # guidance scale during generation
    cfg_scale_inv: float = 1.0     # guidance scale during inversion
    radius: int = 1                # temporal neighborhood radius
    include_self: bool = False
    opt_steps_per_t: int = 1       # latent updates per solver step
    use_mask: bool = False
    dilate_radius: int = 1
    objective: str = "str_cosine"
    baseline_lambda: float = 0.08  # step size for the concat-L2 ablation
    seed: int = 0

    def __post_init__(self):
        if self.lambda_str < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lambda_str}")
        if self.baseline_lambda < 0:
            raise ConfigError(f"baseline lambda must be >= 0, got {self.baseline_lambda}")
        if self.T < 2:
            raise ConfigError(f"need at least 2 solver steps, got T={self.T}")
        if self.opt_steps_per_t < 1:
            raise ConfigError(f"opt_steps_per_t must be >= 1, got {self.opt_steps_per_t}")
        if self.dilate_radius < 0:
            raise ConfigError(f"dilate_radius must be >= 0, got {self.dilate_radius}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"unknown objective {self.objective!r}, pick one of {OBJECTIVES}")

    def neighborhood(self) -> Neighborhood:
        return Neighborhood(radius=self.radius, include_self=self.include_self)

    def step_size(self) -> float:
        return self.lambda_str if self.objective == "str_cosine" else self.baseline_lambda


# ---------------------------------------------------------------------------
# masks
# ---------------------------------------------------------------------------

def _check_binary(mask: np.ndarray) -> np.ndarray:
    bad = ~((mask == 0) | (mask == 1))
    if bad.any():
        raise InputError(f"latent mask has {int(bad.sum())} non-binary values")
    return mask.astype(np.uint8)


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Grow the edit region by a (2r+1)^2 square per frame; r=0 is identity."""
    mask = _check_binary(np.asarray(mask))
    if radius < 0 or int(radius) != radius:
        raise ConfigError(f"dilate radius must be a non-negative int, got {radius}")
    if mask.ndim not in (2, 3):
        raise ShapeError(f"mask must be (h, w) or (f, h, w), got {mask.shape}")
    if radius == 0:
        return mask.copy()
    k = 2 * radius + 1
    size = (k, k) if mask.ndim == 2 else (1, k, k)
    return maximum_filter(mask, size=size)


def mask_mix(edited: np.ndarray, source: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep `edited` where the mask is set, bit-copy `source` elsewhere."""
    edited = np.asarray(edited)
    source = np.asarray(source)
    if edited.shape != source.shape:
        raise ShapeError(f"latent shapes differ: {edited.shape} vs {source.shape}")
    mask = _check_binary(np.asarray(mask))
    if mask.shape[-2:] != edited.shape[-2:]:
        raise ShapeError(
            f"mask grid {mask.shape[-2:]} does not match latents {edited.shape[-2:]}")
    sel = np.broadcast_to(mask.astype(bool), edited.shape[:1] + edited.shape[2:])
    return np.where(sel[:, None], edited, source)


@dataclass(frozen=True)
class LatentMask:
    """Binary per-frame edit region on the latent grid."""

    values: np.ndarray   # (f, h, w) uint8

    @classmethod
    def from_array(cls, arr, frames: Optional[int] = None) -> "LatentMask":
        arr = _check_binary(np.asarray(arr))
        if arr.ndim == 2:
            if frames is None:
                raise ConfigError("a 2-d mask needs an explicit frame count")
            arr = np.broadcast_to(arr, (frames,) + arr.shape).copy()
        if arr.ndim != 3:
            raise ShapeError(f"mask must be (h, w) or (f, h, w), got {arr.shape}")
        return cls(values=arr)

    def dilated(self, radius: int) -> "LatentMask":
        return LatentMask(values=dilate_mask(self.values, radius))

    def coverage(self) -> float:
        return float(self.values.mean())


# ---------------------------------------------------------------------------
# matching objectives
# ---------------------------------------------------------------------------

# The cosine objective is dimensionless and its gradient reaches the latent
# through products of two row-stochastic maps, so raw magnitudes land several
# orders below the latent scale of the toy denoiser.  This fixed gain is part
# of the objective definition: it was calibrated once against measured
# gradient norms (median ~2e-3 on the trained model) so that the default
# step sizes produce latent updates that register against the
# classifier-free term instead of vanishing under it, while staying well
# below the overshoot regime that sets in near a hundredfold more.  The raw
# L2 objective below needs no gain because it already carries the units of
# the attention maps.
RELEVANCE_LOSS_GAIN = 300.0


def _relevance_objective(record, omega_src: STRScore, nbhd: Neighborhood, t: int):
    omega_tgt = str_score(record, nbhd)
    if all(float(np.abs(omega_tgt[b].data).max()) == 0.0
           for b in omega_tgt.blocks()):
        raise DegenerateInputError(
            f"relevance scores vanished at timestep {t}; nothing to match")
    parts = []
    for b in omega_tgt.blocks():
        try:
            parts.append(reshape(cosine_loss(omega_tgt[b], omega_src[b]), (1,)))
        except DegenerateInputError as err:
            raise DegenerateInputError(f"{err} (timestep {t}, block {b})") from err
    return mul(tmean(concat(parts, axis=0)), RELEVANCE_LOSS_GAIN)


def _concat_objective(record, stored_maps: Optional[dict], t: int):
    if stored_maps is None:
        raise InputError(
            "the concat-L2 objective needs a trajectory inverted with stored "
            "attention maps")
    parts = []
    for m in record.maps:
        if m.block not in stored_maps:
            raise InputError(f"no stored maps for block {m.block} at timestep {t}")
        src_s, src_t = stored_maps[m.block]
        ds = sub(m.self_map, tensor(np.asarray(getattr(src_s, "data", src_s))))
        dt = sub(m.temporal_map, tensor(np.asarray(getattr(src_t, "data", src_t))))
        parts.append(reshape(tsum(mul(ds, ds)) + tsum(mul(dt, dt)), (1,)))
    return tmean(concat(parts, axis=0))


# ---------------------------------------------------------------------------
# one guided solver step
# ---------------------------------------------------------------------------

def guidance_step(z, t: int, tgt_prompt: PromptEmbedding,
                  uncond_prompt: Optional[PromptEmbedding],
                  weights: DenoiserWeights, sched: NoiseSchedule,
                  entry, config: EditConfig, *, frame_pos: bool = True):
    """Optimize the latent against the stored step, then advance it.

    `entry` carries the inversion-time record for timestep t (None at the
    terminal step, where there is nothing to match).  Returns the latent at
    t-1 plus a per-step info dict.  With a zero step size the optimization
    pass is skipped entirely, which makes the step bit-identical to plain
    reconstruction.
    """
    lam = config.step_size()
    info = {"t": t, "losses": [], "grad_norms": []}
    z_opt = np.asarray(z)
    if entry is not None and lam > 0.0:
        for _ in range(config.opt_steps_per_t):
            tz = tensor(z_opt, requires_grad=True)
            _, record = denoise(tz, t, tgt_prompt, weights,
                                num_steps=sched.T, frame_pos=frame_pos)
            if config.objective == "str_cosine":
                loss = _relevance_objective(record, entry.omega,
                                            config.neighborhood(), t)
            else:
                loss = _concat_objective(record, entry.maps, t)
            backward(loss)
            info["losses"].append(float(loss.data))
            info["grad_norms"].append(float(np.linalg.norm(tz.grad)))
            z_opt = z_opt - lam * tz.grad

    eps_c, _ = denoise(z_opt, t, tgt_prompt, weights,
                       num_steps=sched.T, collect=False, frame_pos=frame_pos)
    if config.cfg_scale == 1.0:
        eps = eps_c
    else:
        if uncond_prompt is None:
            raise ConfigError("guided generation needs an unconditional prompt")
        eps_u, _ = denoise(z_opt, t, uncond_prompt, weights,
                           num_steps=sched.T, collect=False, frame_pos=frame_pos)
        eps = cfg_combine(eps_c, eps_u, config.cfg_scale)
    z_next = ddim_step(z_opt, eps.data, t, t - 1, sched)
    return z_next, info


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------

@dataclass
class EditResult:
    latents: np.ndarray            # edited clean latent video
    steps: list                    # per-step info dicts, t = T .. 1
    mask: Optional[np.ndarray]     # dilated mask actually applied, if any
    config: EditConfig = field(repr=False, default=None)


def _as_prompt(p, weights) -> Optional[PromptEmbedding]:
    if p is None or isinstance(p, PromptEmbedding):
        return p
    return embed_prompt(p, weights)


def edit(trajectory: TrajectoryRecord, tgt_prompt, weights: DenoiserWeights,
         config: Optional[EditConfig] = None, *, src_prompt=None, mask=None,
         frame_pos: bool = True) -> EditResult:
    """Replay the solver from the stored terminal latent under the target
    prompt, matching stored relevance scores along the way.

    The source prompt fills the unconditional slot of classifier-free
    guidance; when the trajectory was inverted from a prompt string it is
    recovered from the bundle metadata.
    """
    if config is None:
        config = EditConfig()
    if config.T != trajectory.T:
        raise ConfigError(
            f"config says T={config.T} but the trajectory was inverted "
            f"with T={trajectory.T}")
    sched = make_schedule(T=trajectory.T,
                          kind=trajectory.meta.get("schedule", "linear-beta"))
    tgt = _as_prompt(tgt_prompt, weights)
    src = _as_prompt(src_prompt or trajectory.meta.get("prompt"), weights)
    if config.cfg_scale != 1.0 and src is None:
        raise ConfigError(
            "guided generation needs the source prompt for the unconditional "
            "slot; pass src_prompt or invert from a prompt string")

    dil = None
    if config.use_mask:
        if mask is None:
            raise ConfigError("use_mask is set but no mask was provided")
        values = mask.values if isinstance(mask, LatentMask) else np.asarray(mask)
        lm = LatentMask.from_array(values, frames=trajectory.z_terminal.shape[0])
        if lm.values.shape[-2:] != trajectory.z_terminal.shape[-2:]:
            raise ShapeError(
                f"mask grid {lm.values.shape[-2:]} does not match latent "
                f"{trajectory.z_terminal.shape[-2:]}")
        dil = lm.dilated(config.dilate_radius).values

    z = np.array(trajectory.z_terminal, copy=True)
    steps = []
    for t in range(trajectory.T, 0, -1):
        entry = trajectory.entry(t) if trajectory.has(t) else None
        z, info = guidance_step(z, t, tgt, src, weights, sched, entry, config,
                                frame_pos=frame_pos)
        if dil is not None:
            z = mask_mix(z, trajectory.entry(t - 1).z, dil)
        steps.append(info)
    return EditResult(latents=z, steps=steps, mask=dil, config=config)


def reconstruct(trajectory: TrajectoryRecord, prompt, weights: DenoiserWeights,
                *, frame_pos: bool = True) -> np.ndarray:
    """Plain unguided replay of the solver from the terminal latent.

    The yardstick the editing path must collapse to when every knob is
    neutral, and the probe for how faithfully inversion round-trips.
    """
    p = _as_prompt(prompt or trajectory.meta.get("prompt"), weights)
    if p is None:
        raise ConfigError("reconstruction needs the source prompt")
    sched = make_schedule(T=trajectory.T,
                          kind=trajectory.meta.get("schedule", "linear-beta"))
    z = np.array(trajectory.z_terminal, copy=True)
    for t in range(trajectory.T, 0, -1):
        eps, _ = denoise(z, t, p, weights, num_steps=sched.T,
                         collect=False, frame_pos=frame_pos)
        z = ddim_step(z, eps.data, t, t - 1, sched)
    return z
