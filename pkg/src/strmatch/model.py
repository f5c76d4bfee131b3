"""Toy latent-video denoiser with factorized spatial and temporal attention.

The network is a stack of residual blocks, each built as

    conditioning add -> RMS norm -> spatial self-attention
                     -> RMS norm -> temporal attention
                     -> RMS norm -> pointwise tanh MLP,

run at two spatial resolutions (2x average-pool down, nearest-neighbor up).
Every block records its post-softmax attention maps; blocks running at the
coarse level are the ones retained for relevance scoring, so the finest
resolution can be excluded the way the editing objective wants.

Latents are the videos themselves (identity encoder/decoder): shape
(f, c, H, W) with H*W spatial tokens per frame at the fine level.  Prompts
come from a small fixed vocabulary; a prompt embeds as the mean of its
learned token vectors, and conditioning is additive per block.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, InputError, ShapeError
from .tensor import (
    Tensor,
    matmul,
    profile_dtype,
    reshape,
    repeat_interleave,
    softmax_last,
    sqrt,
    tanh,
    tensor,
    tmean,
    transpose,
    tsum,
)

# ---------------------------------------------------------------------------
# vocabulary and prompts
# ---------------------------------------------------------------------------

NULL_TOKEN = "<null>"
UNK_TOKEN = "<unk>"

VOCAB = (
    NULL_TOKEN, UNK_TOKEN,
    # objects
    "square", "circle", "diamond", "bar", "blob",
    # colors
    "red", "green", "blue", "yellow", "white", "dark", "bright",
    # motion words
    "drifts", "slides", "bounces", "spins", "still", "fast", "slow",
    "left", "right", "up", "down",
    # glue
    "a", "the", "to", "over", "on", "background",
)

NULL_ID = VOCAB.index(NULL_TOKEN)
UNK_ID = VOCAB.index(UNK_TOKEN)

_WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}


def tokenize(text: str) -> list[int]:
    """Map a prompt string to token ids; unknown words become UNK_ID."""
    words = text.lower().replace(",", " ").replace(".", " ").split()
    return [_WORD_TO_ID.get(w, UNK_ID) for w in words]


@dataclass
class PromptEmbedding:
    tokens: list[int]
    vector: np.ndarray  # (d,)

    def __post_init__(self):
        self.vector = np.asarray(self.vector)
        if self.vector.ndim != 1:
            raise ShapeError(f"prompt vector must be 1-d, got shape {self.vector.shape}")


def embed_prompt(text: str, weights: "DenoiserWeights") -> PromptEmbedding:
    """Mean of learned token embeddings; the empty prompt embeds the null token."""
    ids = tokenize(text)
    if not ids:
        ids = [NULL_ID]
    table = weights.params["tokens.emb"]
    return PromptEmbedding(tokens=ids, vector=table[ids].mean(axis=0))


# ---------------------------------------------------------------------------
# configuration and weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    width: int = 32
    heads: int = 2
    channels: int = 3
    levels: tuple = (0, 1, 1, 0)       # per-block resolution level; 0 = finest
    base_hw: tuple = (16, 16)
    time_features: int = 16
    mlp_ratio: int = 4
    # blocks whose maps feed relevance scoring; None = every block at level > 0
    str_blocks: Optional[tuple] = None

    def __post_init__(self):
        if self.width % self.heads != 0:
            raise ConfigError(
                f"width {self.width} not divisible by heads {self.heads}")
        if len(self.levels) < 2:
            raise ConfigError("need at least two blocks")
        if 0 not in self.levels or max(self.levels) == 0:
            raise ConfigError("levels must span two resolutions (some 0, some > 0)")
        if self.time_features % 2 != 0:
            raise ConfigError("time_features must be even")
        step = 2 ** max(self.levels)
        if self.base_hw[0] % step or self.base_hw[1] % step:
            raise ConfigError(
                f"latent size {self.base_hw} not divisible by 2^{max(self.levels)}")

    @property
    def blocks(self) -> int:
        return len(self.levels)

    def retained_blocks(self) -> tuple:
        """Block indices whose attention maps enter the relevance score."""
        if self.str_blocks is not None:
            return tuple(self.str_blocks)
        return tuple(k for k, lvl in enumerate(self.levels) if lvl > 0)

    def tokens_at(self, level: int) -> int:
        return (self.base_hw[0] >> level) * (self.base_hw[1] >> level)


def _param_shapes(cfg: ModelConfig) -> dict:
    d, td, c = cfg.width, cfg.time_features, cfg.channels
    dm = cfg.mlp_ratio * d
    shapes = {
        "tokens.emb": (len(VOCAB), d),
        "embed.w": (c, d),
        "embed.b": (d,),
        "head.w": (d, c),
        "head.b": (c,),
    }
    for k in range(cfg.blocks):
        p = f"b{k}."
        shapes[p + "time.w"] = (td, d)
        shapes[p + "time.b"] = (d,)
        shapes[p + "prompt.w"] = (d, d)
        shapes[p + "prompt.b"] = (d,)
        for which in ("sa", "ta"):
            for mat in ("wq", "wk", "wv", "wo"):
                shapes[f"{p}{which}.{mat}"] = (d, d)
        shapes[p + "norm1.g"] = (d,)
        shapes[p + "norm2.g"] = (d,)
        shapes[p + "norm3.g"] = (d,)
        shapes[p + "mlp.w1"] = (d, dm)
        shapes[p + "mlp.b1"] = (dm,)
        shapes[p + "mlp.w2"] = (dm, d)
        shapes[p + "mlp.b2"] = (d,)
    return shapes


@dataclass
class DenoiserWeights:
    config: ModelConfig
    params: dict  # name -> np.ndarray, shapes from _param_shapes

    def __post_init__(self):
        want = _param_shapes(self.config)
        missing = sorted(set(want) - set(self.params))
        if missing:
            raise ConfigError(f"missing parameters: {missing[:4]}{'...' if len(missing) > 4 else ''}")
        for name, shape in want.items():
            got = np.asarray(self.params[name])
            if got.shape != shape:
                raise ShapeError(f"parameter {name} has shape {got.shape}, expected {shape}")

    def check_finite(self) -> None:
        for name, arr in self.params.items():
            if not np.all(np.isfinite(arr)):
                raise InputError(f"parameter {name} contains non-finite values")

    def astype(self, dtype) -> "DenoiserWeights":
        return DenoiserWeights(self.config,
                               {k: np.asarray(v, dtype=dtype) for k, v in self.params.items()})

    def as_tensors(self, trainable: bool = False) -> dict:
        return {k: tensor(v, requires_grad=trainable) for k, v in self.params.items()}

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())


def init_weights(config: ModelConfig, seed: int = 0) -> DenoiserWeights:
    """Seeded initialization; scales keep the residual stream near unit size."""
    rng = np.random.default_rng(seed)
    d = config.width
    params = {}
    for name, shape in _param_shapes(config).items():
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.endswith(".b") or name.endswith("b1") or name.endswith("b2"):
            arr = np.zeros(shape)
        elif name == "tokens.emb":
            arr = rng.normal(scale=0.8, size=shape)
        else:
            fan_in = shape[0]
            scale = 1.0 / np.sqrt(fan_in)
            if name.endswith(".wo") or name.endswith("mlp.w2") or name == "head.w":
                scale *= 0.5  # residual branches start small
            arr = rng.normal(scale=scale, size=shape)
        params[name] = arr.astype(profile_dtype())
    return DenoiserWeights(config, params)


# ---------------------------------------------------------------------------
# attention records
# ---------------------------------------------------------------------------

@dataclass
class AttentionBlockMaps:
    """Post-softmax maps of one retained block.

    self_map     (f, h, n, n): within-frame relevance, rows over key pixels.
    temporal_map (n, h, f, f): cross-frame relevance at each pixel, rows over
                               key frames.
    """
    block: int
    level: int
    self_map: Tensor
    temporal_map: Tensor

    @property
    def f(self) -> int:
        return self.self_map.shape[0]

    @property
    def n(self) -> int:
        return self.self_map.shape[2]

    @property
    def heads(self) -> int:
        return self.self_map.shape[1]


@dataclass
class AttentionRecord:
    maps: list  # of AttentionBlockMaps, ordered by block index

    def blocks(self) -> list[int]:
        return [m.block for m in self.maps]

    def __getitem__(self, block: int) -> AttentionBlockMaps:
        for m in self.maps:
            if m.block == block:
                return m
        raise InputError(f"no attention maps recorded for block {block}")

    def validate(self, tol: float = 1e-5) -> None:
        """Row-stochasticity and nonnegativity of every stored map."""
        for m in self.maps:
            for label, arr in (("self", m.self_map.data), ("temporal", m.temporal_map.data)):
                if np.min(arr) < 0.0:
                    raise InputError(f"block {m.block} {label} map has negative entries")
                rows = arr.sum(axis=-1)
                err = np.max(np.abs(rows - 1.0))
                if err > tol:
                    raise InputError(
                        f"block {m.block} {label} map rows deviate from 1 by {err:.2e}")

    def detached(self) -> "AttentionRecord":
        return AttentionRecord([
            AttentionBlockMaps(m.block, m.level, m.self_map.detach(), m.temporal_map.detach())
            for m in self.maps
        ])


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

_NORM_EPS = 1e-6


def rms_norm(x: Tensor, gain: Tensor) -> Tensor:
    ms = tmean(x * x, axis=-1, keepdims=True)
    return x / sqrt(ms + _NORM_EPS) * gain


def timestep_features(u: float, dim: int) -> np.ndarray:
    """Sinusoidal features of the normalized timestep u = t/T."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(400.0), half))
    ang = u * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def frame_positions(f: int, d: int) -> np.ndarray:
    """Fixed sinusoidal frame-index encoding used inside temporal attention."""
    pos = np.arange(f)[:, None]
    k = np.arange(d)[None, :]
    ang = pos / np.power(60.0, (2 * (k // 2)) / d)
    out = np.where(k % 2 == 0, np.sin(ang), np.cos(ang))
    return out


def _split_heads(x: Tensor, heads: int) -> Tensor:
    # (b, n, d) -> (b, heads, n, d/heads)
    b, n, d = x.shape
    return transpose(reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, n, h * dh))


def _attention(x: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
               heads: int):
    """Multi-head attention over the middle axis of (batch, tokens, d)."""
    d = x.shape[-1]
    if d % heads != 0:
        raise ConfigError(f"width {d} not divisible by heads {heads}")
    q = _split_heads(matmul(x, wq), heads)
    k = _split_heads(matmul(x, wk), heads)
    v = _split_heads(matmul(x, wv), heads)
    scale = 1.0 / np.sqrt(d // heads)
    scores = matmul(q, k.swapaxes(-1, -2)) * scale
    attn = softmax_last(scores)          # (batch, heads, tokens, tokens)
    ctx = _merge_heads(matmul(attn, v))
    return matmul(ctx, wo), attn


def spatial_self_attention(x: Tensor, wq, wk, wv, wo, heads: int):
    """Per-frame attention over pixels.

    x: (f, n, d).  Returns the block output (f, n, d) and the post-softmax
    map (f, heads, n, n) whose rows (last axis, key pixels) sum to 1.
    """
    return _attention(x, wq, wk, wv, wo, heads)


def temporal_attention(x: Tensor, wq, wk, wv, wo, heads: int,
                       pos: Optional[np.ndarray] = None):
    """Per-pixel attention over frames.

    x: (f, n, d).  `pos` is an optional (f, d) frame-position encoding added
    before the projections; disabling it makes the whole op equivariant to
    frame permutations.  Returns (f, n, d) and the map (n, heads, f, f).
    """
    xt = x.swapaxes(0, 1)                # (n, f, d)
    if pos is not None:
        xt = xt + tensor(np.asarray(pos, dtype=x.dtype))
    out, attn = _attention(xt, wq, wk, wv, wo, heads)
    return out.swapaxes(0, 1), attn      # attn: (n, heads, f, f)


def _pool2(x: Tensor, hw: tuple) -> Tensor:
    """2x2 average pooling of (f, H*W, d) tokens."""
    f, n, d = x.shape
    hh, ww = hw
    g = reshape(x, (f, hh, ww, d))
    y = (g[:, 0::2, 0::2, :] + g[:, 1::2, 0::2, :]
         + g[:, 0::2, 1::2, :] + g[:, 1::2, 1::2, :]) * 0.25
    return reshape(y, (f, (hh // 2) * (ww // 2), d))


def _unpool2(x: Tensor, hw: tuple) -> Tensor:
    """Nearest-neighbor 2x upsampling of (f, H*W, d) tokens."""
    f, n, d = x.shape
    hh, ww = hw
    g = reshape(x, (f, hh, ww, d))
    g = repeat_interleave(repeat_interleave(g, 2, axis=1), 2, axis=2)
    return reshape(g, (f, (hh * 2) * (ww * 2), d))


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def denoise(z_t, t: float, prompt: PromptEmbedding, weights: DenoiserWeights,
            *, params: Optional[dict] = None, num_steps: Optional[int] = None,
            collect: bool = True, frame_pos: bool = True):
    """Predict the noise in z_t, returning (eps_hat, AttentionRecord).

    z_t: (f, c, H, W) array or Tensor.  `t` is the timestep; when
    `num_steps` is given the conditioning uses t/num_steps, otherwise t is
    taken as an already-normalized value in [0, 1].  Deterministic for fixed
    inputs; differentiable w.r.t. z_t (and the parameter tensors when a
    trainable `params` dict is supplied).
    """
    cfg = weights.config
    if params is None:
        params = weights.as_tensors(trainable=False)
    if not isinstance(z_t, Tensor):
        z_t = tensor(z_t)
    if z_t.ndim != 4:
        raise ShapeError(f"latent video must be (f, c, H, W), got shape {z_t.shape}")
    f, c, hh, ww = z_t.shape
    if c != cfg.channels or (hh, ww) != tuple(cfg.base_hw):
        raise ShapeError(
            f"latent shape {z_t.shape} does not match model "
            f"(channels={cfg.channels}, hw={cfg.base_hw})")
    if not np.all(np.isfinite(z_t.data)):
        raise InputError("latent contains non-finite values")
    if num_steps is not None:
        if not 0 <= t <= num_steps:
            raise InputError(f"timestep {t} outside [0, {num_steps}]")
        u = t / num_steps
    else:
        u = float(t)
        if not -1e-9 <= u <= 1.0 + 1e-9:
            raise InputError(f"normalized timestep {u} outside [0, 1]")

    dt = z_t.dtype
    tfeat = timestep_features(u, cfg.time_features).astype(dt)[None, :]
    pvec = np.asarray(prompt.vector, dtype=dt)[None, :]
    if pvec.shape[1] != cfg.width:
        raise ShapeError(f"prompt vector length {pvec.shape[1]} != width {cfg.width}")

    # tokens: (f, n, c) -> (f, n, d)
    x = reshape(transpose(z_t, (0, 2, 3, 1)), (f, hh * ww, c))
    x = matmul(x, params["embed.w"]) + params["embed.b"]

    retained = set(cfg.retained_blocks())
    records = []
    level = 0
    cur_hw = (hh, ww)
    for k, lvl in enumerate(cfg.levels):
        while level < lvl:
            x = _pool2(x, cur_hw)
            cur_hw = (cur_hw[0] // 2, cur_hw[1] // 2)
            level += 1
        while level > lvl:
            x = _unpool2(x, cur_hw)
            cur_hw = (cur_hw[0] * 2, cur_hw[1] * 2)
            level -= 1
        p = f"b{k}."
        cond = (matmul(tensor(tfeat), params[p + "time.w"]) + params[p + "time.b"]
                + matmul(tensor(pvec), params[p + "prompt.w"]) + params[p + "prompt.b"])
        x = x + reshape(cond, (cond.shape[-1],))

        a = rms_norm(x, params[p + "norm1.g"])
        sa_out, self_map = spatial_self_attention(
            a, params[p + "sa.wq"], params[p + "sa.wk"],
            params[p + "sa.wv"], params[p + "sa.wo"], cfg.heads)
        x = x + sa_out

        b = rms_norm(x, params[p + "norm2.g"])
        pos = frame_positions(f, cfg.width) if frame_pos else None
        ta_out, temporal_map = temporal_attention(
            b, params[p + "ta.wq"], params[p + "ta.wk"],
            params[p + "ta.wv"], params[p + "ta.wo"], cfg.heads, pos=pos)
        x = x + ta_out

        cc = rms_norm(x, params[p + "norm3.g"])
        hmid = tanh(matmul(cc, params[p + "mlp.w1"]) + params[p + "mlp.b1"])
        x = x + matmul(hmid, params[p + "mlp.w2"]) + params[p + "mlp.b2"]

        if collect and k in retained:
            records.append(AttentionBlockMaps(
                block=k, level=lvl, self_map=self_map, temporal_map=temporal_map))

    while level > 0:
        x = _unpool2(x, cur_hw)
        cur_hw = (cur_hw[0] * 2, cur_hw[1] * 2)
        level -= 1

    eps = matmul(x, params["head.w"]) + params["head.b"]
    eps = transpose(reshape(eps, (f, hh, ww, c)), (0, 3, 1, 2))
    return eps, AttentionRecord(records)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    steps: int = 300
    lr: float = 3e-3
    batch: int = 2
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8


def train_toy_denoiser(corpus: Sequence, config: TrainConfig, seed: int = 0,
                       model_config: Optional[ModelConfig] = None,
                       loss_log: Optional[list] = None) -> DenoiserWeights:
    """Fit the denoiser to predict injected noise on a small video corpus.

    `corpus` is a sequence of (video, prompt_text) pairs with videos shaped
    (f, c, H, W).  Optimization is plain Adam on the noise-prediction MSE;
    everything is driven by one seeded generator, so a given (corpus,
    config, seed) always produces bit-identical weights.
    """
    from .solver import alpha_sigma  # schedule shared with inference

    corpus = list(corpus)
    if not corpus:
        raise InputError("training corpus is empty")
    if model_config is None:
        model_config = ModelConfig()
    if config.steps < 1 or config.batch < 1 or config.lr <= 0:
        raise ConfigError("training needs steps >= 1, batch >= 1, lr > 0")

    weights = init_weights(model_config, seed=seed)
    prompts = [embed_prompt(text, weights) for _, text in corpus]
    videos = [np.asarray(v, dtype=profile_dtype()) for v, _ in corpus]

    rng = np.random.default_rng(seed + 1)
    beta1, beta2 = config.adam_betas
    m = {k: np.zeros_like(v) for k, v in weights.params.items()}
    v2 = {k: np.zeros_like(v) for k, v in weights.params.items()}

    for step in range(config.steps):
        idx = rng.integers(0, len(corpus), size=config.batch)
        params = weights.as_tensors(trainable=True)
        total = None
        for i in idx:
            z0 = videos[i]
            u = float(rng.uniform(0.05, 1.0))
            noise = rng.standard_normal(z0.shape).astype(z0.dtype)
            alpha, sigma = alpha_sigma(u)
            z_u = alpha * z0 + sigma * noise
            eps_hat, _ = denoise(z_u, u, prompts[i], weights,
                                 params=params, collect=False)
            diff = eps_hat - tensor(noise)
            term = tmean(diff * diff)
            total = term if total is None else total + term
        loss = total * (1.0 / len(idx))
        loss.backward()
        if loss_log is not None:
            loss_log.append(loss.item())

        tt = step + 1
        corr = np.sqrt(1.0 - beta2 ** tt) / (1.0 - beta1 ** tt)
        for name, p in params.items():
            g = p.grad
            if g is None:
                continue
            m[name] = beta1 * m[name] + (1.0 - beta1) * g
            v2[name] = beta2 * v2[name] + (1.0 - beta2) * g * g
            upd = config.lr * corr * m[name] / (np.sqrt(v2[name]) + config.adam_eps)
            weights.params[name] = (weights.params[name] - upd).astype(p.dtype)

    return weights
