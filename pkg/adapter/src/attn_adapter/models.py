"""Local stand-in text-to-video denoisers with capturable attention.

The sandbox has no GPU-scale checkpoints, so the zoo holds small torch
models whose weights are drawn once from a seeded generator: the capture
path (forward hooks on the attention modules) is exactly what a hooked
pretrained pipeline would use, and determinism makes the exported fixtures
reproducible byte for byte.

Every model alternates per-frame spatial attention with per-pixel temporal
attention, at a finest resolution plus a pooled one, so fixtures carry both
map families at more than one scale.
"""

import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import EnvironmentError_


@dataclass(frozen=True)
class ModelDesc:
    frames: int
    channels: int
    hw: tuple
    width: int
    heads: int
    levels: tuple          # per block: 0 = finest grid, k = pooled by 2**k


MODEL_ZOO = {
    "tiny-t2v": ModelDesc(frames=8, channels=4, hw=(16, 16), width=32,
                          heads=2, levels=(0, 1, 1)),
    "tiny-t2v-wide": ModelDesc(frames=6, channels=4, hw=(16, 16), width=48,
                               heads=4, levels=(0, 1, 1)),
}


def resolve_model(model_id: str) -> ModelDesc:
    if model_id not in MODEL_ZOO:
        raise EnvironmentError_(
            f"model {model_id!r} is not available on this machine; "
            f"local models: {', '.join(sorted(MODEL_ZOO))}")
    return MODEL_ZOO[model_id]


class MapAttention(nn.Module):
    """Multi-head attention that keeps its post-softmax maps readable.

    The caller arranges the token axis: batches of frames give within-frame
    (spatial) maps, batches of pixels give cross-frame (temporal) maps.  The
    last forward's maps sit on `last_maps` for forward hooks to collect.
    """

    def __init__(self, width: int, heads: int, kind: str, block: int, level: int):
        super().__init__()
        self.heads = heads
        self.kind = kind
        self.block = block
        self.level = level
        self.qkv = nn.Linear(width, 3 * width)
        self.out = nn.Linear(width, width)
        self.last_maps = None

    def forward(self, x):
        b, tokens, width = x.shape
        dh = width // self.heads
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, tokens, self.heads, dh).transpose(1, 2)
        k = k.view(b, tokens, self.heads, dh).transpose(1, 2)
        v = v.view(b, tokens, self.heads, dh).transpose(1, 2)
        w = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        self.last_maps = w.detach()
        y = (w @ v).transpose(1, 2).reshape(b, tokens, width)
        return self.out(y)


class _Block(nn.Module):
    def __init__(self, width: int, heads: int, block: int, level: int):
        super().__init__()
        self.level = level
        self.n1 = nn.LayerNorm(width)
        self.spatial = MapAttention(width, heads, "self", block, level)
        self.n2 = nn.LayerNorm(width)
        self.temporal = MapAttention(width, heads, "temporal", block, level)
        self.n3 = nn.LayerNorm(width)
        self.mlp = nn.Sequential(nn.Linear(width, 2 * width), nn.GELU(),
                                 nn.Linear(2 * width, width))

    def forward(self, x):
        # x: (f, n, width)
        x = x + self.spatial(self.n1(x))
        f, n, width = x.shape
        xt = self.n2(x).transpose(0, 1)            # (n, f, width)
        x = x + self.temporal(xt).transpose(0, 1)
        return x + self.mlp(self.n3(x))


class TinyT2V(nn.Module):
    def __init__(self, desc: ModelDesc):
        super().__init__()
        self.desc = desc
        self.proj_in = nn.Linear(desc.channels, desc.width)
        self.proj_out = nn.Linear(desc.width, desc.channels)
        self.time = nn.Linear(8, desc.width)
        self.blocks = nn.ModuleList(
            [_Block(desc.width, desc.heads, b, lvl)
             for b, lvl in enumerate(desc.levels)])
        h, w = desc.hw
        self.pos = nn.Parameter(torch.zeros(h * w, desc.width))
        self.frame_pos = nn.Parameter(torch.zeros(desc.frames, desc.width))

    def _time_features(self, t: float) -> torch.Tensor:
        freqs = torch.arange(4, dtype=torch.float64)
        ang = t * torch.pow(10.0, freqs)
        return torch.cat([torch.sin(ang), torch.cos(ang)])

    def forward(self, z: torch.Tensor, t: float, prompt_vec: torch.Tensor):
        f, c, h, w = z.shape
        x = z.reshape(f, c, h * w).transpose(1, 2)          # (f, n, c)
        x = self.proj_in(x) + self.pos
        x = x + self.frame_pos[:, None, :]
        x = x + prompt_vec + self.time(self._time_features(t))
        grid = (h, w)
        level = 0
        for block in self.blocks:       # blocks run finest-first; pooling is lazy
            while level < block.level:
                x, grid = _pool_tokens(x, grid)
                level += 1
            while level > block.level:
                x, grid = _unpool_tokens(x, grid)
                level -= 1
            x = block(x)
        while level > 0:
            x, grid = _unpool_tokens(x, grid)
            level -= 1
        return self.proj_out(x).transpose(1, 2).reshape(f, c, h, w)


def _pool_tokens(x: torch.Tensor, grid: tuple):
    f, n, width = x.shape
    h, w = grid
    img = x.transpose(1, 2).reshape(f, width, h, w)
    img = F.avg_pool2d(img, 2)
    return img.reshape(f, width, (h // 2) * (w // 2)).transpose(1, 2), (h // 2, w // 2)


def _unpool_tokens(x: torch.Tensor, grid: tuple):
    f, n, width = x.shape
    h, w = grid
    img = x.transpose(1, 2).reshape(f, width, h, w)
    img = img.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
    return img.reshape(f, width, 4 * h * w).transpose(1, 2), (2 * h, 2 * w)


def build_model(desc: ModelDesc, seed: int = 0) -> TinyT2V:
    model = TinyT2V(desc).double()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for param in model.parameters():
            fan = param.shape[-1] if param.ndim > 1 else param.numel()
            param.copy_(torch.randn(param.shape, generator=gen,
                                    dtype=torch.float64) / math.sqrt(max(fan, 1)))
    model.eval()
    return model


def embed_prompt(prompt: str, width: int, seed: int = 0) -> torch.Tensor:
    """Hash-bucket bag-of-words embedding, stable across runs and machines."""
    gen = torch.Generator().manual_seed(seed ^ 0x5EED)
    table = torch.randn(512, width, generator=gen, dtype=torch.float64) * 0.1
    words = prompt.lower().split() or ["<null>"]
    rows = []
    for word in words:
        digest = hashlib.sha256(word.encode("utf-8")).digest()
        rows.append(table[int.from_bytes(digest[:4], "little") % 512])
    return torch.stack(rows).mean(dim=0)


def seeded_latent(desc: ModelDesc, seed: int = 0) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed ^ 0x1A7E)
    return torch.randn(desc.frames, desc.channels, *desc.hw,
                       generator=gen, dtype=torch.float64)
