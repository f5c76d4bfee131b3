"""Bit-exact tensor files, bundle manifests, and the synthetic video corpus.

The STRM container is deliberately minimal so independent tools can emit it:

    magic "STRM" | version u32 LE | dtype u8 | ndim u8 | extents ndim x u32 LE
    | payload, row-major, little-endian

dtype codes: 0 = float32, 1 = float64, 2 = uint8.  Bundles (checkpoints,
trajectories, corpora) are directories of one tensor per file plus a plain
`key=value` manifest; `#` starts a comment line.

The corpus generator renders textured shapes drifting over a static
textured background — texture is what gives block matching something to
lock onto — with exact per-frame footprint masks and prompt pairs drawn
from the model vocabulary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, FormatError, InputError, ShapeError
from .model import DenoiserWeights, ModelConfig

STRM_MAGIC = b"STRM"
STRM_VERSION = 1

_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_DTYPE_TO_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1,
                  np.dtype(np.uint8): 2}


# ---------------------------------------------------------------------------
# STRM tensor container
# ---------------------------------------------------------------------------

def write_tensor(path, value) -> None:
    """Serialize an array (or anything with `.data`) to an STRM file."""
    arr = np.ascontiguousarray(getattr(value, "data", value))
    code = _DTYPE_TO_CODE.get(arr.dtype)
    if code is None:
        raise ConfigError(f"unsupported dtype {arr.dtype} for STRM (f32/f64/u8 only)")
    if arr.ndim > 255 or any(e > 0xFFFFFFFF for e in arr.shape):
        raise ConfigError(f"shape {arr.shape} does not fit STRM extents")
    le = arr.astype(_CODE_TO_DTYPE[code], copy=False)
    header = STRM_MAGIC + struct.pack("<I", STRM_VERSION)
    header += struct.pack("<BB", code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + le.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read an STRM file back into a native-order numpy array."""
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise InputError(f"no such tensor file: {path}") from None

    def need(count: int, offset: int, what: str) -> None:
        if len(raw) < offset + count:
            raise FormatError(
                f"truncated {what}: expected {offset + count} bytes, file has {len(raw)}",
                offset=len(raw))

    need(4, 0, "magic")
    if raw[:4] != STRM_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}, expected {STRM_MAGIC!r}", offset=0)
    need(4, 4, "version field")
    version = struct.unpack_from("<I", raw, 4)[0]
    if version != STRM_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    need(2, 8, "dtype/ndim fields")
    code, ndim = struct.unpack_from("<BB", raw, 8)
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"unknown dtype code {code}", offset=8)
    need(4 * ndim, 10, "extents")
    shape = struct.unpack_from(f"<{ndim}I", raw, 10)
    start = 10 + 4 * ndim
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    expected = start + count * dtype.itemsize
    if len(raw) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, file has {len(raw)}",
            offset=len(raw))
    if len(raw) > expected:
        raise FormatError(
            f"trailing bytes: expected {expected} bytes, file has {len(raw)}",
            offset=expected)
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=start).reshape(shape)
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def write_manifest(path, entries: dict) -> None:
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> dict:
    out: dict = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"no such manifest: {path}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"line {lineno}: not a key=value entry: {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if not key:
            raise FormatError(f"line {lineno}: empty key in {line!r}")
        out[key] = value.strip()
    return out


# ---------------------------------------------------------------------------
# weight checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(dirpath, weights: DenoiserWeights) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    cfg = weights.config
    manifest = {
        "format": "denoiser-checkpoint",
        "config.width": cfg.width,
        "config.heads": cfg.heads,
        "config.channels": cfg.channels,
        "config.levels": ",".join(str(l) for l in cfg.levels),
        "config.base_hw": f"{cfg.base_hw[0]},{cfg.base_hw[1]}",
        "config.time_features": cfg.time_features,
        "config.mlp_ratio": cfg.mlp_ratio,
    }
    if cfg.str_blocks is not None:
        manifest["config.str_blocks"] = ",".join(str(b) for b in cfg.str_blocks)
    for name, arr in weights.params.items():
        manifest[f"param.{name}"] = ",".join(str(s) for s in arr.shape)
        write_tensor(d / f"{name}.strm", arr)
    write_manifest(d / "manifest.txt", manifest)


def load_checkpoint(dirpath) -> DenoiserWeights:
    d = Path(dirpath)
    mpath = d / "manifest.txt"
    if not mpath.exists():
        raise InputError(f"no checkpoint manifest at {mpath}")
    man = read_manifest(mpath)
    if man.get("format") != "denoiser-checkpoint":
        raise FormatError(f"{mpath}: not a checkpoint manifest")

    def ints(key):
        return tuple(int(x) for x in man[key].split(","))

    cfg = ModelConfig(
        width=int(man["config.width"]), heads=int(man["config.heads"]),
        channels=int(man["config.channels"]), levels=ints("config.levels"),
        base_hw=ints("config.base_hw"),
        time_features=int(man["config.time_features"]),
        mlp_ratio=int(man["config.mlp_ratio"]),
        str_blocks=ints("config.str_blocks") if "config.str_blocks" in man else None)
    params = {}
    for key, val in man.items():
        if not key.startswith("param."):
            continue
        name = key[len("param."):]
        fpath = d / f"{name}.strm"
        if not fpath.exists():
            raise InputError(f"checkpoint tensor missing: {fpath}")
        arr = read_tensor(fpath)
        want = tuple(int(x) for x in val.split(","))
        if arr.shape != want:
            raise ShapeError(f"{fpath}: shape {arr.shape} != manifest {want}")
        params[name] = arr
    return DenoiserWeights(cfg, params)


# ---------------------------------------------------------------------------
# trajectory bundles
# ---------------------------------------------------------------------------

def save_trajectory(dirpath, record) -> None:
    """Persist a TrajectoryRecord as one tensor file per stored array."""
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    blocks = sorted(record.entries[0].omega.blocks()) if record.entries else []
    manifest = {
        "format": "trajectory",
        "T": record.T,
        "timesteps": ",".join(str(e.t) for e in record.entries),
        "blocks": ",".join(str(b) for b in blocks),
        "has_eps": int(all(e.eps is not None for e in record.entries)),
    }
    for key, val in record.meta.items():
        manifest[f"meta.{key}"] = val
    write_tensor(d / "z_terminal.strm", record.z_terminal)
    for e in record.entries:
        write_tensor(d / f"z_t{e.t}.strm", e.z)
        if e.eps is not None:
            write_tensor(d / f"eps_t{e.t}.strm", e.eps)
        for b in e.omega.blocks():
            write_tensor(d / f"omega_t{e.t}_b{b}.strm", e.omega[b].data)
    write_manifest(d / "manifest.txt", manifest)


def load_trajectory(dirpath):
    from .relevance import STRScore
    from .solver import TrajectoryEntry, TrajectoryRecord
    from .tensor import tensor

    d = Path(dirpath)
    mpath = d / "manifest.txt"
    if not mpath.exists():
        raise InputError(f"no trajectory manifest at {mpath}")
    man = read_manifest(mpath)
    if man.get("format") != "trajectory":
        raise FormatError(f"{mpath}: not a trajectory manifest")
    ts = [int(x) for x in man["timesteps"].split(",")] if man["timesteps"] else []
    blocks = [int(x) for x in man["blocks"].split(",")] if man["blocks"] else []
    has_eps = man.get("has_eps") == "1"
    entries = []
    for t in ts:
        omega = STRScore(
            {b: tensor(read_tensor(d / f"omega_t{t}_b{b}.strm")) for b in blocks},
            timestep=t)
        entries.append(TrajectoryEntry(
            t=t, z=read_tensor(d / f"z_t{t}.strm"), omega=omega,
            eps=read_tensor(d / f"eps_t{t}.strm") if has_eps else None))
    meta = {k[len("meta."):]: v for k, v in man.items() if k.startswith("meta.")}
    return TrajectoryRecord(entries=entries,
                            z_terminal=read_tensor(d / "z_terminal.strm"),
                            T=int(man["T"]), meta=meta)


# ---------------------------------------------------------------------------
# attention-record bundles
# ---------------------------------------------------------------------------
#
# The exchange format for attention maps: one self/temporal tensor pair per
# block plus a manifest. Anything able to emit STRM files (including tools
# that never import this package) can hand records to the scoring pipeline.

def save_attention_record(dirpath, record, meta: Optional[dict] = None) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "attention-record",
                "blocks": ",".join(str(m.block) for m in record.maps)}
    for m in record.maps:
        manifest[f"level.{m.block}"] = m.level
        write_tensor(d / f"self_b{m.block}.strm", m.self_map)
        write_tensor(d / f"temporal_b{m.block}.strm", m.temporal_map)
    for key, val in (meta or {}).items():
        manifest[f"meta.{key}"] = val
    write_manifest(d / "manifest.txt", manifest)


def load_attention_record(dirpath):
    """Read an attention-record bundle back as a scoreable record."""
    from .model import AttentionBlockMaps, AttentionRecord
    from .tensor import tensor

    d = Path(dirpath)
    man = read_manifest(d / "manifest.txt")
    if man.get("format") != "attention-record":
        raise FormatError(f"{d}: not an attention-record bundle")
    if not man.get("blocks"):
        raise FormatError(f"{d}: bundle lists no blocks")
    maps = []
    for b in (int(x) for x in man["blocks"].split(",")):
        s = read_tensor(d / f"self_b{b}.strm")
        tm = read_tensor(d / f"temporal_b{b}.strm")
        if s.ndim != 4 or s.shape[2] != s.shape[3]:
            raise FormatError(f"self map of block {b} must be (f, h, n, n), got {s.shape}")
        f, h, n, _ = s.shape
        if tm.shape != (n, h, f, f):
            raise FormatError(
                f"temporal map of block {b} is {tm.shape}, expected {(n, h, f, f)}")
        maps.append(AttentionBlockMaps(
            block=b, level=int(man.get(f"level.{b}", 0)),
            self_map=tensor(s), temporal_map=tensor(tm)))
    return AttentionRecord(maps)


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------

_SHAPES = ("square", "circle", "diamond", "bar")
_COLORS = {
    "red": (0.9, -0.7, -0.7),
    "green": (-0.7, 0.9, -0.7),
    "blue": (-0.7, -0.7, 0.9),
    "yellow": (0.9, 0.9, -0.7),
    "white": (0.9, 0.9, 0.9),
    "dark": (-0.9, -0.9, -0.9),
}
_DIRECTIONS = {
    "right": (0, 1), "left": (0, -1), "down": (1, 0), "up": (-1, 0),
}


@dataclass(frozen=True)
class CorpusSpec:
    clips: int = 10
    frames: int = 8
    hw: tuple = (32, 32)
    seed: int = 0
    shape_size: int = 10
    # pixel grids must survive the encoder pool and the model's coarse level
    pool_factor: int = 4

    def __post_init__(self):
        if self.hw[0] % self.pool_factor or self.hw[1] % self.pool_factor:
            raise ConfigError(
                f"resolution {self.hw} not divisible by pooling factor {self.pool_factor}")
        if self.clips < 1 or self.frames < 2:
            raise ConfigError("corpus needs clips >= 1 and frames >= 2")


@dataclass
class Clip:
    video: np.ndarray        # (f, 3, H, W) float64 in [-1, 1]
    mask: np.ndarray         # (f, H, W) uint8 footprint
    src_prompt: str
    tgt_prompt: str
    meta: dict = field(default_factory=dict)


def _footprint(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    cy = cx = (size - 1) / 2.0
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= (size / 2.0) ** 2
    if shape == "diamond":
        return np.abs(yy - cy) + np.abs(xx - cx) <= size / 2.0
    if shape == "bar":
        return (yy >= size // 3) & (yy < size - size // 3)
    raise ConfigError(f"unknown shape {shape!r}")


def render_clip(spec: CorpusSpec, shape: str, color: str, direction: str,
                speed: int, rng) -> Clip:
    """One clip: a textured shape drifting at integer speed over a fixed
    textured background, with its exact footprint mask per frame."""
    f = spec.frames
    hh, ww = spec.hw
    size = spec.shape_size
    dy, dx = (0, 0) if direction == "still" else _DIRECTIONS[direction]
    dy, dx = dy * speed, dx * speed

    travel_y, travel_x = dy * (f - 1), dx * (f - 1)
    y0 = rng.integers(max(0, -travel_y), hh - size - max(0, travel_y) + 1)
    x0 = rng.integers(max(0, -travel_x), ww - size - max(0, travel_x) + 1)

    background = np.tanh(rng.normal(scale=0.35, size=(3, hh, ww))) * 0.5 - 0.1
    texture = rng.normal(scale=0.22, size=(size, size))
    foot = _footprint(shape, size)
    col = np.array(_COLORS[color])

    video = np.empty((f, 3, hh, ww))
    mask = np.zeros((f, hh, ww), dtype=np.uint8)
    for t in range(f):
        y, x = y0 + dy * t, x0 + dx * t
        frame = background.copy()
        patch = frame[:, y:y + size, x:x + size]
        patch[:, foot] = col[:, None] + texture[foot][None, :] * 0.7
        video[t] = np.clip(frame, -1.0, 1.0)
        mask[t, y:y + size, x:x + size] = foot

    if direction == "still":
        src = f"a {color} {shape} still"
    else:
        src = f"a {color} {shape} drifts {direction}"
    tgt_color = rng.choice([c for c in _COLORS if c != color])
    tgt = src.replace(color, tgt_color, 1)
    return Clip(video=video, mask=mask, src_prompt=src, tgt_prompt=tgt,
                meta={"shape": shape, "color": color, "direction": direction,
                      "speed": 0 if direction == "still" else speed,
                      "start": (int(y0), int(x0))})


def gen_corpus(spec: CorpusSpec) -> list:
    """Deterministic corpus of (video, mask, prompt pair) clips."""
    rng = np.random.default_rng(spec.seed)
    colors = list(_COLORS)
    clips = []
    for i in range(spec.clips):
        shape = _SHAPES[i % len(_SHAPES)]
        color = colors[int(rng.integers(len(colors)))]
        direction = ["right", "left", "down", "up", "still"][i % 5]
        speed = int(rng.integers(1, 3))
        clips.append(render_clip(spec, shape, color, direction, speed, rng))
    return clips


def save_corpus(dirpath, clips: Sequence[Clip]) -> None:
    d = Path(dirpath)
    d.mkdir(parents=True, exist_ok=True)
    manifest = {"format": "corpus", "clips": len(clips)}
    for i, clip in enumerate(clips):
        write_tensor(d / f"clip{i}_video.strm", clip.video)
        write_tensor(d / f"clip{i}_mask.strm", clip.mask)
        manifest[f"clip{i}.src"] = clip.src_prompt
        manifest[f"clip{i}.tgt"] = clip.tgt_prompt
    write_manifest(d / "manifest.txt", manifest)


def load_corpus(dirpath) -> list:
    d = Path(dirpath)
    man = read_manifest(d / "manifest.txt")
    if man.get("format") != "corpus":
        raise FormatError(f"{d}: not a corpus directory")
    clips = []
    for i in range(int(man["clips"])):
        clips.append(Clip(
            video=read_tensor(d / f"clip{i}_video.strm"),
            mask=read_tensor(d / f"clip{i}_mask.strm"),
            src_prompt=man[f"clip{i}.src"], tgt_prompt=man[f"clip{i}.tgt"]))
    return clips


# ---------------------------------------------------------------------------
# pixel <-> latent
# ---------------------------------------------------------------------------

def encode_video(video: np.ndarray) -> np.ndarray:
    """Pixel video -> latent: 2x2 average pool (the only lossy step)."""
    f, c, hh, ww = video.shape
    if hh % 2 or ww % 2:
        raise ShapeError(f"pixel resolution {(hh, ww)} must be even to encode")
    g = video.reshape(f, c, hh // 2, 2, ww // 2, 2)
    return g.mean(axis=(3, 5))


def decode_video(latent: np.ndarray) -> np.ndarray:
    """Latent -> pixel video: nearest-neighbor 2x upsample."""
    return latent.repeat(2, axis=-2).repeat(2, axis=-1)


def _nearest_indices(src: int, dst: int) -> np.ndarray:
    # top-left convention: latent cell (i) samples source pixel floor(i*src/dst)
    return (np.arange(dst) * src) // dst


def resample_mask(mask: np.ndarray, hw: tuple) -> np.ndarray:
    """Nearest-neighbor resize of a binary mask's trailing two axes."""
    ys = _nearest_indices(mask.shape[-2], hw[0])
    xs = _nearest_indices(mask.shape[-1], hw[1])
    return mask[..., ys[:, None], xs[None, :]]


def load_pixel_mask(path, latent_hw: tuple = (16, 16)) -> np.ndarray:
    """Read a u8 STRM mask, binarize {0,255}/{0,1}, resize to the latent grid."""
    arr = read_tensor(path)
    if arr.dtype != np.uint8:
        raise InputError(f"{path}: mask must be uint8, got {arr.dtype}")
    legal = (arr == 0) | (arr == 1) | (arr == 255)
    if not np.all(legal):
        raise InputError(
            f"{path}: mask has {int((~legal).sum())} non-binary values")
    binary = (arr > 0).astype(np.uint8)
    return resample_mask(binary, latent_hw)
