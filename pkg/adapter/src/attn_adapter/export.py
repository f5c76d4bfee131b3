"""Capture attention maps from a zoo model and emit STRM fixture bundles.

One export produces, under the output directory, a `step{t}/` bundle per
requested timestep — each a self-contained attention-record directory the
scoring package can consume directly — plus a top-level manifest naming the
model, prompt, timesteps, and every map file with its shape.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .errors import ExportError, InputError, UsageError
from .models import (MapAttention, build_model, embed_prompt, resolve_model,
                     seeded_latent)
from .strm import read_manifest, read_tensor, write_manifest, write_tensor

ROW_SUM_TOL = 1e-3


@dataclass
class FixtureManifest:
    model: str
    prompt: str
    steps: list
    blocks: list
    seed: int
    files: dict = field(default_factory=dict)   # relative path -> shape tuple

    def as_entries(self) -> dict:
        out = {
            "format": "attention-fixture",
            "model": self.model,
            "prompt": self.prompt,
            "steps": ",".join(str(s) for s in self.steps),
            "blocks": ",".join(str(b) for b in self.blocks),
            "seed": str(self.seed),
        }
        for rel, shape in sorted(self.files.items()):
            out[f"file.{rel}"] = ",".join(str(x) for x in shape)
        return out


def _capture_forward(model, z, t_norm, prompt_vec):
    """Run one denoise call with forward hooks on every attention module."""
    captured = []

    def hook(module, _inputs, _output):
        captured.append((module.block, module.level, module.kind,
                         module.last_maps))

    handles = [m.register_forward_hook(hook) for m in model.modules()
               if isinstance(m, MapAttention)]
    try:
        with torch.no_grad():
            model(z, t_norm, prompt_vec)
    finally:
        for h in handles:
            h.remove()
    return captured


def _renormalized(maps: torch.Tensor) -> np.ndarray:
    arr = maps.numpy().astype(np.float64)
    sums = arr.sum(axis=-1, keepdims=True)
    if np.any(sums <= 0) or not np.all(np.isfinite(arr)):
        raise ExportError("captured map has non-finite or non-positive rows")
    return arr / sums


def export_attention(model_id: str, video_path, prompt: str,
                     timesteps: Sequence[int], out_dir, *,
                     blocks: Optional[Sequence[int]] = None,
                     seed: int = 0) -> FixtureManifest:
    desc = resolve_model(model_id)
    model = build_model(desc, seed=seed)

    if video_path is None:
        z = seeded_latent(desc, seed=seed)
    else:
        arr = read_tensor(video_path)
        want = (desc.frames, desc.channels, *desc.hw)
        if tuple(arr.shape) != want:
            raise InputError(
                f"video {video_path} has shape {tuple(arr.shape)}, but "
                f"{model_id} wants {want} (frames, channels, h, w)")
        z = torch.from_numpy(arr.astype(np.float64))

    if blocks is None:
        # skip the finest-resolution maps, which are the bulk of the volume
        blocks = [b for b, lvl in enumerate(desc.levels) if lvl > 0]
    blocks = sorted(set(int(b) for b in blocks))
    bad = [b for b in blocks if b < 0 or b >= len(desc.levels)]
    if bad:
        raise UsageError(f"{model_id} has no block {bad[0]}; "
                         f"valid ids: 0..{len(desc.levels) - 1}")
    if not blocks:
        raise UsageError("no blocks selected for export")

    timesteps = [int(t) for t in timesteps]
    if not timesteps:
        raise UsageError("no timesteps requested")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prompt_vec = embed_prompt(prompt, desc.width, seed=seed)
    manifest = FixtureManifest(model=model_id, prompt=prompt, steps=timesteps,
                               blocks=blocks, seed=seed)

    for t in timesteps:
        captured = _capture_forward(model, z, t / 1000.0, prompt_vec)
        by_block = {}
        for block, level, kind, maps in captured:
            by_block.setdefault(block, {})[kind] = (level, _renormalized(maps))
        step_dir = out / f"step{t}"
        step_dir.mkdir(exist_ok=True)
        entries = {
            "format": "attention-record",
            "blocks": ",".join(str(b) for b in blocks),
            "meta.model": model_id,
            "meta.prompt": prompt,
            "meta.step": str(t),
            "meta.seed": str(seed),
        }
        for b in blocks:
            level, self_map = by_block[b]["self"]
            _, temporal_map = by_block[b]["temporal"]
            f, h, n, n2 = self_map.shape
            if n != n2 or temporal_map.shape != (n, h, f, f):
                raise ExportError(
                    f"block {b} maps disagree: self {self_map.shape}, "
                    f"temporal {temporal_map.shape}")
            entries[f"level.{b}"] = str(level)
            for name, value in ((f"self_b{b}.strm", self_map),
                                (f"temporal_b{b}.strm", temporal_map)):
                write_tensor(step_dir / name, value)
                manifest.files[f"step{t}/{name}"] = value.shape
        write_manifest(step_dir / "manifest.txt", entries)
        write_tensor(step_dir / "latent.strm", z.numpy())
        manifest.files[f"step{t}/latent.strm"] = tuple(z.shape)

    write_manifest(out / "manifest.txt", manifest.as_entries())
    return manifest


# ---------------------------------------------------------------------------
# fixture validation
# ---------------------------------------------------------------------------

@dataclass
class ValidationReport:
    problems: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems

    def __bool__(self) -> bool:
        return self.ok

    def summary(self) -> str:
        return "OK" if self.ok else "\n".join(self.problems)


def validate_fixture(fixture_dir) -> ValidationReport:
    """Re-read every file of an exported fixture and check the contracts.

    The report lists each violation (missing file, unreadable tensor, shape
    or stochasticity breach) by name; an empty problem list means the
    fixture is usable as scoring input.
    """
    report = ValidationReport()
    root = Path(fixture_dir)
    try:
        top = read_manifest(root / "manifest.txt")
    except InputError as err:
        report.problems.append(str(err))
        return report
    if top.get("format") != "attention-fixture":
        report.problems.append(
            f"{root}: format is {top.get('format')!r}, not attention-fixture")
        return report

    for rel, shape_text in ((k[len("file."):], v) for k, v in top.items()
                            if k.startswith("file.")):
        want = tuple(int(x) for x in shape_text.split(","))
        try:
            arr = read_tensor(root / rel)
        except InputError as err:
            report.problems.append(f"{rel}: {err}")
            continue
        if tuple(arr.shape) != want:
            axes = [i for i, (a, b) in enumerate(zip(arr.shape, want)) if a != b]
            report.problems.append(
                f"{rel}: shape {tuple(arr.shape)} != manifest {want} "
                f"(axis {axes[0] if axes else 'rank'})")

    for step in (s.strip() for s in top.get("steps", "").split(",") if s.strip()):
        step_dir = root / f"step{step}"
        try:
            bundle = read_manifest(step_dir / "manifest.txt")
        except InputError as err:
            report.problems.append(str(err))
            continue
        for b in (int(x) for x in bundle.get("blocks", "").split(",") if x.strip()):
            shapes = {}
            for kind, fname in (("self", f"self_b{b}.strm"),
                                ("temporal", f"temporal_b{b}.strm")):
                try:
                    arr = read_tensor(step_dir / fname)
                except InputError as err:
                    report.problems.append(f"step{step}/{fname}: {err}")
                    continue
                shapes[kind] = arr.shape
                if np.any(arr < 0):
                    report.problems.append(
                        f"step{step}/{fname}: negative attention weights")
                err_sum = float(np.abs(arr.sum(axis=-1) - 1.0).max())
                if err_sum > ROW_SUM_TOL:
                    report.problems.append(
                        f"step{step}/{fname}: rows sum to 1 off by {err_sum:.2e}")
            if len(shapes) == 2:
                f, h, n, n2 = shapes["self"]
                if n != n2:
                    report.problems.append(
                        f"step{step}/self_b{b}.strm: last two axes differ "
                        f"({n} vs {n2})")
                elif shapes["temporal"] != (n, h, f, f):
                    report.problems.append(
                        f"step{step}/temporal_b{b}.strm: shape "
                        f"{shapes['temporal']} does not pair with self map "
                        f"{shapes['self']} (want {(n, h, f, f)})")
    return report
