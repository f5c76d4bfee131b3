"""Command-line front end: corpus generation, training, inversion, editing,
scoring, cost reporting, and comparison tables.

Run configuration lives in plain `key=value` files (see `--help` for the
key list and defaults); command-line flags override file values.  Exit
codes are stable: 0 success, 2 configuration problems, 3 unreadable or
malformed inputs, 4 numerically degenerate inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputError, StrMatchError
from .formats import (CorpusSpec, encode_video, decode_video, gen_corpus,
                      load_attention_record, load_checkpoint, load_corpus,
                      load_pixel_mask, load_trajectory, read_tensor,
                      save_checkpoint, save_corpus, save_trajectory,
                      write_tensor)
from .metrics import (block_match_flow, masked_bg_distance,
                      masked_fg_distance, motion_error)
from .model import TrainConfig, train_toy_denoiser
from .pipeline import EditConfig, edit
from .relevance import Neighborhood, cost_report, str_score
from .solver import invert, make_schedule
from .tensor import PROFILES, set_profile

# run-config keys: name -> (parser, default, help)
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {options}, got {text!r}")
        return text
    return parse


CONFIG_KEYS = {
    "lambda": (float, 0.01, "latent step size of the matching objective"),
    "T": (int, 50, "solver steps"),
    "cfg_scale": (float, 7.5, "guidance scale during generation"),
    "cfg_scale_inv": (float, 1.0, "guidance scale during inversion"),
    "radius": (int, 1, "temporal neighborhood radius"),
    "include_self": (_parse_bool, False, "count a frame as its own neighbor"),
    "opt_steps_per_t": (int, 1, "latent updates per solver step"),
    "use_mask": (_parse_bool, False, "restore the source outside the mask"),
    "dilate_radius": (int, 1, "mask dilation radius on the latent grid"),
    "objective": (_choice("str_cosine", "concat_l2"), "str_cosine",
                  "matching objective"),
    "baseline_lambda": (float, 0.08, "step size of the concat-L2 ablation"),
    "seed": (int, 0, "run seed"),
    "schedule": (_choice("linear-beta", "cosine"), "linear-beta",
                 "noise schedule"),
}

_FIELD_FOR_KEY = {"lambda": "lambda_str"}   # config-file name -> dataclass field


def load_run_config(path) -> dict:
    """Parse a key=value run configuration, returning raw typed values."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise InputError(f"no such config file: {path}") from None
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}: line {lineno}: not a key=value entry: {line!r}")
        key, raw = stripped.split("=", 1)
        key, raw = key.strip(), raw.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}: line {lineno}: unknown key {key!r}")
        parse = CONFIG_KEYS[key][0]
        try:
            values[key] = parse(raw)
        except ValueError as err:
            raise ConfigError(
                f"{path}: line {lineno}: bad value for {key!r}: {err}") from None
    return values


def resolve_config(args) -> tuple:
    """EditConfig plus the schedule kind, from file defaults and flag overrides."""
    values = {k: default for k, (_, default, _) in CONFIG_KEYS.items()}
    if getattr(args, "config", None):
        values.update(load_run_config(args.config))
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "T", None) is not None:
        values["T"] = args.T
    schedule = values.pop("schedule")
    fields = {_FIELD_FOR_KEY.get(k, k): v for k, v in values.items()}
    return EditConfig(**fields), schedule


def _config_epilog() -> str:
    lines = ["run-config keys (key=value per line, # for comments):"]
    for key, (_, default, help_text) in CONFIG_KEYS.items():
        lines.append(f"  {key:<16} {help_text} (default {default})")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_corpus(args) -> int:
    spec = CorpusSpec(clips=args.clips, frames=args.frames,
                      seed=args.seed if args.seed is not None else 0)
    clips = gen_corpus(spec)
    save_corpus(args.out, clips)
    print(f"wrote {len(clips)} clips to {args.out}")
    for i, clip in enumerate(clips):
        print(f"  clip{i}: {clip.src_prompt!r} -> {clip.tgt_prompt!r}")
    return 0


def cmd_train(args) -> int:
    clips = load_corpus(args.corpus)
    pairs = [(encode_video(c.video), c.src_prompt) for c in clips]
    log: list = []
    weights = train_toy_denoiser(
        pairs, TrainConfig(steps=args.steps),
        seed=args.seed if args.seed is not None else 0, loss_log=log)
    save_checkpoint(args.out, weights)
    print(f"trained {args.steps} steps on {len(pairs)} clips; "
          f"loss {log[0]:.4f} -> {log[-1]:.4f}")
    print(f"checkpoint at {args.out}")
    return 0


def cmd_invert(args) -> int:
    cfg, schedule = resolve_config(args)
    weights = load_checkpoint(args.ckpt)
    video = read_tensor(args.video)
    latent = encode_video(video)
    sched = make_schedule(T=cfg.T, kind=schedule)
    traj = invert(latent, args.prompt, weights, sched,
                  cfg_scale_inv=cfg.cfg_scale_inv,
                  neighborhood=cfg.neighborhood())
    save_trajectory(args.out, traj)
    print(f"inverted {latent.shape[0]} frames over T={cfg.T}; "
          f"trajectory at {args.out}")
    return 0


def _write_pgm(path, frame: np.ndarray) -> None:
    """ASCII (P2) grayscale preview of one latent-decoded frame."""
    gray = frame.mean(axis=0)
    level = np.clip((gray + 1.0) * 127.5, 0, 255).astype(int)
    rows = "\n".join(" ".join(str(v) for v in row) for row in level)
    Path(path).write_text(f"P2\n{level.shape[1]} {level.shape[0]}\n255\n{rows}\n")


def cmd_edit(args) -> int:
    cfg, _ = resolve_config(args)
    weights = load_checkpoint(args.ckpt)
    traj = load_trajectory(args.traj)
    mask = None
    if args.mask:
        mask = load_pixel_mask(args.mask, latent_hw=traj.z_terminal.shape[-2:])
        cfg = dataclasses.replace(cfg, use_mask=True)
    result = edit(traj, args.prompt, weights, cfg, mask=mask)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "latents.strm", result.latents)
    decoded = decode_video(result.latents)
    write_tensor(out / "video.strm", decoded)
    with open(out / "loss_log.txt", "w") as fh:
        for step in result.steps:
            losses = ",".join(f"{v:.6f}" for v in step["losses"]) or "-"
            fh.write(f"t={step['t']} loss={losses}\n")
    for idx in range(decoded.shape[0]):
        _write_pgm(out / f"preview_f{idx}.pgm", decoded[idx])
    print(f"edited under {args.prompt!r}; outputs in {out}")
    return 0


def cmd_score(args) -> int:
    record = load_attention_record(args.record)
    record.validate(tol=args.tol)
    nbhd = Neighborhood(radius=args.radius, include_self=args.include_self)
    omega = str_score(record, nbhd)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for b in omega.blocks():
        arr = omega[b].data
        write_tensor(out / f"omega_b{b}.strm", arr)
        print(f"block {b}: shape {arr.shape} min={arr.min():.6g} "
              f"max={arr.max():.6g}")
    print(f"scores in {out}")
    return 0


def cmd_bench(args) -> int:
    report = cost_report(args.frames, args.tokens, args.heads,
                         Neighborhood(radius=args.radius))
    for key, val in report.items():
        if isinstance(val, float):
            print(f"{key}={val:.4f}")
        else:
            print(f"{key}={val}")
    return 0


def cmd_eval(args) -> int:
    src = read_tensor(args.src)
    edited = read_tensor(args.edit)
    me = motion_error(block_match_flow(src), block_match_flow(edited))
    print(f"ME={me:.6f}")
    if args.mask:
        mask = read_tensor(args.mask)
        print(f"BL={masked_bg_distance(src, edited, mask):.6f}")
        print(f"FG={masked_fg_distance(src, edited, mask):.6f}")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="strmatch",
        description="Training-free prompt-driven editing of toy latent videos.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--profile", choices=sorted(PROFILES),
                        help="numeric profile (falls back to $STRMATCH_PROFILE)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value run configuration file")
        p.add_argument("--seed", type=int, help="override the run seed")

    p = sub.add_parser("gen-corpus", help="render the synthetic clip corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--frames", type=int, default=8)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("train", help="fit the toy denoiser on a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("invert", help="invert a pixel video into a trajectory")
    p.add_argument("--video", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--T", type=int)
    common(p)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("edit", help="edit an inverted trajectory under a prompt")
    p.add_argument("--traj", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mask", help="u8 pixel-mask tensor file")
    p.add_argument("--T", type=int)
    common(p)
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("score",
                       help="relevance scores from an attention-record bundle")
    p.add_argument("--record", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--include-self", action="store_true")
    p.add_argument("--tol", type=float, default=1e-3,
                   help="row-stochasticity tolerance for ingested maps")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("bench", help="cost model of the factorized score")
    p.add_argument("frames", type=int)
    p.add_argument("tokens", type=int)
    p.add_argument("heads", type=int)
    p.add_argument("radius", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="motion / preservation metrics of an edit")
    p.add_argument("--src", required=True)
    p.add_argument("--edit", required=True)
    p.add_argument("--mask")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    profile = args.profile or os.environ.get("STRMATCH_PROFILE") or "test"
    try:
        if profile not in PROFILES:
            raise ConfigError(
                f"unknown profile {profile!r}, pick one of {sorted(PROFILES)}")
        set_profile(profile)
        return args.func(args)
    except StrMatchError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
