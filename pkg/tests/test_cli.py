"""Command-line behavior: parsing, exit codes, end-to-end runs."""

import numpy as np
import pytest

from strmatch.cli import CONFIG_KEYS, build_parser, main, resolve_config
from strmatch.formats import (CorpusSpec, gen_corpus, load_attention_record,
                              load_checkpoint, read_tensor,
                              save_attention_record, write_tensor)
from strmatch.model import denoise, embed_prompt
from strmatch.relevance import Neighborhood, str_score
from strmatch.tensor import get_profile, set_profile

from helpers import small_weights


@pytest.fixture(autouse=True)
def restore_profile():
    yield
    set_profile("test")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A corpus and a briefly trained checkpoint shared by the slow tests."""
    root = tmp_path_factory.mktemp("cliwork")
    assert main(["gen-corpus", "--out", str(root / "corpus"),
                 "--clips", "2", "--frames", "4", "--seed", "5"]) == 0
    assert main(["train", "--corpus", str(root / "corpus"),
                 "--out", str(root / "ckpt"), "--steps", "2", "--seed", "1"]) == 0
    cfg = root / "run.cfg"
    cfg.write_text("# small run\nT=3\nlambda=0.005\ncfg_scale=1.5\n")
    return root


# ---------------------------------------------------------------------------
# parsing and help
# ---------------------------------------------------------------------------

class TestParsing:

    def test_help_lists_config_keys_with_defaults(self, capsys):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "lambda" in out and "(default 0.01)" in out
        assert "T" in out and "(default 50)" in out
        assert "cfg_scale" in out and "(default 7.5)" in out

    def test_all_subcommands_registered(self, capsys):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["--help"])
        out = capsys.readouterr().out
        for name in ("gen-corpus", "train", "invert", "edit",
                     "score", "bench", "eval"):
            assert name in out

    def test_defaults_match_key_table(self):
        class Args:
            config = None
            seed = None
            T = None
        cfg, schedule = resolve_config(Args())
        assert cfg.lambda_str == CONFIG_KEYS["lambda"][1]
        assert cfg.T == 50 and cfg.cfg_scale == 7.5
        assert schedule == "linear-beta"

    def test_flag_overrides_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed=3\nT=10\n")

        class Args:
            config = str(p)
            seed = 9
            T = None
        cfg, _ = resolve_config(Args())
        assert cfg.seed == 9 and cfg.T == 10


class TestConfigFileErrors:

    def run_edit_with(self, tmp_path, text):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(text)
        return main(["edit", "--traj", str(tmp_path / "t"),
                     "--ckpt", str(tmp_path / "c"), "--prompt", "x",
                     "--out", str(tmp_path / "o"), "--config", str(cfg)])

    def test_unparseable_value_cites_line(self, tmp_path, capsys):
        assert self.run_edit_with(tmp_path, "lambda==\n") == 2
        err = capsys.readouterr().err
        assert "line 1" in err and "lambda" in err

    def test_unknown_key_cites_line(self, tmp_path, capsys):
        assert self.run_edit_with(tmp_path, "T=5\nturbo=1\n") == 2
        assert "line 2" in capsys.readouterr().err

    def test_line_without_equals(self, tmp_path, capsys):
        assert self.run_edit_with(tmp_path, "just words\n") == 2
        assert "key=value" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["edit", "--traj", "t", "--ckpt", "c", "--prompt", "x",
                   "--out", "o", "--config", str(tmp_path / "absent.cfg")])
        assert rc == 3
        assert "config" in capsys.readouterr().err


class TestProfiles:

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("STRMATCH_PROFILE", "fast")
        assert main(["bench", "2", "4", "1", "1"]) == 0
        assert get_profile() == "fast"

    def test_flag_beats_env(self, monkeypatch):
        monkeypatch.setenv("STRMATCH_PROFILE", "fast")
        assert main(["--profile", "test", "bench", "2", "4", "1", "1"]) == 0
        assert get_profile() == "test"

    def test_unknown_env_profile(self, monkeypatch, capsys):
        monkeypatch.setenv("STRMATCH_PROFILE", "warp")
        assert main(["bench", "2", "4", "1", "1"]) == 2
        assert "profile" in capsys.readouterr().err

    def test_unknown_flag_profile_rejected_by_parser(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--profile", "warp", "bench", "2", "4", "1", "1"])
        assert exc.value.code == 2


# ---------------------------------------------------------------------------
# bench / eval / score
# ---------------------------------------------------------------------------

class TestBench:

    def test_prints_memory_ratio(self, capsys):
        assert main(["bench", "16", "1024", "1", "1"]) == 0
        out = capsys.readouterr().out
        line = next(l for l in out.splitlines() if l.startswith("mem_ratio="))
        assert float(line.split("=")[1]) == pytest.approx(16384 / 1040, abs=1e-3)

    def test_reports_all_counters(self, capsys):
        assert main(["bench", "4", "16", "2", "2"]) == 0
        out = capsys.readouterr().out
        for key in ("factorized_mults", "factorized_mem", "full3d_mem"):
            assert key in out


class TestScore:

    @pytest.fixture()
    def record_dir(self, tmp_path):
        rng = np.random.default_rng(3)
        w = small_weights(0)
        z = rng.normal(size=(3, 3, 4, 4))
        _, record = denoise(z, 0.5, embed_prompt("a red square", w), w)
        save_attention_record(tmp_path / "rec", record.detached(),
                              meta={"timestep": "0.5"})
        return tmp_path / "rec"

    def test_emits_nonnegative_scores(self, record_dir, tmp_path, capsys):
        out = tmp_path / "omega"
        assert main(["score", "--record", str(record_dir),
                     "--out", str(out)]) == 0
        files = sorted(out.glob("omega_b*.strm"))
        assert files
        for f in files:
            arr = read_tensor(f)
            assert arr.ndim == 4
            assert arr.min() >= 0.0
        assert "min=" in capsys.readouterr().out

    def test_matches_library_scores(self, record_dir, tmp_path):
        out = tmp_path / "omega"
        assert main(["score", "--record", str(record_dir),
                     "--out", str(out)]) == 0
        record = load_attention_record(record_dir)
        want = str_score(record, Neighborhood(radius=1))
        for b in want.blocks():
            got = read_tensor(out / f"omega_b{b}.strm")
            assert np.array_equal(got, want[b].data)

    def test_non_stochastic_maps_rejected(self, record_dir, tmp_path, capsys):
        bad = read_tensor(record_dir / "self_b1.strm") * 2.0
        write_tensor(record_dir / "self_b1.strm", bad)
        assert main(["score", "--record", str(record_dir),
                     "--out", str(tmp_path / "omega")]) == 3
        assert "deviate" in capsys.readouterr().err

    def test_missing_record(self, tmp_path):
        assert main(["score", "--record", str(tmp_path / "none"),
                     "--out", str(tmp_path / "o")]) == 3


class TestEval:

    @pytest.fixture()
    def clipfiles(self, tmp_path):
        clip = gen_corpus(CorpusSpec(clips=1, frames=4, seed=2))[0]
        src = tmp_path / "src.strm"
        write_tensor(src, clip.video)
        mask = tmp_path / "mask.strm"
        write_tensor(mask, clip.mask)
        return src, mask, clip

    def test_identical_videos_score_zero_motion(self, tmp_path, clipfiles, capsys):
        src, mask, _ = clipfiles
        assert main(["eval", "--src", str(src), "--edit", str(src),
                     "--mask", str(mask)]) == 0
        out = capsys.readouterr().out
        assert "ME=0.000000" in out
        assert "BL=0.000000" in out
        assert "FG=0.000000" in out

    def test_shifted_video_scores_nonzero(self, tmp_path, clipfiles, capsys):
        src, _, clip = clipfiles
        edited = tmp_path / "edit.strm"
        write_tensor(edited, np.roll(clip.video, 1, axis=0))
        assert main(["eval", "--src", str(src), "--edit", str(edited)]) == 0
        me = float(capsys.readouterr().out.split("ME=")[1].split()[0])
        assert me > 0

    def test_single_frame_video_is_degenerate(self, tmp_path, capsys):
        p = tmp_path / "one.strm"
        write_tensor(p, np.zeros((1, 3, 8, 8)))
        assert main(["eval", "--src", str(p), "--edit", str(p)]) == 4
        assert "frames" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["eval", "--src", str(tmp_path / "a.strm"),
                     "--edit", str(tmp_path / "b.strm")]) == 3


# ---------------------------------------------------------------------------
# corpus / train / invert / edit round trip
# ---------------------------------------------------------------------------

class TestGenCorpus:

    def test_writes_readable_clips(self, workdir, capsys):
        video = read_tensor(workdir / "corpus" / "clip0_video.strm")
        mask = read_tensor(workdir / "corpus" / "clip0_mask.strm")
        assert video.shape == (4, 3, 32, 32)
        assert mask.shape == (4, 32, 32)

    def test_seeded_runs_identical(self, tmp_path):
        for d in ("a", "b"):
            assert main(["gen-corpus", "--out", str(tmp_path / d),
                         "--clips", "1", "--seed", "7"]) == 0
        va = (tmp_path / "a" / "clip0_video.strm").read_bytes()
        vb = (tmp_path / "b" / "clip0_video.strm").read_bytes()
        assert va == vb


class TestTrain:

    def test_checkpoint_loads(self, workdir):
        w = load_checkpoint(workdir / "ckpt")
        assert w.config.base_hw == (16, 16)
        w.check_finite()

    def test_missing_corpus(self, tmp_path, capsys):
        assert main(["train", "--corpus", str(tmp_path / "none"),
                     "--out", str(tmp_path / "ckpt")]) == 3


class TestInvertEdit:

    def test_full_round_trip(self, workdir, capsys):
        rc = main(["invert", "--video", str(workdir / "corpus" / "clip0_video.strm"),
                   "--prompt", "a red square drifts right",
                   "--ckpt", str(workdir / "ckpt"),
                   "--out", str(workdir / "traj"),
                   "--config", str(workdir / "run.cfg")])
        assert rc == 0

        rc = main(["edit", "--traj", str(workdir / "traj"),
                   "--ckpt", str(workdir / "ckpt"),
                   "--prompt", "a blue square drifts right",
                   "--out", str(workdir / "edited"),
                   "--config", str(workdir / "run.cfg")])
        assert rc == 0

        latents = read_tensor(workdir / "edited" / "latents.strm")
        video = read_tensor(workdir / "edited" / "video.strm")
        assert latents.shape == (4, 3, 16, 16)
        assert video.shape == (4, 3, 32, 32)
        log = (workdir / "edited" / "loss_log.txt").read_text()
        assert "t=3" in log and "t=1" in log
        pgm = (workdir / "edited" / "preview_f0.pgm").read_text()
        assert pgm.startswith("P2\n32 32\n255\n")
        levels = [int(v) for v in pgm.split("\n", 3)[3].split()]
        assert len(levels) == 32 * 32
        assert all(0 <= v <= 255 for v in levels)

    def test_edit_with_mask(self, workdir):
        mask_path = workdir / "pixmask.strm"
        mask = read_tensor(workdir / "corpus" / "clip0_mask.strm")
        write_tensor(mask_path, (mask * 255).astype(np.uint8))
        rc = main(["edit", "--traj", str(workdir / "traj"),
                   "--ckpt", str(workdir / "ckpt"),
                   "--prompt", "a blue square drifts right",
                   "--out", str(workdir / "edited_masked"),
                   "--mask", str(mask_path),
                   "--config", str(workdir / "run.cfg")])
        assert rc == 0
        masked = read_tensor(workdir / "edited_masked" / "latents.strm")
        plain = read_tensor(workdir / "edited" / "latents.strm")
        assert not np.array_equal(masked, plain)

    def test_t_mismatch_is_config_error(self, workdir, capsys):
        rc = main(["edit", "--traj", str(workdir / "traj"),
                   "--ckpt", str(workdir / "ckpt"),
                   "--prompt", "a blue square drifts right",
                   "--out", str(workdir / "bad"), "--T", "9"])
        assert rc == 2
        assert "T=9" in capsys.readouterr().err

    def test_missing_trajectory(self, workdir, capsys):
        rc = main(["edit", "--traj", str(workdir / "nowhere"),
                   "--ckpt", str(workdir / "ckpt"),
                   "--prompt", "x", "--out", str(workdir / "bad2"), "--T", "3"])
        assert rc == 3

    def test_missing_video(self, workdir, capsys):
        rc = main(["invert", "--video", str(workdir / "ghost.strm"),
                   "--prompt", "x", "--ckpt", str(workdir / "ckpt"),
                   "--out", str(workdir / "bad3")])
        assert rc == 3
