"""Command-line interface: exit codes, JSON output, file round trips."""

from __future__ import annotations

import json

import numpy as np
import pytest

from sgic import cli, corpus, raster

from conftest import CACHE_DIR


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory, toy_corpus):
    """Four corpus images on disk plus a config reusing cached weights."""
    root = tmp_path_factory.mktemp("cli")
    paths = corpus.write_corpus_files(toy_corpus[:4], root)
    cfg = {
        "dataset": str(paths["images"]),
        "describer_fixtures": str(paths["describer_fixtures"]),
        "text_overrides": str(paths["text_overrides"]),
        "denoiser_weights": str(CACHE_DIR / "toy_denoiser.sgtd"),
        "steps_model": str(CACHE_DIR / "steps_mlp.sgmc"),
        "cfg_model": str(CACHE_DIR / "cfg_mlp.sgmc"),
        "out_dir": str(root / "out"),
    }
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    return {"root": root, "config": str(cfg_path), "images": paths["images"]}


def _run(capsys, argv):
    code = cli.main(argv)
    captured = capsys.readouterr()
    out = json.loads(captured.out) if captured.out.strip() else None
    err = json.loads(captured.err) if captured.err.strip() else None
    return code, out, err


def test_usage_errors_exit_1(capsys):
    code, _, err = _run(capsys, [])
    assert code == 1
    assert err["error"] == "UsageError"
    code, _, err = _run(capsys, ["compress", "a", "b"])
    assert code == 1
    code, _, err = _run(capsys, ["encode", "only_input"])
    assert code == 1


def test_bad_config_exits_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{broken")
    code, _, err = _run(capsys, ["sweep", "--config", str(bad)])
    assert code == 1
    assert err["error"] == "ConfigInvalid"
    code, _, err = _run(capsys, ["sweep", "--workers", "0"])
    assert code == 1


def test_missing_input_exits_2(capsys, cli_env, tmp_path):
    code, _, err = _run(
        capsys,
        ["encode", str(tmp_path / "ghost.png"), str(tmp_path / "x.sgic"), "--config", cli_env["config"]],
    )
    assert code == 2
    assert err["error"] == "IoError"


def test_corrupt_bitstream_exits_2(capsys, cli_env, tmp_path):
    blob = tmp_path / "junk.sgic"
    blob.write_bytes(b"\x00" * 40)
    code, _, err = _run(
        capsys, ["decode", str(blob), str(tmp_path / "junk.png"), "--config", cli_env["config"]]
    )
    assert code == 2


def test_encode_decode_round_trip(capsys, cli_env, tmp_path):
    src = cli_env["images"] / "toy000.png"
    packed = tmp_path / "toy000.sgic"
    code, out, _ = _run(capsys, ["encode", str(src), str(packed), "--config", cli_env["config"]])
    assert code == 0
    assert out["bytes"] == packed.stat().st_size
    assert out["bpp"] > 0
    assert out["grid_map"] is False

    recon = tmp_path / "toy000_out.png"
    code, out, _ = _run(capsys, ["decode", str(packed), str(recon), "--config", cli_env["config"]])
    assert code == 0
    assert out["plan_source"] == "controller"
    assert out["mask_source"] == "similarity"
    assert 2 <= out["plan"]["steps"] <= 80
    assert "total" in out["timings"]
    img = raster.load_image(recon)
    assert img.shape == (64, 64, 3)


def test_encode_grid_mode_and_decode(capsys, cli_env, tmp_path):
    src = cli_env["images"] / "toy001.png"
    packed = tmp_path / "toy001.sgic"
    code, out, _ = _run(
        capsys,
        ["encode", str(src), str(packed), "--config", cli_env["config"], "--mode", "no_clipseg"],
    )
    assert code == 0
    assert out["grid_map"] is True

    recon = tmp_path / "toy001_out.png"
    code, out, _ = _run(
        capsys,
        ["decode", str(packed), str(recon), "--config", cli_env["config"], "--mode", "no_clipseg"],
    )
    assert code == 0
    assert out["mask_source"] == "grid"


def test_decode_no_cad_uses_fixed_plan(capsys, cli_env, tmp_path):
    src = cli_env["images"] / "toy002.png"
    packed = tmp_path / "toy002.sgic"
    assert _run(capsys, ["encode", str(src), str(packed), "--config", cli_env["config"]])[0] == 0
    recon = tmp_path / "toy002_out.png"
    code, out, _ = _run(
        capsys,
        ["decode", str(packed), str(recon), "--config", cli_env["config"], "--mode", "no_cad"],
    )
    assert code == 0
    assert out["plan"] == {"steps": 40, "cfg": 4.0}
    assert out["plan_source"] == "override"


def test_decode_seed_override_changes_output(capsys, cli_env, tmp_path):
    src = cli_env["images"] / "toy003.png"
    packed = tmp_path / "toy003.sgic"
    assert _run(capsys, ["encode", str(src), str(packed), "--config", cli_env["config"]])[0] == 0
    base = cli_env["config"]
    a, b, c = (tmp_path / f"v{i}.png" for i in range(3))
    assert _run(capsys, ["decode", str(packed), str(a), "--config", base, "--seed", "1"])[0] == 0
    assert _run(capsys, ["decode", str(packed), str(b), "--config", base, "--seed", "1"])[0] == 0
    assert _run(capsys, ["decode", str(packed), str(c), "--config", base, "--seed", "2"])[0] == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_sweep_and_train_hit_label_cache(capsys):
    cfg = {"out_dir": str(CACHE_DIR), "denoiser_epochs": 150}
    path = CACHE_DIR / "cli_config.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = _run(capsys, ["sweep", "--config", str(path)])
    assert code == 0
    assert out["labels"] == 20
    assert out["failures"] == {}

    code, out, _ = _run(capsys, ["train", "--config", str(path)])
    assert code == 0
    assert out["labels"] == 20
    assert out["gradient_check_steps"] < 1e-4
    assert out["gradient_check_cfg"] < 1e-4


def test_rd_timing_ablate_commands(capsys, tmp_path):
    cfg = {
        "denoiser_weights": str(CACHE_DIR / "toy_denoiser.sgtd"),
        "steps_model": str(CACHE_DIR / "steps_mlp.sgmc"),
        "cfg_model": str(CACHE_DIR / "cfg_mlp.sgmc"),
        "out_dir": str(tmp_path / "out"),
        "corpus_n": 3,
        "qualities": [4],
        "timing_images": 1,
        "timing_reps": 1,
        "denoiser_epochs": 150,
    }
    path = tmp_path / "small.json"
    path.write_text(json.dumps(cfg))

    code, out, _ = _run(capsys, ["rd", "--config", str(path)])
    assert code == 0
    assert out["csv"].endswith("rd_sweep.csv")

    code, out, _ = _run(capsys, ["timing", "--config", str(path)])
    assert code == 0
    assert set(out["rows"]) == {"Encoding", "Decoding"}

    code, out, _ = _run(capsys, ["ablate", "--config", str(path)])
    assert code == 0
    assert out["csv"].endswith("ablation.csv")
