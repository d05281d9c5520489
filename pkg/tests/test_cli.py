import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from muvtex.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from muvtex.dataset import read_manifest, split_sizes

TRAIN_FLAGS = ["--preset", "tiny", "--set", "train.batch_size=1", "--set", "train.warmup=2",
               "--set", "train.ckpt_every=2"]


def tree_digest(root: Path) -> dict[str, str]:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["--workdir", str(root), "gen-data", "--out", "data", "--count", "8", "--seed", "0"]) == EXIT_OK
    return root


@pytest.fixture(scope="module")
def trained(dataset):
    rc = main(["--workdir", str(dataset), "train", "--data", "data", "--run", "run", "--steps", "4",
               "--stage", "1", *TRAIN_FLAGS])
    assert rc == EXIT_OK
    return dataset


# ---------------------------------------------------------------- gen-data


def test_gen_data_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["--workdir", str(tmp_path), "gen-data", "--out", name, "--count", "4", "--seed", "3"]) == 0
    assert tree_digest(tmp_path / "a") == tree_digest(tmp_path / "b")


def test_default_split_sizes():
    assert split_sizes(16) == (10, 4, 2)
    assert split_sizes(8) == (5, 2, 1)
    assert sum(split_sizes(7)) == 7


def test_manifest_lists_splits(dataset):
    m = read_manifest(dataset / "data")
    assert [len(m["splits"][k]) for k in ("train-tex", "train-mv", "eval")] == [5, 2, 1]
    for name in m["splits"]["train-tex"]:
        assert (dataset / "data" / name / "cache").is_dir()


def test_unknown_texture_family_is_a_usage_error(tmp_path, capsys):
    rc = main(["--workdir", str(tmp_path), "gen-data", "--out", "d", "--count", "2", "--textures", "plaid"])
    assert rc == EXIT_USAGE
    assert "unknown texture family" in capsys.readouterr().err


def test_non_empty_output_needs_force(tmp_path):
    (tmp_path / "d").mkdir()
    (tmp_path / "d" / "keep.txt").write_text("x")
    assert main(["--workdir", str(tmp_path), "gen-data", "--out", "d", "--count", "2"]) == EXIT_DATA
    assert main(["--workdir", str(tmp_path), "gen-data", "--out", "d", "--count", "2", "--force"]) == EXIT_OK
    assert not (tmp_path / "d" / "keep.txt").exists()


# ---------------------------------------------------------------- train


def metrics(run: Path) -> list[dict]:
    return [json.loads(x) for x in (run / "metrics.jsonl").read_text().splitlines()]


def test_stage_one_logs_only_img2tex(trained):
    recs = metrics(trained / "run")
    assert [r["step"] for r in recs] == [1, 2, 3, 4]
    assert {r["task"] for r in recs} == {"img2tex"}
    assert (trained / "run" / "last.npz").is_file() and (trained / "run" / "ckpt_000002.npz").is_file()


def test_effective_config_is_echoed(trained):
    from muvtex.runconfig import load_run_config
    cfg = load_run_config(trained / "run" / "config.txt")
    assert cfg.model.dim == 48 and cfg.train.stage == 1 and cfg.train.total_steps == 4
    assert cfg.train.batch_size == 1 and cfg.train.ckpt_every == 2


def test_resume_reproduces_uninterrupted_losses(trained):
    wd = str(trained)
    rc = main(["--workdir", wd, "train", "--data", "data", "--run", "resumed", "--steps", "4", "--stage", "1",
               "--resume", "run/ckpt_000002.npz", *TRAIN_FLAGS])
    assert rc == EXIT_OK
    straight = {r["step"]: r["loss"] for r in metrics(trained / "run")}
    resumed = {r["step"]: r["loss"] for r in metrics(trained / "resumed")}
    assert sorted(resumed) == [3, 4]
    for s in (3, 4):
        assert resumed[s] == pytest.approx(straight[s], abs=1e-6)


def test_finetune_without_base_is_rejected(dataset):
    rc = main(["--workdir", str(dataset), "train", "--data", "data", "--run", "ft", "--mode", "finetune",
               "--steps", "1", *TRAIN_FLAGS])
    assert rc == EXIT_USAGE


def test_finetune_from_base_keeps_view_base(trained):
    from muvtex.trainer import read_checkpoint
    rc = main(["--workdir", str(trained), "train", "--data", "data", "--run", "ft", "--mode", "finetune",
               "--base", "run/last.npz", "--steps", "2", *TRAIN_FLAGS])
    assert rc == EXIT_OK
    base, ft = read_checkpoint(trained / "run" / "last.npz"), read_checkpoint(trained / "ft" / "last.npz")
    base_ema = base.ema()
    for name, arr in ft.params(("mv_base",)).items():
        assert np.array_equal(arr, base_ema[name])


def test_missing_manifest_is_a_data_error(tmp_path):
    assert main(["--workdir", str(tmp_path), "train", "--data", "nowhere", "--steps", "1"]) == EXIT_DATA


def test_unknown_config_key_is_a_usage_error(dataset):
    rc = main(["--workdir", str(dataset), "train", "--data", "data", "--run", "bad", "--set", "train.bogus=1"])
    assert rc == EXIT_USAGE


# ---------------------------------------------------------------- infer


def first_asset(root: Path, split="train-tex") -> str:
    return "data/" + read_manifest(root / "data")["splits"][split][0]


def test_infer_is_deterministic(trained):
    wd = str(trained)
    for out in ("inf_a", "inf_b"):
        rc = main(["--workdir", wd, "infer", "--ckpt", "run/last.npz", "--asset", first_asset(trained),
                   "--steps", "2", "--out", out, "--preview-size", "32"])
        assert rc == EXIT_OK
    a, b = tree_digest(trained / "inf_a"), tree_digest(trained / "inf_b")
    assert a == b
    assert {"uv.png", "view_0.png", "report.json", "textured/preview_0.png"} <= set(a)
    report = json.loads((trained / "inf_a" / "report.json").read_text())
    assert set(report) == {"uv_psnr", "consistency_mae", "coverage_frac", "per_view_psnr"}


def test_condition_view_out_of_range_is_rejected(trained):
    rc = main(["--workdir", str(trained), "infer", "--ckpt", "run/last.npz", "--asset", first_asset(trained),
               "--cond-view", "5", "--out", "bad"])
    assert rc == EXIT_USAGE


def test_geo2mv_writes_views_but_no_uv(trained):
    rc = main(["--workdir", str(trained), "infer", "--ckpt", "run/last.npz", "--asset",
               first_asset(trained, "train-mv"), "--task", "geo2mv", "--steps", "2", "--out", "g2m"])
    assert rc == EXIT_OK
    files = {p.name for p in (trained / "g2m").iterdir()}
    assert {f"view_{i}.png" for i in range(4)} <= files and "uv.png" not in files


def test_img2tex_on_view_only_asset_is_a_data_error(trained):
    rc = main(["--workdir", str(trained), "infer", "--ckpt", "run/last.npz", "--asset",
               first_asset(trained, "train-mv"), "--out", "x"])
    assert rc == EXIT_DATA


# ---------------------------------------------------------------- eval

REPORT_KEYS = {"uv_psnr", "consistency_mae", "coverage_frac", "per_view_psnr", "n_assets"}


def test_eval_report_schema_and_bytes_are_stable(trained):
    wd = str(trained)
    for out in ("r1.json", "r2.json"):
        assert main(["--workdir", wd, "eval", "--ckpt", "run/last.npz", "--steps", "2", "--out", out]) == EXIT_OK
    a, b = (trained / "r1.json").read_bytes(), (trained / "r2.json").read_bytes()
    assert a == b
    assert set(json.loads(a)) == REPORT_KEYS


def test_eval_on_ground_truth_hits_the_cap(dataset):
    assert main(["--workdir", str(dataset), "eval", "--inject-gt", "--split", "train-tex", "--out", "gt.json"]) == 0
    rep = json.loads((dataset / "gt.json").read_text())
    assert rep["uv_psnr"] == 99.0 and rep["n_assets"] == 5
    assert rep["consistency_mae"] < 0.05


def test_eval_needs_a_checkpoint(dataset):
    assert main(["--workdir", str(dataset), "eval", "--out", "x.json"]) == EXIT_USAGE


def test_eval_rejects_split_without_uv(dataset):
    assert main(["--workdir", str(dataset), "eval", "--inject-gt", "--split", "train-mv", "--out", "x.json"]) == EXIT_DATA
