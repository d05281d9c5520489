import functools
import json
import math

import numpy as np
import pytest
import torch

from muvtex.geomesh import CameraRig, make_primitive
from muvtex.muvnet import MUVNet, ModelConfig
from muvtex.seqspace import FrameRole, Task
from muvtex.trainer import (ConfigMismatchError, DatasetSplit, PowerEMA, PreparedAsset, TrainConfig, Trainer,
                            build_batch, ema_beta, ema_update, lr_at, read_checkpoint, restore_trainer, save_trainer,
                            std_to_exp, task_frequencies)
from muvtex.trainer.checkpoint import load_into

TINY = dict(dim=24, heads=1, depth=1, mv_size=16, uv_size=16, patch=4, lora_rank=2)
SPECS = [("cube", "stripes:red:blue"), ("uvsphere", "gradient:white:black"),
         ("torus", "voronoi:yellow:green"), ("cube", "gradient:orange:purple")]


@functools.lru_cache(maxsize=None)
def prepared(i: int) -> PreparedAsset:
    kind, spec = SPECS[i % len(SPECS)]
    asset = make_primitive(kind, spec, seed=100 + i, atlas_res=16)
    return PreparedAsset.build(asset, CameraRig.from_seed(0), 16, name=f"a{i}")


def tiny_split(n=4) -> DatasetSplit:
    items = [prepared(i) for i in range(n)]
    return DatasetSplit(tex_assets=items, mv_assets=items[:2])


def tiny_model(**kw) -> MUVNet:
    torch.manual_seed(0)
    return MUVNet(ModelConfig(**{**TINY, **kw}))


# ---------------------------------------------------------------- batches


def test_img2tex_batch_targets_the_atlas():
    split = tiny_split()
    b = build_batch(split, "img2tex", np.random.default_rng(0), 3)
    names = {a.name: a for a in split.tex_assets}
    for i, n in enumerate(b.names):
        assert torch.equal(b.clean.uv[i], torch.from_numpy(names[n].uv_albedo))
        assert torch.equal(b.clean.mv[i], torch.from_numpy(names[n].mv_albedo))
    assert b.roles.count(FrameRole.CF) == 1 and b.roles[4] is FrameRole.DF
    assert torch.allclose(b.target.uv, b.clean.uv - b.noise.uv)


def test_geo2mv_batch_uv_slot_is_pure_noise():
    b = build_batch(tiny_split(), "geo2mv", np.random.default_rng(1), 2)
    assert b.roles[4] is FrameRole.NF
    assert torch.equal(b.seq.frames.uv, b.noise.uv)
    assert torch.all(b.seq.timesteps[:, 4] == 0)


def test_batches_are_reproducible_from_the_rng():
    split = tiny_split()
    a = build_batch(split, "img2tex", np.random.default_rng(7), 2)
    b = build_batch(split, "img2tex", np.random.default_rng(7), 2)
    assert a.names == b.names and torch.equal(a.seq.frames.mv, b.seq.frames.mv)


def test_empty_pool_raises():
    split = DatasetSplit(tex_assets=[prepared(0)])
    with pytest.raises(ValueError, match="no assets"):
        build_batch(split, "geo2mv", np.random.default_rng(0), 1)


def test_eval_assets_must_be_disjoint_from_training():
    with pytest.raises(ValueError, match="eval asset"):
        DatasetSplit(tex_assets=[prepared(0)], eval_assets=[prepared(0)])


def test_uv_only_batches_drop_the_view_targets():
    b = build_batch(tiny_split(), "img2tex", np.random.default_rng(2), 2, uv_only=True)
    assert b.roles[4] is FrameRole.DF
    assert all(r in (FrameRole.CF, FrameRole.NF) for r in b.roles[:4])


# ---------------------------------------------------------------- schedule & mix


def test_lr_schedule_points():
    cfg = TrainConfig(lr=2e-4, warmup=200, total_steps=1200)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(100, cfg) == pytest.approx(1e-4)
    assert lr_at(200, cfg) == pytest.approx(2e-4)
    assert lr_at(700, cfg) == pytest.approx(1e-4)
    assert lr_at(1200, cfg) == pytest.approx(0.0, abs=1e-18)


def test_task_mix_matches_configuration():
    freqs = task_frequencies(np.random.default_rng(0), TrainConfig(p_img2tex=0.6), 10_000)
    assert abs(freqs["img2tex"] - 0.6) <= 0.02 and abs(freqs["geo2mv"] - 0.4) <= 0.02
    assert task_frequencies(np.random.default_rng(0), TrainConfig(stage=1), 500)["geo2mv"] == 0.0


@pytest.mark.parametrize("kw", [dict(stage=3), dict(mode="frozen"), dict(p_img2tex=1.5)])
def test_train_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


# ---------------------------------------------------------------- EMA


def test_power_exponent_matches_width_formula():
    for std in (0.05, 0.1, 0.2):
        g = std_to_exp(std)
        assert math.sqrt((g + 1) / ((g + 2) ** 2 * (g + 3))) == pytest.approx(std, rel=1e-9)


def test_ema_fixed_point_and_first_copy():
    p = {"w": torch.tensor([1.0, -2.0])}
    ema = PowerEMA({"w": torch.zeros(2)}, std=0.1)
    ema.update(p, 1)  # beta_1 = 0
    assert torch.equal(ema.shadow["w"], p["w"])
    for n in range(2, 20):
        ema.update(p, n)
    assert torch.allclose(ema.shadow["w"], p["w"], atol=0)


def test_zero_width_tracks_parameters():
    assert ema_beta(50, 0.0) == 0.0
    out = ema_update({"w": torch.zeros(3)}, {"w": torch.ones(3)}, 50, std=0.0)
    assert torch.equal(out["w"], torch.ones(3))


def test_ema_two_steps_by_hand():
    std = 0.05
    g = std_to_exp(std)
    b2 = (1 - 1 / 2) ** (g + 1)
    p1, p2 = torch.tensor([0.3]), torch.tensor([1.7])
    e = ema_update({"w": torch.tensor([9.0])}, {"w": p1}, 1, std)
    e = ema_update(e, {"w": p2}, 2, std)
    assert float(e["w"]) == pytest.approx(b2 * 0.3 + (1 - b2) * 1.7, rel=1e-6)


# ---------------------------------------------------------------- loop


def quick_cfg(**kw):
    base = dict(lr=1e-3, warmup=10, total_steps=300, batch_size=2, ema_std=0.1, log_every=1)
    return TrainConfig(**{**base, **kw})


def test_loss_falls_by_half_on_a_small_pool():
    # windows of 20 steps average out the per-step spread of the sampled times
    tr = Trainer(tiny_model(dim=48), DatasetSplit(tex_assets=[prepared(i) for i in range(4)]),
                 quick_cfg(stage=1, total_steps=300, lr=2e-3, batch_size=4))
    losses = [r.loss for r in tr.run()]
    first, last = np.mean(losses[:20]), np.mean(losses[-20:])
    assert last <= 0.5 * first, (first, last)


def test_finetune_leaves_view_base_untouched():
    model = tiny_model()
    before = {n: p.detach().clone() for n, p in model.named_groups()["mv_base"].items()}
    tr = Trainer(model, tiny_split(), quick_cfg(mode="finetune", total_steps=20))
    res = tr.run(5)
    assert all(not r.skipped for r in res)
    for n, p in model.named_groups()["mv_base"].items():
        assert torch.equal(p, before[n]) and p.grad is None
    moved = model.named_groups()["uv_full"]
    assert any(not torch.equal(p, dict(MUVNet(model.cfg).named_parameters())[n]) for n, p in moved.items())


def test_geo2mv_loss_ignores_uv_content():
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg())
    torch.manual_seed(3)
    with torch.no_grad():
        for p in tr.model.parameters():
            p.add_(0.1 * torch.randn_like(p))
    b = build_batch(tr.split, "geo2mv", np.random.default_rng(4), 2)
    a = tr.compute_loss(b)
    b.seq.frames.uv = torch.randn_like(b.seq.frames.uv)
    b.target.uv = torch.randn_like(b.target.uv)
    assert torch.equal(tr.compute_loss(b), a)


def test_non_finite_step_is_skipped_with_weights_unchanged(tmp_path):
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg(), metrics_path=tmp_path / "m.jsonl")
    tr.run(2)
    before = {n: p.detach().clone() for n, p in tr.model.named_parameters()}
    ema_before = {n: t.clone() for n, t in tr.ema.shadow.items()}
    b = tr.next_batch()
    b.seq.frames.mv[0, 0, 0, 0, 0] = float("nan")
    res = tr.train_step(b)
    assert res.skipped and res.diagnostics["reason"] == "non-finite loss"
    assert tr.step == 2
    for n, p in tr.model.named_parameters():
        assert torch.equal(p, before[n]) and torch.equal(tr.ema.shadow[n], ema_before[n])
    last = json.loads((tmp_path / "m.jsonl").read_text().splitlines()[-1])
    assert last["skipped"] is True


def test_metrics_lines_are_json(tmp_path):
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg(), metrics_path=tmp_path / "m.jsonl")
    tr.run(3)
    recs = [json.loads(x) for x in (tmp_path / "m.jsonl").read_text().splitlines()]
    assert [r["step"] for r in recs] == [1, 2, 3]
    assert {"loss", "task", "lr", "grad_norm"} <= set(recs[0])


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg())
    tr.run(3)
    path = save_trainer(tmp_path / "c.npz", tr)
    ck = read_checkpoint(path)
    assert ck.step == 3 and ck.model_config == tr.model.cfg
    m = ck.build_model()
    for (n, a), (_, b) in zip(tr.model.named_parameters(), m.named_parameters()):
        assert torch.equal(a, b), n
    e = ck.build_model(use_ema=True)
    for n, p in e.named_parameters():
        assert torch.equal(p, tr.ema.shadow[n])


def test_resume_matches_uninterrupted_run(tmp_path):
    cfg = quick_cfg(total_steps=40)
    straight = Trainer(tiny_model(), tiny_split(), cfg)
    straight.run(6)

    first = Trainer(tiny_model(), tiny_split(), cfg)
    first.run(3)
    path = save_trainer(tmp_path / "c.npz", first)
    resumed = Trainer(MUVNet(first.model.cfg), tiny_split(), cfg)
    restore_trainer(resumed, read_checkpoint(path))
    resumed.run(3)
    assert resumed.step == straight.step == 6
    for (n, a), (_, b) in zip(straight.model.named_parameters(), resumed.model.named_parameters()):
        assert torch.allclose(a, b, atol=1e-6, rtol=0), n


def test_mismatched_config_is_rejected(tmp_path):
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg())
    path = save_trainer(tmp_path / "c.npz", tr)
    other = tiny_model(depth=2)
    with pytest.raises(ConfigMismatchError, match="depth"):
        load_into(other, read_checkpoint(path))


def test_corrupt_checkpoint_is_rejected(tmp_path):
    from muvtex.trainer import CheckpointError
    p = tmp_path / "bad.npz"
    p.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        read_checkpoint(p)


def test_task_names_are_logged():
    tr = Trainer(tiny_model(), tiny_split(), quick_cfg(stage=1))
    assert {r.task for r in tr.run(5)} == {Task.IMG2TEX.value}
