import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from muvtex.seqspace import (T_CF, T_NF, FrameRole, Frames, Task, TaskSpec, flow_loss, frame_roles,
                             frame_timesteps, k_to_t, loss_weight, noise_sequence, shift_time, velocity_target)

DF, CF, NF = FrameRole.DF, FrameRole.CF, FrameRole.NF


def rand_frames(b=2, seed=0, dtype=torch.float64, mv=8, uv=16):
    g = torch.Generator().manual_seed(seed)
    return Frames(torch.randn(b, 4, 3, mv, mv, generator=g, dtype=dtype),
                  torch.randn(b, 3, uv, uv, generator=g, dtype=dtype))


def const_frames(value, b=1, mv=8, uv=16):
    return Frames(torch.full((b, 4, 3, mv, mv), float(value), dtype=torch.float64),
                  torch.full((b, 3, uv, uv), float(value), dtype=torch.float64))


# ---------------------------------------------------------------- roles


@pytest.mark.parametrize("spec,expected", [
    (TaskSpec("img2tex", 0), (CF, DF, DF, DF, DF)),
    (TaskSpec("img2tex", 3), (DF, DF, DF, CF, DF)),
    (TaskSpec("geo2mv"), (DF, DF, DF, DF, NF)),
])
def test_role_table(spec, expected):
    assert frame_roles(spec) == expected


@pytest.mark.parametrize("cf", [-1, 4, 7])
def test_condition_view_out_of_range_is_rejected(cf):
    with pytest.raises(ValueError, match="cf_view_index"):
        frame_roles(TaskSpec(Task.IMG2TEX, cf))


@given(cf=st.integers(0, 3))
def test_img2tex_has_exactly_one_condition_frame(cf):
    roles = frame_roles(TaskSpec("img2tex", cf))
    assert roles.count(CF) == 1 and roles.index(CF) == cf and roles.count(NF) == 0


def test_unknown_task_is_rejected():
    with pytest.raises(ValueError):
        TaskSpec("text2tex")


# ---------------------------------------------------------------- timesteps


@pytest.mark.parametrize("k,t", [(1000, 0.0), (15, 0.985), (0, 1.0)])
def test_k_to_t(k, t):
    assert k_to_t(k) == pytest.approx(t, abs=1e-15)


@pytest.mark.parametrize("k", [-1, 1001])
def test_k_out_of_range(k):
    with pytest.raises(ValueError):
        k_to_t(k)


def test_condition_and_nonsense_levels():
    assert T_CF == pytest.approx(0.985) and T_NF == 0.0


def test_frame_timesteps_follow_roles():
    ts = frame_timesteps((CF, DF, DF, DF, DF), torch.tensor([0.3, 0.7]))
    assert ts.shape == (2, 5)
    assert torch.allclose(ts[:, 0], torch.tensor(T_CF))
    assert torch.allclose(ts[:, 1:], torch.tensor([[0.3], [0.7]]).expand(2, 4))
    ts = frame_timesteps((DF, DF, DF, DF, NF), torch.tensor([0.4]))
    assert ts[0, 4] == 0.0


def test_unit_shift_is_identity_and_shift_keeps_endpoints():
    t = torch.linspace(0, 1, 11, dtype=torch.float64)
    assert torch.equal(shift_time(t, 1.0), t)
    s = shift_time(t, 5.0)
    assert s[0] == 0.0 and s[-1] == 1.0
    assert torch.all(s <= t + 1e-12)  # more time at high noise
    assert torch.all(torch.diff(s) > 0)


# ---------------------------------------------------------------- noising


def test_clean_endpoint_reproduces_clean():
    clean, noise = rand_frames(seed=1), rand_frames(seed=2)
    seq = noise_sequence(clean, (DF,) * 4 + (NF,), 1.0, noise)
    assert torch.equal(seq.frames.mv, clean.mv)
    assert torch.equal(seq.frames.uv, noise.uv)  # NF stays noise


def test_noise_endpoint_reproduces_noise():
    clean, noise = rand_frames(seed=1), rand_frames(seed=2)
    seq = noise_sequence(clean, (DF,) * 5, 0.0, noise)
    assert torch.equal(seq.frames.mv, noise.mv) and torch.equal(seq.frames.uv, noise.uv)


def test_halfway_between_ones_and_zeros_is_half():
    seq = noise_sequence(const_frames(1.0), (DF,) * 5, 0.5, const_frames(0.0))
    assert torch.all(seq.frames.mv == 0.5) and torch.all(seq.frames.uv == 0.5)


def test_condition_frame_noised_at_fixed_level():
    clean, noise = rand_frames(seed=3), rand_frames(seed=4)
    seq = noise_sequence(clean, (DF, CF, DF, DF, DF), 0.2, noise)
    expect = T_CF * clean.mv[:, 1] + (1 - T_CF) * noise.mv[:, 1]
    assert torch.allclose(seq.frames.mv[:, 1], expect)
    assert torch.allclose(seq.timesteps[:, 1], torch.tensor(T_CF, dtype=torch.float64))


def test_shape_mismatch_is_rejected():
    with pytest.raises(ValueError, match="shape"):
        noise_sequence(rand_frames(mv=8), (DF,) * 5, 0.5, rand_frames(mv=4))
    with pytest.raises(ValueError, match="shape"):
        velocity_target(rand_frames(uv=16), rand_frames(uv=8))


def test_velocity_target_examples():
    x = rand_frames(seed=5)
    z = velocity_target(x, x)
    assert torch.all(z.mv == 0) and torch.all(z.uv == 0)
    zero = x.map(torch.zeros_like)
    v = velocity_target(x, zero)
    assert torch.equal(v.mv, x.mv) and torch.equal(v.uv, x.uv)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), t=st.floats(0.0, 1.0), cf=st.integers(0, 3))
def test_noised_plus_scaled_target_recovers_clean(seed, t, cf):
    clean, noise = rand_frames(seed=seed), rand_frames(seed=seed + 1)
    roles = frame_roles(TaskSpec("img2tex", cf))
    seq = noise_sequence(clean, roles, t, noise)
    v = velocity_target(clean, noise)
    for f in range(5):
        tf = seq.timesteps[:, f].reshape(-1, *([1] * (clean.frame(f).ndim - 1)))
        rec = seq.frames.frame(f) + (1 - tf) * v.frame(f)
        assert torch.allclose(rec, clean.frame(f), atol=1e-6)


# ---------------------------------------------------------------- loss


def test_perfect_prediction_has_zero_loss():
    target = rand_frames(seed=6)
    assert flow_loss(target, target, (DF,) * 5, torch.tensor([0.3, 0.6])) == 0.0


@pytest.mark.parametrize("t", [0.0, 1.0])
def test_endpoint_times_have_zero_loss(t):
    pred, target = rand_frames(seed=7), rand_frames(seed=8)
    assert flow_loss(pred, target, (DF,) * 5, torch.full((2,), t)) == 0.0


def test_constant_error_at_half_time_gives_squared_error():
    e = 0.37
    pred, target = const_frames(e), const_frames(0.0)
    loss = flow_loss(pred, target, (DF,) * 5, torch.tensor([0.5]))
    assert float(loss) == pytest.approx(e * e, rel=1e-12)
    assert float(loss_weight(torch.tensor(0.5))) == 1.0


def test_loss_ignores_condition_and_nonsense_frames():
    pred, target = rand_frames(seed=9), rand_frames(seed=10)
    roles = (CF, DF, DF, DF, NF)
    base = flow_loss(pred, target, roles, torch.tensor([0.4, 0.8]))
    pred2 = Frames(pred.mv.clone(), pred.uv + 100.0)
    pred2.mv[:, 0] += 50.0
    assert torch.equal(flow_loss(pred2, target, roles, torch.tensor([0.4, 0.8])), base)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1))
def test_loss_invariant_to_nonsense_frame_content(seed):
    pred, target = rand_frames(seed=seed), rand_frames(seed=seed + 7)
    roles = (DF, DF, DF, DF, NF)
    t = torch.tensor([0.25, 0.9])
    a = flow_loss(pred, target, roles, t)
    g = torch.Generator().manual_seed(seed)
    pred.uv = torch.randn(pred.uv.shape, generator=g, dtype=pred.uv.dtype)
    target.uv = torch.randn(target.uv.shape, generator=g, dtype=target.uv.dtype)
    assert torch.equal(flow_loss(pred, target, roles, t), a)


def test_loss_matches_hand_computation_per_example():
    pred, target = rand_frames(seed=11), rand_frames(seed=12)
    roles = (DF, CF, DF, DF, DF)
    t = torch.tensor([0.2, 0.7], dtype=torch.float64)
    got = flow_loss(pred, target, roles, t)
    per = []
    for b in range(2):
        chunks = [(pred.mv[b, f] - target.mv[b, f]).flatten() for f in (0, 2, 3)]
        chunks.append((pred.uv[b] - target.uv[b]).flatten())
        d = torch.cat(chunks)
        per.append(4 * t[b] * (1 - t[b]) * (d ** 2).mean())
    assert torch.allclose(got, torch.stack(per).mean(), rtol=1e-12)
