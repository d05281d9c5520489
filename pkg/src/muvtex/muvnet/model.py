"""The MUV transformer: decoupled view / UV branches joined by geometry-aware attention."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..seqspace import NUM_VIEWS, Frames
from .attention import GeoAttention
from .config import ModelConfig
from .lora import LoRALinear, set_lora_enabled
from .rope import rope_3d

GROUPS = ("mv_base", "mv_lora", "uv_full", "shared")


def patchify(x: torch.Tensor, p: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, (H/p)*(W/p), C*p*p), row-major over patches."""
    b, c, h, w = x.shape
    if h % p or w % p:
        raise ValueError(f"frame {h}x{w} not divisible by patch {p}")
    x = x.reshape(b, c, h // p, p, w // p, p)
    return x.permute(0, 2, 4, 1, 3, 5).reshape(b, (h // p) * (w // p), c * p * p)


def unpatchify(tokens: torch.Tensor, p: int, c: int, h: int, w: int) -> torch.Tensor:
    b = tokens.shape[0]
    x = tokens.reshape(b, h // p, w // p, c, p, p)
    return x.permute(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)


def patchify_views(x: torch.Tensor, p: int) -> torch.Tensor:
    """(B, F, C, H, W) -> (B, F*N, C*p*p), frame-major."""
    b, f = x.shape[:2]
    t = patchify(x.flatten(0, 1), p)
    return t.reshape(b, f * t.shape[1], t.shape[2])


def unpatchify_views(tokens: torch.Tensor, p: int, f: int, c: int, h: int, w: int) -> torch.Tensor:
    b = tokens.shape[0]
    x = unpatchify(tokens.reshape(b * f, -1, tokens.shape[-1]), p, c, h, w)
    return x.reshape(b, f, c, h, w)


def token_axis_index(cfg: ModelConfig) -> torch.Tensor:
    """(N, 3) integer (time, row, col) per token, views first then UV."""
    g, gu = cfg.mv_grid, cfg.uv_grid
    t, r, c = torch.meshgrid(torch.arange(NUM_VIEWS), torch.arange(g), torch.arange(g), indexing="ij")
    mv = torch.stack([t, r, c], -1).reshape(-1, 3)
    r, c = torch.meshgrid(torch.arange(gu), torch.arange(gu), indexing="ij")
    uv = torch.stack([torch.full_like(r, NUM_VIEWS), r, c], -1).reshape(-1, 3)
    return torch.cat([mv, uv])


def modulate(x, shift, scale):
    return x * (1 + scale) + shift


class TimestepEmbedder(nn.Module):
    def __init__(self, dim: int, freq_dim: int = 256):
        super().__init__()
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(nn.Linear(freq_dim, dim), nn.SiLU(), nn.Linear(dim, dim))

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        half = self.freq_dim // 2
        freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
        args = (t * 1000.0)[..., None] * freqs
        return self.mlp(torch.cat([torch.cos(args), torch.sin(args)], dim=-1))


class LabelEmbedder(nn.Module):
    """Texture-class label as family + up to three colour slots, summed."""

    def __init__(self, n_families: int, n_colors: int, dim: int):
        super().__init__()
        self.family = nn.Embedding(n_families, dim)
        self.colors = nn.ModuleList(nn.Embedding(n_colors + 1, dim) for _ in range(3))

    def forward(self, labels: torch.Tensor) -> torch.Tensor:
        out = self.family(labels[:, 0])
        for i, emb in enumerate(self.colors):
            out = out + emb(labels[:, i + 1])
        return out


class Branch(nn.Module):
    """One stream's weights: adaLN modulation, geo-attention, MLP, geometry projection."""

    def __init__(self, cfg: ModelConfig, lora_rank: int = 0):
        super().__init__()
        dim = cfg.dim
        self.norm1 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.norm2 = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.attn = GeoAttention(dim, cfg.heads, lora_rank, cfg.lora_alpha)
        hidden = int(dim * cfg.mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(approximate="tanh"), nn.Linear(hidden, dim))
        self.ada = nn.Linear(dim, 6 * dim)
        self.geo_proj = nn.Linear(cfg.geo_channels * cfg.patch ** 2, dim, bias=False)

    def mods(self, cond: torch.Tensor, per_frame: int):
        """Per-token (shift1, scale1, gate1, shift2, scale2, gate2) from per-frame conditioning."""
        m = self.ada(F.silu(cond)).repeat_interleave(per_frame, dim=1)
        return m.chunk(6, dim=-1)


class MUVBlock(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.mv = Branch(cfg, lora_rank=cfg.lora_rank)
        self.uv = Branch(cfg) if cfg.decoupled else None
        self.n_mv = cfg.mv_grid ** 2
        self.n_uv = cfg.uv_grid ** 2

    def _geo(self, branch: Branch, raw):
        return branch.geo_proj(raw) if self.cfg.use_geo else None

    def forward(self, mv, uv, geo_mv, geo_uv, c_mv, c_uv, rope_mv, rope_uv, rope_all):
        if not self.cfg.decoupled:
            return self._joint(mv, uv, geo_mv, geo_uv, c_mv, c_uv, rope_all)

        # view stream attends only among view tokens
        br = self.mv
        sh1, sc1, g1, sh2, sc2, g2 = br.mods(c_mv, self.n_mv)
        h = modulate(br.norm1(mv), sh1, sc1)
        gm = self._geo(br, geo_mv)
        mv_out = mv + g1 * br.attn(h, h, rope_mv, rope_mv, gm, gm)
        mv_out = mv_out + g2 * br.mlp(modulate(br.norm2(mv_out), sh2, sc2))

        # UV stream: UV queries, keys/values over views ‖ UV
        br = self.uv
        ush1, usc1, ug1, ush2, usc2, ug2 = br.mods(c_uv, self.n_uv)
        msh1, msc1 = br.mods(c_mv, self.n_mv)[:2]
        hq = modulate(br.norm1(uv), ush1, usc1)
        he = torch.cat([modulate(br.norm1(mv), msh1, msc1), hq], dim=1)
        if self.cfg.use_geo:
            gq = br.geo_proj(geo_uv)
            ge = torch.cat([br.geo_proj(geo_mv), gq], dim=1)
        else:
            gq = ge = None
        uv_out = uv + ug1 * br.attn(hq, he, rope_uv, rope_all, gq, ge)
        uv_out = uv_out + ug2 * br.mlp(modulate(br.norm2(uv_out), ush2, usc2))
        return mv_out, uv_out

    def _joint(self, mv, uv, geo_mv, geo_uv, c_mv, c_uv, rope_all):
        """Single shared branch over the concatenated sequence (ablation)."""
        br = self.mv
        mods = [torch.cat(pair, dim=1) for pair in zip(br.mods(c_mv, self.n_mv), br.mods(c_uv, self.n_uv))]
        sh1, sc1, g1, sh2, sc2, g2 = mods
        x = torch.cat([mv, uv], dim=1)
        h = modulate(br.norm1(x), sh1, sc1)
        g = self._geo(br, torch.cat([geo_mv, geo_uv], dim=1)) if self.cfg.use_geo else None
        x = x + g1 * br.attn(h, h, rope_all, rope_all, g, g)
        x = x + g2 * br.mlp(modulate(br.norm2(x), sh2, sc2))
        n = mv.shape[1]
        return x[:, :n], x[:, n:]


class FinalLayer(nn.Module):
    def __init__(self, dim: int, out_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.ada = nn.Linear(dim, 2 * dim)
        self.linear = nn.Linear(dim, out_dim)

    def forward(self, x, cond, per_frame):
        shift, scale = self.ada(F.silu(cond)).repeat_interleave(per_frame, dim=1).chunk(2, dim=-1)
        return self.linear(modulate(self.norm(x), shift, scale))


class MUVNet(nn.Module):
    """Predicts per-frame velocities for the 4-view + UV sequence."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        p, c = cfg.patch, cfg.channels
        self.mv_embed = nn.Linear(c * p * p, cfg.dim)
        self.uv_embed = nn.Linear(c * p * p, cfg.dim)
        self.t_embed = TimestepEmbedder(cfg.dim)
        self.label_embed = LabelEmbedder(cfg.n_families, cfg.n_colors, cfg.dim)
        self.blocks = nn.ModuleList(MUVBlock(cfg) for _ in range(cfg.depth))
        self.mv_head = FinalLayer(cfg.dim, c * p * p)
        self.uv_head = FinalLayer(cfg.dim, c * p * p)

        g, gu = cfg.mv_grid, cfg.uv_grid
        angles = rope_3d((NUM_VIEWS, g, g), (1, gu, gu), cfg.head_dim, cfg.rope_max_len, cfg.rope_base)
        self.register_buffer("rope_cos", angles.cos().float(), persistent=False)
        self.register_buffer("rope_sin", angles.sin().float(), persistent=False)
        self.n_mv_tokens = NUM_VIEWS * g * g
        self.reset_parameters()

    def reset_parameters(self):
        def _basic(m):
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)

        self.apply(_basic)
        for m in self.modules():
            if isinstance(m, LoRALinear) and m.rank:
                nn.init.kaiming_uniform_(m.lora_A, a=math.sqrt(5))
                nn.init.zeros_(m.lora_B)
        for emb in [self.label_embed.family, *self.label_embed.colors]:
            nn.init.normal_(emb.weight, std=0.02)
        for lin in self.t_embed.mlp:
            if isinstance(lin, nn.Linear):
                nn.init.normal_(lin.weight, std=0.02)
        for blk in self.blocks:
            for br in (blk.mv, blk.uv):
                if br is None:
                    continue
                nn.init.zeros_(br.ada.weight)
                nn.init.zeros_(br.ada.bias)
                nn.init.normal_(br.geo_proj.weight, std=0.02)
        for head in (self.mv_head, self.uv_head):
            nn.init.zeros_(head.ada.weight)
            nn.init.zeros_(head.ada.bias)
            nn.init.zeros_(head.linear.weight)
            nn.init.zeros_(head.linear.bias)
        self.copy_mv_to_uv()

    @torch.no_grad()
    def copy_mv_to_uv(self):
        """Initialise every UV branch as a copy of the view branch base weights."""
        for blk in self.blocks:
            if blk.uv is None:
                continue
            src = {k: v for k, v in blk.mv.state_dict().items() if "lora_" not in k}
            blk.uv.load_state_dict(src)

    def rope_tables(self, dtype):
        cos, sin = self.rope_cos.to(dtype), self.rope_sin.to(dtype)
        n = self.n_mv_tokens
        return (cos[:n], sin[:n]), (cos[n:], sin[n:]), (cos, sin)

    def forward(self, frames: Frames, timesteps: torch.Tensor, geo: Frames, labels: torch.Tensor) -> Frames:
        """Velocity for every frame.

        ``frames``: noised RGB (mv (B,4,3,H,W), uv (B,3,Hu,Wu)); ``timesteps``:
        (B, 5) per-frame times; ``geo``: geometry grids with 7 channels in the
        same layout; ``labels``: (B, 4) label tokens.
        """
        cfg = self.cfg
        p, c = cfg.patch, cfg.channels
        b, f, _, h, w = frames.mv.shape
        hu, wu = frames.uv.shape[-2:]
        if f != NUM_VIEWS or (h, w) != (cfg.mv_size, cfg.mv_size) or (hu, wu) != (cfg.uv_size, cfg.uv_size):
            raise ValueError(f"frame shapes {frames.shapes()} do not match config {cfg.mv_size}/{cfg.uv_size}")
        if timesteps.shape != (b, NUM_VIEWS + 1):
            raise ValueError(f"timesteps must be (B, 5), got {tuple(timesteps.shape)}")
        if geo.mv.shape[:2] != (b, f) or geo.mv.shape[2] != cfg.geo_channels or geo.uv.shape[1] != cfg.geo_channels:
            raise ValueError(f"geometry shapes {geo.shapes()} do not match frames")

        mv = self.mv_embed(patchify_views(frames.mv, p))
        uv = self.uv_embed(patchify(frames.uv, p))
        geo_mv = patchify_views(geo.mv, p)
        geo_uv = patchify(geo.uv, p)
        cond = self.t_embed(timesteps.to(mv.dtype)) + self.label_embed(labels)[:, None]
        c_mv, c_uv = cond[:, :NUM_VIEWS], cond[:, NUM_VIEWS:]
        rope_mv, rope_uv, rope_all = self.rope_tables(mv.dtype)

        for blk in self.blocks:
            mv, uv = blk(mv, uv, geo_mv, geo_uv, c_mv, c_uv, rope_mv, rope_uv, rope_all)

        n_mv, n_uv = cfg.mv_grid ** 2, cfg.uv_grid ** 2
        out_mv = unpatchify_views(self.mv_head(mv, c_mv, n_mv), p, NUM_VIEWS, c, h, w)
        out_uv = unpatchify(self.uv_head(uv, c_uv, n_uv), p, c, hu, wu)
        return Frames(out_mv, out_uv)

    # parameter groups -------------------------------------------------

    @staticmethod
    def group_of(name: str) -> str:
        if name.startswith("blocks."):
            part = name.split(".")[2]
            if part == "uv":
                return "uv_full"
            if ".geo_proj." in name:
                return "shared"
            return "mv_lora" if ".lora_" in name else "mv_base"
        return "shared"

    def named_groups(self) -> dict[str, dict[str, nn.Parameter]]:
        out: dict[str, dict[str, nn.Parameter]] = {g: {} for g in GROUPS}
        for name, prm in self.named_parameters():
            out[self.group_of(name)][name] = prm
        return out

    def set_mode(self, mode: str) -> None:
        """``scratch`` trains everything; ``finetune`` freezes the view-branch base weights."""
        if mode not in ("scratch", "finetune"):
            raise ValueError(f"mode must be 'scratch' or 'finetune', got {mode!r}")
        for name, prm in self.named_parameters():
            prm.requires_grad_(not (mode == "finetune" and self.group_of(name) == "mv_base"))

    def set_lora_enabled(self, enabled: bool) -> None:
        set_lora_enabled(self, enabled)
