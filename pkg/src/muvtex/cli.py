"""Command-line entry points: gen-data, train, infer, eval.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
All relative paths are resolved against ``--workdir``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
import torch

from .dataset import DataError, generate_dataset, load_prepared, load_split, read_manifest, rig_for
from .geomesh import CameraRig, TextureSpecError
from .geomesh.store import StoreError, asset_has_uv, save_asset, write_png
from .muvnet import MUVNet
from .runconfig import PRESETS, ConfigError, RunConfig, SampleSettings, load_run_config
from .sampler import (SampleConfig, aggregate, apply_texture, evaluate, frames_to_images, render_previews,
                      sample_prepared)
from .seqspace import NUM_VIEWS, FrameRole, Frames, FrameSequence, Task, TaskSpec, frame_roles, frame_timesteps
from .trainer import (CheckpointError, NumericalError, Trainer, load_into, read_checkpoint, restore_trainer,
                      save_trainer)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("muvtex")


class UsageError(RuntimeError):
    pass


def _resolve(workdir: Path, p) -> Path:
    p = Path(p)
    return p if p.is_absolute() else workdir / p


def _parse_sets(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- gen-data


def cmd_gen_data(args, workdir: Path) -> int:
    overrides = {"data.count": str(args.count), "data.seed": str(args.seed)}
    if args.kinds:
        overrides["data.kinds"] = args.kinds
    if args.textures:
        overrides["data.textures"] = args.textures
    cfg = load_run_config(args.config and _resolve(workdir, args.config), overrides=overrides).data
    out = _resolve(workdir, args.out)
    manifest = generate_dataset(out, count=cfg.count, seed=cfg.seed, kinds=cfg.kinds, textures=cfg.textures,
                                ratios=cfg.ratios, mv_size=cfg.mv_size, atlas_res=cfg.atlas_res, force=args.force)
    sizes = {k: len(v) for k, v in manifest["splits"].items()}
    print(f"wrote {cfg.count} assets to {out} ({sizes})")
    return EXIT_OK


# ---------------------------------------------------------------- train


def _run_config(args, workdir: Path) -> RunConfig:
    overrides = _parse_sets(args.set)
    if getattr(args, "stage", None) is not None:
        overrides["train.stage"] = str(args.stage)
    if getattr(args, "mode", None) is not None:
        overrides["train.mode"] = args.mode
    if getattr(args, "steps", None) is not None:
        overrides["train.total_steps"] = str(args.steps)
    path = _resolve(workdir, args.config) if args.config else None
    return load_run_config(path, presets=args.preset or (), overrides=overrides)


def cmd_train(args, workdir: Path) -> int:
    cfg = _run_config(args, workdir)
    data_dir = _resolve(workdir, args.data)
    read_manifest(data_dir)  # fail early with a data error
    if cfg.train.mode == "finetune" and not args.base and not args.resume:
        raise UsageError("--mode finetune needs a base checkpoint (--base CKPT)")
    run_dir = _resolve(workdir, args.run)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(cfg.dump())

    split = load_split(data_dir, pools=cfg.data.pools, which=("train-tex", "train-mv"))
    torch.manual_seed(cfg.train.seed)
    model = MUVNet(cfg.model)
    if args.base:
        base = read_checkpoint(_resolve(workdir, args.base))
        load_into(model, base, use_ema=bool(base.ema()))
    metrics = run_dir / "metrics.jsonl"
    trainer = Trainer(model, split, cfg.train, metrics_path=metrics)
    if args.resume:
        ckpt = read_checkpoint(_resolve(workdir, args.resume))
        restore_trainer(trainer, ckpt)
        _truncate_metrics(metrics, trainer.step)
    elif metrics.exists():
        metrics.unlink()

    every = max(cfg.train.ckpt_every, 1)
    extra = {"sample": asdict(cfg.sample)}

    def on_step(tr, res):
        if tr.step % every == 0:
            save_trainer(run_dir / f"ckpt_{tr.step:06d}.npz", tr, extra)
        return False

    trainer.run(callback=on_step)
    save_trainer(run_dir / "last.npz", trainer, extra)
    print(f"trained to step {trainer.step}; checkpoint {run_dir / 'last.npz'}")
    return EXIT_OK


def _truncate_metrics(path: Path, step: int) -> None:
    """Drop log lines past ``step`` so a resumed run appends cleanly."""
    if not path.exists():
        return
    keep = [ln for ln in path.read_text().splitlines() if ln and json.loads(ln)["step"] <= step]
    path.write_text("".join(ln + "\n" for ln in keep))


# ---------------------------------------------------------------- infer / eval


def _load_model(ckpt_path: Path, use_ema: bool) -> tuple[MUVNet, SampleSettings]:
    """Model plus the sample settings of the run that wrote the checkpoint."""
    ckpt = read_checkpoint(ckpt_path)
    model = ckpt.build_model(use_ema=use_ema and bool(ckpt.ema()))
    stored = ckpt.meta.get("extra", {}).get("sample", {})
    settings = SampleSettings(**{k: v for k, v in stored.items() if k in SampleSettings.__dataclass_fields__})
    return model.eval(), settings


def _sample_config(args, settings: SampleSettings, task: Task, cf: int, seed: int) -> SampleConfig:
    steps = args.steps if args.steps is not None else settings.steps
    return SampleConfig(steps=steps, task=task, cf_view_index=cf, seed=seed, flow_shift=settings.flow_shift,
                        uv_only=settings.uv_only)


def _gt_sequence(item, task: Task, cf: int) -> FrameSequence:
    roles = frame_roles(TaskSpec(task, cf))
    src = item.mv_albedo if task is Task.IMG2TEX else item.mv_shaded
    frames = Frames(torch.from_numpy(src[None].astype(np.float64)),
                    torch.from_numpy(item.uv_albedo[None].astype(np.float64)))
    return FrameSequence(frames, roles, frame_timesteps(roles, torch.ones(1, dtype=torch.float64)))


def _rig_for_asset(asset_dir: Path, rig_seed) -> CameraRig:
    """The light comes from the dataset seed; read it from a sibling manifest if present."""
    if rig_seed is not None:
        return CameraRig.from_seed(rig_seed)
    try:
        return rig_for(read_manifest(asset_dir.parent))
    except DataError:
        return CameraRig.from_seed(0)


def cmd_infer(args, workdir: Path) -> int:
    task = Task(args.task)
    if task is Task.IMG2TEX and not 0 <= args.cond_view < NUM_VIEWS:
        raise UsageError(f"--cond-view must be in 0..{NUM_VIEWS - 1}, got {args.cond_view}")
    asset_dir = _resolve(workdir, args.asset)
    if not (asset_dir / "meta.txt").is_file():
        raise DataError(f"not an asset directory: {asset_dir}")
    if task is Task.IMG2TEX and not asset_has_uv(asset_dir):
        raise DataError(f"{asset_dir} is a multi-view-only asset; img2tex needs UV ground truth")
    model, settings = _load_model(_resolve(workdir, args.ckpt), not args.no_ema)
    rig = _rig_for_asset(asset_dir, args.rig_seed)
    item = load_prepared(asset_dir, rig, model.cfg.mv_size)
    scfg = _sample_config(args, settings, task, args.cond_view if task is Task.IMG2TEX else 0, args.seed)
    seq = sample_prepared(model, [item], scfg)
    if not all(torch.isfinite(t).all() for t in (seq.frames.mv, seq.frames.uv)):
        raise NumericalError("sampling produced non-finite values")

    out = _resolve(workdir, args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in frames_to_images(seq).items():
        write_png(out / f"{name}.png", img)
    report = evaluate(item.asset, item.views, item.uvgeo, rig, seq, task=task)
    _write_json(out / "report.json", report.to_dict())
    if task is Task.IMG2TEX:
        textured = apply_texture(item.asset, frames_to_images(seq)["uv"])
        save_asset(textured, out / "textured")
        render_previews(textured, rig, out / "textured", size=args.preview_size)
    print(f"wrote outputs to {out}")
    return EXIT_OK


def cmd_eval(args, workdir: Path) -> int:
    data_dir = _resolve(workdir, args.data)
    manifest = read_manifest(data_dir)
    names = manifest["splits"].get(args.split, [])
    if not names:
        raise DataError(f"split {args.split!r} is empty")
    rig = rig_for(manifest)
    model, settings = (None, SampleSettings()) if args.inject_gt else _load_model(_resolve(workdir, args.ckpt),
                                                                                  not args.no_ema)
    mv_size = int(manifest.get("mv_size", 32))
    items = [load_prepared(data_dir / n, rig, mv_size) for n in names]
    for it in items:
        if not it.has_uv:
            raise DataError(f"{it.name} has no UV ground truth; cannot score img2tex")
    cfg = _sample_config(args, settings, Task.IMG2TEX, args.cond_view, args.seed)
    reports = []
    bs = max(args.batch_size, 1)
    for j in range(0, len(items), bs):
        chunk = items[j:j + bs]
        if args.inject_gt:
            seqs = [(_gt_sequence(it, Task.IMG2TEX, args.cond_view), 0) for it in chunk]
        else:
            seq = sample_prepared(model, chunk, replace(cfg, seed=cfg.seed + j))
            if not all(torch.isfinite(t).all() for t in (seq.frames.mv, seq.frames.uv)):
                raise NumericalError("sampling produced non-finite values")
            seqs = [(seq, k) for k in range(len(chunk))]
        for it, (seq, k) in zip(chunk, seqs):
            reports.append(evaluate(it.asset, it.views, it.uvgeo, rig, seq, index=k))
    summary = aggregate(reports)
    out = _resolve(workdir, args.out)
    _write_json(out, summary)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="muvtex", description=__doc__.splitlines()[0])
    p.add_argument("--workdir", default=".", help="root for all relative paths (default: .)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a toy dataset of textured primitives")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=16)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--kinds", help="comma list of cube,uvsphere,torus")
    g.add_argument("--textures", help="comma list of checker,stripes,gradient,voronoi")
    g.add_argument("--config", help="run config file (data section is used)")
    g.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")

    def add_config_args(sp):
        sp.add_argument("--config", help="key=value run config file")
        sp.add_argument("--preset", action="append", choices=sorted(PRESETS),
                        help="ablation / recipe preset, may repeat")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    t = sub.add_parser("train", help="train a model")
    add_config_args(t)
    t.add_argument("--data", default="data", help="dataset directory (default: data)")
    t.add_argument("--run", default="run", help="run directory (default: run)")
    t.add_argument("--stage", type=int, choices=(1, 2))
    t.add_argument("--mode", choices=("scratch", "finetune"))
    t.add_argument("--steps", type=int, help="total optimizer steps")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--base", help="base checkpoint for --mode finetune")

    i = sub.add_parser("infer", help="sample one asset")
    i.add_argument("--ckpt", required=True)
    i.add_argument("--asset", required=True)
    i.add_argument("--task", choices=[t.value for t in Task], default="img2tex")
    i.add_argument("--cond-view", type=int, default=0)
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--steps", type=int, help="Euler steps (default: the run's sample.steps, else 30)")
    i.add_argument("--out", required=True)
    i.add_argument("--rig-seed", type=int, help="dataset seed that fixed the light (default: from the manifest)")
    i.add_argument("--preview-size", type=int, default=128)
    i.add_argument("--no-ema", action="store_true", help="use raw instead of EMA weights")

    e = sub.add_parser("eval", help="score img2tex sampling over a dataset split")
    e.add_argument("--ckpt")
    e.add_argument("--data", default="data")
    e.add_argument("--split", default="eval", choices=("train-tex", "train-mv", "eval"))
    e.add_argument("--out", default="report.json")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--steps", type=int, help="Euler steps (default: the run's sample.steps, else 30)")
    e.add_argument("--cond-view", type=int, default=0, choices=range(NUM_VIEWS))
    e.add_argument("--batch-size", type=int, default=4)
    e.add_argument("--no-ema", action="store_true")
    e.add_argument("--inject-gt", action="store_true", help=argparse.SUPPRESS)
    return p


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    workdir = Path(args.workdir)
    if args.command == "eval" and not args.inject_gt and not args.ckpt:
        print("error: eval needs --ckpt", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args, workdir)
    except (UsageError, ConfigError, TextureSpecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, StoreError, CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
