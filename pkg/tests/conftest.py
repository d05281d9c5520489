import functools

import numpy as np
import pytest
import torch

from muvtex.geomesh import CameraRig, make_primitive, rasterize_uv, rasterize_views

# textures whose finest features the 32x32 view grid can resolve
NYQUIST_SAFE = ("stripes", "gradient", "voronoi")


@functools.lru_cache(maxsize=None)
def cached_asset(kind: str, spec: str, seed: int, randomize_pose: bool = True):
    return make_primitive(kind, spec, seed, randomize_pose=randomize_pose)


@functools.lru_cache(maxsize=None)
def cached_renders(kind: str, spec: str, seed: int, randomize_pose: bool = True, rig_seed: int = 0):
    asset = cached_asset(kind, spec, seed, randomize_pose)
    rig = CameraRig.from_seed(rig_seed)
    return asset, rig, rasterize_views(asset, rig), rasterize_uv(asset)


@pytest.fixture(autouse=True)
def _seed_everything():
    torch.manual_seed(0)
    np.random.seed(0)
    yield


# acceptance criteria report one line each; the lines are repeated at the end of the run
ACCEPTANCE: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
