import numpy as np
import pytest

from mirisac.channel import random_layout, realize
from mirisac.metrics import BeamformingSet
from mirisac.scene import SceneConfig, default_user_positions

CLUTTERS = SceneConfig().clutter_pos


def desk_config(**kw) -> SceneConfig:
    """Scaled-down scene used by the multi-user checks."""
    base = dict(N_B=8, N_S=8, N_I=4, user_pos=default_user_positions(2), clutter_pos=CLUTTERS[:2])
    base.update(kw)
    return SceneConfig(**base)


def random_beams(rng, N_B, N_S, N_I, K, P=1.0) -> BeamformingSet:
    W = rng.standard_normal((N_B, K + 1)) + 1j * rng.standard_normal((N_B, K + 1))
    W *= np.sqrt(P) / np.linalg.norm(W)
    r = rng.standard_normal(N_S) + 1j * rng.standard_normal(N_S)
    return BeamformingSet(W, np.exp(2j * np.pi * rng.random(N_I)), r / np.linalg.norm(r))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_real():
    cfg = desk_config(N_B=3, N_S=4, N_I=3, L_BI=2, L_IU=2)
    return cfg, realize(cfg, random_layout(cfg, 0), 7)


def single_user_scene(seed: int, N_I: int | None = None):
    """Random single-path single-user geometry around the IRS.

    Users sit 10 m and targets 15 m from the IRS centre at uniform azimuth
    and elevation in [0, pi/3]; N_I cycles through 4, 9, 16.
    """
    from mirisac.channel import assemble_channels, draw_paths
    from mirisac.scene import Position3D

    rng = np.random.default_rng(seed)
    N_I = [4, 9, 16][seed % 3] if N_I is None else N_I

    def rp(r):
        a = rng.uniform(0, 2 * np.pi)
        e = rng.uniform(0, np.pi / 3)
        return Position3D(30 + r * np.cos(e) * np.cos(a), 30 + r * np.cos(e) * np.sin(a), r * np.sin(e))

    cfg = SceneConfig(N_I=N_I, L_BI=1, L_IU=1, user_pos=(rp(10),), target_pos=rp(15), clutter_pos=(), N_B=16, N_S=16)
    return cfg, assemble_channels(cfg, random_layout(cfg, seed), draw_paths(cfg, seed))


ACCEPTANCE: list = []


def report(n: int, ok: bool, detail: str):
    """Record one acceptance line; the terminal summary prints them all."""
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
