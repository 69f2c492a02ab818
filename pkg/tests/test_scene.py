import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mirisac.scene import (
    ConfigError,
    GeometryError,
    Position3D,
    SceneConfig,
    default_user_positions,
    geometry_to_angles,
    link_direction,
    load_default_scene,
    pathloss_power,
    virtual_angles,
)


def test_virtual_angles_examples():
    va = virtual_angles(0.0, 0.0)
    assert (va.theta, va.omega) == (1.0, 0.0)
    va = virtual_angles(np.pi / 2, 1.234)
    assert abs(va.theta) < 1e-15 and abs(va.omega) < 1e-15
    va = virtual_angles(np.pi / 3, np.pi / 4)
    np.testing.assert_allclose([va.theta, va.omega], [0.353553, 0.353553], atol=1e-6)


@given(st.floats(0, np.pi), st.floats(0, 2 * np.pi, exclude_max=True))
def test_virtual_angles_norm(e, a):
    va = virtual_angles(e, a)
    assert va.theta**2 + va.omega**2 == pytest.approx(np.cos(e) ** 2, abs=1e-12)
    assert va.theta**2 + va.omega**2 <= 1 + 1e-12


def test_pathloss_examples():
    assert pathloss_power(1.0, 1e-3, 2.2) == pytest.approx(1e-3)
    assert pathloss_power(10.0, 1e-3, 2.2) == pytest.approx(6.3096e-6, rel=1e-4)
    assert pathloss_power(37.0, 2e-3, 0.0) == 2e-3
    with pytest.raises(ValueError):
        pathloss_power(0.0)
    with pytest.raises(ValueError):
        pathloss_power(-1.0)


@given(st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.floats(0.1, 4))
def test_pathloss_decreasing(d1, d2, alpha):
    if d1 == d2:
        return
    lo, hi = sorted((d1, d2))
    assert pathloss_power(lo, 1e-3, alpha) > pathloss_power(hi, 1e-3, alpha)


def test_link_direction_axes():
    o = Position3D(0, 0, 0)
    el, az, d = link_direction(o, Position3D(5, 0, 0))
    assert (el, az, d) == (0.0, 0.0, 5.0)
    el, _, _ = link_direction(o, Position3D(0, 0, 1))
    assert el == pytest.approx(np.pi / 2)
    # the user straight below the IRS in y points along -y
    el, az, d = link_direction(Position3D(30, 30, 0), Position3D(30, 20, 0))
    assert az == pytest.approx(3 * np.pi / 2) and el == 0 and d == 10
    with pytest.raises(GeometryError):
        link_direction(o, Position3D(0, 0, 0))


def test_angles_translation_invariant():
    cfg = SceneConfig()
    s = np.array([3.0, -7.0, 2.0])

    def shift(p):
        return Position3D(*(p.as_array() + s))

    moved = cfg.replace(
        transmitter_pos=shift(cfg.transmitter_pos), receiver_pos=shift(cfg.receiver_pos), irs_pos=shift(cfg.irs_pos),
        target_pos=shift(cfg.target_pos), user_pos=tuple(map(shift, cfg.user_pos)),
        clutter_pos=tuple(map(shift, cfg.clutter_pos)))
    a, b = geometry_to_angles(cfg), geometry_to_angles(moved)
    for f in ("bi_tx", "bi_irs", "iu", "target_irs", "target_rx", "clutter_irs", "clutter_rx"):
        np.testing.assert_allclose(getattr(a, f), getattr(b, f), atol=1e-12)


def test_coincident_geometry_rejected():
    cfg = SceneConfig(target_pos=SceneConfig().irs_pos)
    with pytest.raises(GeometryError):
        geometry_to_angles(cfg)


def test_config_defaults_and_validation():
    cfg = SceneConfig()
    assert cfg.region_half_width == pytest.approx(8 * cfg.wavelength)
    assert cfg.min_spacing == pytest.approx(cfg.wavelength / 2)
    assert cfg.K == 3 and cfg.C == 4
    assert cfg.noise_power == pytest.approx(1e-12)
    assert cfg.transmit_power == pytest.approx(10**1.5 * 1e-3)
    for bad in (dict(N_I=0), dict(min_spacing=-1.0), dict(user_pos=()), dict(transmit_power=0.0),
                dict(noise_power=-1.0), dict(region_half_width=1e-3, min_spacing=0.01)):
        with pytest.raises(ConfigError):
            SceneConfig(**bad)


def test_config_roundtrip(tmp_path):
    cfg = SceneConfig(N_I=9, user_pos=default_user_positions(2), target_power=1e-2)
    path = tmp_path / "scene.json"
    cfg.save(path)
    assert SceneConfig.load(path) == cfg
    assert load_default_scene() == SceneConfig()


def test_from_dict_conveniences():
    cfg = SceneConfig.from_dict({"num_users": 2, "transmit_power_dbm": 20, "noise_power_dbm": -80})
    assert cfg.K == 2
    assert cfg.transmit_power == pytest.approx(0.1)
    assert cfg.noise_power == pytest.approx(1e-11)


def test_users_on_circle():
    us = default_user_positions(4)
    r = [np.hypot(u.x - 30, u.y - 20) for u in us]
    np.testing.assert_allclose(r, 2.0)
    assert default_user_positions(1)[0] == Position3D(30, 20, 0)
