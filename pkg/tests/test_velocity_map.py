import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from latentdrive.errors import ShapeMismatchError
from latentdrive.geometry import ScenarioKind, drivable
from latentdrive.kernels import _fill_rect_numpy, fill_rect
from latentdrive.velocity_map import (AV, CHANNEL_PAIRS, HV, MV, N_CHANNELS,
                                      RL, FrameStack, VelocityMapParams,
                                      corrupt, frame_to_png, pair_channels,
                                      render, speed_to_pixel)
from latentdrive.util import substream

from conftest import assert_close

P = VelocityMapParams(height=32, width=32, resolution=3.75, frames=4)


def oracle_pixel(v, p):
    v = abs(float(v))
    if v < p.v_gate:
        return 1.0
    return min(1.0, max(0.0, 1.0 - p.beta * math.log(p.alpha * v)))


def row(x, y, psi=0.0, v=10.0, role=0.0, alive=1.0, rate=None):
    return [x, y, psi, v, role, alive, v if rate is None else rate]


def cell_of(x, y, ex, ey, p=P):
    xmin = ex - 0.5 * p.width * p.resolution
    ymax = ey + 0.5 * p.height * p.resolution
    return int((ymax - y) // p.resolution), int((x - xmin) // p.resolution)


# -- speed encoding ----------------------------------------------------


def test_speed_encoding_matches_closed_form():
    grid = np.concatenate([np.linspace(0.0, 50.0, 401),
                           [P.v_gate - 1e-9, P.v_gate, P.v_gate + 1e-9,
                            1e-6, 148.4, 1e4]])  # gate edge and both clamps
    for v in grid:
        assert_close(speed_to_pixel(v, P), oracle_pixel(v, P), 1e-12)
    out = speed_to_pixel(grid, P)
    assert out.shape == grid.shape
    assert_close(out, [oracle_pixel(v, P) for v in grid], 1e-12)


def test_speed_encoding_uses_magnitude():
    # closing from behind or ahead reads the same
    assert speed_to_pixel(-7.0, P) == speed_to_pixel(7.0, P)


def test_scalar_encoding_returns_float():
    assert isinstance(speed_to_pixel(3.0, P), float)


# -- render ------------------------------------------------------------


@pytest.fixture(scope="module")
def cruise(layouts):
    lay = layouts[ScenarioKind.HIGHWAY_CRUISE]
    seg = lay.segment(lay.ego_spawn)
    ex, ey = seg.point_at(200.0, 0.0)
    return lay, ex, ey


def test_traffic_encodes_closing_speed(cruise):
    lay, ex, ey = cruise
    rows = [row(ex, ey, v=15.0, role=2.0),
            row(ex + 20.0, ey, v=20.0, role=0.0)]
    f = render(lay, np.asarray(rows), params=P)
    r, c = cell_of(ex + 20.0, ey, ex, ey)
    assert_close(f[HV][r, c], oracle_pixel(20.0 - 15.0, P), 1e-6)
    assert f[AV].sum() == 0.0


def test_pacing_traffic_saturates_bright(cruise):
    lay, ex, ey = cruise
    rows = [row(ex, ey, v=15.0, role=2.0), row(ex - 15.0, ey, v=15.0)]
    f = render(lay, np.asarray(rows), params=P)
    r, c = cell_of(ex - 15.0, ey, ex, ey)
    assert f[HV][r, c] == 1.0


def test_roles_pick_their_channel(cruise):
    lay, ex, ey = cruise
    rows = [row(ex, ey, v=15.0, role=2.0),
            row(ex + 15.0, ey, v=10.0, role=0.0),
            row(ex - 15.0, ey, v=10.0, role=1.0)]
    f = render(lay, np.asarray(rows), params=P)
    assert f[HV][cell_of(ex + 15.0, ey, ex, ey)] > 0.0
    assert f[AV][cell_of(ex - 15.0, ey, ex, ey)] > 0.0
    assert f[HV][cell_of(ex - 15.0, ey, ex, ey)] == 0.0


def test_ego_paints_only_its_own_channel(cruise):
    lay, ex, ey = cruise
    f = render(lay, np.asarray([row(ex, ey, v=12.0, role=2.0)]), params=P)
    assert f[HV].sum() == 0.0 and f[AV].sum() == 0.0
    assert f[MV].max() == pytest.approx(oracle_pixel(12.0, P), abs=1e-6)
    assert f[MV][cell_of(ex, ey, ex, ey)] > 0.0


def test_dead_vehicles_are_not_drawn(cruise):
    lay, ex, ey = cruise
    rows = [row(ex, ey, v=15.0, role=2.0),
            row(ex + 15.0, ey, v=5.0, alive=0.0)]
    f = render(lay, np.asarray(rows), params=P)
    assert f[HV].sum() == 0.0


def test_legacy_row_width_is_rejected(cruise):
    lay, ex, ey = cruise
    with pytest.raises(ShapeMismatchError):
        render(lay, np.zeros((2, 6)), params=P)


@given(dx=st.floats(-55.0, 55.0), dy=st.floats(-55.0, 55.0),
       psi=st.floats(0.0, 2 * math.pi))
def test_in_view_vehicles_never_vanish(cruise, dx, dy, psi):
    # a car is smaller than one 3.75 m cell, so rasterization must stamp
    # the cell under its center no matter how the corners fall
    lay, ex, ey = cruise
    rows = [row(ex, ey, v=15.0, role=2.0),
            row(ex + dx, ey + dy, psi=psi, v=3.0)]
    f = render(lay, np.asarray(rows), params=P)
    assert (f[HV] > 0).sum() >= 1


def test_road_channel_is_the_drivable_mask(cruise):
    lay, ex, ey = cruise
    f = render(lay, np.asarray([row(ex, ey, v=15.0, role=2.0)]), params=P)
    assert set(np.unique(f[RL])) <= {0.0, 1.0}
    xmin = ex - 0.5 * P.width * P.resolution
    ymax = ey + 0.5 * P.height * P.resolution
    rng = substream(7, "rl-cells")
    for _ in range(200):
        r = int(rng.integers(P.height))
        c = int(rng.integers(P.width))
        cx = xmin + (c + 0.5) * P.resolution
        cy = ymax - (r + 0.5) * P.resolution
        assert f[RL][r, c] == float(drivable((cx, cy), lay))


# -- frame stack -------------------------------------------------------


def frame_like(v):
    return np.full((N_CHANNELS, P.height, P.width), float(v), dtype=np.float32)


def test_stack_seeds_with_first_frame_and_rolls():
    st_ = FrameStack(P)
    st_.push(frame_like(1))
    assert st_.stacked().shape == (N_CHANNELS, P.frames, P.height, P.width)
    assert (st_.stacked() == 1).all()  # reset repeats the first frame
    st_.push(frame_like(2))
    st_.push(frame_like(3))
    got = st_.stacked()[0, :, 0, 0]
    assert list(got) == [1.0, 1.0, 2.0, 3.0]  # newest last


def test_stack_returns_a_copy():
    st_ = FrameStack(P)
    st_.push(frame_like(5))
    a = st_.stacked()
    a[:] = 0
    assert (st_.stacked() == 5).all()


def test_stack_rejects_bad_shapes_and_empty_reads():
    st_ = FrameStack(P)
    with pytest.raises(ShapeMismatchError):
        st_.stacked()
    with pytest.raises(ShapeMismatchError):
        st_.push(np.zeros((N_CHANNELS, 16, 16), dtype=np.float32))


# -- channel pairs -----------------------------------------------------


def test_pairs_share_the_automated_plane():
    assert CHANNEL_PAIRS == ((HV, AV), (RL, AV), (MV, AV))
    stack = np.arange(4, dtype=np.float32)[:, None, None, None] * \
        np.ones((4, P.frames, P.height, P.width), dtype=np.float32)
    parts = pair_channels(stack)
    assert len(parts) == 3
    for (a, b), part in zip(CHANNEL_PAIRS, parts):
        assert part.shape[0] == 2
        assert (part[0] == a).all() and (part[1] == b).all()
    with pytest.raises(ShapeMismatchError):
        pair_channels(np.zeros((5, 2, 4, 4)))


# -- corruption --------------------------------------------------------


def test_corrupt_matches_independent_recompute():
    x = substream(0, "cx").random((3, 4, 8, 8)).astype(np.float32)
    got = corrupt(x, substream(9, "cn"), sigma=0.2, p_mask=0.3)
    g = substream(9, "cn")  # identical stream, replayed step by step
    want = x.astype(np.float64) + g.normal(0.0, 0.2, x.shape)
    want[g.random(x.shape) < 0.3] = 0.0
    want = np.clip(want, 0.0, 1.0).astype(np.float32)
    assert np.array_equal(got, want)


def test_corrupt_bounds_and_degenerate_knobs(rng):
    x = rng.random((2, 4, 8, 8)).astype(np.float32)
    out = corrupt(x, substream(1, "n"), sigma=1.0, p_mask=0.5)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.array_equal(corrupt(x, substream(1, "n"), 0.0, 0.0), x)
    assert (corrupt(x, substream(1, "n"), 0.0, 1.0) == 0.0).all()


# -- png export --------------------------------------------------------


def test_png_strip_has_all_channels(tmp_path):
    from PIL import Image

    path = tmp_path / "frame.png"
    frame_to_png(frame_like(0.5)[:, :, :], path, upscale=2)
    img = Image.open(path)
    assert img.size == (N_CHANNELS * P.width * 2, P.height * 2)


# -- rasterizer paths --------------------------------------------------


def test_rasterizer_paths_agree(rng):
    for _ in range(50):
        img_a = rng.random((24, 24))
        img_b = img_a.copy()
        cx, cy = rng.uniform(-10, 100, 2)
        psi = rng.uniform(0, 2 * math.pi)
        hl, hw = rng.uniform(0.5, 8, 2)
        val = float(rng.random())
        args = (0.0, 90.0, 3.75, cx, cy, math.cos(psi), math.sin(psi),
                hl, hw, val)
        fill_rect(img_a, *args)
        _fill_rect_numpy(img_b, *args)
        assert np.array_equal(img_a, img_b)


def test_params_validate():
    with pytest.raises(ShapeMismatchError):
        VelocityMapParams(height=0)
    with pytest.raises(ShapeMismatchError):
        VelocityMapParams(resolution=-1.0)
