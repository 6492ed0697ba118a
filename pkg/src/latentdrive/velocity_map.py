"""Multi-channel bird's-eye velocity maps around the ego vehicle.

A frame is a (4, H, W) float32 image in [0, 1], ego-centered and
axis-aligned (never rotated with the ego).  Channels:

  0  HV  human-driven traffic footprints, closing-speed encoded
  1  AV  automated traffic footprints, closing-speed encoded
  2  RL  drivable road mask
  3  MV  the ego vehicle's own footprint, absolute-speed encoded

Pixel intensity encodes speed logarithmically: slow is bright, fast is
dim, with a gate below which everything saturates to 1.  Traffic uses
the lane-speed difference to the ego (a car pacing the ego renders
bright, one closing fast renders dim); the ego's own channel uses its
absolute speed.  Frames are stacked over time for the temporal encoder,
and a corruption operator (additive Gaussian noise, then random
blanking, then a clamp) produces the noisy inputs the denoiser trains
on.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .geometry import RoadLayout
from .kernels import fill_rect

HV, AV, RL, MV = 0, 1, 2, 3
N_CHANNELS = 4
# channel pairs fed to the split bottleneck: each plane paired with the
# automated-traffic plane as shared context
CHANNEL_PAIRS = ((HV, AV), (RL, AV), (MV, AV))


@dataclass(frozen=True)
class VelocityMapParams:
    height: int = 64
    width: int = 64
    resolution: float = 1.875  # m per pixel
    frames: int = 4  # temporal stack depth
    alpha: float = 1.0  # speed scale inside the log
    beta: float = 0.2  # log slope
    v_gate: float = 0.5  # m/s; below this the pixel saturates to 1

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0 or self.frames <= 0:
            raise ShapeMismatchError("velocity map dims must be positive")
        if self.resolution <= 0 or self.beta <= 0 or self.alpha <= 0:
            raise ShapeMismatchError("velocity map scales must be positive")


def speed_to_pixel(v, params: VelocityMapParams = None):
    """Log speed encoding; scalar or array, returns float64 in [0, 1]."""
    p = params or VelocityMapParams()
    v = np.abs(np.asarray(v, dtype=np.float64))
    raw = 1.0 - p.beta * np.log(p.alpha * np.maximum(v, 1e-300))
    out = np.where(v < p.v_gate, 1.0, np.clip(raw, 0.0, 1.0))
    return float(out) if out.ndim == 0 else out


def render(layout: RoadLayout, rows: np.ndarray, ego_idx: int = 0,
           params: VelocityMapParams = None, car_half_len: float = 2.3,
           car_half_wid: float = 1.0) -> np.ndarray:
    """One (4, H, W) frame from vehicle rows (x, y, psi, v, role, alive, lane speed).

    Role 0 paints into HV, role 1 into AV, both valued by the lane-speed
    difference to the ego; the ego row paints only into MV, valued by its
    absolute speed.
    """
    p = params or VelocityMapParams()
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != 7:
        raise ShapeMismatchError(f"vehicle rows must be (N, 7), got {rows.shape}")
    ex, ey = rows[ego_idx, 0], rows[ego_idx, 1]
    ego_rate = rows[ego_idx, 6]
    xmin = ex - 0.5 * p.width * p.resolution
    ymax = ey + 0.5 * p.height * p.resolution
    frame = np.zeros((N_CHANNELS, p.height, p.width), dtype=np.float64)
    for i, row in enumerate(rows):
        if row[5] < 0.5:
            continue
        if i == ego_idx:
            ch, val = MV, speed_to_pixel(row[3], p)
        else:
            ch = AV if row[4] >= 0.5 else HV
            val = speed_to_pixel(row[6] - ego_rate, p)
        fill_rect(frame[ch], xmin, ymax, p.resolution, row[0], row[1],
                  float(np.cos(row[2])), float(np.sin(row[2])),
                  car_half_len, car_half_wid, val)
    _fill_lane_mask(frame[RL], layout, layout.segments.keys(), xmin, ymax, p)
    return frame.astype(np.float32)


def _fill_lane_mask(img, layout, seg_ids, xmin, ymax, p):
    """Set pixels whose center lies within half a width of a centerline."""
    cols = xmin + (np.arange(p.width) + 0.5) * p.resolution
    rows_y = ymax - (np.arange(p.height) + 0.5) * p.resolution
    px, py = np.meshgrid(cols, rows_y)
    pts = np.column_stack([px.ravel(), py.ravel()])
    mask = np.zeros(len(pts), dtype=bool)
    for sid in seg_ids:
        seg = layout.segments[sid]
        _, d, valid = seg.project_many(pts)
        mask |= valid & (np.abs(d) <= seg.width * 0.5 + 1e-9)
    img[...] = np.maximum(img, mask.reshape(p.height, p.width).astype(np.float64))


class FrameStack:
    """Rolling temporal stack; shape (channels, frames, H, W), newest last."""

    def __init__(self, params: VelocityMapParams = None):
        self.params = params or VelocityMapParams()
        self._buf = None

    def reset(self, frame: np.ndarray):
        p = self.params
        self._check(frame)
        self._buf = np.repeat(frame[:, None, :, :], p.frames, axis=1).copy()

    def push(self, frame: np.ndarray):
        if self._buf is None:
            self.reset(frame)
            return
        self._check(frame)
        self._buf[:, :-1] = self._buf[:, 1:]
        self._buf[:, -1] = frame

    def stacked(self) -> np.ndarray:
        if self._buf is None:
            raise ShapeMismatchError("frame stack is empty; call reset()")
        return self._buf.copy()

    def _check(self, frame):
        p = self.params
        if frame.shape != (N_CHANNELS, p.height, p.width):
            raise ShapeMismatchError(
                f"frame shape {frame.shape} != {(N_CHANNELS, p.height, p.width)}")


def pair_channels(stack: np.ndarray):
    """Split a (4, ...) stack into the three 2-channel bottleneck inputs."""
    if stack.shape[0] != N_CHANNELS:
        raise ShapeMismatchError(f"expected {N_CHANNELS} channels, got {stack.shape[0]}")
    return [stack[list(pair)] for pair in CHANNEL_PAIRS]


def corrupt(frames: np.ndarray, rng: np.random.Generator, sigma: float = 0.05,
            p_mask: float = 0.1) -> np.ndarray:
    """Additive Gaussian noise, then random pixel blanking, then clamp to [0, 1]."""
    out = frames.astype(np.float64) + rng.normal(0.0, sigma, frames.shape)
    if p_mask > 0.0:
        out[rng.random(frames.shape) < p_mask] = 0.0
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def frame_to_png(frame: np.ndarray, path, upscale: int = 3):
    """Write the four channels side by side as one grayscale PNG."""
    from PIL import Image

    chans = [np.asarray(c, dtype=np.float64) for c in frame]
    strip = np.concatenate(chans, axis=1)
    img = Image.fromarray((np.clip(strip, 0.0, 1.0) * 255).astype(np.uint8), "L")
    if upscale > 1:
        img = img.resize((img.width * upscale, img.height * upscale), Image.NEAREST)
    img.save(path)
