"""Observation dataset collection and on-disk format.

A dataset is a directory holding three tensor files plus a manifest:

    frames.ldt  (N, C, T, H, W) float32 stacked observations
    labels.ldt  (N,) float32 scenario indices
    split.ldt   (N,) float32 validation flags (1 = held out)
    meta.json   collection settings and a content fingerprint

Frames come from rolling out a randomly acting ego across scenario
worlds and recording the clean frame stack at every decision point.
Samples are shuffled, but the train/validation split is by episode
(every tenth episode; the last one when a scenario has fewer than ten)
so near-duplicate consecutive frames never straddle the split.
"""

import json
import os

import numpy as np

from .env import N_ACTIONS, World, WorldParams
from .errors import DatasetFormatError, MissingArtifactError
from .geometry import GeometryParams, ScenarioKind, build_scenario
from .tensorio import read_tensor, write_tensor
from .util import canonical_json, fingerprint, substream
from .velocity_map import FrameStack, VelocityMapParams, corrupt, render

SCENARIOS = ("highway_cruise", "highway_merge", "highway_exit",
             "intersection", "roundabout")


def derive_seed(seed, *tags) -> int:
    """Stable 63-bit integer seed from (seed, tags)."""
    return int(substream(seed, *tags).integers(2 ** 63))


def rollout_frames(kind, seed, vm_params, episodes, geo_params=None,
                   sigma=0.0, p_mask=0.0, max_steps=60, max_samples=None):
    """Frame stacks from random-action episodes in one scenario.

    Returns (stacks, episode_ids): (N, C, T, H, W) float32 clean stacks
    (pass sigma or p_mask to corrupt each frame first) and the episode
    index of every sample.  Every pre-action observation is kept.
    """
    sk = ScenarioKind.parse(kind)
    layout = build_scenario(sk, geo_params or GeometryParams())
    world = World(layout, WorldParams.for_scenario(sk))
    out, eps = [], []
    for ep in range(episodes):
        if max_samples is not None and len(out) >= max_samples:
            break
        ep_rng = substream(seed, "data", kind, ep)
        world.seed = derive_seed(seed, "world", kind, ep)
        world.reset()
        stack = FrameStack(vm_params)
        for _ in range(max_steps):
            frame = render(layout, world.vehicle_rows(), params=vm_params)
            if sigma > 0.0 or p_mask > 0.0:
                frame = corrupt(frame, ep_rng, sigma, p_mask)
            stack.push(frame)
            out.append(stack.stacked())
            eps.append(ep)
            if max_samples is not None and len(out) >= max_samples:
                break
            _, done, _ = world.step(int(ep_rng.integers(N_ACTIONS)))
            if done:
                break
    shape = (0, 4, vm_params.frames, vm_params.height, vm_params.width)
    stacks = (np.stack(out).astype(np.float32) if out
              else np.zeros(shape, dtype=np.float32))
    return stacks, np.asarray(eps, dtype=np.int64)


def collect_dataset(out_dir, seed, episodes_per_scenario, vm_params=None,
                    scenarios=SCENARIOS, geo_params=None, log=None):
    """Build a shuffled mixed-scenario dataset directory; returns meta."""
    vm_params = vm_params or VelocityMapParams()
    os.makedirs(out_dir, exist_ok=True)
    frames, labels, val = [], [], []
    counts = {}
    for kind in scenarios:
        if kind not in SCENARIOS:
            raise DatasetFormatError(f"unknown scenario {kind!r}")
        got, eps = rollout_frames(kind, seed, vm_params,
                                  episodes=episodes_per_scenario,
                                  geo_params=geo_params)
        frames.append(got)
        labels.append(np.full(len(got), SCENARIOS.index(kind), dtype=np.float32))
        val_eps = {e for e in range(episodes_per_scenario)
                   if e % 10 == 9 or (episodes_per_scenario < 10
                                      and e == episodes_per_scenario - 1)}
        val.append(np.asarray([float(e in val_eps) for e in eps],
                              dtype=np.float32))
        counts[kind] = int(len(got))
        if log:
            log(f"collected {len(got)} frames for {kind}")
    frames = np.concatenate(frames).astype(np.float32)
    labels = np.concatenate(labels).astype(np.float32)
    val = np.concatenate(val).astype(np.float32)
    order = substream(seed, "shuffle").permutation(len(frames))
    frames, labels, val = frames[order], labels[order], val[order]
    write_tensor(os.path.join(out_dir, "frames.ldt"), frames)
    write_tensor(os.path.join(out_dir, "labels.ldt"), labels)
    write_tensor(os.path.join(out_dir, "split.ldt"), val)
    meta = {
        "scenarios": list(scenarios),
        "counts": counts,
        "n_samples": int(len(frames)),
        "n_val": int(val.sum()),
        "episodes_per_scenario": int(episodes_per_scenario),
        "frame_shape": [int(s) for s in frames.shape[1:]],
        "seed": int(seed),
        "vm": {
            "height": vm_params.height, "width": vm_params.width,
            "resolution": vm_params.resolution, "frames": vm_params.frames,
        },
        "fingerprint": fingerprint(frames.tobytes() + labels.tobytes()),
    }
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        fh.write(canonical_json(meta))
    return meta


def load_dataset(path):
    """Read a dataset directory; returns (frames, labels, val_mask, meta)."""
    meta_path = os.path.join(path, "meta.json")
    if not os.path.isdir(path) or not os.path.exists(meta_path):
        raise MissingArtifactError(f"no dataset at {path}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    frames = read_tensor(os.path.join(path, "frames.ldt"))
    labels = read_tensor(os.path.join(path, "labels.ldt"))
    split_path = os.path.join(path, "split.ldt")
    val = (read_tensor(split_path) if os.path.exists(split_path)
           else np.zeros(len(frames), dtype=np.float32))
    if frames.ndim != 5:
        raise DatasetFormatError(f"frames must be 5-d, got {frames.ndim}-d")
    if not (len(frames) == len(labels) == len(val)):
        raise DatasetFormatError(
            f"{len(frames)} frames vs {len(labels)} labels vs {len(val)} flags")
    want = meta.get("fingerprint")
    got = fingerprint(frames.astype(np.float32).tobytes()
                      + labels.astype(np.float32).tobytes())
    if want is not None and want != got:
        raise DatasetFormatError(f"fingerprint mismatch: {got} != {want}")
    return frames, labels.astype(np.int64), val.astype(bool), meta
