"""Seeded RNG substreams, canonical hashing, small shared helpers."""

import hashlib
import json
import math

import numpy as np


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator derived from (seed, tags).

    Streams for different tag tuples never overlap, so adding a vehicle
    (one more tag) does not perturb the draws of existing ones.  String
    tags are folded to stable 32-bit ints.
    """
    key = []
    for t in tags:
        if isinstance(t, str):
            h = hashlib.sha256(t.encode("utf-8")).digest()
            key.append(int.from_bytes(h[:4], "little"))
        else:
            key.append(int(t) & 0xFFFFFFFF)
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=tuple(key))
    return np.random.default_rng(ss)


def clipped_gaussian(rng: np.random.Generator, mu: float, sigma: float, delta: float) -> float:
    """Gaussian draw truncated to [mu - delta, mu + delta] by rejection.

    sigma == 0 degenerates to the constant mu.
    """
    if sigma == 0.0:
        return float(mu)
    for _ in range(10000):
        x = rng.normal(mu, sigma)
        if mu - delta <= x <= mu + delta:
            return float(x)
    # unreachable for any sane (sigma, delta); keep a defined fallback
    return float(mu)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def fingerprint(obj) -> str:
    """Stable 16-hex-digit digest of bytes or a JSON-serializable tree."""
    if isinstance(obj, (bytes, bytearray)):
        return hashlib.sha256(obj).hexdigest()[:16]
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def sha256_array(arr: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


def fmt_float(x) -> str:
    """Shortest round-trip decimal form; byte-stable across runs."""
    return repr(float(x))
