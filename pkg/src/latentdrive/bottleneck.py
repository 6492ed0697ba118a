"""Tied-weight denoising autoencoder used as an observation bottleneck.

The encoder maps a velocity-map stack to a small sigmoid latent code; the
decoder reuses the encoder's weights transposed (dense) or as transposed
convolutions (conv), so encoder and decoder are one parameter set.
Training corrupts the input and reconstructs the clean target, optionally
adding a similarity penalty that pulls per-scenario latent means together
(weighted by lam), which is what makes codes comparable across road
topologies.

Three operating shapes:
  temporal   (C, T, H, W) stacks through 3-D convolutions (default)
  planar     (C, H, W) single frames through 2-D convolutions
  pair_mode  three 2-channel pairs (each plane with the automated-traffic
             plane) through one shared branch; latents concatenated
             branch-wise

A second-stage dense autoencoder can be stacked on frozen first-stage
latents; since those lie in (0, 1) it trains with binary cross-entropy.
"""

import itertools
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .errors import ConfigMismatchError, EmptyBatchError, LatentRangeError
from .util import substream
from .velocity_map import AV, CHANNEL_PAIRS, corrupt


@dataclass(frozen=True)
class AEConfig:
    latent: int = 64
    channels: int = 4
    frames: int = 4
    height: int = 32
    width: int = 32
    conv_channels: tuple = (8, 16)
    temporal: bool = True
    pair_mode: bool = False
    loss: str = "l2"  # "l2" | "bce"
    sigma: float = 0.05  # corruption noise
    p_mask: float = 0.1  # corruption blanking probability
    lam: float = 0.0  # similarity penalty weight
    lr: float = 1e-3
    epochs: int = 30
    batch: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.latent <= 0:
            raise LatentRangeError(f"latent size must be positive, got {self.latent}")
        if self.height % 4 or self.width % 4:
            raise ConfigMismatchError("height/width must be multiples of 4")
        if self.temporal and self.frames < 3:
            raise ConfigMismatchError("temporal mode needs at least 3 frames")
        if self.loss not in ("l2", "bce"):
            raise ConfigMismatchError(f"unknown loss {self.loss!r}")


def _build_conv_stack(rng, cfg: AEConfig, c_in: int):
    """Returns (encoder, decoder) Networks with fully tied weights."""
    cc = cfg.conv_channels
    h4, w4 = cfg.height // 4, cfg.width // 4
    if cfg.temporal:
        d_out = cfg.frames - 2  # two k_d=2 stages, each shrinks depth by 1
        conv1 = nn.Conv3d(rng, c_in, cc[0], name="enc1")
        conv2 = nn.Conv3d(rng, cc[0], cc[1], name="enc2")
        feat = cc[1] * d_out * h4 * w4
        dense = nn.Dense(rng, feat, cfg.latent, name="code")
        encoder = nn.Network([conv1, nn.Activation("sigmoid"),
                              conv2, nn.Activation("sigmoid"),
                              nn.Flatten(), dense, nn.Activation("sigmoid")])
        decoder = nn.Network([nn.DenseTied(dense.w, feat, name="code_t"),
                              nn.Activation("sigmoid"),
                              nn.Reshape((cc[1], d_out, h4, w4)),
                              nn.ConvTranspose3d(conv2.w, name="dec2"),
                              nn.Activation("sigmoid"),
                              nn.ConvTranspose3d(conv1.w, name="dec1"),
                              nn.Activation("sigmoid")])
    else:
        conv1 = nn.Conv2d(rng, c_in, cc[0], name="enc1")
        conv2 = nn.Conv2d(rng, cc[0], cc[1], name="enc2")
        feat = cc[1] * h4 * w4
        dense = nn.Dense(rng, feat, cfg.latent, name="code")
        encoder = nn.Network([conv1, nn.Activation("sigmoid"),
                              conv2, nn.Activation("sigmoid"),
                              nn.Flatten(), dense, nn.Activation("sigmoid")])
        decoder = nn.Network([nn.DenseTied(dense.w, feat, name="code_t"),
                              nn.Activation("sigmoid"),
                              nn.Reshape((cc[1], h4, w4)),
                              nn.ConvTranspose2d(conv2.w, name="dec2"),
                              nn.Activation("sigmoid"),
                              nn.ConvTranspose2d(conv1.w, name="dec1"),
                              nn.Activation("sigmoid")])
    return encoder, decoder


class Bottleneck:
    """Encoder/decoder pair with shared parameters."""

    def __init__(self, cfg: AEConfig):
        self.cfg = cfg
        rng = substream(cfg.seed, "ae-init")
        c_in = 2 if cfg.pair_mode else cfg.channels
        self.encoder, self.decoder = _build_conv_stack(rng, cfg, c_in)

    # -- shapes ---------------------------------------------------------

    @property
    def latent_size(self) -> int:
        return self.cfg.latent * (len(CHANNEL_PAIRS) if self.cfg.pair_mode else 1)

    def input_shape(self):
        cfg = self.cfg
        if cfg.temporal:
            return (cfg.channels, cfg.frames, cfg.height, cfg.width)
        return (cfg.channels, cfg.height, cfg.width)

    def _split_pairs(self, x):
        # (B, 4, ...) -> list of (B, 2, ...) branch inputs
        return [x[:, list(pair)] for pair in CHANNEL_PAIRS]

    # -- inference ------------------------------------------------------

    def params(self):
        seen, out = set(), []
        for p in self.encoder.params() + self.decoder.params():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def encode(self, x, precise=False):
        x = np.asarray(x)
        if x.shape[1:] != self.input_shape():
            raise ConfigMismatchError(
                f"input shape {x.shape[1:]} != expected {self.input_shape()}")
        if self.cfg.pair_mode:
            codes = [self.encoder.forward(b, precise=precise)
                     for b in self._split_pairs(x)]
            return np.concatenate(codes, axis=1)
        return self.encoder.forward(x, precise=precise)

    def reconstruct(self, x, precise=False):
        """decode(encode(x)); pair mode returns the recombined 4-channel frame."""
        if not self.cfg.pair_mode:
            return self.decoder.forward(self.encoder.forward(x, precise=precise),
                                        precise=precise)
        outs = [self.decoder.forward(self.encoder.forward(b, precise=precise),
                                     precise=precise)
                for b in self._split_pairs(np.asarray(x))]
        return recombine_pairs(outs)

    # -- one SGD step ---------------------------------------------------

    def train_batch(self, x_clean, x_noisy, labels=None, lr=None, precise=False):
        """Denoising step; returns (recon loss, similarity penalty).

        labels groups rows by scenario for the similarity penalty; it is
        ignored when cfg.lam == 0 or fewer than two groups are present.
        """
        cfg = self.cfg
        lr = cfg.lr if lr is None else lr
        loss_fn = nn.l2_loss if cfg.loss == "l2" else nn.bce_loss
        self.zero_grad()
        if cfg.pair_mode:
            total = 0.0
            for clean_b, noisy_b in zip(self._split_pairs(x_clean),
                                        self._split_pairs(x_noisy)):
                y = self.encoder.forward(noisy_b, precise=precise)
                xh = self.decoder.forward(y, precise=precise)
                loss, dxh = loss_fn(xh, clean_b)
                dy = self.decoder.backward(dxh)
                self.encoder.backward(dy)
                total += loss
            nn.sgd_step(self.params(), lr)
            return total / len(CHANNEL_PAIRS), 0.0
        y = self.encoder.forward(x_noisy, precise=precise)
        penalty, dy_pen = 0.0, None
        if cfg.lam > 0.0 and labels is not None:
            penalty, dy_pen = similarity_penalty(y, labels)
        xh = self.decoder.forward(y, precise=precise)
        loss, dxh = loss_fn(xh, x_clean)
        dy = self.decoder.backward(dxh)
        if dy_pen is not None:
            dy = dy + cfg.lam * dy_pen
        self.encoder.backward(dy)
        nn.sgd_step(self.params(), lr)
        return loss, penalty

    def eval_loss(self, x_clean, x_noisy):
        cfg = self.cfg
        loss_fn = nn.l2_loss if cfg.loss == "l2" else nn.bce_loss
        if cfg.pair_mode:
            total = 0.0
            for clean_b, noisy_b in zip(self._split_pairs(x_clean),
                                        self._split_pairs(x_noisy)):
                xh = self.decoder.forward(self.encoder.forward(noisy_b))
                total += loss_fn(xh, clean_b)[0]
            return total / len(CHANNEL_PAIRS)
        xh = self.decoder.forward(self.encoder.forward(x_noisy))
        return loss_fn(xh, x_clean)[0]

    # -- persistence ----------------------------------------------------

    def save(self, path):
        header = {"kind": "bottleneck", "config": _cfg_to_json(self.cfg)}
        nn.save_checkpoint(path, header, _collect_arrays(self.params()))

    @classmethod
    def load(cls, path):
        header, arrays = nn.load_checkpoint(path)
        if header.get("kind") != "bottleneck":
            raise ConfigMismatchError(f"{path} is not a bottleneck checkpoint")
        model = cls(_cfg_from_json(header["config"]))
        _restore_arrays(model.params(), arrays)
        return model


def recombine_pairs(branch_outputs):
    """Merge three 2-channel pair reconstructions into one 4-channel frame.

    Unshared channels come from their own branch; the automated-traffic
    plane, present in every pair, is the mean of its three copies.
    """
    first = np.asarray(branch_outputs[0])
    out_shape = (first.shape[0], 4) + first.shape[2:]
    out = np.zeros(out_shape, dtype=first.dtype)
    av_acc = np.zeros((first.shape[0],) + first.shape[2:], dtype=np.float64)
    for (ctx_ch, _), branch in zip(CHANNEL_PAIRS, branch_outputs):
        out[:, ctx_ch] = branch[:, 0]
        av_acc += np.asarray(branch[:, 1], dtype=np.float64)
    out[:, AV] = (av_acc / len(CHANNEL_PAIRS)).astype(out.dtype)
    return out


def latent_similarity(za, zb) -> float:
    """Squared distance of batch-mean codes, normalized by latent width."""
    za = np.asarray(za, dtype=np.float64)
    zb = np.asarray(zb, dtype=np.float64)
    if za.size == 0 or zb.size == 0:
        raise EmptyBatchError("similarity needs non-empty batches")
    diff = za.mean(axis=0) - zb.mean(axis=0)
    return float(diff @ diff) / za.shape[1]


def similarity_penalty(y, labels):
    """Mean pairwise latent_similarity across label groups, with d/dy.

    Returns (penalty, dpen_dy); both zero when fewer than two groups.
    """
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels)
    groups = sorted(set(labels.tolist()))
    if len(groups) < 2:
        return 0.0, np.zeros_like(y)
    k = y.shape[1]
    idx = {g: np.flatnonzero(labels == g) for g in groups}
    mu = {g: y[idx[g]].mean(axis=0) for g in groups}
    pairs = list(itertools.combinations(groups, 2))
    dy = np.zeros_like(y)
    total = 0.0
    for a, b in pairs:
        diff = mu[a] - mu[b]
        total += float(diff @ diff) / k
        scale = 2.0 / (k * len(pairs))
        dy[idx[a]] += scale * diff / len(idx[a])
        dy[idx[b]] -= scale * diff / len(idx[b])
    return total / len(pairs), dy


# -- stacked second stage ----------------------------------------------


class DenseAE:
    """Tied dense autoencoder for stacking on first-stage latents."""

    def __init__(self, n_in, n_hidden, seed=0, loss="bce", lr=0.05):
        rng = substream(seed, "ae2-init")
        enc = nn.Dense(rng, n_in, n_hidden, name="s2")
        self.encoder = nn.Network([enc, nn.Activation("sigmoid")])
        self.decoder = nn.Network([nn.DenseTied(enc.w, n_in, name="s2_t"),
                                   nn.Activation("sigmoid")])
        self.loss = loss
        self.lr = lr
        self.n_in, self.n_hidden = n_in, n_hidden

    def params(self):
        seen, out = set(), []
        for p in self.encoder.params() + self.decoder.params():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
        return out

    def encode(self, x, precise=False):
        return self.encoder.forward(np.asarray(x), precise=precise)

    def reconstruct(self, x, precise=False):
        return self.decoder.forward(self.encode(x, precise=precise), precise=precise)

    def train_batch(self, x, precise=False):
        loss_fn = nn.l2_loss if self.loss == "l2" else nn.bce_loss
        for p in self.params():
            p.zero_grad()
        xh = self.reconstruct(x, precise=precise)
        loss, dxh = loss_fn(xh, x)
        self.encoder.backward(self.decoder.backward(dxh))
        nn.sgd_step(self.params(), self.lr)
        return loss


# -- training harness --------------------------------------------------


def train_autoencoder(model: Bottleneck, data, labels=None, val_frac=0.15,
                      log_cb=None, start_epoch=0, val_mask=None):
    """Epoch loop with held-out validation; returns the history list.

    data: (N, ...) float32 clean observations matching model.input_shape().
    The validation set is val_mask when given (e.g. the dataset's
    by-episode split), otherwise a seeded val_frac sample.  Corruption
    draws come from per-epoch substreams of cfg.seed, and the validation
    corruption is frozen so epochs are comparable.  Resuming from a
    checkpoint with start_epoch=k replays exactly the epochs a single
    uninterrupted run would have done.
    """
    cfg = model.cfg
    data = np.asarray(data, dtype=np.float32)
    n = len(data)
    if n < 4:
        raise EmptyBatchError(f"need at least 4 samples to train, got {n}")
    if val_mask is not None:
        val_mask = np.asarray(val_mask, dtype=bool)
        if val_mask.shape != (n,):
            raise ConfigMismatchError(
                f"val_mask shape {val_mask.shape} != ({n},)")
        if not val_mask.any() or val_mask.all():
            raise ConfigMismatchError("val_mask must mix both splits")
        val_idx = np.flatnonzero(val_mask)
        train_idx = np.flatnonzero(~val_mask)
    else:
        order = substream(cfg.seed, "ae-split").permutation(n)
        n_val = max(2, int(n * val_frac))
        val_idx, train_idx = order[:n_val], order[n_val:]
    val_clean = data[val_idx]
    val_noisy = corrupt(val_clean, substream(cfg.seed, "ae-valnoise"),
                        cfg.sigma, cfg.p_mask)
    labels = None if labels is None else np.asarray(labels)
    history = []
    for epoch in range(start_epoch, cfg.epochs):
        ep_rng = substream(cfg.seed, "ae-epoch", epoch)
        perm = train_idx[ep_rng.permutation(len(train_idx))]
        losses, pens = [], []
        for start in range(0, len(perm), cfg.batch):
            sel = perm[start:start + cfg.batch]
            if len(sel) < 2:
                continue
            clean = data[sel]
            noisy = corrupt(clean, ep_rng, cfg.sigma, cfg.p_mask)
            batch_labels = None if labels is None else labels[sel]
            loss, pen = model.train_batch(clean, noisy, labels=batch_labels)
            losses.append(loss)
            pens.append(pen)
        val_loss = _val_loss_batched(model, val_clean, val_noisy, cfg.batch)
        rec = {"epoch": epoch, "train_loss": float(np.mean(losses)),
               "penalty": float(np.mean(pens)), "val_loss": val_loss}
        history.append(rec)
        if log_cb:
            log_cb(rec)
    return history


def _val_loss_batched(model, clean, noisy, batch):
    total, count = 0.0, 0
    for start in range(0, len(clean), batch):
        c = clean[start:start + batch]
        total += model.eval_loss(c, noisy[start:start + batch]) * len(c)
        count += len(c)
    return total / max(count, 1)


def heldout_mse(model: Bottleneck, data, seed_tag=1) -> float:
    """Per-pixel mean squared error of denoised reconstructions."""
    cfg = model.cfg
    data = np.asarray(data, dtype=np.float32)
    noisy = corrupt(data, substream(cfg.seed, "ae-mse", seed_tag),
                    cfg.sigma, cfg.p_mask)
    total, count = 0.0, 0
    for start in range(0, len(data), cfg.batch):
        c = data[start:start + cfg.batch]
        xh = model.reconstruct(noisy[start:start + cfg.batch])
        total += float(((np.asarray(xh, dtype=np.float64) - c) ** 2).sum())
        count += c.size
    return total / max(count, 1)


# -- config / checkpoint helpers ---------------------------------------


def _cfg_to_json(cfg: AEConfig) -> dict:
    d = asdict(cfg)
    d["conv_channels"] = list(cfg.conv_channels)
    return d


def _cfg_from_json(d: dict) -> AEConfig:
    d = dict(d)
    d["conv_channels"] = tuple(d["conv_channels"])
    return AEConfig(**d)


def _collect_arrays(params) -> dict:
    out = {}
    for i, p in enumerate(params):
        key = p.name or f"param{i}"
        if key in out:
            key = f"{key}#{i}"
        out[key] = p.value
    return out


def _restore_arrays(params, arrays):
    for i, p in enumerate(params):
        key = p.name or f"param{i}"
        if key not in arrays:
            key = f"{key}#{i}"
        if key not in arrays:
            raise ConfigMismatchError(f"checkpoint missing tensor {key}")
        if arrays[key].shape != p.value.shape:
            raise ConfigMismatchError(
                f"tensor {key}: shape {arrays[key].shape} != {p.value.shape}")
        p.value = np.ascontiguousarray(arrays[key], dtype=np.float32)
