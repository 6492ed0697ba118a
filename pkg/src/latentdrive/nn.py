"""Minimal neural network layers on numpy, written for exact auditability.

Parameters are stored float32; every layer upcasts to float64 for the
arithmetic and, in normal operation, rounds activations back to float32
at layer boundaries.  Passing precise=True keeps the float64 chain end
to end, which is what the finite-difference gradient checks run against
(same code path, no intermediate rounding).

Weight tying: a Param may be shared by several layers (an encoder
convolution and its transposed decoder twin, or a Dense and DenseTied
pair).  Gradients accumulate into the shared float64 buffer, so the tied
update is the sum of both layers' contributions.

Convolutions run as im2col gather + GEMM + col2im scatter using the
kernels module; transposed convolutions are their exact adjoints, so an
encoder/decoder pair with tied weights is a true transpose pair.
"""

import binascii
import json
import struct

import numpy as np

from .errors import ConfigMismatchError, DatasetFormatError, ShapeMismatchError
from .kernels import col2im2d, col2im3d, im2col2d, im2col3d


class Param:
    """A float32 tensor with a float64 gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, value, name=""):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float32)
        self.grad = np.zeros(self.value.shape, dtype=np.float64)

    def zero_grad(self):
        self.grad[...] = 0.0


def glorot_uniform(rng: np.random.Generator, shape, fan_in, fan_out) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def sgd_step(params, lr: float):
    """Plain gradient descent; math in float64, stored back as float32."""
    for p in params:
        p.value = (p.value.astype(np.float64) - lr * p.grad).astype(np.float32)


def _out(x64, precise):
    return x64 if precise else x64.astype(np.float32)


class Layer:
    def params(self):
        return []

    def forward(self, x, precise=False):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError


class Dense(Layer):
    def __init__(self, rng, n_in, n_out, name="dense"):
        self.w = Param(glorot_uniform(rng, (n_in, n_out), n_in, n_out), name + ".w")
        self.b = Param(np.zeros(n_out), name + ".b")
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, precise=False):
        self._x = np.asarray(x, dtype=np.float64)
        y = self._x @ self.w.value.astype(np.float64) + self.b.value.astype(np.float64)
        return _out(y, precise)

    def backward(self, dout):
        d = np.asarray(dout, dtype=np.float64)
        self.w.grad += self._x.T @ d
        self.b.grad += d.sum(axis=0)
        return d @ self.w.value.astype(np.float64).T


class DenseTied(Layer):
    """y @ W.T + c, sharing W with the Dense encoder that owns it."""

    def __init__(self, w: Param, n_out, name="dense_t"):
        if w.value.shape[0] != n_out:
            raise ShapeMismatchError(
                f"tied weight {w.value.shape} cannot map back to {n_out} features")
        self.w = w
        self.c = Param(np.zeros(n_out), name + ".c")
        self._y = None

    def params(self):
        return [self.w, self.c]

    def forward(self, y, precise=False):
        self._y = np.asarray(y, dtype=np.float64)
        z = self._y @ self.w.value.astype(np.float64).T + self.c.value.astype(np.float64)
        return _out(z, precise)

    def backward(self, dout):
        d = np.asarray(dout, dtype=np.float64)
        self.w.grad += d.T @ self._y
        self.c.grad += d.sum(axis=0)
        return d @ self.w.value.astype(np.float64)


class Activation(Layer):
    def __init__(self, kind="sigmoid"):
        if kind not in ("sigmoid", "relu", "identity"):
            raise ConfigMismatchError(f"unknown activation {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x, precise=False):
        x64 = np.asarray(x, dtype=np.float64)
        if self.kind == "sigmoid":
            y = np.empty_like(x64)
            pos = x64 >= 0
            y[pos] = 1.0 / (1.0 + np.exp(-x64[pos]))
            ex = np.exp(x64[~pos])
            y[~pos] = ex / (1.0 + ex)
            self._cache = y
        elif self.kind == "relu":
            y = np.maximum(x64, 0.0)
            self._cache = x64
        else:
            y = x64
            self._cache = None
        return _out(y, precise)

    def backward(self, dout):
        d = np.asarray(dout, dtype=np.float64)
        if self.kind == "sigmoid":
            return d * self._cache * (1.0 - self._cache)
        if self.kind == "relu":
            return d * (self._cache > 0.0)
        return d


class Flatten(Layer):
    def __init__(self):
        self._shape = None

    def forward(self, x, precise=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return np.asarray(dout, dtype=np.float64).reshape(self._shape)


class Reshape(Layer):
    def __init__(self, target):
        self.target = tuple(target)
        self._shape = None

    def forward(self, x, precise=False):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dout):
        return np.asarray(dout, dtype=np.float64).reshape(self._shape)


class Conv2d(Layer):
    def __init__(self, rng, c_in, c_out, kernel=4, stride=2, pad=1, name="conv2d"):
        fan_in = c_in * kernel * kernel
        fan_out = c_out * kernel * kernel
        self.w = Param(glorot_uniform(rng, (c_out, c_in, kernel, kernel),
                                      fan_in, fan_out), name + ".w")
        self.b = Param(np.zeros(c_out), name + ".b")
        self.stride, self.pad, self.kernel = stride, pad, kernel
        self._col = None
        self._xshape = None

    def params(self):
        return [self.w, self.b]

    def _dims(self, h, w):
        k, s, p = self.kernel, self.stride, self.pad
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x, precise=False):
        b, c, h, w = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        hc, wc = self._dims(h, w)
        xp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
        xp[:, :, p:p + h, p:p + w] = x
        col = np.empty((b, hc, wc, c, k, k), dtype=np.float64)
        im2col2d(xp, col, hc, wc, s, s, k, k)
        self._col = col.reshape(b * hc * wc, c * k * k)
        self._xshape = x.shape
        wr = self.w.value.astype(np.float64).reshape(self.w.value.shape[0], -1)
        y = self._col @ wr.T + self.b.value.astype(np.float64)
        y = y.reshape(b, hc, wc, -1).transpose(0, 3, 1, 2)
        return _out(y, precise)

    def backward(self, dout):
        b, c, h, w = self._xshape
        k, s, p = self.kernel, self.stride, self.pad
        hc, wc = self._dims(h, w)
        d = np.asarray(dout, dtype=np.float64).transpose(0, 2, 3, 1).reshape(-1, self.w.value.shape[0])
        self.w.grad += (d.T @ self._col).reshape(self.w.value.shape)
        self.b.grad += d.sum(axis=0)
        wr = self.w.value.astype(np.float64).reshape(self.w.value.shape[0], -1)
        dcol = (d @ wr).reshape(b, hc, wc, c, k, k)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
        col2im2d(dcol, dxp, hc, wc, s, s, k, k)
        return dxp[:, :, p:p + h, p:p + w]


class ConvTranspose2d(Layer):
    """Exact adjoint of Conv2d; pass a Conv2d's Param to tie weights."""

    def __init__(self, w: Param, pad=1, stride=2, name="convt2d"):
        self.w = w
        self.c = Param(np.zeros(w.value.shape[1]), name + ".c")
        self.stride, self.pad = stride, pad
        self.kernel = w.value.shape[2]
        self._ymat = None
        self._yshape = None

    def params(self):
        return [self.w, self.c]

    def out_hw(self, hc, wc):
        k, s, p = self.kernel, self.stride, self.pad
        return (hc - 1) * s - 2 * p + k, (wc - 1) * s - 2 * p + k

    def forward(self, y, precise=False):
        b, co, hc, wc = y.shape
        k, s, p = self.kernel, self.stride, self.pad
        c = self.w.value.shape[1]
        h, w = self.out_hw(hc, wc)
        self._ymat = np.asarray(y, dtype=np.float64).transpose(0, 2, 3, 1).reshape(-1, co)
        self._yshape = y.shape
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        zcol = (self._ymat @ wr).reshape(b, hc, wc, c, k, k)
        zp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
        col2im2d(zcol, zp, hc, wc, s, s, k, k)
        z = zp[:, :, p:p + h, p:p + w] + self.c.value.astype(np.float64)[None, :, None, None]
        return _out(z, precise)

    def backward(self, dout):
        b, co, hc, wc = self._yshape
        k, s, p = self.kernel, self.stride, self.pad
        c = self.w.value.shape[1]
        d = np.asarray(dout, dtype=np.float64)
        h, w = d.shape[2], d.shape[3]
        dp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=np.float64)
        dp[:, :, p:p + h, p:p + w] = d
        dcol = np.empty((b, hc, wc, c, k, k), dtype=np.float64)
        im2col2d(dp, dcol, hc, wc, s, s, k, k)
        dcol = dcol.reshape(-1, c * k * k)
        self.w.grad += (self._ymat.T @ dcol).reshape(self.w.value.shape)
        self.c.grad += d.sum(axis=(0, 2, 3))
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        dy = (dcol @ wr.T).reshape(b, hc, wc, co).transpose(0, 3, 1, 2)
        return dy


class Conv3d(Layer):
    def __init__(self, rng, c_in, c_out, kernel=(2, 4, 4), stride=(1, 2, 2),
                 pad=(0, 1, 1), name="conv3d"):
        kd, kh, kw = kernel
        fan_in = c_in * kd * kh * kw
        fan_out = c_out * kd * kh * kw
        self.w = Param(glorot_uniform(rng, (c_out, c_in, kd, kh, kw),
                                      fan_in, fan_out), name + ".w")
        self.b = Param(np.zeros(c_out), name + ".b")
        self.kernel, self.stride, self.pad = kernel, stride, pad
        self._col = None
        self._xshape = None

    def params(self):
        return [self.w, self.b]

    def _dims(self, dd, h, w):
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        return ((dd + 2 * pd - kd) // sd + 1, (h + 2 * ph - kh) // sh + 1,
                (w + 2 * pw - kw) // sw + 1)

    def forward(self, x, precise=False):
        b, c, dd, h, w = x.shape
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        dc, hc, wc = self._dims(dd, h, w)
        xp = np.zeros((b, c, dd + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        xp[:, :, pd:pd + dd, ph:ph + h, pw:pw + w] = x
        col = np.empty((b, dc, hc, wc, c, kd, kh, kw), dtype=np.float64)
        im2col3d(xp, col, dc, hc, wc, sd, sh, sw, kd, kh, kw)
        self._col = col.reshape(b * dc * hc * wc, c * kd * kh * kw)
        self._xshape = x.shape
        co = self.w.value.shape[0]
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        y = self._col @ wr.T + self.b.value.astype(np.float64)
        y = y.reshape(b, dc, hc, wc, co).transpose(0, 4, 1, 2, 3)
        return _out(y, precise)

    def backward(self, dout):
        b, c, dd, h, w = self._xshape
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        dc, hc, wc = self._dims(dd, h, w)
        co = self.w.value.shape[0]
        d = np.asarray(dout, dtype=np.float64).transpose(0, 2, 3, 4, 1).reshape(-1, co)
        self.w.grad += (d.T @ self._col).reshape(self.w.value.shape)
        self.b.grad += d.sum(axis=0)
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        dcol = (d @ wr).reshape(b, dc, hc, wc, c, kd, kh, kw)
        dxp = np.zeros((b, c, dd + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        col2im3d(dcol, dxp, dc, hc, wc, sd, sh, sw, kd, kh, kw)
        return dxp[:, :, pd:pd + dd, ph:ph + h, pw:pw + w]


class ConvTranspose3d(Layer):
    """Exact adjoint of Conv3d; pass a Conv3d's Param to tie weights."""

    def __init__(self, w: Param, stride=(1, 2, 2), pad=(0, 1, 1), name="convt3d"):
        self.w = w
        self.c = Param(np.zeros(w.value.shape[1]), name + ".c")
        self.kernel = w.value.shape[2:]
        self.stride, self.pad = stride, pad
        self._ymat = None
        self._yshape = None

    def params(self):
        return [self.w, self.c]

    def out_dhw(self, dc, hc, wc):
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        return ((dc - 1) * sd - 2 * pd + kd, (hc - 1) * sh - 2 * ph + kh,
                (wc - 1) * sw - 2 * pw + kw)

    def forward(self, y, precise=False):
        b, co, dc, hc, wc = y.shape
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        c = self.w.value.shape[1]
        dd, h, w = self.out_dhw(dc, hc, wc)
        self._ymat = np.asarray(y, dtype=np.float64).transpose(0, 2, 3, 4, 1).reshape(-1, co)
        self._yshape = y.shape
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        zcol = (self._ymat @ wr).reshape(b, dc, hc, wc, c, kd, kh, kw)
        zp = np.zeros((b, c, dd + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        col2im3d(zcol, zp, dc, hc, wc, sd, sh, sw, kd, kh, kw)
        z = zp[:, :, pd:pd + dd, ph:ph + h, pw:pw + w] + \
            self.c.value.astype(np.float64)[None, :, None, None, None]
        return _out(z, precise)

    def backward(self, dout):
        b, co, dc, hc, wc = self._yshape
        (kd, kh, kw), (sd, sh, sw), (pd, ph, pw) = self.kernel, self.stride, self.pad
        c = self.w.value.shape[1]
        d = np.asarray(dout, dtype=np.float64)
        dd, h, w = d.shape[2], d.shape[3], d.shape[4]
        dp = np.zeros((b, c, dd + 2 * pd, h + 2 * ph, w + 2 * pw), dtype=np.float64)
        dp[:, :, pd:pd + dd, ph:ph + h, pw:pw + w] = d
        dcol = np.empty((b, dc, hc, wc, c, kd, kh, kw), dtype=np.float64)
        im2col3d(dp, dcol, dc, hc, wc, sd, sh, sw, kd, kh, kw)
        dcol = dcol.reshape(-1, c * kd * kh * kw)
        self.w.grad += (self._ymat.T @ dcol).reshape(self.w.value.shape)
        self.c.grad += d.sum(axis=(0, 2, 3, 4))
        wr = self.w.value.astype(np.float64).reshape(co, -1)
        dy = (dcol @ wr.T).reshape(b, dc, hc, wc, co).transpose(0, 4, 1, 2, 3)
        return dy


class Network(Layer):
    """Sequential container; params() deduplicates shared (tied) tensors."""

    def __init__(self, layers):
        self.layers = list(layers)

    def params(self):
        seen, out = set(), []
        for layer in self.layers:
            for p in layer.params():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out

    def forward(self, x, precise=False):
        for layer in self.layers:
            x = layer.forward(x, precise=precise)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def n_params(self) -> int:
        return sum(p.value.size for p in self.params())


# -- losses ------------------------------------------------------------


def l2_loss(pred, target):
    """0.5 * mean-over-batch of the summed squared error; returns (loss, dpred)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    diff = p - t
    n = p.shape[0]
    loss = 0.5 * float((diff ** 2).sum()) / n
    return loss, diff / n


def bce_loss(pred, target, eps=1e-7):
    """Mean-over-batch binary cross-entropy on probabilities in (0, 1)."""
    p = np.clip(np.asarray(pred, dtype=np.float64), eps, 1.0 - eps)
    t = np.asarray(target, dtype=np.float64)
    n = p.shape[0]
    loss = -float((t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).sum()) / n
    grad = (p - t) / (p * (1.0 - p)) / n
    inside = (pred > eps) & (pred < 1.0 - eps)
    return loss, np.where(inside, grad, 0.0)


# -- finite-difference verification -----------------------------------


def finite_diff_check(loss_fn, params, rng: np.random.Generator, n_per_param=4,
                      h=1e-3):
    """Compare analytic gradients to central differences.

    loss_fn(backward: bool) -> float must run the model on a fixed batch;
    with backward=True it must also accumulate gradients.  Returns the
    worst relative error over sampled entries.
    """
    for p in params:
        p.zero_grad()
    loss_fn(backward=True)
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, analytic):
        flat = p.value.reshape(-1)
        idxs = rng.choice(flat.size, size=min(n_per_param, flat.size), replace=False)
        for idx in idxs:
            keep = flat[idx]
            flat[idx] = np.float32(keep + h)
            hi = float(flat[idx])
            l_hi = loss_fn(backward=False)
            flat[idx] = np.float32(keep - h)
            lo = float(flat[idx])
            l_lo = loss_fn(backward=False)
            flat[idx] = keep
            num = (l_hi - l_lo) / (hi - lo)
            ana = float(g.reshape(-1)[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            worst = max(worst, err)
    return worst


# -- checkpoint container ----------------------------------------------

_CKPT_MAGIC = b"LDCK"
_CKPT_VERSION = 1


def save_checkpoint(path, header: dict, arrays: dict):
    """Binary container: JSON header + named float32 tensors + CRC32."""
    body = bytearray()
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body += struct.pack("<HI", _CKPT_VERSION, len(hdr))
    body += hdr
    body += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float32)
        nb = name.encode("utf-8")
        body += struct.pack("<H", len(nb)) + nb
        body += struct.pack("<H", arr.ndim)
        body += struct.pack("<" + "Q" * arr.ndim, *arr.shape)
        body += arr.tobytes(order="C")
    crc = binascii.crc32(bytes(body)) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + bytes(body) + struct.pack("<I", crc))


def load_checkpoint(path):
    """Returns (header dict, {name: float32 array}); validates magic and CRC."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != _CKPT_MAGIC:
        raise DatasetFormatError(f"{path}: not a checkpoint container")
    body, crc_stored = blob[4:-4], struct.unpack("<I", blob[-4:])[0]
    if binascii.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise DatasetFormatError(f"{path}: checksum mismatch")
    off = 0
    version, hdr_len = struct.unpack_from("<HI", body, off)
    off += 6
    if version != _CKPT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    header = json.loads(body[off:off + hdr_len].decode("utf-8"))
    off += hdr_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<H", body, off)
        off += 2
        shape = struct.unpack_from("<" + "Q" * ndim, body, off)
        off += 8 * ndim
        size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arrays[name] = np.frombuffer(
            body, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(body):
        raise DatasetFormatError(f"{path}: trailing bytes in container")
    return header, arrays


def network_arrays(net: Network, prefix=""):
    """Name -> value mapping for checkpointing; names follow Param.name."""
    out = {}
    for i, p in enumerate(net.params()):
        name = p.name or f"param{i}"
        key = f"{prefix}{name}"
        if key in out:
            key = f"{key}#{i}"
        out[key] = p.value
    return out


def restore_network(net: Network, arrays: dict, prefix=""):
    for i, p in enumerate(net.params()):
        name = p.name or f"param{i}"
        key = f"{prefix}{name}"
        if key not in arrays:
            key = f"{key}#{i}"
        if key not in arrays:
            raise ConfigMismatchError(f"checkpoint missing tensor {key}")
        if arrays[key].shape != p.value.shape:
            raise ConfigMismatchError(
                f"tensor {key}: checkpoint shape {arrays[key].shape} != {p.value.shape}")
        p.value = np.ascontiguousarray(arrays[key], dtype=np.float32)
