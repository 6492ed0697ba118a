"""Binary tensor container used for observation and latent datasets.

Layout (all little-endian):

    bytes 0..3   magic b"LDTF"
    byte  4      format version (1)
    byte  5      dtype code (1 = float32)
    bytes 6..7   ndim as uint16
    ndim x 8     extents as uint64
    rest         payload, float32, C order

An empty tensor (any zero extent) is a valid file with no payload.
"""

import numpy as np

from .errors import DatasetFormatError

MAGIC = b"LDTF"
_VERSION = 1
_DTYPE_F32 = 1


def write_tensor(path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    header = bytearray()
    header += MAGIC
    header += bytes([_VERSION, _DTYPE_F32])
    header += np.uint16(arr.ndim).tobytes()
    header += np.asarray(arr.shape, dtype=np.uint64).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise DatasetFormatError(f"{path}: not a tensor file (bad magic)")
    version, dtype_code = blob[4], blob[5]
    if version != _VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    if dtype_code != _DTYPE_F32:
        raise DatasetFormatError(f"{path}: unsupported dtype code {dtype_code}")
    ndim = int(np.frombuffer(blob, dtype="<u2", count=1, offset=6)[0])
    shape = tuple(int(x) for x in np.frombuffer(blob, dtype="<u8", count=ndim, offset=8))
    offset = 8 + 8 * ndim
    count = int(np.prod(shape)) if shape else 1
    expected = offset + 4 * count
    if len(blob) != expected:
        raise DatasetFormatError(f"{path}: payload size {len(blob) - offset}, expected {4 * count}")
    data = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
    return data.reshape(shape).copy()
