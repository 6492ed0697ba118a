"""Benchmark the jitted kernels against the numpy fallback path.

Run from the repository root:

    python3 bench/bench_kernels.py

Both variants live side by side in latentdrive.kernels regardless of
which one the LATENTDRIVE_DISABLE_NUMBA flag binds to the public names,
so a single process can time the pair and confirm they agree.
"""

import time

import numpy as np

from latentdrive import kernels as K
from latentdrive.accel import USE_NUMBA


def timeit(fn, *args, repeat=20):
    fn(*args)  # warm-up (and numba compilation)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3


def bench_im2col2d(jit, rng):
    x = rng.standard_normal((16, 8, 32, 32))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    col = np.zeros((16, 16, 16, 8, 4, 4))
    args = (xp, col, 16, 16, 2, 2, 4, 4)
    ref = np.zeros_like(col)
    K._im2col2d_numpy(xp, ref, *args[2:])
    jit(*args)
    assert np.array_equal(col, ref)
    return timeit(jit, *args), timeit(K._im2col2d_numpy, xp, col, *args[2:])


def bench_col2im2d(jit, rng):
    col = rng.standard_normal((16, 16, 16, 8, 4, 4))
    xp = np.zeros((16, 8, 34, 34))
    args = (col, xp, 16, 16, 2, 2, 4, 4)
    ref = np.zeros_like(xp)
    K._col2im2d_numpy(col, ref, *args[2:])
    jit(*args)
    assert np.allclose(xp, ref, atol=1e-12)
    return timeit(jit, *args), timeit(K._col2im2d_numpy, col, np.zeros_like(xp), *args[2:])


def bench_im2col3d(jit, rng):
    x = rng.standard_normal((8, 4, 4, 32, 32))
    xp = np.pad(x, ((0, 0), (0, 0), (0, 0), (1, 1), (1, 1)))
    col = np.zeros((8, 3, 16, 16, 4, 2, 4, 4))
    args = (xp, col, 3, 16, 16, 1, 2, 2, 2, 4, 4)
    ref = np.zeros_like(col)
    K._im2col3d_numpy(xp, ref, *args[2:])
    jit(*args)
    assert np.array_equal(col, ref)
    return timeit(jit, *args), timeit(K._im2col3d_numpy, xp, col, *args[2:])


def bench_col2im3d(jit, rng):
    col = rng.standard_normal((8, 3, 16, 16, 4, 2, 4, 4))
    xp = np.zeros((8, 4, 4, 34, 34))
    args = (col, xp, 3, 16, 16, 1, 2, 2, 2, 4, 4)
    ref = np.zeros_like(xp)
    K._col2im3d_numpy(col, ref, *args[2:])
    jit(*args)
    assert np.allclose(xp, ref, atol=1e-12)
    return timeit(jit, *args), timeit(K._col2im3d_numpy, col, np.zeros_like(xp), *args[2:])


def bench_fill_rect(jit, rng):
    xs = rng.uniform(10, 110, 24)
    ys = rng.uniform(10, 110, 24)
    psis = rng.uniform(0, 6.28, 24)

    def run(fn):
        img = np.zeros((64, 64))
        for cx, cy, psi in zip(xs, ys, psis):
            fn(img, 0.0, 120.0, 1.875, cx, cy, np.cos(psi), np.sin(psi),
               2.3, 1.0, 0.8)
        return img
    a, b = run(jit), run(K._fill_rect_numpy)
    assert np.array_equal(a, b)
    return (timeit(lambda: run(jit), repeat=10),
            timeit(lambda: run(K._fill_rect_numpy), repeat=10))


def bench_collision(jit, rng):
    boxes = np.column_stack([rng.uniform(0, 120, 200),
                             rng.uniform(0, 120, 200),
                             rng.uniform(0, 6.28, 200),
                             np.full(200, 2.3), np.full(200, 1.0)])
    assert np.array_equal(jit(boxes), K._collision_mask_numpy(boxes))
    return timeit(jit, boxes), timeit(K._collision_mask_numpy, boxes)


def main():
    if not USE_NUMBA:
        print("LATENTDRIVE_DISABLE_NUMBA is set; jitted path unavailable, "
              "timing pure-python loops instead (expect them to lose).")
    from latentdrive.accel import jit_kernel

    wrap = jit_kernel if USE_NUMBA else (lambda f: f)
    rng = np.random.default_rng(0)
    rows = [("kernel", "jit ms", "numpy ms", "speedup")]
    for name, fn, loop in (
            ("im2col2d", bench_im2col2d, K._im2col2d_loop),
            ("col2im2d", bench_col2im2d, K._col2im2d_loop),
            ("im2col3d", bench_im2col3d, K._im2col3d_loop),
            ("col2im3d", bench_col2im3d, K._col2im3d_loop),
            ("fill_rect", bench_fill_rect, K._fill_rect_loop),
            ("collision_mask", bench_collision, K._collision_mask_loop)):
        tj, tn = fn(wrap(loop), rng)
        rows.append((name, f"{tj:8.3f}", f"{tn:8.3f}", f"{tn / tj:6.2f}x"))
    widths = [max(len(str(r[i])) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))


if __name__ == "__main__":
    main()
