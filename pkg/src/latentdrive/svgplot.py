"""Dependency-free SVG charts plus PNG image grids for reports.

Charts are hand-assembled SVG strings: enough for loss curves, rate
comparisons, and similarity matrices without pulling in a plotting
stack.  Image grids embed PNG tiles as data URIs so a single .svg file
remains self-contained.
"""

import base64
import io
import math

import numpy as np

_FONT = "font-family='monospace' font-size='11'"
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    step = 10.0 ** math.floor(math.log10(span / n))
    for mult in (1, 2, 5, 10):
        if span / (step * mult) <= n:
            step *= mult
            break
    start = math.ceil(lo / step) * step
    out = []
    t = start
    while t <= hi + 1e-12 * span:
        out.append(round(t, 10))
        t += step
    return out


def _fmt(v):
    if v == int(v) and abs(v) < 1e6:
        return str(int(v))
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, width, height):
        self.width, self.height = width, height
        self.parts = [f"<svg xmlns='http://www.w3.org/2000/svg' "
                      f"width='{width}' height='{height}' "
                      f"viewBox='0 0 {width} {height}'>",
                      f"<rect width='{width}' height='{height}' fill='white'/>"]

    def add(self, s):
        self.parts.append(s)

    def text(self, x, y, s, anchor="start", rotate=None):
        tr = f" transform='rotate(-90 {x} {y})'" if rotate else ""
        self.add(f"<text x='{x}' y='{y}' text-anchor='{anchor}' {_FONT}{tr}>"
                 f"{_escape(s)}</text>")

    def save(self, path):
        self.parts.append("</svg>")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.parts))


def _escape(s):
    return (str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;"))


def _frame(canvas, box, xlim, ylim, xlabel, ylabel, title):
    x0, y0, x1, y1 = box
    canvas.add(f"<rect x='{x0}' y='{y0}' width='{x1 - x0}' height='{y1 - y0}' "
               f"fill='none' stroke='black'/>")
    if title:
        canvas.text((x0 + x1) / 2, y0 - 8, title, anchor="middle")
    canvas.text((x0 + x1) / 2, canvas.height - 6, xlabel, anchor="middle")
    canvas.text(14, (y0 + y1) / 2, ylabel, anchor="middle", rotate=True)
    def sx(v):
        return x0 + (v - xlim[0]) / (xlim[1] - xlim[0]) * (x1 - x0)
    def sy(v):
        return y1 - (v - ylim[0]) / (ylim[1] - ylim[0]) * (y1 - y0)
    for t in _ticks(*xlim):
        canvas.add(f"<line x1='{sx(t)}' y1='{y1}' x2='{sx(t)}' y2='{y1 + 4}' "
                   f"stroke='black'/>")
        canvas.text(sx(t), y1 + 16, _fmt(t), anchor="middle")
    for t in _ticks(*ylim):
        canvas.add(f"<line x1='{x0 - 4}' y1='{sy(t)}' x2='{x0}' y2='{sy(t)}' "
                   f"stroke='black'/>")
        canvas.text(x0 - 6, sy(t) + 4, _fmt(t), anchor="end")
    return sx, sy


def line_chart(path, series, title="", xlabel="", ylabel="", size=(560, 360),
               logy=False):
    """series: {name: [(x, y), ...]}; one polyline per entry."""
    pts_all = [p for pts in series.values() for p in pts]
    xs = [p[0] for p in pts_all] or [0.0, 1.0]
    ys = [p[1] for p in pts_all] or [0.0, 1.0]
    if logy:
        ys = [math.log10(max(y, 1e-12)) for y in ys]
    xlim = (min(xs), max(xs) if max(xs) > min(xs) else min(xs) + 1)
    pad = 0.05 * (max(ys) - min(ys) or 1.0)
    ylim = (min(ys) - pad, max(ys) + pad)
    canvas = _Canvas(*size)
    sx, sy = _frame(canvas, (70, 30, size[0] - 20, size[1] - 40), xlim, ylim,
                    xlabel, ylabel + (" (log10)" if logy else ""), title)
    for i, (name, pts) in enumerate(series.items()):
        color = _COLORS[i % len(_COLORS)]
        coords = " ".join(
            f"{sx(x):.1f},{sy(math.log10(max(y, 1e-12)) if logy else y):.1f}"
            for x, y in pts)
        canvas.add(f"<polyline points='{coords}' fill='none' stroke='{color}' "
                   f"stroke-width='1.5'/>")
        canvas.add(f"<rect x='{78 + 130 * i}' y='36' width='10' height='10' "
                   f"fill='{color}'/>")
        canvas.text(92 + 130 * i, 45, name)
    canvas.save(path)


def bar_chart(path, labels, groups, title="", ylabel="", size=(560, 360)):
    """groups: {name: [value per label]}; grouped vertical bars."""
    n_l, n_g = len(labels), len(groups)
    vals = [v for vs in groups.values() for v in vs]
    ylim = (0.0, (max(vals) if vals else 1.0) * 1.15 or 1.0)
    canvas = _Canvas(*size)
    box = (70, 30, size[0] - 20, size[1] - 50)
    sx, sy = _frame(canvas, box, (0, n_l), ylim, "", ylabel, title)
    slot = (box[2] - box[0]) / max(n_l, 1)
    bar_w = slot * 0.8 / max(n_g, 1)
    for gi, (name, vs) in enumerate(groups.items()):
        color = _COLORS[gi % len(_COLORS)]
        for li, v in enumerate(vs):
            x = box[0] + li * slot + slot * 0.1 + gi * bar_w
            y = sy(v)
            canvas.add(f"<rect x='{x:.1f}' y='{y:.1f}' width='{bar_w:.1f}' "
                       f"height='{box[3] - y:.1f}' fill='{color}'/>")
        canvas.add(f"<rect x='{78 + 150 * gi}' y='36' width='10' height='10' "
                   f"fill='{color}'/>")
        canvas.text(92 + 150 * gi, 45, name)
    for li, lab in enumerate(labels):
        canvas.text(box[0] + (li + 0.5) * slot, box[3] + 16, str(lab),
                    anchor="middle")
    canvas.save(path)


def heatmap(path, matrix, row_labels, col_labels, title="", size=None,
            fmt="{:.3f}"):
    """Grayscale-to-blue matrix with value annotations."""
    m = np.asarray(matrix, dtype=np.float64)
    rows, cols = m.shape
    cell = 52
    width = 110 + cols * cell
    height = 80 + rows * cell
    canvas = _Canvas(width, height)
    canvas.text(width / 2, 20, title, anchor="middle")
    lo, hi = float(m.min()), float(m.max())
    rng = hi - lo or 1.0
    for i in range(rows):
        for j in range(cols):
            frac = (m[i, j] - lo) / rng
            shade = int(255 - frac * 170)
            x, y = 100 + j * cell, 40 + i * cell
            canvas.add(f"<rect x='{x}' y='{y}' width='{cell}' height='{cell}' "
                       f"fill='rgb({shade},{shade},255)' stroke='white'/>")
            canvas.text(x + cell / 2, y + cell / 2 + 4, fmt.format(m[i, j]),
                        anchor="middle")
    for i, lab in enumerate(row_labels):
        canvas.text(94, 40 + i * cell + cell / 2 + 4, str(lab), anchor="end")
    for j, lab in enumerate(col_labels):
        canvas.text(100 + j * cell + cell / 2, 36 + rows * cell + 18, str(lab),
                    anchor="middle")
    canvas.save(path)


def image_grid(path, images, cols=4, captions=None, scale=3):
    """Grayscale arrays in [0, 1] tiled into an SVG with embedded PNGs."""
    from PIL import Image

    tiles = []
    for img in images:
        arr = (np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)
        im = Image.fromarray(arr, "L")
        im = im.resize((im.width * scale, im.height * scale), Image.NEAREST)
        buf = io.BytesIO()
        im.save(buf, format="PNG")
        tiles.append((base64.b64encode(buf.getvalue()).decode("ascii"),
                      im.width, im.height))
    if not tiles:
        raise ValueError("image_grid needs at least one image")
    tw = max(t[1] for t in tiles)
    th = max(t[2] for t in tiles)
    pad, cap_h = 6, (14 if captions else 0)
    rows = (len(tiles) + cols - 1) // cols
    width = cols * (tw + pad) + pad
    height = rows * (th + pad + cap_h) + pad
    canvas = _Canvas(width, height)
    for idx, (data, w, h) in enumerate(tiles):
        r, c = divmod(idx, cols)
        x = pad + c * (tw + pad)
        y = pad + r * (th + pad + cap_h)
        canvas.add(f"<image x='{x}' y='{y}' width='{w}' height='{h}' "
                   f"href='data:image/png;base64,{data}'/>")
        if captions and idx < len(captions):
            canvas.text(x + w / 2, y + h + 11, captions[idx], anchor="middle")
    canvas.save(path)
