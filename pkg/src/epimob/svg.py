"""Small deterministic SVG charts built from path and text primitives."""
from __future__ import annotations

from html import escape

import numpy as np

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=60, right=60, top=40, bottom=50)
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _f(v: float) -> str:
    return f"{v:.2f}"


class _Frame:
    """Maps data coordinates into the plotting area."""

    def __init__(self, xlim, ylim):
        self.x0, self.x1 = _pad(xlim)
        self.y0, self.y1 = _pad(ylim)
        self.left = MARGIN["left"]
        self.right = WIDTH - MARGIN["right"]
        self.top = MARGIN["top"]
        self.bottom = HEIGHT - MARGIN["bottom"]

    def x(self, v):
        return self.left + (np.asarray(v, float) - self.x0) / (self.x1 - self.x0) * (self.right - self.left)

    def y(self, v):
        return self.bottom - (np.asarray(v, float) - self.y0) / (self.y1 - self.y0) * (self.bottom - self.top)


def _pad(lim):
    lo, hi = float(lim[0]), float(lim[1])
    if not np.isfinite(lo) or not np.isfinite(hi):
        lo, hi = 0.0, 1.0
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _finite_range(*arrays):
    parts = [np.asarray(a, float).ravel() for a in arrays if np.size(a)]
    vals = np.concatenate(parts) if parts else np.array([])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0, 1.0
    return float(vals.min()), float(vals.max())


def _polyline(frame, x, y, color, width=1.5, dash=None, y_of=None):
    y_of = y_of or frame.y
    x, y = np.asarray(x, float), np.asarray(y, float)
    parts, current = [], []
    for xi, yi in zip(frame.x(x), y_of(y)):
        if np.isfinite(yi):
            current.append(f"{_f(xi)},{_f(yi)}")
        elif current:
            parts.append(current)
            current = []
    if current:
        parts.append(current)
    extra = f' stroke-dasharray="{dash}"' if dash else ""
    return [
        f'<polyline fill="none" stroke="{color}" stroke-width="{width}"{extra} points="{" ".join(p)}"/>'
        for p in parts
        if len(p) > 1
    ]


def _axes(frame, title, xlabel, ylabel, ylabel_right=None, right_lim=None):
    out = [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{frame.left}" y1="{frame.bottom}" x2="{frame.right}" y2="{frame.bottom}" stroke="black"/>',
        f'<line x1="{frame.left}" y1="{frame.top}" x2="{frame.left}" y2="{frame.bottom}" stroke="black"/>',
        f'<text x="{(frame.left + frame.right) / 2}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{(frame.top + frame.bottom) / 2}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {(frame.top + frame.bottom) / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(frame.x0, frame.x1, 5):
        out.append(f'<text x="{_f(frame.x(v))}" y="{frame.bottom + 16}" text-anchor="middle" font-size="10">{v:.4g}</text>')
    for v in np.linspace(frame.y0, frame.y1, 5):
        out.append(f'<text x="{frame.left - 6}" y="{_f(frame.y(v) + 3)}" text-anchor="end" font-size="10">{v:.3g}</text>')
    if ylabel_right is not None:
        lo, hi = _pad(right_lim)
        out.append(f'<line x1="{frame.right}" y1="{frame.top}" x2="{frame.right}" y2="{frame.bottom}" stroke="black"/>')
        for v in np.linspace(lo, hi, 5):
            y = frame.bottom - (v - lo) / (hi - lo) * (frame.bottom - frame.top)
            out.append(f'<text x="{frame.right + 6}" y="{_f(y + 3)}" font-size="10">{v:.3g}</text>')
        xr = WIDTH - 12
        out.append(
            f'<text x="{xr}" y="{(frame.top + frame.bottom) / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(90 {xr} {(frame.top + frame.bottom) / 2})">{escape(ylabel_right)}</text>'
        )
    return out


def _legend(frame, names):
    out = []
    for i, name in enumerate(names):
        y = frame.top + 14 * i + 6
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{frame.left + 10}" y1="{y}" x2="{frame.left + 30}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{frame.left + 34}" y="{y + 4}" font-size="11">{escape(name)}</text>')
    return out


def _document(body) -> str:
    head = f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    return "\n".join([head, *body, "</svg>"]) + "\n"


def line_chart(x, left: dict, right: dict | None = None, title="", xlabel="", ylabel="", ylabel_right="") -> str:
    """Lines sharing an x axis; ``right`` series use an independent right axis."""
    right = right or {}
    frame = _Frame(_finite_range(x), _finite_range(*left.values()))
    rlim = _pad(_finite_range(*right.values())) if right else None
    body = _axes(frame, title, xlabel, ylabel, ylabel_right if right else None, rlim)
    names = list(left) + list(right)
    for i, (name, y) in enumerate(left.items()):
        body += _polyline(frame, x, y, PALETTE[i % len(PALETTE)])
    if right:
        lo, hi = rlim

        def y_right(v):
            return frame.bottom - (np.asarray(v, float) - lo) / (hi - lo) * (frame.bottom - frame.top)

        for j, (name, y) in enumerate(right.items()):
            body += _polyline(frame, x, y, PALETTE[(len(left) + j) % len(PALETTE)], dash="5,3", y_of=y_right)
    body += _legend(frame, names)
    return _document(body)


def scatter_chart(x, y, labels=None, slope=None, intercept=None, title="", xlabel="", ylabel="") -> str:
    x, y = np.asarray(x, float), np.asarray(y, float)
    frame = _Frame(_finite_range(x), _finite_range(y))
    body = _axes(frame, title, xlabel, ylabel)
    for i, (xi, yi) in enumerate(zip(x, y)):
        if not (np.isfinite(xi) and np.isfinite(yi)):
            continue
        cx, cy = frame.x(xi), frame.y(yi)
        body.append(f'<circle cx="{_f(cx)}" cy="{_f(cy)}" r="4" fill="{PALETTE[0]}"/>')
        if labels is not None:
            body.append(f'<text x="{_f(cx + 5)}" y="{_f(cy - 5)}" font-size="9">{escape(str(labels[i]))}</text>')
    if slope is not None and intercept is not None:
        xs = np.array([frame.x0, frame.x1])
        body += _polyline(frame, xs, intercept + slope * xs, PALETTE[1], width=2)
    return _document(body)


def _diverging(v, vmax):
    u = 0.0 if vmax <= 0 else float(np.clip(v / vmax, -1, 1))
    if u >= 0:
        r, g, b = 255, int(255 * (1 - u)), int(255 * (1 - u))
    else:
        r, g, b = int(255 * (1 + u)), int(255 * (1 + u)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(s, t, z, title="", xlabel="s", ylabel="t") -> str:
    """Cells coloured on a symmetric blue-white-red scale; ``z`` has shape (len(s), len(t))."""
    s, t, z = np.asarray(s, float), np.asarray(t, float), np.asarray(z, float)
    frame = _Frame(_finite_range(s), _finite_range(t))
    body = _axes(frame, title, xlabel, ylabel)
    vmax = float(np.nanmax(np.abs(z))) if np.isfinite(z).any() else 0.0
    ds = (s[1] - s[0]) if len(s) > 1 else 1.0
    dt_ = (t[1] - t[0]) if len(t) > 1 else 1.0
    w = abs(frame.x(s[0] + ds) - frame.x(s[0]))
    h = abs(frame.y(t[0] + dt_) - frame.y(t[0]))
    for i, si in enumerate(s):
        for j, tj in enumerate(t):
            if not np.isfinite(z[i, j]):
                continue
            body.append(
                f'<rect x="{_f(frame.x(si) - w / 2)}" y="{_f(frame.y(tj) - h / 2)}" width="{_f(w)}" '
                f'height="{_f(h)}" fill="{_diverging(z[i, j], vmax)}"/>'
            )
    body.append(f'<text x="{frame.right}" y="{frame.top - 8}" text-anchor="end" font-size="10">|max| = {vmax:.3g}</text>')
    return _document(body)


def band_chart(x, y, lo, hi, title="", xlabel="", ylabel="") -> str:
    """Estimate with a shaded band; grey where the band contains 0."""
    x, y, lo, hi = (np.asarray(a, float) for a in (x, y, lo, hi))
    frame = _Frame(_finite_range(x), _finite_range(lo, hi, [0.0]))
    body = _axes(frame, title, xlabel, ylabel)
    ok = np.isfinite(lo) & np.isfinite(hi)
    if ok.any():
        upper = [f"{_f(a)},{_f(b)}" for a, b in zip(frame.x(x[ok]), frame.y(hi[ok]))]
        lower = [f"{_f(a)},{_f(b)}" for a, b in zip(frame.x(x[ok][::-1]), frame.y(lo[ok][::-1]))]
        body.append(f'<polygon fill="{PALETTE[0]}" fill-opacity="0.25" stroke="none" points="{" ".join(upper + lower)}"/>')
        covers = ok & (lo <= 0) & (hi >= 0)
        for xi in x[covers]:
            body.append(
                f'<rect x="{_f(frame.x(xi) - 2)}" y="{frame.top}" width="4" height="{frame.bottom - frame.top}" '
                'fill="grey" fill-opacity="0.15"/>'
            )
    body += _polyline(frame, [frame.x0, frame.x1], [0.0, 0.0], "black", width=1, dash="3,3")
    body += _polyline(frame, x, y, PALETTE[0], width=2)
    return _document(body)
