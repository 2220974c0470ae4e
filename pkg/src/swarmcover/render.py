"""SVG snapshots of a swarm inside its domain, with dashed trails."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from swarmcover.geometry import Polygon

CANVAS = 480.0
PAD = 10.0
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f", "#bcbd22", "#17becf"]


class _Viewport:
    def __init__(self, poly: Polygon, positions):
        pts = np.concatenate([poly.vertices, np.asarray(positions).reshape(-1, 2)])
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = max(float(np.max(hi - lo)), 1e-9)
        self.lo = lo - 0.05 * span
        self.scale = CANVAS / (1.1 * span)
        self.height = PAD * 2 + (hi[1] - lo[1] + 0.1 * span) * self.scale
        self.width = PAD * 2 + (hi[0] - lo[0] + 0.1 * span) * self.scale

    def xy(self, p):
        x = PAD + (p[0] - self.lo[0]) * self.scale
        y = self.height - PAD - (p[1] - self.lo[1]) * self.scale
        return f"{x:.3f},{y:.3f}"


def frame_svg(poly: Polygon, positions, t: int, dt: float, trail_s: float = 10.0,
              radius: float | None = None, viewport: _Viewport | None = None) -> str:
    """One frame at step ``t`` of ``positions`` ``(T+1, n, 2)``."""
    positions = np.asarray(positions, dtype=np.float64)
    vp = viewport or _Viewport(poly, positions)
    n = positions.shape[1]
    start = max(0, t - int(round(trail_s / dt)))
    r_px = 4.0 if radius is None else max(radius * vp.scale, 1.5)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{vp.width:.0f}" '
           f'height="{vp.height:.0f}" viewBox="0 0 {vp.width:.3f} {vp.height:.3f}">',
           '<rect width="100%" height="100%" fill="white"/>',
           '<polygon class="domain" fill="#f4f4f4" stroke="black" stroke-width="1.5" points="'
           + " ".join(vp.xy(v) for v in poly.vertices) + '"/>']
    for i in range(n):
        color = PALETTE[i % len(PALETTE)]
        if t > start:
            pts = " ".join(vp.xy(p) for p in positions[start:t + 1, i])
            out.append(f'<polyline class="trail" fill="none" stroke="{color}" stroke-width="1" '
                       f'stroke-dasharray="4 3" points="{pts}"/>')
    for i in range(n):
        cx, cy = vp.xy(positions[t, i]).split(",")
        out.append(f'<circle class="agent" cx="{cx}" cy="{cy}" r="{r_px:.3f}" '
                   f'fill="{PALETTE[i % len(PALETTE)]}"/>')
    out.append(f'<text x="{PAD:.0f}" y="{PAD + 12:.0f}" font-family="monospace" font-size="12">'
               f't = {t * dt:.2f} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def frame_steps(total_steps: int, every: int) -> list[int]:
    steps = list(range(0, total_steps + 1, max(1, every)))
    if steps[-1] != total_steps:
        steps.append(total_steps)
    return steps


def write_frames(directory, poly: Polygon, positions, dt: float, every: int = 25,
                 trail_s: float = 10.0, radius: float | None = None) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    positions = np.asarray(positions, dtype=np.float64)
    vp = _Viewport(poly, positions)
    paths = []
    for t in frame_steps(len(positions) - 1, every):
        path = directory / f"frame_{t:05d}.svg"
        path.write_text(frame_svg(poly, positions, t, dt, trail_s, radius, vp))
        paths.append(path)
    return paths
