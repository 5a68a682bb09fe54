"""Minimal SVG emitters for streamline plots and parameter-space maps."""
from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH = 720.0


def _polyline(points: np.ndarray, tx, ty, stroke: str, width: float) -> str:
    coords = " ".join(f"{tx(x):.2f},{ty(y):.2f}" for x, y in points)
    return (f'<polyline points="{coords}" fill="none" stroke="{stroke}" '
            f'stroke-width="{width}" stroke-linejoin="round"/>')


def field_figure(path: str | Path, period: float, interface: np.ndarray,
                 streamlines: Iterable[np.ndarray], stagnation: Iterable[tuple[float, float]],
                 title: str = "") -> Path:
    """Channel [0, period] x [0, 1]: grey streamlines, black interface and stagnation dots."""
    height = WIDTH / max(period, 1e-9)
    height = min(max(height, 120.0), 720.0)
    pad = 20.0

    def tx(x):
        return pad + WIDTH * x / period

    def ty(y):
        return pad + height * (1.0 - y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH + 2 * pad:.0f}" '
        f'height="{height + 2 * pad + (16 if title else 0):.0f}" version="1.1">',
        f'<rect x="{pad}" y="{pad}" width="{WIDTH}" height="{height:.2f}" fill="white" '
        f'stroke="black" stroke-width="1"/>',
    ]
    for line in streamlines:
        parts.append(_polyline(line, tx, ty, "#999999", 0.8))
    parts.append(_polyline(interface, tx, ty, "black", 1.6))
    for x, y in stagnation:
        parts.append(f'<circle cx="{tx(x):.2f}" cy="{ty(y):.2f}" r="3" fill="black"/>')
    if title:
        parts.append(f'<text x="{pad}" y="{height + 2 * pad + 10:.0f}" font-size="12" '
                     f'font-family="sans-serif">{escape(title)}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def _glyph(verdict: str, cx: float, cy: float, r: float) -> str:
    if verdict == "TypeI_crest":
        pts = [(cx, cy - r), (cx - r, cy + r), (cx + r, cy + r)]
    elif verdict == "TypeI_trough":
        pts = [(cx, cy + r), (cx - r, cy - r), (cx + r, cy - r)]
    elif verdict.startswith("TypeII"):
        return (f'<rect x="{cx - r:.2f}" y="{cy - r:.2f}" width="{2 * r:.2f}" height="{2 * r:.2f}" '
                f'fill="black"><title>{verdict}</title></rect>')
    elif verdict == "ResolutionLimit":
        return (f'<path d="M{cx - r:.2f},{cy - r:.2f} L{cx + r:.2f},{cy + r:.2f} '
                f'M{cx - r:.2f},{cy + r:.2f} L{cx + r:.2f},{cy - r:.2f}" stroke="black" '
                f'stroke-width="1.2"><title>{verdict}</title></path>')
    else:
        return (f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="none" stroke="black">'
                f'<title>{escape(verdict)}</title></circle>')
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    return f'<polygon points="{coords}" fill="black"><title>{verdict}</title></polygon>'


def sweep_figure(path: str | Path, cells: Sequence, k: float) -> Path:
    """Glyph map over (H, omega0): up/down triangles for crest/trough corners, squares for walls."""
    Hs = sorted({c.H for c in cells})
    ws = sorted({c.omega0 for c in cells})
    size = 480.0
    pad = 50.0

    def scale(v, lo, hi):
        return 0.5 if hi == lo else (v - lo) / (hi - lo)

    def tx(H):
        return pad + size * scale(H, Hs[0], Hs[-1])

    def ty(w):
        return pad + size * (1.0 - scale(w, ws[0], ws[-1]))

    r = max(3.0, min(10.0, 0.3 * size / max(len(Hs), len(ws), 1)))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * pad:.0f}" '
        f'height="{size + 2 * pad:.0f}" version="1.1">',
        f'<text x="{pad}" y="20" font-size="13" font-family="sans-serif">k = {k:.6g}</text>',
        f'<text x="{pad + size / 2:.0f}" y="{size + 2 * pad - 8:.0f}" font-size="12" '
        f'font-family="sans-serif">H</text>',
        f'<text x="12" y="{pad + size / 2:.0f}" font-size="12" font-family="sans-serif">omega0</text>',
    ]
    for c in cells:
        parts.append(_glyph(c.verdict, tx(c.H), ty(c.omega0), r))
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


def finite_polylines(lines: Iterable[np.ndarray]) -> list[np.ndarray]:
    return [ln for ln in lines if len(ln) > 1 and np.all(np.isfinite(ln))]

