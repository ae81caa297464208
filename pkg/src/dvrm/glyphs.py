"""Parametric stroke glyphs for the 62 character classes, rendered at 28x28.

Each character is a list of strokes in a unit box: x grows to the right,
y grows downward, capitals span y in [0, 1], lowercase bodies span
[0.55, 1] with ascenders reaching 0 and descenders 1.3. A stroke is either a
polyline (list of points) or an elliptical arc ``("arc", cx, cy, rx, ry,
start_deg, end_deg)``; angles are measured counterclockwise as seen on
screen, 90 degrees pointing up.
"""

from __future__ import annotations

import string
from dataclasses import dataclass

import numpy as np

IMAGE_SIZE = 28
NUM_VARIANTS = 50
CLASSES = string.digits + string.ascii_uppercase + string.ascii_lowercase


def class_id(char: str) -> int:
    try:
        return CLASSES.index(char)
    except ValueError:
        raise KeyError(f"unknown character {char!r}") from None


def class_char(cid: int) -> str:
    if not 0 <= cid < len(CLASSES):
        raise KeyError(f"class id {cid} outside [0, {len(CLASSES)})")
    return CLASSES[cid]


def _arc(cx, cy, rx, ry, a0, a1):
    return ("arc", cx, cy, rx, ry, a0, a1)


_O = _arc(0.38, 0.5, 0.36, 0.5, 0, 360)
_P_BOWL = [[(0.05, 1), (0.05, 0), (0.35, 0)], _arc(0.35, 0.27, 0.27, 0.27, 90, -90), [(0.35, 0.54), (0.05, 0.54)]]

STROKES: dict[str, list] = {
    "0": [_arc(0.3, 0.5, 0.3, 0.5, 0, 360)],
    "1": [[(0.1, 0.22), (0.32, 0), (0.32, 1)], [(0.1, 1), (0.54, 1)]],
    "2": [_arc(0.3, 0.28, 0.27, 0.27, 155, -35), [(0.52, 0.44), (0.02, 1), (0.6, 1)]],
    "3": [_arc(0.28, 0.26, 0.25, 0.24, 150, -90), _arc(0.28, 0.74, 0.3, 0.26, 90, -155)],
    "4": [[(0.45, 1), (0.45, 0), (0.0, 0.68), (0.62, 0.68)]],
    "5": [[(0.56, 0), (0.1, 0), (0.06, 0.44)], _arc(0.3, 0.68, 0.28, 0.31, 140, -150)],
    "6": [_arc(0.32, 0.7, 0.28, 0.3, 0, 360), _arc(0.5, 0.7, 0.46, 0.65, 75, 180)],
    "7": [[(0.0, 0), (0.6, 0), (0.2, 1)]],
    "8": [_arc(0.3, 0.25, 0.23, 0.25, 0, 360), _arc(0.3, 0.74, 0.28, 0.26, 0, 360)],
    "9": [_arc(0.28, 0.3, 0.28, 0.3, 0, 360), _arc(0.1, 0.3, 0.46, 0.65, 0, -105)],
    "A": [[(0, 1), (0.35, 0), (0.7, 1)], [(0.13, 0.62), (0.57, 0.62)]],
    "B": [
        [(0.05, 1), (0.05, 0), (0.4, 0)],
        _arc(0.4, 0.24, 0.22, 0.24, 90, -90),
        [(0.05, 0.48), (0.42, 0.48)],
        _arc(0.42, 0.74, 0.26, 0.26, 90, -90),
        [(0.42, 1), (0.05, 1)],
    ],
    "C": [_arc(0.38, 0.5, 0.36, 0.5, 45, 315)],
    "D": [[(0.3, 0), (0.05, 0), (0.05, 1), (0.3, 1)], _arc(0.3, 0.5, 0.38, 0.5, -90, 90)],
    "E": [[(0.6, 0), (0.05, 0), (0.05, 1), (0.6, 1)], [(0.05, 0.5), (0.5, 0.5)]],
    "F": [[(0.6, 0), (0.05, 0), (0.05, 1)], [(0.05, 0.5), (0.5, 0.5)]],
    "G": [_arc(0.38, 0.5, 0.36, 0.5, 50, 340), [(0.42, 0.58), (0.74, 0.58), (0.74, 0.92)]],
    "H": [[(0.05, 0), (0.05, 1)], [(0.65, 0), (0.65, 1)], [(0.05, 0.5), (0.65, 0.5)]],
    "I": [[(0.3, 0), (0.3, 1)], [(0.1, 0), (0.5, 0)], [(0.1, 1), (0.5, 1)]],
    "J": [[(0.25, 0), (0.62, 0)], [(0.5, 0), (0.5, 0.72)], _arc(0.27, 0.72, 0.23, 0.28, 0, -180)],
    "K": [[(0.05, 0), (0.05, 1)], [(0.62, 0), (0.05, 0.6)], [(0.25, 0.45), (0.65, 1)]],
    "L": [[(0.05, 0), (0.05, 1), (0.55, 1)]],
    "M": [[(0.02, 1), (0.08, 0), (0.4, 0.7), (0.72, 0), (0.78, 1)]],
    "N": [[(0.05, 1), (0.05, 0), (0.65, 1), (0.65, 0)]],
    "O": [_O],
    "P": _P_BOWL,
    "Q": [_O, [(0.45, 0.7), (0.78, 1.05)]],
    "R": _P_BOWL + [[(0.3, 0.54), (0.65, 1)]],
    "S": [_arc(0.32, 0.26, 0.27, 0.25, 30, 270), _arc(0.32, 0.75, 0.3, 0.25, 90, -150)],
    "T": [[(0, 0), (0.7, 0)], [(0.35, 0), (0.35, 1)]],
    "U": [[(0.05, 0), (0.05, 0.65)], _arc(0.35, 0.65, 0.3, 0.35, 180, 360), [(0.65, 0.65), (0.65, 0)]],
    "V": [[(0, 0), (0.35, 1), (0.7, 0)]],
    "W": [[(0, 0), (0.2, 1), (0.4, 0.3), (0.6, 1), (0.8, 0)]],
    "X": [[(0, 0), (0.65, 1)], [(0.65, 0), (0, 1)]],
    "Y": [[(0, 0), (0.35, 0.5), (0.7, 0)], [(0.35, 0.5), (0.35, 1)]],
    "Z": [[(0.02, 0), (0.65, 0), (0.02, 1), (0.67, 1)]],
    "a": [_arc(0.28, 0.78, 0.24, 0.22, 0, 360), [(0.52, 0.55), (0.52, 1)]],
    "b": [[(0.05, 0), (0.05, 1)], _arc(0.29, 0.78, 0.24, 0.22, 0, 360)],
    "c": [_arc(0.3, 0.78, 0.26, 0.22, 40, 320)],
    "d": [_arc(0.27, 0.78, 0.24, 0.22, 0, 360), [(0.51, 0), (0.51, 1)]],
    "e": [[(0.04, 0.78), (0.54, 0.78)], _arc(0.29, 0.78, 0.25, 0.22, 0, 320)],
    "f": [_arc(0.42, 0.18, 0.18, 0.16, 20, 180), [(0.24, 0.18), (0.24, 1)], [(0.06, 0.55), (0.46, 0.55)]],
    "g": [
        _arc(0.27, 0.76, 0.23, 0.2, 0, 360),
        [(0.5, 0.55), (0.5, 1.1)],
        _arc(0.27, 1.1, 0.23, 0.18, 0, -160),
    ],
    "h": [[(0.05, 0), (0.05, 1)], _arc(0.28, 0.75, 0.23, 0.2, 180, 0), [(0.51, 0.75), (0.51, 1)]],
    "i": [[(0.06, 0.55), (0.2, 0.55), (0.2, 1)], [(0.2, 0.3), (0.2, 0.36)], [(0.06, 1), (0.34, 1)]],
    "j": [
        [(0.15, 0.55), (0.3, 0.55), (0.3, 1.15)],
        _arc(0.12, 1.15, 0.18, 0.15, 0, -150),
        [(0.3, 0.3), (0.3, 0.36)],
    ],
    "k": [[(0.05, 0), (0.05, 1)], [(0.45, 0.55), (0.05, 0.82)], [(0.2, 0.72), (0.5, 1)]],
    "l": [[(0.05, 0), (0.2, 0), (0.2, 0.9)], _arc(0.32, 0.9, 0.12, 0.1, 180, 270)],
    "m": [
        [(0.03, 0.55), (0.03, 1)],
        _arc(0.19, 0.72, 0.16, 0.17, 180, 0),
        [(0.35, 0.72), (0.35, 1)],
        _arc(0.51, 0.72, 0.16, 0.17, 180, 0),
        [(0.67, 0.72), (0.67, 1)],
    ],
    "n": [[(0.05, 0.55), (0.05, 1)], _arc(0.27, 0.75, 0.22, 0.2, 180, 0), [(0.49, 0.75), (0.49, 1)]],
    "o": [_arc(0.28, 0.78, 0.25, 0.22, 0, 360)],
    "p": [[(0.05, 0.55), (0.05, 1.3)], _arc(0.29, 0.78, 0.24, 0.22, 0, 360)],
    "q": [_arc(0.27, 0.78, 0.24, 0.22, 0, 360), [(0.51, 0.55), (0.51, 1.3)]],
    "r": [[(0.05, 0.55), (0.05, 1)], [(-0.08, 1), (0.2, 1)], _arc(0.3, 0.78, 0.25, 0.22, 180, 60)],
    "s": [_arc(0.26, 0.66, 0.2, 0.11, 20, 270), _arc(0.26, 0.89, 0.22, 0.11, 90, -160)],
    "t": [[(0.22, 0.25), (0.22, 0.9)], _arc(0.36, 0.9, 0.14, 0.1, 180, 300), [(0.04, 0.55), (0.44, 0.55)]],
    "u": [[(0.05, 0.55), (0.05, 0.8)], _arc(0.27, 0.8, 0.22, 0.2, 180, 360), [(0.49, 0.55), (0.49, 1)]],
    "v": [[(0, 0.55), (0.28, 1), (0.56, 0.55)]],
    "w": [[(0, 0.55), (0.16, 1), (0.33, 0.7), (0.5, 1), (0.66, 0.55)]],
    "x": [[(0.02, 0.55), (0.52, 1)], [(0.52, 0.55), (0.02, 1)]],
    "y": [[(0, 0.55), (0.28, 1)], [(0.56, 0.55), (0.2, 1.3)]],
    "z": [[(0.03, 0.55), (0.5, 0.55), (0.03, 1), (0.52, 1)]],
}


def _polyline(stroke) -> np.ndarray:
    if isinstance(stroke, tuple) and stroke and stroke[0] == "arc":
        _, cx, cy, rx, ry, a0, a1 = stroke
        steps = max(8, int(abs(a1 - a0) / 10))
        t = np.radians(np.linspace(a0, a1, steps + 1))
        return np.stack([cx + rx * np.cos(t), cy - ry * np.sin(t)], axis=1)
    return np.asarray(stroke, dtype=np.float64)


def _segments(char: str) -> np.ndarray:
    """All stroke segments of ``char`` as an (S, 2, 2) array of endpoints."""
    segs = []
    for stroke in STROKES[char]:
        pts = _polyline(stroke)
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs, axis=0)


@dataclass(frozen=True)
class FontStyle:
    stroke_px: float
    slant: float
    scale: float
    dx: float
    dy: float


def font_style(variant: int) -> FontStyle:
    """Deterministic style for one of the 50 font variants."""
    if not 0 <= variant < NUM_VARIANTS:
        raise ValueError(f"font_variant must lie in [0, {NUM_VARIANTS}), got {variant}")
    width = (2.84, 3.02, 3.2, 3.38, 3.56)[variant % 5]
    slant = (-0.06, -0.03, 0.0, 0.03, 0.06)[(variant // 5) % 5]
    scale = (0.964, 1.0)[variant // 25]
    dx = ((variant * 3) % 5 - 2) * 0.12
    dy = ((variant * 7) % 5 - 2) * 0.12
    return FontStyle(width, slant, scale, dx, dy)


@dataclass(frozen=True)
class GlyphSpec:
    character: str
    font_variant: int = 0
    jitter: tuple[float, float, float] = (0.0, 0.0, 0.0)  # dx px, dy px, rotation deg

    def __post_init__(self):
        if self.character not in STROKES:
            raise KeyError(f"unknown character {self.character!r}")
        font_style(self.font_variant)


@dataclass(frozen=True)
class StimulusImage:
    pixels: np.ndarray
    label: int
    font_id: int


CAP_PX = 17.0
TOP_PX = 4.0
_SUB = (np.arange(2) + 0.5) / 2.0 - 0.5  # 2x2 supersampling offsets


def _distance_to_segments(points: np.ndarray, segs: np.ndarray) -> np.ndarray:
    a, b = segs[:, 0], segs[:, 1]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = points[:, None, :] - a[None]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(((points[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)


def render_glyph(spec: GlyphSpec) -> StimulusImage:
    """Anti-aliased 28x28 bitmap in [0, 1] for one character and font variant."""
    style = font_style(spec.font_variant)
    segs = _segments(spec.character)
    pts = segs.reshape(-1, 2)
    s = CAP_PX * style.scale
    u_mid = 0.5 * (pts[:, 0].min() + pts[:, 0].max())
    # glyph units -> pixels: centre horizontally, fixed baseline, shear for slant
    x = (segs[..., 0] - u_mid) * s + style.slant * (0.5 - segs[..., 1]) * s
    y = (segs[..., 1] - 0.5) * s
    jdx, jdy, rot = spec.jitter
    if rot:
        th = np.radians(rot)
        x, y = x * np.cos(th) - y * np.sin(th), x * np.sin(th) + y * np.cos(th)
    cx = IMAGE_SIZE / 2.0 + style.dx + jdx
    cy = TOP_PX + 0.5 * CAP_PX + style.dy + jdy
    px_segs = np.stack([x + cx, y + cy], axis=-1)
    grid = np.arange(IMAGE_SIZE) + 0.5
    acc = np.zeros(IMAGE_SIZE * IMAGE_SIZE)
    half = style.stroke_px / 2.0
    for oy in _SUB:
        for ox in _SUB:
            gx, gy = np.meshgrid(grid + ox, grid + oy)
            points = np.stack([gx.ravel(), gy.ravel()], axis=1)
            d = _distance_to_segments(points, px_segs)
            acc += np.clip(half - d + 0.5, 0.0, 1.0)
    pixels = (acc / (len(_SUB) ** 2)).reshape(IMAGE_SIZE, IMAGE_SIZE)
    return StimulusImage(pixels, class_id(spec.character), spec.font_variant)
