"""Procedural two-script numeral stand-in.

Each script has ten glyph archetypes built from line segments and elliptic
arcs. Scripts A and B share six archetypes (B's copies are distorted by a fixed
per-class affine map) and differ on four, so a feature extractor trained on one
script carries real signal to the other without making the task trivial.
"""
from __future__ import annotations

import numpy as np
from PIL import Image, ImageDraw

from .data import LabeledDataset, to_pixel_grid

SIZE = 32
SUPERSAMPLE = 4
SHARED_CLASSES = (0, 1, 3, 4, 7, 8)

MAX_SHIFT_PX = 2.0
MAX_ROTATION_DEG = 10.0
STROKE_WIDTH_PX = (1.3, 3.0)
SALT_PROB = 0.01
PART_JITTER = 0.035      # per-stroke offset, unit-square std
PART_WARP = 0.12         # per-stroke random linear warp about its centroid
SCALE_JITTER = 0.1


def _line(*pts):
    return np.array(pts, dtype=float)


def _arc(cx, cy, rx, ry, t0, t1, n=28):
    t = np.deg2rad(np.linspace(t0, t1, n))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


# Unit-square coordinates, x to the right, y downwards.
_SCRIPT_A = {
    0: [_arc(0.5, 0.5, 0.19, 0.31, 0, 360)],
    1: [_line((0.38, 0.28), (0.52, 0.15), (0.52, 0.86))],
    2: [np.concatenate([_arc(0.5, 0.33, 0.19, 0.17, 195, 380),
                        _line((0.66, 0.40), (0.28, 0.85), (0.74, 0.85))])],
    3: [_arc(0.47, 0.32, 0.18, 0.16, 200, 450), _arc(0.47, 0.67, 0.2, 0.18, 270, 520)],
    4: [_line((0.62, 0.15), (0.24, 0.62), (0.78, 0.62)), _line((0.62, 0.15), (0.62, 0.88))],
    5: [np.concatenate([_line((0.72, 0.15), (0.34, 0.15), (0.31, 0.46)),
                        _arc(0.48, 0.64, 0.2, 0.2, 225, 495)])],
    6: [_line((0.66, 0.14), (0.33, 0.6)), _arc(0.5, 0.66, 0.18, 0.19, 0, 360)],
    7: [_line((0.27, 0.17), (0.74, 0.17), (0.42, 0.87))],
    8: [_arc(0.5, 0.31, 0.15, 0.15, 0, 360), _arc(0.5, 0.68, 0.19, 0.18, 0, 360)],
    9: [_arc(0.49, 0.33, 0.18, 0.18, 0, 360), _line((0.67, 0.34), (0.6, 0.87))],
}

_SCRIPT_B_OWN = {
    2: [_line((0.24, 0.17), (0.5, 0.86), (0.76, 0.17))],
    5: [_line((0.27, 0.2), (0.73, 0.2), (0.3, 0.8), (0.75, 0.8))],
    6: [_line((0.5, 0.16), (0.5, 0.84)), _line((0.22, 0.5), (0.78, 0.5))],
    9: [_line((0.5, 0.16), (0.79, 0.8), (0.21, 0.8), (0.5, 0.16))],
}

_B_DISTORTION_SEED = 0xB5


def _distort(parts, rng):
    """Fixed affine distortion (scale, shear, small offset) about the glyph centre."""
    a = np.eye(2) + rng.uniform(-0.12, 0.12, size=(2, 2))
    off = rng.uniform(-0.04, 0.04, size=2)
    c = np.array([0.5, 0.5])
    return [(p - c) @ a.T + c + off for p in parts]


def glyph_archetypes(script: str) -> dict[int, list[np.ndarray]]:
    script = script.upper()
    if script == "A":
        return {k: [p.copy() for p in v] for k, v in _SCRIPT_A.items()}
    if script == "B":
        rng = np.random.default_rng(_B_DISTORTION_SEED)
        out = {}
        for k in range(10):
            if k in SHARED_CLASSES:
                out[k] = _distort(_SCRIPT_A[k], rng)
            else:
                out[k] = [p.copy() for p in _SCRIPT_B_OWN[k]]
        return out
    raise ValueError(f"unknown synthetic script {script!r} (expected 'A' or 'B')")


def render_glyph(parts, rng: np.random.Generator) -> np.ndarray:
    """Draw one jittered sample: white strokes on black, values in [0, 1]."""
    theta = np.deg2rad(rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG))
    scale = 1.0 + rng.uniform(-SCALE_JITTER, SCALE_JITTER, size=2)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    m = rot @ np.diag(scale)
    shift = rng.uniform(-MAX_SHIFT_PX, MAX_SHIFT_PX, size=2) / SIZE
    width = rng.uniform(*STROKE_WIDTH_PX)

    big = SIZE * SUPERSAMPLE
    img = Image.new("L", (big, big), 0)
    draw = ImageDraw.Draw(img)
    w_px = max(1, int(round(width * SUPERSAMPLE)))
    r = w_px / 2.0
    c = np.array([0.5, 0.5])
    for p in parts:
        pc = p.mean(axis=0)
        warp = np.eye(2) + rng.uniform(-PART_WARP, PART_WARP, size=(2, 2))
        p = (p - pc) @ warp.T + pc + rng.normal(0.0, PART_JITTER, size=2)
        q = (p - c) @ m.T + c + shift
        pts = [tuple(v) for v in q * big]
        draw.line(pts, fill=255, width=w_px, joint="curve")
        for x, y in (pts[0], pts[-1]):
            draw.ellipse((x - r, y - r, x + r, y + r), fill=255)
    a = np.asarray(img, dtype=np.float32).reshape(SIZE, SUPERSAMPLE, SIZE, SUPERSAMPLE).mean(axis=(1, 3))
    a /= 255.0
    a[rng.random(a.shape) < SALT_PROB] = 1.0
    return to_pixel_grid(a)


def generate_synthetic(script: str, samples_per_class: int, seed: int) -> LabeledDataset:
    """Pure function of (script, samples_per_class, seed). Samples are ordered
    class-major: all of class 0, then class 1, and so on."""
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    glyphs = glyph_archetypes(script)
    rng = np.random.default_rng([seed, ord(script.upper())])
    n = 10 * samples_per_class
    images = np.empty((n, 1, SIZE, SIZE), dtype=np.float32)
    labels = np.repeat(np.arange(10, dtype=np.int64), samples_per_class)
    for i, k in enumerate(labels):
        images[i, 0] = render_glyph(glyphs[int(k)], rng)
    return LabeledDataset(name=f"synth{script.upper()}", images=images, labels=labels)
