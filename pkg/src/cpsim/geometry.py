"""Segment/rectangle tests used for radio shadowing and sensor line of sight."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Rect:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def overlaps(self, other: "Rect") -> bool:
        """True when the interiors intersect (shared edges do not count)."""
        return (
            self.xmin < other.xmax
            and other.xmin < self.xmax
            and self.ymin < other.ymax
            and other.ymin < self.ymax
        )

    def contains(self, x: float, y: float) -> bool:
        return self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax

    def as_list(self) -> list[float]:
        return [self.xmin, self.ymin, self.xmax, self.ymax]


def rects_array(rects) -> np.ndarray:
    return np.array([r.as_list() for r in rects], dtype=float).reshape(-1, 4)


def segment_hits_rect(x0: float, y0: float, x1: float, y1: float, r: Rect) -> bool:
    """Liang-Barsky clip of the segment against ``r``; touching counts as a hit."""
    dx = x1 - x0
    dy = y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - r.xmin), (dx, r.xmax - x0), (-dy, y0 - r.ymin), (dy, r.ymax - y0)):
        if p == 0.0:
            if q < 0.0:
                return False
            continue
        t = q / p
        if p < 0.0:
            if t > t1:
                return False
            if t > t0:
                t0 = t
        else:
            if t < t0:
                return False
            if t < t1:
                t1 = t
    return t0 <= t1


def count_hits(src: np.ndarray, dst: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Number of rectangles crossed by each segment ``src[i] -> dst[i]``.

    ``src`` and ``dst`` broadcast against each other with a trailing axis of
    size 2; ``rects`` is ``(k, 4)``. Same clipping rule as
    :func:`segment_hits_rect`, vectorised.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    shape = np.broadcast_shapes(src.shape, dst.shape)[:-1]
    if len(rects) == 0:
        return np.zeros(shape, dtype=np.int64)
    x0 = src[..., 0][..., None]
    y0 = src[..., 1][..., None]
    dx = (dst[..., 0] - src[..., 0])[..., None]
    dy = (dst[..., 1] - src[..., 1])[..., None]
    xmin, ymin, xmax, ymax = (rects[:, i] for i in range(4))

    t0 = np.zeros(np.broadcast_shapes(x0.shape, dx.shape, xmin.shape))
    t1 = np.ones_like(t0)
    ok = np.ones(t0.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
            p = np.broadcast_to(p, t0.shape)
            q = np.broadcast_to(q, t0.shape)
            zero = p == 0.0
            ok &= ~(zero & (q < 0.0))
            t = q / p
            neg = (p < 0.0) & ~zero
            pos = (p > 0.0) & ~zero
            t0 = np.where(neg & (t > t0), t, t0)
            t1 = np.where(pos & (t < t1), t, t1)
    ok &= t0 <= t1
    return ok.sum(axis=-1)
