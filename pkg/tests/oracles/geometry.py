"""Supersampling coverage oracle and a convex-hull generator, written without shapely."""
import numpy as np


def convex_hull(points):
    pts = sorted(map(tuple, np.asarray(points, float)))

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def random_convex_polygon(rng, shape, r_range=(2.0, 10.0)):
    h, w = shape
    while True:
        r = rng.uniform(*r_range)
        c = np.array([rng.uniform(r, w - r), rng.uniform(r, h - r)])
        pts = c + rng.uniform(-r, r, size=(int(rng.integers(3, 12)), 2))
        hull = convex_hull(pts)
        if len(hull) >= 3:
            return hull


def supersample_coverage(ring, shape, k=16):
    """Fraction of k*k sample points per cell inside ``ring`` (even-odd rule)."""
    h, w = shape
    off = (np.arange(k) + 0.5) / k
    ys = (np.arange(h)[:, None] + off[None, :]).ravel()
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    X, Y = np.meshgrid(xs, ys)
    inside = np.zeros(X.shape, dtype=bool)
    ring = np.asarray(ring, float)
    n = len(ring)
    for i in range(n):
        x1, y1 = ring[i]
        x2, y2 = ring[(i + 1) % n]
        if y1 == y2:
            continue
        crosses = ((y1 > Y) != (y2 > Y)) & (X < (x2 - x1) * (Y - y1) / (y2 - y1) + x1)
        inside ^= crosses
    return inside.reshape(h, k, w, k).sum(axis=(1, 3)) / (k * k)
