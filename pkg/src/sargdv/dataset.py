"""Supervised dataset construction: label rasterization, region split,
random undersampling and feature assembly."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .raster import AlignmentError, BinaryMask, DataCube, GridGeometry

logger = logging.getLogger(__name__)

COVERAGE_THRESHOLD = 0.5


class DatasetError(ValueError):
    pass


class ConfigurationError(DatasetError):
    pass


class NoPositivesError(DatasetError):
    pass


class InsufficientNegativesError(DatasetError):
    pass


# --- polygons -------------------------------------------------------------


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise DatasetError("polygon ring must be a sequence of (lon, lat) pairs")
    if len(ring) and not np.array_equal(ring[0], ring[-1]):
        ring = np.vstack([ring, ring[:1]])
    if len(np.unique(ring[:-1], axis=0)) < 3:
        raise DatasetError("polygon ring needs at least 3 distinct vertices")
    return ring


@dataclass(frozen=True)
class Polygon:
    exterior: np.ndarray
    holes: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exterior", _as_ring(self.exterior))
        object.__setattr__(self, "holes", tuple(_as_ring(h) for h in self.holes))


@dataclass(frozen=True)
class PolygonSet:
    """Simple polygons in WGS84 lon/lat; every ring is stored closed."""

    polygons: tuple[Polygon, ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self,
            "polygons",
            tuple(p if isinstance(p, Polygon) else Polygon(p) for p in self.polygons),
        )

    def __len__(self):
        return len(self.polygons)

    @classmethod
    def from_geojson(cls, source) -> "PolygonSet":
        """Read a GeoJSON FeatureCollection (Polygon / MultiPolygon geometries)."""
        if isinstance(source, (str, Path)):
            source = json.loads(Path(source).read_text(encoding="utf-8"))
        polys = []
        for feature in source.get("features", []):
            geom = feature.get("geometry") or {}
            gtype = geom.get("type")
            if gtype == "Polygon":
                parts = [geom["coordinates"]]
            elif gtype == "MultiPolygon":
                parts = geom["coordinates"]
            else:
                logger.warning("skipping non-polygon feature of type %r", gtype)
                continue
            for rings in parts:
                polys.append(Polygon(rings[0], tuple(rings[1:])))
        return cls(tuple(polys))

    def to_geojson(self) -> dict:
        features = []
        for p in self.polygons:
            rings = [p.exterior.tolist()] + [h.tolist() for h in p.holes]
            features.append(
                {"type": "Feature", "properties": {},
                 "geometry": {"type": "Polygon", "coordinates": rings}}
            )
        return {"type": "FeatureCollection", "features": features}


def _clip(poly: list, axis: int, bound: float, keep_above: bool) -> list:
    """Clip a polygon (open vertex list) against one axis-aligned half-plane."""
    out = []
    n = len(poly)
    for i in range(n):
        cur = poly[i]
        prev = poly[i - 1]
        cur_in = cur[axis] >= bound if keep_above else cur[axis] <= bound
        prev_in = prev[axis] >= bound if keep_above else prev[axis] <= bound
        if cur_in != prev_in:
            t = (bound - prev[axis]) / (cur[axis] - prev[axis])
            other = 1 - axis
            pt = [0.0, 0.0]
            pt[axis] = bound
            pt[other] = prev[other] + t * (cur[other] - prev[other])
            out.append(tuple(pt))
        if cur_in:
            out.append(cur)
    return out


def _signed_area(poly: list) -> float:
    if len(poly) < 3:
        return 0.0
    a = 0.0
    n = len(poly)
    for i in range(n):
        x0, y0 = poly[i - 1]
        x1, y1 = poly[i]
        a += x0 * y1 - x1 * y0
    return 0.5 * a


def ring_coverage(ring_px: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Exact per-cell area covered by a ring given in pixel coordinates.

    Cells are the unit squares [c, c+1] x [r, r+1]. The ring is clipped to
    each row strip and then to each cell of the strip.
    """
    height, width = shape
    cover = np.zeros(shape, dtype=float)
    pts = [tuple(map(float, p)) for p in ring_px[:-1]]
    sign = 1.0 if _signed_area(pts) >= 0 else -1.0
    xs, ys = ring_px[:, 0], ring_px[:, 1]
    r0, r1 = max(int(math.floor(ys.min())), 0), min(int(math.ceil(ys.max())), height)
    for r in range(r0, r1):
        strip = _clip(_clip(pts, 1, float(r), True), 1, float(r + 1), False)
        if len(strip) < 3:
            continue
        sx = [p[0] for p in strip]
        c0, c1 = max(int(math.floor(min(sx))), 0), min(int(math.ceil(max(sx))), width)
        rest = strip
        for c in range(c0, c1):
            if len(rest) < 3:
                break
            cell = _clip(rest, 0, float(c + 1), False)
            rest = _clip(rest, 0, float(c + 1), True)
            if c == c0:
                cell = _clip(cell, 0, float(c), True)
            cover[r, c] += sign * _signed_area(cell)
    return cover


def _polygon_rings_px(polygons: PolygonSet, geometry: GridGeometry):
    """Union the polygons and yield (ring, +1/-1) pairs in pixel coordinates."""
    import shapely
    from shapely.geometry import Polygon as ShapelyPolygon

    shapes = []
    for i, p in enumerate(polygons.polygons):
        cols, rows = geometry.to_pixel(p.exterior[:, 0], p.exterior[:, 1])
        holes = []
        for h in p.holes:
            hc, hr = geometry.to_pixel(h[:, 0], h[:, 1])
            holes.append(np.column_stack([hc, hr]))
        shp = ShapelyPolygon(np.column_stack([cols, rows]), holes)
        if shp.area == 0:
            logger.warning("polygon %d has zero area; ignored", i)
            continue
        if not shp.is_valid:
            shp = shapely.make_valid(shp)
        shapes.append(shp)
    if not shapes:
        return
    merged = shapes[0] if len(shapes) == 1 else shapely.union_all(shapes)
    for part in shapely.get_parts(merged):
        if part.geom_type != "Polygon" or part.area == 0:
            continue
        yield np.asarray(part.exterior.coords), 1.0
        for interior in part.interiors:
            yield np.asarray(interior.coords), -1.0


def polygon_coverage(polygons: PolygonSet, geometry: GridGeometry) -> np.ndarray:
    """Fraction of each cell covered by the union of the polygons."""
    cover = np.zeros(geometry.shape, dtype=float)
    for ring, sign in _polygon_rings_px(polygons, geometry):
        cover += sign * ring_coverage(ring, geometry.shape)
    return np.clip(cover, 0.0, 1.0)


def rasterize_polygons(polygons: PolygonSet, geometry: GridGeometry,
                       threshold: float = COVERAGE_THRESHOLD) -> BinaryMask:
    """Label a pixel 1 when at least ``threshold`` of its area is covered."""
    cover = polygon_coverage(polygons, geometry)
    # absorb round-off from clipping so an exact half cell stays inclusive
    values = (cover >= threshold - 1e-12).astype(np.uint8)
    return BinaryMask(geometry, values)


# --- region split ---------------------------------------------------------


@dataclass(frozen=True)
class RegionSplit:
    """Half-open column intervals [start, stop) for the two regions."""

    train_cols: tuple[int, int]
    validation_cols: tuple[int, int]

    def __post_init__(self):
        (a0, a1), (b0, b1) = self.train_cols, self.validation_cols
        if a1 <= a0 or b1 <= b0:
            raise ConfigurationError("both regions must be non-empty")
        if not (a1 == b0 or b1 == a0) or min(a0, b0) != 0:
            raise ConfigurationError("regions must be disjoint, contiguous and start at column 0")

    @property
    def width(self) -> int:
        return max(self.train_cols[1], self.validation_cols[1])

    def to_dict(self) -> dict:
        return {"train_cols": list(self.train_cols), "validation_cols": list(self.validation_cols)}

    @classmethod
    def from_dict(cls, d: dict) -> "RegionSplit":
        return cls(tuple(d["train_cols"]), tuple(d["validation_cols"]))


def split_regions(geometry: GridGeometry, train_fraction: float = 2 / 3,
                  train_side: str = "left") -> RegionSplit:
    """Crop the grid vertically; the training side gets ceil(width * fraction) columns."""
    width = geometry.width
    frac = Fraction(train_fraction).limit_denominator(10**9)
    n_train = math.ceil(width * frac)
    if n_train <= 0 or n_train >= width:
        raise ConfigurationError(
            f"split of width {width} at fraction {train_fraction} leaves an empty region"
        )
    if train_side == "left":
        return RegionSplit((0, n_train), (n_train, width))
    if train_side == "right":
        return RegionSplit((width - n_train, width), (0, width - n_train))
    raise ConfigurationError(f"train_side must be 'left' or 'right', got {train_side!r}")


def region_indices(geometry: GridGeometry, cols: tuple[int, int]) -> np.ndarray:
    """Row-major linear indices of all pixels in a column interval."""
    c0, c1 = cols
    if not 0 <= c0 < c1 <= geometry.width:
        raise ConfigurationError(f"column interval {cols} outside width {geometry.width}")
    rows = np.arange(geometry.height)[:, None] * geometry.width
    return (rows + np.arange(c0, c1)[None, :]).ravel()


# --- undersampling --------------------------------------------------------


@dataclass(frozen=True)
class SampleIndex:
    indices: np.ndarray
    labels: np.ndarray
    seed: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.uint8)
        if idx.shape != lab.shape:
            raise DatasetError("indices and labels differ in length")
        if len(np.unique(idx)) != len(idx):
            raise DatasetError("sample indices must be unique")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)

    def __len__(self):
        return len(self.indices)

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write(f"# seed={self.seed}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "label"])
            w.writerows(zip(self.indices.tolist(), self.labels.tolist()))
        return path

    @classmethod
    def from_csv(cls, path) -> "SampleIndex":
        with Path(path).open(newline="") as fh:
            first = fh.readline().strip()
            if not first.startswith("# seed="):
                raise DatasetError(f"{path}: missing '# seed=' header comment")
            seed = int(first.split("=", 1)[1])
            rows = list(csv.DictReader(fh))
        idx = [int(r["index"]) for r in rows]
        lab = [int(r["label"]) for r in rows]
        return cls(np.array(idx, dtype=np.int64), np.array(lab, dtype=np.uint8), seed)


def undersample(label_mask: BinaryMask, train_cols: tuple[int, int], seed: int,
                valid: np.ndarray | None = None) -> SampleIndex:
    """Keep every positive in the region and an equal number of random negatives.

    ``valid`` optionally flags pixels usable for sampling (False for nodata).
    Output is sorted by linear index.
    """
    idx = region_indices(label_mask.geometry, train_cols)
    flat = label_mask.values.ravel()
    if valid is not None:
        idx = idx[np.asarray(valid, dtype=bool).ravel()[idx]]
    idx = np.sort(idx)
    pos = idx[flat[idx] == 1]
    neg = idx[flat[idx] == 0]
    if len(pos) == 0:
        raise NoPositivesError("training region contains no positive pixels")
    if len(neg) < len(pos):
        raise InsufficientNegativesError(
            f"{len(neg)} negatives cannot balance {len(pos)} positives"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(neg, size=len(pos), replace=False))
    all_idx = np.concatenate([pos, chosen])
    labels = np.concatenate([np.ones(len(pos), np.uint8), np.zeros(len(chosen), np.uint8)])
    order = np.argsort(all_idx, kind="stable")
    return SampleIndex(all_idx[order], labels[order], int(seed))


# --- features -------------------------------------------------------------


@dataclass
class FeatureMatrix:
    """Rows of canonical [VV, VH, CC] band values per pixel."""

    values: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None
    excluded: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    feature_names: tuple[str, ...] = ()

    def __len__(self):
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]


def feature_names(vv: DataCube, vh: DataCube, cc: DataCube) -> tuple[str, ...]:
    return tuple(
        f"{c.kind}_{i + 1}" for c in (vv, vh, cc) for i in range(c.n_bands)
    )


def stack_cubes(vv: DataCube, vh: DataCube, cc: DataCube) -> np.ndarray:
    """Band stack of shape (n_features, n_pixels) with nodata mapped to NaN."""
    for c in (vh, cc):
        if c.geometry != vv.geometry:
            raise AlignmentError(f"{c.kind} cube geometry differs from {vv.kind} cube")
    parts = []
    for c in (vv, vh, cc):
        b = c.bands.reshape(c.n_bands, -1)
        if not math.isnan(c.nodata):
            b = np.where(b == c.nodata, np.float32(np.nan), b)
        parts.append(b)
    return np.concatenate(parts, axis=0)


def valid_pixels(vv: DataCube, vh: DataCube, cc: DataCube) -> np.ndarray:
    """Boolean (height, width) mask of pixels that are valid in every band of every cube."""
    stack = stack_cubes(vv, vh, cc)
    return ~np.isnan(stack).any(axis=0).reshape(vv.geometry.shape)


def assemble_features(vv: DataCube, vh: DataCube, cc: DataCube,
                      samples: SampleIndex | None = None,
                      region: tuple[int, int] | None = None,
                      truth: BinaryMask | None = None) -> FeatureMatrix:
    """Gather feature rows for a sample index, a column region, or the full grid.

    Rows containing any nodata value are dropped; their linear indices are
    returned in ``excluded``.
    """
    stack = stack_cubes(vv, vh, cc)
    geometry = vv.geometry
    labels = None
    if samples is not None:
        idx = samples.indices
        labels = samples.labels
    else:
        idx = region_indices(geometry, region if region is not None else (0, geometry.width))
        if truth is not None:
            if truth.geometry != geometry:
                raise AlignmentError("truth mask geometry differs from cubes")
            labels = truth.values.ravel()[idx]
    rows = stack[:, idx].T.astype(np.float64)
    bad = np.isnan(rows).any(axis=1)
    if bad.any():
        logger.info("dropping %d rows containing nodata", int(bad.sum()))
    keep = ~bad
    return FeatureMatrix(
        values=np.ascontiguousarray(rows[keep]),
        indices=idx[keep],
        labels=None if labels is None else np.asarray(labels)[keep],
        excluded=idx[bad],
        feature_names=feature_names(vv, vh, cc),
    )


def write_exclusions(indices: Iterable[int], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index"])
        w.writerows([int(i)] for i in indices)
    return path


def scatter(values: Sequence[float], indices: np.ndarray, geometry: GridGeometry,
            fill: float = 0.0, dtype=np.float32) -> np.ndarray:
    """Place per-sample values back onto the raster grid."""
    out = np.full(geometry.size, fill, dtype=dtype)
    out[np.asarray(indices)] = values
    return out.reshape(geometry.shape)
