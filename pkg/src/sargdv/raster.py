"""Raster grids, data cubes and masks, plus the on-disk header/payload format.

Every raster is stored as a JSON header next to a raw little-endian payload
(float32 for cubes and probability/DTW rasters, uint8 for masks), band
sequential, row-major and north-up.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

CUBE_KINDS = ("VV", "VH", "CC")
FLOAT_KINDS = ("PROB", "DTW")
MASK_KIND = "MASK"
CANONICAL_BANDS = {"VV": 30, "VH": 30, "CC": 29}

HEADER_KEYS = frozenset(
    {
        "kind",
        "width",
        "height",
        "bands",
        "nodata",
        "dates",
        "origin_lon",
        "origin_lat",
        "pixel_size_lon",
        "pixel_size_lat",
        "payload",
    }
)


class RasterError(ValueError):
    """Base class for raster format and invariant violations."""


class SizeMismatchError(RasterError):
    pass


class DateOrderError(RasterError):
    pass


class RangeError(RasterError):
    pass


class BoundsError(RasterError, IndexError):
    pass


class AlignmentError(RasterError):
    pass


@dataclass(frozen=True)
class GridGeometry:
    """Pixel grid with a WGS84 origin at the top-left corner of pixel (0, 0)."""

    width: int
    height: int
    origin_lon: float = 0.0
    origin_lat: float = 0.0
    pixel_size_lon: float = 1.0
    pixel_size_lat: float = -1.0

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise RasterError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.pixel_size_lon > 0:
            raise RasterError("pixel_size_lon must be positive")
        if self.pixel_size_lat == 0 or not math.isfinite(self.pixel_size_lat):
            raise RasterError("pixel_size_lat must be non-zero")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (lon, lat) 1-D arrays of cell-center coordinates per column / row."""
        lon = self.origin_lon + (np.arange(self.width) + 0.5) * self.pixel_size_lon
        lat = self.origin_lat + (np.arange(self.height) + 0.5) * self.pixel_size_lat
        return lon, lat

    def to_pixel(self, lon, lat):
        """Map lon/lat to fractional (col, row) pixel coordinates."""
        col = (np.asarray(lon, dtype=float) - self.origin_lon) / self.pixel_size_lon
        row = (np.asarray(lat, dtype=float) - self.origin_lat) / self.pixel_size_lat
        return col, row

    def to_dict(self) -> dict:
        return {
            "width": int(self.width),
            "height": int(self.height),
            "origin_lon": float(self.origin_lon),
            "origin_lat": float(self.origin_lat),
            "pixel_size_lon": float(self.pixel_size_lon),
            "pixel_size_lat": float(self.pixel_size_lat),
        }


def linear_index(row: int, col: int, geometry: GridGeometry) -> int:
    """Row-major sample index of pixel (row, col)."""
    if not (0 <= row < geometry.height and 0 <= col < geometry.width):
        raise BoundsError(f"pixel ({row}, {col}) outside {geometry.height}x{geometry.width} grid")
    return int(row) * geometry.width + int(col)


def pixel_of(index: int, geometry: GridGeometry) -> tuple[int, int]:
    """Inverse of :func:`linear_index`."""
    if not 0 <= index < geometry.size:
        raise BoundsError(f"index {index} outside grid of {geometry.size} pixels")
    return divmod(int(index), geometry.width)


def _check_dates(dates: Sequence[str]) -> tuple[str, ...]:
    parsed = []
    for d in dates:
        try:
            parsed.append(date.fromisoformat(str(d)))
        except ValueError as exc:
            raise DateOrderError(f"invalid ISO-8601 date {d!r}") from exc
    for a, b in zip(parsed, parsed[1:]):
        if not b > a:
            raise DateOrderError(f"acquisition dates not strictly increasing at {a} -> {b}")
    return tuple(str(d) for d in dates)


@dataclass(frozen=True, eq=False)
class DataCube:
    """Chronological stack of co-registered bands, shape (bands, height, width).

    With ``strict=True`` the canonical band counts (VV/VH 30, CC 29) and the
    CC coherence range [0, 1] are enforced.
    """

    geometry: GridGeometry
    kind: str
    bands: np.ndarray
    acquisition_dates: tuple[str, ...]
    nodata: float = math.nan
    strict: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.kind not in CUBE_KINDS:
            raise RasterError(f"unknown cube kind {self.kind!r}")
        bands = np.array(self.bands, dtype=np.float32, order="C")
        if bands.ndim == 2:
            bands = bands[None]
        if bands.ndim != 3 or bands.shape[1:] != self.geometry.shape:
            raise SizeMismatchError(
                f"bands of shape {bands.shape[1:]} do not match grid {self.geometry.shape}"
            )
        dates = _check_dates(self.acquisition_dates)
        if len(dates) != bands.shape[0]:
            raise SizeMismatchError(f"{bands.shape[0]} bands but {len(dates)} dates")
        if self.strict:
            expected = CANONICAL_BANDS[self.kind]
            if bands.shape[0] != expected:
                raise SizeMismatchError(
                    f"strict {self.kind} cube needs {expected} bands, got {bands.shape[0]}"
                )
            if self.kind == "CC":
                valid = bands[~self.nodata_mask(bands)]
                if valid.size and (valid.min() < 0.0 or valid.max() > 1.0):
                    raise RangeError("CC coherence values must lie in [0, 1]")
        bands.setflags(write=False)
        object.__setattr__(self, "bands", bands)
        object.__setattr__(self, "acquisition_dates", dates)

    def nodata_mask(self, bands: np.ndarray | None = None) -> np.ndarray:
        b = self.bands if bands is None else bands
        if math.isnan(self.nodata):
            return np.isnan(b)
        return (b == self.nodata) | np.isnan(b)

    @property
    def n_bands(self) -> int:
        return self.bands.shape[0]

    def __eq__(self, other):
        if not isinstance(other, DataCube):
            return NotImplemented
        same_nodata = (math.isnan(self.nodata) and math.isnan(other.nodata)) or (
            self.nodata == other.nodata
        )
        return (
            self.geometry == other.geometry
            and self.kind == other.kind
            and self.acquisition_dates == other.acquisition_dates
            and same_nodata
            and self.bands.tobytes() == other.bands.tobytes()
        )


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-pixel GDV (1) / non-GDV (0) raster."""

    geometry: GridGeometry
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape != self.geometry.shape:
            raise SizeMismatchError(f"mask of shape {v.shape} does not match grid {self.geometry.shape}")
        if v.size and not np.isin(v, (0, 1)).all():
            raise RangeError("mask values must be 0 or 1")
        v = np.array(v, dtype=np.uint8, order="C")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.geometry == other.geometry and np.array_equal(self.values, other.values)


# --- on-disk format -------------------------------------------------------


def _payload_path(header_path: Path) -> Path:
    return header_path.with_suffix(".bin")


def _write(header_path, geometry: GridGeometry, kind, bands, nodata, dates, payload: np.ndarray):
    header_path = Path(header_path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path = _payload_path(header_path)
    header = {
        "kind": kind,
        **{k: v for k, v in geometry.to_dict().items()},
        "bands": int(bands),
        "nodata": None if nodata is None or math.isnan(nodata) else float(nodata),
        "dates": list(dates),
        "payload": payload_path.name,
    }
    payload_path.write_bytes(payload.tobytes(order="C"))
    header_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return header_path


def _read(header_path, dtype) -> tuple[dict, GridGeometry, np.ndarray]:
    header_path = Path(header_path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RasterError(f"{header_path}: malformed header ({exc})") from exc
    missing = HEADER_KEYS - header.keys()
    extra = header.keys() - HEADER_KEYS
    if missing or extra:
        raise RasterError(
            f"{header_path}: header keys mismatch (missing={sorted(missing)}, extra={sorted(extra)})"
        )
    geometry = GridGeometry(
        width=int(header["width"]),
        height=int(header["height"]),
        origin_lon=float(header["origin_lon"]),
        origin_lat=float(header["origin_lat"]),
        pixel_size_lon=float(header["pixel_size_lon"]),
        pixel_size_lat=float(header["pixel_size_lat"]),
    )
    payload_path = header_path.parent / header["payload"]
    raw = payload_path.read_bytes()
    n_bands = int(header["bands"])
    dt = np.dtype(dtype).newbyteorder("<")
    expected = geometry.size * n_bands * dt.itemsize
    if len(raw) != expected:
        raise SizeMismatchError(
            f"{payload_path}: payload has {len(raw)} bytes, header implies {expected} "
            f"({geometry.width}x{geometry.height}x{n_bands}x{dt.itemsize})"
        )
    data = np.frombuffer(raw, dtype=dt).astype(np.dtype(dtype).newbyteorder("="))
    return header, geometry, data.reshape(n_bands, geometry.height, geometry.width)


def save_cube(cube: DataCube, header_path) -> Path:
    payload = cube.bands.astype("<f4", copy=False)
    return _write(header_path, cube.geometry, cube.kind, cube.n_bands, cube.nodata,
                  cube.acquisition_dates, payload)


def load_cube(header_path, strict: bool = False) -> DataCube:
    header, geometry, data = _read(header_path, np.float32)
    if header["kind"] not in CUBE_KINDS:
        raise RasterError(f"{header_path}: expected cube kind, got {header['kind']!r}")
    nodata = math.nan if header["nodata"] is None else float(header["nodata"])
    return DataCube(geometry, header["kind"], data, tuple(header["dates"]), nodata, strict=strict)


def save_mask(mask: BinaryMask, header_path) -> Path:
    return _write(header_path, mask.geometry, MASK_KIND, 1, 0.0, (), mask.values.astype("u1"))


def load_mask(header_path) -> BinaryMask:
    header, geometry, data = _read(header_path, np.uint8)
    if header["kind"] != MASK_KIND or header["bands"] != 1:
        raise RasterError(f"{header_path}: expected single-band MASK raster")
    return BinaryMask(geometry, data[0])


def save_float_raster(values: np.ndarray, geometry: GridGeometry, kind: str, header_path) -> Path:
    """Write a single-band float32 raster such as a probability (PROB) or DTW map."""
    if kind not in FLOAT_KINDS:
        raise RasterError(f"unknown float raster kind {kind!r}")
    values = np.asarray(values, dtype="<f4")
    if values.shape != geometry.shape:
        raise SizeMismatchError(f"raster of shape {values.shape} does not match grid {geometry.shape}")
    return _write(header_path, geometry, kind, 1, None, (), values)


def load_float_raster(header_path, kind: str | None = None) -> tuple[np.ndarray, GridGeometry]:
    header, geometry, data = _read(header_path, np.float32)
    if header["kind"] not in FLOAT_KINDS or (kind is not None and header["kind"] != kind):
        raise RasterError(f"{header_path}: expected {kind or 'PROB/DTW'} raster, got {header['kind']!r}")
    return data[0], geometry


def read_header(header_path) -> dict:
    return json.loads(Path(header_path).read_text(encoding="utf-8"))


def write_pgm(values: np.ndarray, path) -> Path:
    """Export a 2-D array as an 8-bit binary PGM; {0,1} masks are scaled to {0,255}."""
    v = np.asarray(values)
    if v.dtype != np.uint8 or v.max(initial=0) <= 1:
        v = np.clip(np.nan_to_num(v.astype(float)) * 255.0, 0, 255).astype(np.uint8)
    path = Path(path)
    h, w = v.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + v.tobytes())
    return path
