"""Deterministic synthetic VV/VH/CC cubes with planted GDV blobs.

GDV pixels get a weak seasonal cycle in VH/VV backscatter and high, stable
coherence; background pixels get a strong cycle and lower, noisier
coherence. Every pixel has its own random phase and level offset, so the
seasonal-amplitude cue is only reachable by a non-linear model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .dataset import Polygon, PolygonSet, rasterize_polygons
from .idw import BoreholeRecord
from .raster import BinaryMask, DataCube, GridGeometry

START_DATE = date(2017, 1, 4)
REVISIT_DAYS = 12
MAX_PLACEMENT_RETRIES = 1000


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    width: int = 256
    height: int = 256
    blob_count: int = 12
    blob_radius: tuple[float, float] = (9.0, 15.0)
    gdv_vh_seasonal_amplitude: float = 1.0
    gdv_cc_mean: float = 0.50
    gdv_cc_variance: float = 0.005
    background_vh_seasonal_amplitude: float = 2.5
    background_cc_mean: float = 0.45
    background_cc_variance: float = 0.012
    level_sigma: float = 1.5
    noise_sigma: float = 1.5
    seed: int = 0
    origin_lon: float = 140.60
    origin_lat: float = -37.70
    pixel_size_deg: float = 0.00027
    polygon_vertices: int = 64

    def __post_init__(self):
        object.__setattr__(self, "blob_radius", tuple(float(r) for r in self.blob_radius))
        if min(self.width, self.height) < 8:
            raise SynthError("synthetic grids need both dimensions >= 8")
        r0, r1 = self.blob_radius
        if not 0 < r0 <= r1 or r1 >= min(self.width, self.height) / 2:
            raise SynthError("blob radii must satisfy 0 < min <= max < min(width, height) / 2")
        for name in ("gdv_cc_mean", "background_cc_mean"):
            if not 0 <= getattr(self, name) <= 1:
                raise SynthError(f"{name} must lie in [0, 1]")
        if self.blob_count < 0:
            raise SynthError("blob_count must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise SynthError(f"unknown synth options: {sorted(unknown)}")
        return cls(**d)

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.width, self.height, self.origin_lon, self.origin_lat,
                            self.pixel_size_deg, -self.pixel_size_deg)


def acquisition_dates(n: int, start: date = START_DATE) -> tuple[str, ...]:
    return tuple((start + timedelta(days=REVISIT_DAYS * i)).isoformat() for i in range(n))


def _place_blobs(spec: SynthSpec, rng: np.random.Generator) -> list[tuple[float, float, float]]:
    """Blob (col, row, radius) in pixel units, each disc fully inside the grid."""
    blobs = []
    for _ in range(spec.blob_count):
        r = rng.uniform(*spec.blob_radius)
        for _attempt in range(MAX_PLACEMENT_RETRIES):
            c, rw = rng.uniform(0, spec.width), rng.uniform(0, spec.height)
            if r <= c <= spec.width - r and r <= rw <= spec.height - r:
                break
        else:
            raise SynthError(f"could not place blob of radius {r:.1f} inside the grid")
        blobs.append((c, rw, r))
    return blobs


def blob_polygons(spec: SynthSpec, blobs) -> PolygonSet:
    geo = spec.geometry
    k = spec.polygon_vertices
    ang = 2 * np.pi * np.arange(k) / k
    polys = []
    for c, rw, r in blobs:
        cols, rows = c + r * np.cos(ang), rw + r * np.sin(ang)
        lon = geo.origin_lon + cols * geo.pixel_size_lon
        lat = geo.origin_lat + rows * geo.pixel_size_lat
        polys.append(Polygon(np.column_stack([lon, lat])))
    return PolygonSet(tuple(polys))


def generate(spec: SynthSpec | None = None, return_polygons: bool = False):
    """Return ``(vv, vh, cc, truth)`` cubes (30/30/29 bands) and the truth mask.

    With ``return_polygons`` the blob outlines are returned as a fifth item.
    """
    spec = spec or SynthSpec()
    rng = np.random.default_rng(spec.seed)
    geo = spec.geometry
    blobs = _place_blobs(spec, rng)
    polygons = blob_polygons(spec, blobs)
    truth = rasterize_polygons(polygons, geo)
    gdv = truth.values.astype(bool)
    shape = geo.shape

    n_int, n_cc = 30, 29
    t = np.arange(n_int, dtype=float)[:, None, None]
    phase = rng.uniform(0, 2 * np.pi, size=shape)
    amp_jitter = rng.uniform(0.6, 1.4, size=shape)
    amp = np.where(gdv, spec.gdv_vh_seasonal_amplitude,
                   spec.background_vh_seasonal_amplitude) * amp_jitter
    season = np.sin(2 * np.pi * t / n_int + phase)

    level_vh = -17.0 + rng.normal(0, spec.level_sigma, size=shape)
    vh = level_vh + amp * season + rng.normal(0, spec.noise_sigma, size=(n_int, *shape))
    level_vv = -10.0 + rng.normal(0, spec.level_sigma, size=shape)
    vv = level_vv + 0.6 * amp * season + rng.normal(0, spec.noise_sigma, size=(n_int, *shape))

    cc_mean = np.where(gdv, spec.gdv_cc_mean, spec.background_cc_mean)
    cc_mean = cc_mean + rng.normal(0, 0.05, size=shape)
    cc_sd = np.sqrt(np.where(gdv, spec.gdv_cc_variance, spec.background_cc_variance))
    cc_season = 0.5 * (season[:n_cc] + season[1:]) * cc_sd
    cc = cc_mean + cc_season + rng.normal(0, 1, size=(n_cc, *shape)) * cc_sd
    cc = np.clip(cc, 0.0, 1.0)

    dates = acquisition_dates(n_int)
    cubes = (
        DataCube(geo, "VV", vv.astype(np.float32), dates, strict=True),
        DataCube(geo, "VH", vh.astype(np.float32), dates, strict=True),
        DataCube(geo, "CC", cc.astype(np.float32), dates[1:], strict=True),
        truth,
    )
    if return_polygons:
        return cubes + (polygons,)
    return cubes


def synth_boreholes(spec: SynthSpec, truth: BinaryMask, n: int = 46, n_old: int = 2,
                    seed_offset: int = 1) -> list[BoreholeRecord]:
    """Borehole readings shallower over planted GDV blobs; ``n_old`` dated before 2019."""
    rng = np.random.default_rng(spec.seed + seed_offset)
    geo = spec.geometry
    recs = []
    for i in range(n):
        c, r = rng.uniform(0, geo.width), rng.uniform(0, geo.height)
        inside = bool(truth.values[int(r), int(c)])
        dtw = rng.uniform(-3.0, 2.0) if inside else rng.uniform(-16.8, 7.68)
        when = date(2017, 6, 1) if i < n_old else date(2019, 1, 1) + timedelta(days=int(rng.integers(0, 700)))
        lon = geo.origin_lon + c * geo.pixel_size_lon
        lat = geo.origin_lat + r * geo.pixel_size_lat
        recs.append(BoreholeRecord(f"BH{i:03d}", round(lon, 7), round(lat, 7),
                                   round(float(dtw), 2), when.isoformat()))
    return recs


def spec_to_json(spec: SynthSpec) -> str:
    return json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n"


def load_spec(path) -> SynthSpec:
    return SynthSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def positive_fraction(truth: BinaryMask) -> float:
    return float(truth.values.mean())

