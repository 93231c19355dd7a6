"""Borehole filtering and inverse-distance-weighted depth-to-water surfaces."""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .raster import GridGeometry

logger = logging.getLogger(__name__)

DEFAULT_CUTOFF = date(2019, 1, 1)


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class BoreholeRecord:
    id: str
    lon: float
    lat: float
    dtw_m: float | None
    obs_date: str

    def __post_init__(self):
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"borehole {self.id}: non-finite coordinates")
        if self.dtw_m is not None and not math.isfinite(self.dtw_m):
            raise ValueError(f"borehole {self.id}: non-finite depth to water")


@dataclass(frozen=True)
class IdwParams:
    power: float = 2.0
    geometry: GridGeometry | None = None

    def __post_init__(self):
        if not self.power > 0:
            raise ValueError("power must be positive")


def read_boreholes(path) -> list[BoreholeRecord]:
    """Read ``id,lon,lat,dtw_m,obs_date`` rows; an empty dtw cell means absent."""
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            dtw = (row.get("dtw_m") or "").strip()
            records.append(BoreholeRecord(
                id=row["id"], lon=float(row["lon"]), lat=float(row["lat"]),
                dtw_m=float(dtw) if dtw else None, obs_date=(row.get("obs_date") or "").strip(),
            ))
    return records


def write_boreholes(records: Iterable[BoreholeRecord], path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "lon", "lat", "dtw_m", "obs_date"])
        for r in records:
            w.writerow([r.id, repr(r.lon), repr(r.lat), "" if r.dtw_m is None else repr(r.dtw_m),
                        r.obs_date])
    return path


def filter_boreholes(records: Iterable[BoreholeRecord], cutoff_date=DEFAULT_CUTOFF,
                     stats: dict | None = None) -> list[BoreholeRecord]:
    """Drop records without a depth reading or observed before ``cutoff_date``.

    Records whose date cannot be parsed are rejected with a warning. Per-reason
    counts are written into ``stats`` when a dict is passed.
    """
    if isinstance(cutoff_date, str):
        cutoff_date = date.fromisoformat(cutoff_date)
    counts = {"input": 0, "kept": 0, "missing_dtw": 0, "before_cutoff": 0, "bad_date": 0}
    kept = []
    for r in records:
        counts["input"] += 1
        if r.dtw_m is None:
            counts["missing_dtw"] += 1
            continue
        try:
            when = date.fromisoformat(r.obs_date)
        except (TypeError, ValueError):
            logger.warning("borehole %s: unparseable date %r; rejected", r.id, r.obs_date)
            counts["bad_date"] += 1
            continue
        if when < cutoff_date:
            counts["before_cutoff"] += 1
            continue
        kept.append(r)
    counts["kept"] = len(kept)
    if stats is not None:
        stats.update(counts)
    return kept


def _planar(lon, lat, lat0: float):
    """Equirectangular projection in degrees: lon scaled by cos(reference latitude)."""
    return np.asarray(lon, float) * math.cos(math.radians(lat0)), np.asarray(lat, float)


def idw_points(px, py, sx, sy, values, power: float) -> np.ndarray:
    """IDW estimates at query points (px, py) from samples (sx, sy, values), planar coords.

    A query coinciding with one or more samples takes their (mean) value.
    """
    px, py = np.asarray(px, float).ravel(), np.asarray(py, float).ravel()
    sx, sy, v = (np.asarray(a, float).ravel() for a in (sx, sy, values))
    d = np.hypot(px[:, None] - sx[None, :], py[:, None] - sy[None, :])
    zero = d == 0
    with np.errstate(divide="ignore"):
        w = np.where(zero, 0.0, d ** -power)
    # offsets from the minimum keep constant inputs exact and the result >= min
    base = v.min()
    out = base + (w @ (v - base)) / w.sum(axis=1)
    hit = zero.any(axis=1)
    if hit.any():
        out[hit] = (zero[hit] @ v) / zero[hit].sum(axis=1)
    return out


def idw_interpolate(records: Iterable[BoreholeRecord], params: IdwParams,
                    n_jobs: int = 1) -> np.ndarray:
    """Global IDW of depth to water evaluated at every cell center of ``params.geometry``."""
    recs = [r for r in records if r.dtw_m is not None]
    if not recs:
        raise EmptyInputError("no borehole records with a depth reading")
    geo = params.geometry
    if geo is None:
        raise ValueError("IdwParams.geometry is required for grid interpolation")
    lon_c, lat_c = geo.cell_centers()
    lat0 = float(lat_c.mean())
    sx, sy = _planar([r.lon for r in recs], [r.lat for r in recs], lat0)
    v = np.array([r.dtw_m for r in recs])
    gx, _ = _planar(lon_c, lat_c, lat0)

    def rows(r0, r1):
        qx = np.broadcast_to(gx[None, :], (r1 - r0, geo.width))
        qy = np.broadcast_to(lat_c[r0:r1, None], (r1 - r0, geo.width))
        return idw_points(qx, qy, sx, sy, v, params.power).reshape(r1 - r0, geo.width)

    step = max(1, 65536 // max(geo.width, 1))
    bounds = [(r, min(r + step, geo.height)) for r in range(0, geo.height, step)]
    if n_jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            parts = list(pool.map(lambda b: rows(*b), bounds))
    else:
        parts = [rows(*b) for b in bounds]
    return np.vstack(parts)


class IDWRegressor(RegressorMixin, BaseEstimator):
    """IDW as an estimator: ``fit`` stores (lon, lat) samples, ``predict`` interpolates."""

    def __init__(self, power=2.0, reference_lat=None):
        self.power = power
        self.reference_lat = reference_lat

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must hold (lon, lat) columns")
        if not self.power > 0:
            raise ValueError("power must be positive")
        self.lat0_ = float(X[:, 1].mean()) if self.reference_lat is None else float(self.reference_lat)
        self.sx_, self.sy_ = _planar(X[:, 0], X[:, 1], self.lat0_)
        self.values_ = y
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "values_")
        X = check_array(X, dtype=float)
        px, py = _planar(X[:, 0], X[:, 1], self.lat0_)
        return idw_points(px, py, self.sx_, self.sy_, self.values_, self.power)
