"""Grid CRF smoothing of per-pixel GDV probabilities.

Energy: unary ``-log max(p, floor)`` for label 1 and ``-log max(1 - p, floor)``
for label 0, plus a Potts penalty ``beta`` per disagreeing neighbour pair.
Minimized by iterated conditional modes on a coloured schedule: pixels of one
colour share no neighbours, so each half-sweep updates them all at once.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

logger = logging.getLogger(__name__)


class CrfInputError(ValueError):
    pass


@dataclass(frozen=True)
class CrfParams:
    beta: float = 1.5
    neighborhood: int = 4
    max_iters: int = 50
    prob_floor: float = 1e-6
    init_threshold: float = 0.9

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.neighborhood not in (4, 8):
            raise ValueError("neighborhood must be 4 or 8")
        if not 0 < self.prob_floor <= 0.5:
            raise ValueError("prob_floor must lie in (0, 0.5]")
        if not 0 < self.init_threshold < 1:
            raise ValueError("init_threshold must lie in (0, 1)")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")


def _offsets(neighborhood: int):
    four = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if neighborhood == 4:
        return four
    return four + [(-1, -1), (-1, 1), (1, -1), (1, 1)]


def _shift(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """out[r, c] = a[r + dr, c + dc], zero outside the grid."""
    out = np.zeros_like(a)
    h, w = a.shape
    out[max(-dr, 0):h - max(dr, 0), max(-dc, 0):w - max(dc, 0)] = \
        a[max(dr, 0):h - max(-dr, 0), max(dc, 0):w - max(-dc, 0)]
    return out


def unary_costs(prob: np.ndarray, floor: float) -> tuple[np.ndarray, np.ndarray]:
    """(cost of label 0, cost of label 1) per pixel."""
    u1 = -np.log(np.maximum(prob, floor))
    u0 = -np.log(np.maximum(1.0 - prob, floor))
    return u0, u1


def energy(labels: np.ndarray, prob: np.ndarray, params: CrfParams) -> float:
    x = np.asarray(labels, dtype=bool)
    u0, u1 = unary_costs(np.asarray(prob, dtype=float), params.prob_floor)
    e = float(np.where(x, u1, u0).sum())
    # count each unordered neighbour pair once
    half = [(1, 0), (0, 1)] + ([(1, 1), (1, -1)] if params.neighborhood == 8 else [])
    h, w = x.shape
    for dr, dc in half:
        a = x[0:h - dr, max(-dc, 0):w - max(dc, 0)]
        b = x[dr:h, max(dc, 0):w - max(-dc, 0)]
        e += params.beta * float(np.count_nonzero(a != b))
    return e


def _check_prob(prob) -> np.ndarray:
    p = np.asarray(prob, dtype=float)
    if p.ndim != 2 or p.size == 0:
        raise CrfInputError("probability raster must be a non-empty 2-D array")
    nan = np.argwhere(np.isnan(p))
    if len(nan):
        r, c = nan[0]
        raise CrfInputError(f"NaN probability at pixel (row={r}, col={c})")
    if p.min() < 0 or p.max() > 1:
        raise CrfInputError("probabilities must lie in [0, 1]")
    return p


def smooth(prob, params: CrfParams | None = None, return_info: bool = False):
    """ICM smoothing of a probability raster; returns a uint8 {0,1} array.

    With ``return_info`` a dict carrying the per-sweep energies and the
    sweep count is returned alongside the labels.
    """
    params = params or CrfParams()
    p = _check_prob(prob)
    x = (p >= params.init_threshold).astype(np.uint8)
    u0, u1 = unary_costs(p, params.prob_floor)
    offsets = _offsets(params.neighborhood)
    rr, cc = np.indices(p.shape)
    if params.neighborhood == 4:
        colors = [(rr + cc) % 2 == k for k in range(2)]
    else:
        colors = [((rr % 2) * 2 + cc % 2) == k for k in range(4)]
    degree = sum(_shift(np.ones_like(x), dr, dc) for dr, dc in offsets)

    energies = [energy(x, p, params)]
    sweeps = 0
    while sweeps < params.max_iters and params.beta > 0:
        sweeps += 1
        changed = 0
        for color in colors:
            ones = sum(_shift(x, dr, dc) for dr, dc in offsets).astype(float)
            cost1 = u1 + params.beta * (degree - ones)
            cost0 = u0 + params.beta * ones
            # strict improvement only, so ties keep the current label
            new = np.where(cost1 < cost0, 1, np.where(cost0 < cost1, 0, x)).astype(np.uint8)
            upd = color & (new != x)
            changed += int(upd.sum())
            x = np.where(upd, new, x)
        energies.append(energy(x, p, params))
        if changed == 0:
            break
    logger.debug("crf: %d sweeps, energy %.3f -> %.3f", sweeps, energies[0], energies[-1])
    if return_info:
        return x, {"energies": energies, "sweeps": sweeps}
    return x


class CRFSmoother(TransformerMixin, BaseEstimator):
    """Transformer mapping a 2-D probability raster to a smoothed {0,1} mask."""

    def __init__(self, beta=1.5, neighborhood=4, max_iters=50, prob_floor=1e-6,
                 init_threshold=0.9):
        self.beta = beta
        self.neighborhood = neighborhood
        self.max_iters = max_iters
        self.prob_floor = prob_floor
        self.init_threshold = init_threshold

    def _params(self) -> CrfParams:
        return CrfParams(self.beta, self.neighborhood, self.max_iters, self.prob_floor,
                         self.init_threshold)

    def fit(self, X=None, y=None):
        self.params_ = self._params()
        return self

    def transform(self, X):
        X = check_array(X, dtype=float, ensure_all_finite=False)
        return smooth(X, self._params())

    def __sklearn_is_fitted__(self):
        return True
