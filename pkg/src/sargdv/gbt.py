"""Second-order gradient-boosted decision trees with a binary logistic objective.

Split search is exact greedy over the sorted distinct values of a feature
when it has at most ``exact_max_distinct`` of them, and over ``n_bins``
quantile bins otherwise. Candidate thresholds sit midway between adjacent
distinct training values; a sample goes left when ``x < threshold`` and
missing values follow the node's learned default direction.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
# relative slack under which two candidate gains count as tied
TIE_RTOL = 1e-9


class ModelFormatError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    max_depth: int = 50
    n_rounds: int = 40
    learning_rate: float = 1.0
    l2_lambda: float = 1.0
    gamma_min_gain: float = 0.0
    min_child_weight: float = 1.0
    base_score: float = 0.5
    seed: int = 0
    exact_max_distinct: int = 1024
    n_bins: int = 256

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if not 0 < self.base_score < 1:
            raise ValueError("base_score must lie in (0, 1)")
        if self.l2_lambda < 0 or self.gamma_min_gain < 0 or self.min_child_weight < 0:
            raise ValueError("regularizers must be non-negative")
        if self.n_bins < 2 or self.exact_max_distinct < 2:
            raise ValueError("need at least 2 bins")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)


def sigmoid(margin):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-np.asarray(margin, dtype=float)))


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


def logistic_loss(margin, y) -> np.ndarray:
    """Per-sample negative log-likelihood for labels in {0, 1} at a log-odds margin."""
    m = np.asarray(margin, dtype=float)
    return np.logaddexp(0.0, m) - np.asarray(y, dtype=float) * m


def grad_hess(p, y):
    """First and second derivatives of the logistic loss w.r.t. the margin."""
    p = np.asarray(p, dtype=float)
    return p - y, p * (1.0 - p)


def split_gain(GL, HL, GR, HR, lam, gamma):
    """Second-order loss reduction of splitting a node into (L, R), minus ``gamma``.

    Works elementwise on arrays; 0/0 terms (zero hessian, zero lambda) count as 0.
    """
    GL, HL, GR, HR = (np.asarray(a, dtype=float) for a in (GL, HL, GR, HR))

    def score(G, H):
        den = H + lam
        with np.errstate(divide="ignore", invalid="ignore"):
            s = G * G / den
        return np.where(den > 0, s, 0.0)

    gain = 0.5 * (score(GL, HL) + score(GR, HR) - score(GL + GR, HL + HR)) - gamma
    return gain if gain.ndim else float(gain)


# --- trees ------------------------------------------------------------------


@dataclass
class Tree:
    """Flat array encoding; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    default_left: np.ndarray

    @classmethod
    def single_leaf(cls, weight: float) -> "Tree":
        return cls(np.array([-1]), np.array([np.nan]), np.array([-1]), np.array([-1]),
                   np.array([float(weight)]), np.array([False]))

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node id reached by every row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            x = X[active, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.default_left[nd], x < self.threshold[nd])
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.leaf[self.apply(X)]

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": [None if np.isnan(t) else float(t) for t in self.threshold],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "leaf": self.leaf.tolist(),
            "default_left": self.default_left.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, feature_count: int, tree_id: int = 0) -> "Tree":
        keys = ("feature", "threshold", "left", "right", "leaf", "default_left")
        try:
            cols = [d[k] for k in keys]
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"tree {tree_id}: missing field {exc}") from None
        n = len(cols[0])
        if n == 0 or any(len(c) != n for c in cols):
            raise ModelFormatError(f"tree {tree_id}: node arrays have inconsistent lengths")
        tree = cls(
            np.array(d["feature"], dtype=np.int64),
            np.array([np.nan if t is None else t for t in d["threshold"]], dtype=float),
            np.array(d["left"], dtype=np.int64),
            np.array(d["right"], dtype=np.int64),
            np.array(d["leaf"], dtype=float),
            np.array(d["default_left"], dtype=bool),
        )
        for i in range(n):
            f = tree.feature[i]
            if f >= 0:
                if f >= feature_count:
                    raise ModelFormatError(f"tree {tree_id} node {i}: feature {f} out of range")
                if not (i < tree.left[i] < n and i < tree.right[i] < n):
                    raise ModelFormatError(f"tree {tree_id} node {i}: child index out of range")
                if np.isnan(tree.threshold[i]):
                    raise ModelFormatError(f"tree {tree_id} node {i}: missing threshold")
            elif f != -1:
                raise ModelFormatError(f"tree {tree_id} node {i}: invalid feature {f}")
        return tree


@dataclass
class GbtModel:
    trees: list[Tree] = field(default_factory=list)
    base_score: float = 0.5
    feature_count: int = 89
    config: TrainingConfig = field(default_factory=TrainingConfig)

    def predict_margin(self, X: np.ndarray, n_jobs: int = 1) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_count:
            raise ValueError(f"expected {self.feature_count} features, got shape {X.shape}")
        if n_jobs > 1 and X.shape[0] > 4096:
            chunks = np.array_split(np.arange(X.shape[0]), n_jobs)
            with ThreadPoolExecutor(n_jobs) as pool:
                parts = list(pool.map(lambda c: self._margin(X[c]), chunks))
            return np.concatenate(parts)
        return self._margin(X)

    def _margin(self, X):
        margin = np.full(X.shape[0], logit(self.base_score))
        for tree in self.trees:
            margin += tree.predict(X)
        return margin

    def predict_proba(self, X: np.ndarray, n_jobs: int = 1) -> np.ndarray:
        return sigmoid(self.predict_margin(X, n_jobs=n_jobs))

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": asdict(self.config),
            "base_score": float(self.base_score),
            "feature_count": int(self.feature_count),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbtModel":
        try:
            config = TrainingConfig.from_dict(d["config"])
            feature_count = int(d["feature_count"])
            base_score = float(d["base_score"])
            raw_trees = d["trees"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed model header: {exc}") from None
        trees = [Tree.from_dict(t, feature_count, i) for i, t in enumerate(raw_trees)]
        return cls(trees, base_score, feature_count, config)


def save_model(model: GbtModel, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(model.to_dict()) + "\n", encoding="utf-8")
    return path


def load_model(path) -> GbtModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: cannot parse model at char {exc.pos}: {exc.msg}") from None
    return GbtModel.from_dict(d)


# --- training ---------------------------------------------------------------


def _midpoint(a: float, b: float) -> float:
    m = a * 0.5 + b * 0.5
    return b if m <= a else m


def _feature_cuts(x: np.ndarray, exact_max_distinct: int, n_bins: int) -> np.ndarray:
    u = np.unique(x[~np.isnan(x)])
    if len(u) < 2:
        return np.empty(0)
    if len(u) <= exact_max_distinct:
        k = np.arange(len(u) - 1)
    else:
        xs = np.sort(x[~np.isnan(x)])
        q = np.quantile(xs, np.linspace(0.0, 1.0, n_bins + 1)[1:-1], method="lower")
        k = np.unique(np.searchsorted(u, q))
        k = k[k < len(u) - 1]
    return np.array([_midpoint(u[i], u[i + 1]) for i in k])


class _Binned:
    """Training matrix mapped to per-feature bin codes; NaN gets ``missing``."""

    def __init__(self, X: np.ndarray, config: TrainingConfig):
        self.cuts = [
            _feature_cuts(X[:, j], config.exact_max_distinct, config.n_bins)
            for j in range(X.shape[1])
        ]
        self.missing = max(len(c) for c in self.cuts) + 1
        codes = np.empty(X.shape, dtype=np.int32)
        for j, c in enumerate(self.cuts):
            col = X[:, j]
            codes[:, j] = np.searchsorted(c, col, side="right")
            codes[np.isnan(col), j] = self.missing
        self.codes = codes
        # per-feature sample order by code, ties by sample id
        self.order = np.argsort(codes, axis=0, kind="stable").astype(np.int64)


@dataclass
class _Split:
    feature: int
    code: int
    default_left: bool
    gain: float


def _find_split(S: np.ndarray, binned: _Binned, g: np.ndarray, h: np.ndarray,
                G: float, H: float, cfg: TrainingConfig) -> _Split | None:
    """Best split for a node whose per-feature sorted sample ids are the columns of ``S``."""
    n, F = S.shape
    if n < 2:
        return None
    codes = np.take_along_axis(binned.codes, S, axis=0)
    cg = np.cumsum(g[S], axis=0)
    ch = np.cumsum(h[S], axis=0)
    valid = (codes[:-1] != codes[1:]) & (codes[1:] != binned.missing)
    if not valid.any():
        return None
    n_nm = (codes != binned.missing).sum(axis=0)
    last = np.maximum(n_nm - 1, 0)
    cols = np.arange(F)
    nm_g = np.where(n_nm > 0, cg[last, cols], 0.0)
    nm_h = np.where(n_nm > 0, ch[last, cols], 0.0)
    lam, gam, mcw = cfg.l2_lambda, cfg.gamma_min_gain, cfg.min_child_weight

    options = []
    for miss_left in (False, True):
        GL, HL = cg[:-1], ch[:-1]
        if miss_left:
            GL = GL + (G - nm_g)
            HL = HL + (H - nm_h)
        GR, HR = G - GL, H - HL
        gain = split_gain(GL, HL, GR, HR, lam, gam)
        ok = valid & (HL >= mcw) & (HR >= mcw)
        options.append(np.where(ok, gain, -np.inf))
        if not (n_nm < n).any():
            break
    # order candidates by (feature, position, default direction); position order
    # within a feature is threshold order
    gains = np.stack(options, axis=-1).transpose(1, 0, 2)
    best = gains.max()
    if not np.isfinite(best) or best < 0:
        return None
    parent = G * G / (H + lam) if H + lam > 0 else 0.0
    tol = TIE_RTOL * max(abs(best), parent, 1e-300)
    flat = int(np.argmax(gains.ravel() >= best - tol))
    f, pos, opt = np.unravel_index(flat, gains.shape)
    return _Split(int(f), int(codes[pos, f]), bool(opt), float(gains[f, pos, opt]))


def _grow_tree(binned: _Binned, g: np.ndarray, h: np.ndarray, cfg: TrainingConfig,
               margin_delta: np.ndarray) -> Tree:
    feature, threshold, left, right, leaf, default_left = [], [], [], [], [], []

    def new_node():
        for arr, v in ((feature, -1), (threshold, np.nan), (left, -1), (right, -1),
                       (leaf, 0.0), (default_left, False)):
            arr.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, binned.order, 0)]
    while stack:
        node, S, depth = stack.pop()
        ids = np.sort(S[:, 0])
        G = g[ids].sum()
        H = h[ids].sum()
        split = None
        if depth < cfg.max_depth:
            split = _find_split(S, binned, g, h, G, H, cfg)
        if split is None:
            lam = cfg.l2_lambda
            w = -cfg.learning_rate * G / (H + lam) if H + lam > 0 else 0.0
            leaf[node] = w
            margin_delta[ids] = w
            continue
        f = split.feature
        col = binned.codes[:, f]
        is_missing = col == binned.missing
        goes_left = np.where(is_missing, split.default_left, col <= split.code)
        mask = goes_left[S]
        n_left = int(mask[:, 0].sum())
        S_left = S.T[mask.T].reshape(S.shape[1], n_left).T
        S_right = S.T[~mask.T].reshape(S.shape[1], S.shape[0] - n_left).T
        feature[node] = f
        threshold[node] = float(binned.cuts[f][split.code])
        default_left[node] = split.default_left
        lid, rid = new_node(), new_node()
        left[node], right[node] = lid, rid
        # right pushed first so the left subtree is grown (and numbered) first
        stack.append((rid, S_right, depth + 1))
        stack.append((lid, S_left, depth + 1))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(leaf, dtype=float), np.array(default_left, dtype=bool))


def train(X: np.ndarray, y: np.ndarray, config: TrainingConfig | None = None,
          callback=None) -> GbtModel:
    """Fit ``config.n_rounds`` trees to the logistic loss by Newton boosting.

    ``callback(round, model, margin)`` is invoked after each round if given.
    """
    config = config or TrainingConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInputError("training requires a non-empty 2-D feature matrix")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must be a vector matching the number of rows")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    binned = _Binned(X, config)
    model = GbtModel([], config.base_score, X.shape[1], config)
    margin = np.full(X.shape[0], logit(config.base_score))
    for r in range(config.n_rounds):
        g, h = grad_hess(sigmoid(margin), y)
        delta = np.zeros_like(margin)
        tree = _grow_tree(binned, g, h, config, delta)
        model.trees.append(tree)
        margin = margin + delta
        logger.debug("round %d: %d nodes, mean loss %.6f", r, tree.n_nodes,
                     logistic_loss(margin, y).mean())
        if callback is not None:
            callback(r, model, margin)
    return model


def predict_proba(model: GbtModel, X: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    return model.predict_proba(X, n_jobs=n_jobs)


# --- estimator ----------------------------------------------------------------


class GBTClassifier(ClassifierMixin, BaseEstimator):
    """Binary boosted-tree classifier.

    Defaults follow the SARGDV configuration: depth 50, 40 rounds,
    learning rate 1. ``threshold`` is the probability cut used by
    :meth:`predict` (inclusive).
    """

    def __init__(self, max_depth=50, n_estimators=40, learning_rate=1.0, reg_lambda=1.0,
                 gamma=0.0, min_child_weight=1.0, base_score=0.5, random_state=0,
                 exact_max_distinct=1024, n_bins=256, threshold=0.5, n_jobs=1):
        self.max_depth = max_depth
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.reg_lambda = reg_lambda
        self.gamma = gamma
        self.min_child_weight = min_child_weight
        self.base_score = base_score
        self.random_state = random_state
        self.exact_max_distinct = exact_max_distinct
        self.n_bins = n_bins
        self.threshold = threshold
        self.n_jobs = n_jobs

    def _config(self) -> TrainingConfig:
        return TrainingConfig(
            max_depth=self.max_depth, n_rounds=self.n_estimators,
            learning_rate=self.learning_rate, l2_lambda=self.reg_lambda,
            gamma_min_gain=self.gamma, min_child_weight=self.min_child_weight,
            base_score=self.base_score, seed=int(self.random_state or 0),
            exact_max_distinct=self.exact_max_distinct, n_bins=self.n_bins,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float, ensure_all_finite="allow-nan")
        check_classification_targets(y)
        labels = np.unique(y)
        if np.isin(labels, (0, 1)).all():
            self.classes_, y_enc = np.array([0, 1]), y
        elif len(labels) == 2:
            self.classes_, y_enc = np.unique(y, return_inverse=True)
        else:
            raise ValueError("GBTClassifier supports binary targets only")
        self.model_ = train(X, y_enc.astype(float), self._config())
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_model(cls, model: GbtModel, **kwargs) -> "GBTClassifier":
        cfg = model.config
        est = cls(max_depth=cfg.max_depth, n_estimators=cfg.n_rounds,
                  learning_rate=cfg.learning_rate, reg_lambda=cfg.l2_lambda,
                  gamma=cfg.gamma_min_gain, min_child_weight=cfg.min_child_weight,
                  base_score=cfg.base_score, random_state=cfg.seed,
                  exact_max_distinct=cfg.exact_max_distinct, n_bins=cfg.n_bins, **kwargs)
        est.model_ = model
        est.classes_ = np.array([0, 1])
        est.n_features_in_ = model.feature_count
        return est

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float, ensure_all_finite="allow-nan")
        return self.model_.predict_margin(X, n_jobs=self.n_jobs)

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        p = self.predict_proba(X)[:, 1]
        return self.classes_[(p >= self.threshold).astype(int)]
