"""File-based pipeline stages. Each stage reads its inputs from disk, writes
its artifact plus a ``<artifact>.prov.json`` provenance sidecar."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .crf import CrfParams, smooth
from .dataset import (
    PolygonSet,
    RegionSplit,
    SampleIndex,
    assemble_features,
    rasterize_polygons,
    scatter,
    split_regions,
    undersample,
    valid_pixels,
    write_exclusions,
)
from .gbt import TrainingConfig, load_model, save_model, train
from .idw import IdwParams, filter_boreholes, idw_interpolate, read_boreholes, write_boreholes
from .logreg import load_logreg, predict_logreg, save_logreg, train_logreg
from .metrics import (
    REFERENCE_OPERATING_POINTS,
    ConfusionMatrix,
    compute_metrics,
    confusion,
    curves_svg,
    metrics_table,
    operating_point,
    prc_curve,
    roc_curve,
    tpr_at_fdr,
    write_json,
)
from .raster import (
    BinaryMask,
    DataCube,
    GridGeometry,
    load_cube,
    load_float_raster,
    load_mask,
    read_header,
    save_cube,
    save_float_raster,
    save_mask,
    write_pgm,
)
from .synth import SynthSpec, generate, spec_to_json, synth_boreholes

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# --- run configuration ----------------------------------------------------------


@dataclass
class RunConfig:
    vv: str = "vv.hdr.json"
    vh: str = "vh.hdr.json"
    cc: str = "cc.hdr.json"
    polygons: str = "gdv.geojson"
    boreholes: str | None = None
    output_dir: str = "results"
    train_fraction: float = 2 / 3
    train_side: str = "left"
    undersample_seed: int = 0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    crf: CrfParams = field(default_factory=CrfParams)
    eval_thresholds: tuple[float, ...] = (0.9, 0.2)
    idw_power: float = 2.0
    idw_cutoff_date: str = "2019-01-01"
    logreg_max_iters: int = 5000
    logreg_tolerance: float = 1e-6
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        if any(not 0 < t < 1 for t in self.eval_thresholds):
            raise ConfigError("eval thresholds must lie in (0, 1)")
        self.eval_thresholds = tuple(float(t) for t in self.eval_thresholds)

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "base_dir"}
        d["training"] = asdict(self.training)
        d["crf"] = asdict(self.crf)
        d["eval_thresholds"] = list(self.eval_thresholds)
        return {"schema_version": SCHEMA_VERSION, **d}

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d)
        d.pop("schema_version", None)
        names = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown run-config keys: {sorted(unknown)}")
        try:
            if "training" in d:
                d["training"] = TrainingConfig.from_dict(d["training"])
            if "crf" in d:
                d["crf"] = CrfParams(**d["crf"])
            if "eval_thresholds" in d:
                d["eval_thresholds"] = tuple(d["eval_thresholds"])
            return cls(**d, base_dir=Path(base_dir))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid run config: {exc}") from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
        return cls.from_dict(d, base_dir=path.parent)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def require_inputs(self, *names: str) -> None:
        for n in names:
            p = self.path(n)
            if p is None or not p.exists():
                raise FileNotFoundError(f"missing input {n!r}: {p}")


# --- provenance -------------------------------------------------------------------


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_provenance(artifact, stage: str, inputs: dict, params: dict | None = None,
                     seed: int | None = None) -> Path:
    artifact = Path(artifact)
    params = params or {}
    record = {
        "schema_version": SCHEMA_VERSION,
        "artifact": artifact.name,
        "stage": stage,
        "version": __version__,
        "seed": seed,
        "config_hash": hashlib.sha256(
            json.dumps(params, sort_keys=True, default=str).encode()).hexdigest(),
        "params": params,
        "inputs": {
            k: {"path": str(v), "sha256": _sha256(Path(v)) if Path(v).is_file() else None}
            for k, v in inputs.items() if v is not None
        },
    }
    side = artifact.with_name(artifact.name + ".prov.json")
    write_json(record, side)
    return side


def _require(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"missing stage input: {p}")


def _geometry_of(header_path) -> GridGeometry:
    h = read_header(header_path)
    return GridGeometry(h["width"], h["height"], h["origin_lon"], h["origin_lat"],
                        h["pixel_size_lon"], h["pixel_size_lat"])


def _load_cubes(vv, vh, cc) -> tuple[DataCube, DataCube, DataCube]:
    _require(vv, vh, cc)
    return load_cube(vv, strict=True), load_cube(vh, strict=True), load_cube(cc, strict=True)


# --- stages -------------------------------------------------------------------------


def stage_ingest(array_path, meta_path, out) -> Path:
    """Import an external (bands, height, width) ``.npy`` array using a JSON metadata file."""
    _require(array_path, meta_path)
    meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    geo = GridGeometry(**{k: meta[k] for k in ("width", "height", "origin_lon", "origin_lat",
                                                "pixel_size_lon", "pixel_size_lat")})
    nodata = meta.get("nodata")
    cube = DataCube(geo, meta["kind"], np.load(array_path), tuple(meta["dates"]),
                    float("nan") if nodata is None else float(nodata),
                    strict=bool(meta.get("strict", True)))
    out = save_cube(cube, out)
    write_provenance(out, "ingest", {"array": array_path, "meta": meta_path})
    return out


def stage_rasterize(polygons_path, reference_header, out) -> Path:
    _require(polygons_path, reference_header)
    geo = _geometry_of(reference_header)
    mask = rasterize_polygons(PolygonSet.from_geojson(polygons_path), geo)
    out = save_mask(mask, out)
    write_pgm(mask.values, Path(out).with_suffix("").with_suffix(".pgm"))
    write_provenance(out, "rasterize", {"polygons": polygons_path, "reference": reference_header},
                     {"coverage_threshold": 0.5})
    logger.info("rasterize: %d positive pixels of %d", int(mask.values.sum()), geo.size)
    return out


def stage_split(reference_header, out, train_fraction=2 / 3, train_side="left") -> Path:
    _require(reference_header)
    split = split_regions(_geometry_of(reference_header), train_fraction, train_side)
    out = write_json({"schema_version": SCHEMA_VERSION, **split.to_dict()}, out)
    write_provenance(out, "split", {"reference": reference_header},
                     {"train_fraction": train_fraction, "train_side": train_side})
    return out


def load_split(path) -> RegionSplit:
    _require(path)
    return RegionSplit.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def stage_sample(labels_path, split_path, seed: int, out, cubes=None) -> Path:
    _require(labels_path, split_path)
    labels = load_mask(labels_path)
    split = load_split(split_path)
    valid = valid_pixels(*_load_cubes(*cubes)) if cubes else None
    samples = undersample(labels, split.train_cols, seed, valid=valid)
    out = samples.to_csv(out)
    write_provenance(out, "sample", {"labels": labels_path, "split": split_path}, seed=seed)
    logger.info("sample: %d balanced training pixels", len(samples))
    return out


def stage_train(cubes, samples_path, out, config: TrainingConfig | None = None,
                kind: str = "gbt", logreg_max_iters=5000, logreg_tolerance=1e-6) -> Path:
    _require(samples_path)
    vv, vh, cc = _load_cubes(*cubes)
    samples = SampleIndex.from_csv(samples_path)
    fm = assemble_features(vv, vh, cc, samples=samples)
    if kind == "gbt":
        config = config or TrainingConfig()
        model = train(fm.values, fm.labels.astype(float), config)
        out = save_model(model, out)
        params = asdict(config)
    elif kind == "logreg":
        model = train_logreg(fm.values, fm.labels, logreg_max_iters, logreg_tolerance)
        out = save_logreg(model, out)
        params = {"max_iters": logreg_max_iters, "tolerance": logreg_tolerance}
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    inputs = dict(zip(("vv", "vh", "cc"), cubes), samples=samples_path)
    write_provenance(out, "train", inputs, {"kind": kind, **params},
                     seed=config.seed if kind == "gbt" else None)
    return out


def _predict_any(model_path, X, n_jobs):
    d = json.loads(Path(model_path).read_text(encoding="utf-8"))
    if "trees" in d:
        return load_model(model_path).predict_proba(X, n_jobs=n_jobs)
    return predict_logreg(load_logreg(model_path), X)


def stage_predict(model_path, cubes, out, mask_out=None, threshold: float = 0.9,
                  n_jobs: int = 1) -> Path:
    """Probability raster over the whole grid; nodata pixels get probability 0."""
    _require(model_path)
    vv, vh, cc = _load_cubes(*cubes)
    fm = assemble_features(vv, vh, cc)
    prob = scatter(_predict_any(model_path, fm.values, n_jobs), fm.indices, vv.geometry)
    out = save_float_raster(prob, vv.geometry, "PROB", out)
    inputs = dict(zip(("vv", "vh", "cc"), cubes), model=model_path)
    write_provenance(out, "predict", inputs)
    if len(fm.excluded):
        write_exclusions(fm.excluded, Path(out).with_name("excluded_pixels.csv"))
    if mask_out is not None:
        mask = BinaryMask(vv.geometry, (prob >= threshold).astype(np.uint8))
        save_mask(mask, mask_out)
        write_pgm(mask.values, Path(mask_out).with_suffix("").with_suffix(".pgm"))
        write_provenance(mask_out, "predict", inputs, {"threshold": threshold})
    return out


def stage_smooth(prob_path, out, params: CrfParams | None = None) -> Path:
    params = params or CrfParams()
    _require(prob_path)
    prob, geo = load_float_raster(prob_path, "PROB")
    mask = BinaryMask(geo, smooth(prob, params))
    out = save_mask(mask, out)
    write_pgm(mask.values, Path(out).with_suffix("").with_suffix(".pgm"))
    write_provenance(out, "smooth", {"prob": prob_path}, asdict(params))
    return out


def evaluate(truth: BinaryMask, split: RegionSplit, masks: dict[str, BinaryMask],
             probs: dict[str, np.ndarray] | None = None,
             thresholds=(0.9, 0.2)) -> dict:
    """Metrics document: per-region confusion for each mask, plus operating points,
    AUCs and a matched-FDR baseline comparison for each probability raster."""
    regions = {"training": split.train_cols, "validation": split.validation_cols}
    doc = {"schema_version": SCHEMA_VERSION, "regions": {}}
    for rname, cols in regions.items():
        entry = {"cols": list(cols)}
        for mname, mask in masks.items():
            cm = confusion(mask, truth, cols)
            entry[mname] = {"confusion": cm.to_dict(), "metrics": compute_metrics(cm).to_dict()}
        doc["regions"][rname] = entry
    if probs:
        c0, c1 = split.validation_cols
        t_val = truth.values[:, c0:c1]
        doc["operating_points"] = {}
        doc["auc"] = {}
        for pname, prob in probs.items():
            p_val = prob[:, c0:c1]
            rows = []
            for t in thresholds:
                cm, m = operating_point(p_val, t_val, t)
                rows.append({"threshold": t, "region": "validation",
                             "confusion": cm.to_dict(), "metrics": m.to_dict()})
            doc["operating_points"][pname] = rows
            doc["auc"][pname] = {"roc": roc_curve(p_val, t_val).auc,
                                 "prc": prc_curve(p_val, t_val).auc}
        if "gbt" in probs and "logreg" in probs:
            _, ref = operating_point(probs["gbt"][:, c0:c1], t_val, thresholds[0])
            doc["baseline_comparison"] = {
                "threshold": thresholds[0],
                "matched_fdr": ref.FDR,
                "gbt_tpr": tpr_at_fdr(probs["gbt"][:, c0:c1], t_val, ref.FDR),
                "logreg_tpr": tpr_at_fdr(probs["logreg"][:, c0:c1], t_val, ref.FDR),
            }
        doc["reference_operating_points"] = {str(k): v for k, v in REFERENCE_OPERATING_POINTS.items()}
    return doc


def stage_eval(truth_path, split_path, masks: dict, out, probs: dict | None = None,
               thresholds=(0.9, 0.2)) -> Path:
    probs = probs or {}
    _require(truth_path, split_path, *masks.values(), *probs.values())
    truth = load_mask(truth_path)
    split = load_split(split_path)
    loaded = {k: load_mask(v) for k, v in masks.items()}
    loaded_p = {k: load_float_raster(v, "PROB")[0] for k, v in probs.items()}
    doc = evaluate(truth, split, loaded, loaded_p, thresholds)
    out = write_json(doc, out)
    rows = []
    for rname in ("validation", "training"):
        for mname in loaded:
            c = doc["regions"][rname][mname]["confusion"]
            rows.append((rname, mname, ConfusionMatrix(**c)))
    text = metrics_table(rows)
    for pname, ops in doc.get("operating_points", {}).items():
        for op in ops:
            m = op["metrics"]
            text += (f"{pname} p={op['threshold']:g}: TPR {m['TPR']:.3f}  FPR {m['FPR']:.3f}  "
                     f"precision {m['precision']:.3f}\n")
    Path(out).with_suffix(".txt").write_text(text, encoding="utf-8")
    inputs = {"truth": truth_path, "split": split_path, **masks, **probs}
    write_provenance(out, "eval", inputs, {"thresholds": list(thresholds)})
    return out


def stage_curves(prob_path, truth_path, split_path, out_dir, thresholds=(0.9, 0.2),
                 prefix: str = "") -> dict[str, Path]:
    _require(prob_path, truth_path, split_path)
    prob, _ = load_float_raster(prob_path, "PROB")
    truth = load_mask(truth_path)
    c0, c1 = load_split(split_path).validation_cols
    p, t = prob[:, c0:c1], truth.values[:, c0:c1]
    roc, prc = roc_curve(p, t), prc_curve(p, t)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "roc": roc.to_csv(out_dir / f"{prefix}roc.csv"),
        "prc": prc.to_csv(out_dir / f"{prefix}prc.csv"),
    }
    svg = out_dir / f"{prefix}curves.svg"
    svg.write_text(curves_svg(roc, prc, thresholds, title="Validation region"), encoding="utf-8")
    paths["svg"] = svg
    inputs = {"prob": prob_path, "truth": truth_path, "split": split_path}
    for p_ in paths.values():
        write_provenance(p_, "curves", inputs, {"thresholds": list(thresholds)})
    return paths


def stage_idw(boreholes_path, reference_header, out, power=2.0, cutoff_date="2019-01-01",
              n_jobs: int = 1) -> Path:
    _require(boreholes_path, reference_header)
    geo = _geometry_of(reference_header)
    stats = {}
    recs = filter_boreholes(read_boreholes(boreholes_path), cutoff_date, stats)
    surface = idw_interpolate(recs, IdwParams(power, geo), n_jobs=n_jobs)
    out = save_float_raster(surface, geo, "DTW", out)
    write_json({"schema_version": SCHEMA_VERSION, **stats},
               Path(out).with_name("borehole_filter.json"))
    write_provenance(out, "idw", {"boreholes": boreholes_path, "reference": reference_header},
                     {"power": power, "cutoff_date": str(cutoff_date)})
    logger.info("idw: %d of %d boreholes used", stats["kept"], stats["input"])
    return out


def stage_synth(out_dir, spec: SynthSpec | None = None) -> Path:
    """Write synthetic cubes, truth, polygons, boreholes and a ready run config."""
    spec = spec or SynthSpec()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vv, vh, cc, truth, polygons = generate(spec, return_polygons=True)
    for cube in (vv, vh, cc):
        p = save_cube(cube, out_dir / f"{cube.kind.lower()}.hdr.json")
        write_provenance(p, "synth", {}, json.loads(spec_to_json(spec)), seed=spec.seed)
    save_mask(truth, out_dir / "truth.hdr.json")
    (out_dir / "gdv.geojson").write_text(json.dumps(polygons.to_geojson()) + "\n", encoding="utf-8")
    write_boreholes(synth_boreholes(spec, truth), out_dir / "boreholes.csv")
    (out_dir / "synth_spec.json").write_text(spec_to_json(spec), encoding="utf-8")
    cfg = RunConfig(boreholes="boreholes.csv", undersample_seed=spec.seed)
    cfg_path = write_json(cfg.to_dict(), out_dir / "run_config.json")
    return cfg_path


def run_all(config: RunConfig, out_dir=None, n_jobs: int = 1) -> dict[str, Path]:
    """rasterize -> split -> sample -> train (+ baseline) -> predict -> smooth -> eval/curves,
    followed by IDW when a borehole file is configured."""
    config.require_inputs("vv", "vh", "cc", "polygons")
    if config.boreholes is not None:
        config.require_inputs("boreholes")
    out = Path(out_dir) if out_dir is not None else config.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    cubes = (config.path("vv"), config.path("vh"), config.path("cc"))
    a = {}
    a["labels"] = stage_rasterize(config.path("polygons"), cubes[0], out / "labels.hdr.json")
    a["split"] = stage_split(cubes[0], out / "split.json", config.train_fraction, config.train_side)
    a["samples"] = stage_sample(a["labels"], a["split"], config.undersample_seed,
                                out / "samples.csv", cubes)
    a["model"] = stage_train(cubes, a["samples"], out / "model.json", config.training)
    a["logreg"] = stage_train(cubes, a["samples"], out / "logreg.json", kind="logreg",
                              logreg_max_iters=config.logreg_max_iters,
                              logreg_tolerance=config.logreg_tolerance)
    t0 = config.eval_thresholds[0]
    a["prob"] = stage_predict(a["model"], cubes, out / "prob.hdr.json",
                              out / "pred_unsmoothed.hdr.json", t0, n_jobs)
    a["pred_unsmoothed"] = out / "pred_unsmoothed.hdr.json"
    a["prob_logreg"] = stage_predict(a["logreg"], cubes, out / "prob_logreg.hdr.json",
                                     out / "pred_logreg.hdr.json", t0, n_jobs)
    a["pred_smoothed"] = stage_smooth(a["prob"], out / "pred_smoothed.hdr.json", config.crf)
    a["metrics"] = stage_eval(
        a["labels"], a["split"],
        {"unsmoothed": a["pred_unsmoothed"], "smoothed": a["pred_smoothed"],
         "logreg": out / "pred_logreg.hdr.json"},
        out / "metrics.json",
        probs={"gbt": a["prob"], "logreg": a["prob_logreg"]},
        thresholds=config.eval_thresholds,
    )
    a.update(stage_curves(a["prob"], a["labels"], a["split"], out, config.eval_thresholds))
    if config.boreholes is not None:
        a["dtw"] = stage_idw(config.path("boreholes"), cubes[0], out / "dtw.hdr.json",
                             config.idw_power, config.idw_cutoff_date, n_jobs)
    write_json(config.to_dict(), out / "run_config.resolved.json")
    return a
