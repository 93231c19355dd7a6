"""Command-line entry point: ``sargdv <stage> [options]``.

Every stage writes into ``--out`` (a directory) and leaves a provenance
sidecar next to each artifact. Exit codes: 0 success, 1 input error
(missing file, bad config), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .pipeline import ConfigError, RunConfig
from .synth import SynthSpec, load_spec

logger = logging.getLogger("sargdv")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--threads", type=int, default=1, help="worker cap (1 = serial)")
    p.add_argument("--seed", type=int, help="override the configured seeds")
    p.add_argument("--out", type=Path, help="output directory")
    return p


def _pairs(items) -> dict[str, Path]:
    out = {}
    for item in items or []:
        name, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"expected NAME=PATH, got {item!r}")
        out[name] = Path(path)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sargdv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_common()]

    p = sub.add_parser("ingest", parents=common, help="import a .npy band stack as a cube")
    p.add_argument("--array", type=Path, required=True)
    p.add_argument("--meta", type=Path, required=True,
                   help="JSON with kind, dates, width, height, origin_*, pixel_size_*")

    p = sub.add_parser("rasterize", parents=common, help="GDV polygons -> label mask")
    p.add_argument("--polygons", type=Path)
    p.add_argument("--reference", type=Path, help="raster header providing the grid")

    p = sub.add_parser("split", parents=common, help="train/validation column split")
    p.add_argument("--reference", type=Path)
    p.add_argument("--fraction", type=float)
    p.add_argument("--side", choices=("left", "right"))

    p = sub.add_parser("sample", parents=common, help="balanced undersampling")
    p.add_argument("--labels", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--cubes", type=Path, nargs=3, metavar=("VV", "VH", "CC"))

    p = sub.add_parser("train", parents=common, help="train boosted trees or the baseline")
    p.add_argument("--cubes", type=Path, nargs=3, metavar=("VV", "VH", "CC"))
    p.add_argument("--samples", type=Path, required=True)
    p.add_argument("--model-kind", choices=("gbt", "logreg"), default="gbt")
    p.add_argument("--max-depth", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--eta", type=float)

    p = sub.add_parser("predict", parents=common, help="probability raster from a model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--cubes", type=Path, nargs=3, metavar=("VV", "VH", "CC"))
    p.add_argument("--threshold", type=float, help="also write a mask at this threshold")
    p.add_argument("--name", default="prob", help="artifact base name")

    p = sub.add_parser("smooth", parents=common, help="CRF smoothing of a probability raster")
    p.add_argument("--prob", type=Path, required=True)
    p.add_argument("--beta", type=float)
    p.add_argument("--neighborhood", type=int, choices=(4, 8))
    p.add_argument("--init-threshold", type=float)

    p = sub.add_parser("eval", parents=common, help="confusion metrics per region")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--pred", action="append", metavar="NAME=MASK", required=True)
    p.add_argument("--prob", action="append", metavar="NAME=PROB")
    p.add_argument("--thresholds", type=float, nargs="+")

    p = sub.add_parser("curves", parents=common, help="ROC / PRC CSV and SVG")
    p.add_argument("--prob", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--thresholds", type=float, nargs="+")

    p = sub.add_parser("idw", parents=common, help="depth-to-water IDW surface")
    p.add_argument("--boreholes", type=Path)
    p.add_argument("--reference", type=Path)
    p.add_argument("--power", type=float)
    p.add_argument("--cutoff", help="ISO date; earlier observations are dropped")

    p = sub.add_parser("synth", parents=common, help="synthetic cubes, labels and config")
    p.add_argument("--spec", type=Path, help="SynthSpec JSON (defaults otherwise)")

    sub.add_parser("run-all", parents=common, help="full pipeline from a run config")
    return parser


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.undersample_seed = args.seed
        cfg.training = replace(cfg.training, seed=args.seed)
    return cfg


def _pick(value, cfg: RunConfig, name: str):
    if value is not None:
        return value
    p = cfg.path(name)
    if p is None:
        raise ConfigError(f"--{name} is required (not set in config either)")
    return p


def _cubes(args, cfg):
    return tuple(args.cubes) if args.cubes else (cfg.path("vv"), cfg.path("vh"), cfg.path("cc"))


def _out(args, cfg) -> Path:
    out = args.out or cfg.path("output_dir")
    out.mkdir(parents=True, exist_ok=True)
    return out


def dispatch(args) -> None:
    cfg = _config(args)
    cmd = args.command
    if cmd == "synth":
        spec = load_spec(args.spec) if args.spec else SynthSpec()
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        path = pipeline.stage_synth(args.out or Path("synth"), spec)
        print(path)
        return
    out = _out(args, cfg)
    if cmd == "run-all":
        if args.config is None:
            raise ConfigError("run-all needs --config")
        arts = pipeline.run_all(cfg, out, n_jobs=args.threads)
        print(arts["metrics"])
    elif cmd == "ingest":
        meta = json.loads(args.meta.read_text(encoding="utf-8")) if args.meta.exists() else {}
        name = f"{str(meta.get('kind', 'cube')).lower()}.hdr.json"
        print(pipeline.stage_ingest(args.array, args.meta, out / name))
    elif cmd == "rasterize":
        print(pipeline.stage_rasterize(_pick(args.polygons, cfg, "polygons"),
                                       _pick(args.reference, cfg, "vv"), out / "labels.hdr.json"))
    elif cmd == "split":
        print(pipeline.stage_split(
            _pick(args.reference, cfg, "vv"), out / "split.json",
            args.fraction if args.fraction is not None else cfg.train_fraction,
            args.side or cfg.train_side))
    elif cmd == "sample":
        print(pipeline.stage_sample(args.labels, args.split, cfg.undersample_seed,
                                    out / "samples.csv", tuple(args.cubes) if args.cubes else None))
    elif cmd == "train":
        training = cfg.training
        for flag, key in (("max_depth", "max_depth"), ("rounds", "n_rounds"),
                          ("eta", "learning_rate")):
            if getattr(args, flag) is not None:
                training = replace(training, **{key: getattr(args, flag)})
        name = "model.json" if args.model_kind == "gbt" else "logreg.json"
        print(pipeline.stage_train(_cubes(args, cfg), args.samples, out / name, training,
                                   args.model_kind, cfg.logreg_max_iters, cfg.logreg_tolerance))
    elif cmd == "predict":
        mask_out = out / f"{args.name}_mask.hdr.json" if args.threshold is not None else None
        print(pipeline.stage_predict(args.model, _cubes(args, cfg), out / f"{args.name}.hdr.json",
                                     mask_out, args.threshold or 0.5, n_jobs=args.threads))
    elif cmd == "smooth":
        params = cfg.crf
        for flag in ("beta", "neighborhood", "init_threshold"):
            if getattr(args, flag) is not None:
                params = replace(params, **{flag: getattr(args, flag)})
        print(pipeline.stage_smooth(args.prob, out / "pred_smoothed.hdr.json", params))
    elif cmd == "eval":
        print(pipeline.stage_eval(args.truth, args.split, _pairs(args.pred), out / "metrics.json",
                                  _pairs(args.prob), tuple(args.thresholds or cfg.eval_thresholds)))
    elif cmd == "curves":
        paths = pipeline.stage_curves(args.prob, args.truth, args.split, out,
                                      tuple(args.thresholds or cfg.eval_thresholds))
        print(paths["svg"])
    elif cmd == "idw":
        print(pipeline.stage_idw(
            _pick(args.boreholes, cfg, "boreholes"), _pick(args.reference, cfg, "vv"),
            out / "dtw.hdr.json", args.power if args.power is not None else cfg.idw_power,
            args.cutoff or cfg.idw_cutoff_date, n_jobs=args.threads))
    else:  # pragma: no cover - argparse rejects unknown commands
        raise ConfigError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    level = LOG_LEVELS.get(os.environ.get("SARGDV_LOG", "warn").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        dispatch(args)
    except (FileNotFoundError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        kind = type(exc)
        print(f"error: {kind.__module__}.{kind.__qualname__}: {exc}", file=sys.stderr)
        logger.debug("stage failure", exc_info=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
