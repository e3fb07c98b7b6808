"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
from PIL import Image

from . import detector, evaluation, io, synth, timeseries
from .errors import ConfigError, DataError
from .mask_ops import ProbMask
from .sensor import PRESETS
from .vectorize import CLASSES, VectorizeConfig, vectorize_mask

log = logging.getLogger("rainbow_vectors")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# --- config -----------------------------------------------------------------

def load_config_file(path):
    """Detector settings from TOML (``.toml``) or JSON; nested ``[vectorize]`` table allowed."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON config {path}: {exc}") from exc
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            d = tomllib.loads(raw.decode("utf-8"))
        except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
            raise ConfigError(f"malformed TOML config {path}: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"config {path} must be a table/object")
    return d


def detector_config(path):
    if path is None:
        return detector.DetectorConfig()
    d = load_config_file(path)
    try:
        return detector.DetectorConfig.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"bad detector config {path}: {exc}") from exc


# --- commands -----------------------------------------------------------------

def _write_scene(bundle, truth, out):
    out = Path(out)
    io.write_bundle(bundle, out)
    io.write_geojson(out / "truth.geojson", io.truth_to_geojson(truth, bundle.geotransform))


def cmd_synth(args):
    if args.spec:
        try:
            spec_d = json.loads(Path(args.spec).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read scene spec {args.spec}: {exc}", field="spec") from exc
        if not isinstance(spec_d, dict):
            raise DataError("scene spec must be a JSON object", field="spec")
        if args.seed is not None:
            spec_d["rng_seed"] = args.seed
        spec = synth.SceneSpec.from_dict(spec_d)
    else:
        spec = _random_spec(args.preset, args.n_vehicles, args.seed or 0, args.clouds, args.snr)
    bundle, truth = synth.render_scene(spec)
    _write_scene(bundle, truth, args.out)
    print(f"wrote {args.out} ({len(truth)} vehicles)")


def _random_spec(preset, n_vehicles, seed, n_clouds, snr, timestamp=None, scene_id=None):
    sensor = PRESETS[preset]
    n_static = n_vehicles // 3 if sensor.gsd_m < 1 else 0
    kw = {}
    if timestamp:
        kw["timestamp"] = timestamp
    return synth.random_scene(preset, n_moving=n_vehicles - n_static, n_static=n_static,
                              n_clouds=n_clouds, seed=seed, snr=snr, scene_id=scene_id, **kw)


def cmd_detect(args):
    bundle = io.read_bundle(args.inp)
    cfg = detector_config(args.config)
    dets = detector.detect(bundle, cfg=cfg)
    io.write_geojson(args.out, io.detections_to_geojson(dets, bundle))
    if args.mask_out:
        m = detector.chromatic_anomaly_mask(bundle, cfg)
        io.atomic_write_bytes(args.mask_out, io.png_bytes(m.planes[0]))
    print(f"{len(dets)} detections -> {args.out}")


def read_mask_png(path, labels):
    try:
        with Image.open(path) as im:
            arr = np.array(im)
    except OSError as exc:
        raise DataError(f"cannot read mask {path}: {exc}", field="mask") from exc
    if arr.dtype != np.uint8:
        raise DataError(f"mask must be 8-bit, got {arr.dtype}", field="mask")
    planes = arr[None] if arr.ndim == 2 else np.moveaxis(arr, -1, 0)
    if len(labels) > planes.shape[0]:
        raise DataError(f"mask has {planes.shape[0]} channel(s) but {len(labels)} labels were given",
                        field="labels")
    return ProbMask(np.ascontiguousarray(planes[:len(labels)]), tuple(labels))


def cmd_vectorize(args):
    bundle = io.read_bundle(args.inp)
    labels = [s.strip() for s in args.labels.split(",") if s.strip()]
    bad = [lab for lab in labels if lab not in CLASSES]
    if bad:
        raise ConfigError(f"unknown class label(s) {bad}; choose from {CLASSES}")
    mask = read_mask_png(args.mask, labels)
    vcfg = VectorizeConfig()
    if args.config:
        d = load_config_file(args.config)
        d = d.get("vectorize", d)
        try:
            vcfg = VectorizeConfig(**d)
        except TypeError as exc:
            raise ConfigError(f"bad vectorize config: {exc}") from exc
    if not 0 <= args.thresh <= 255:
        raise ConfigError("--thresh must lie in [0, 255]")
    dets = vectorize_mask(bundle, mask, args.thresh, cfg=vcfg, min_area_px=args.min_area,
                          max_area_px=args.max_area, link_px=args.link)
    io.write_geojson(args.out, io.detections_to_geojson(dets, bundle))
    print(f"{len(dets)} detections -> {args.out}")


def cmd_eval(args):
    cfg = evaluation.MatchConfig(args.iou, args.method)
    pred = io.read_items(args.pred)
    truth = io.read_items(args.truth)
    rep = evaluation.evaluate(pred, truth, cfg)
    sys.stdout.write(rep.to_text())
    if args.json:
        io.atomic_write_text(args.json, rep.to_json())


def _expand(patterns):
    paths = []
    for pat in patterns:
        hits = sorted(glob.glob(pat))
        if not hits and Path(pat).exists():
            hits = [pat]
        paths.extend(hits)
    return paths


def series_from_files(paths, window, z):
    dets, scenes = [], []
    for p in paths:
        doc = io.read_geojson(p)
        if doc.get("kind") == "truth":
            raise DataError(f"{p} holds ground truth, not detections", field="kind")
        dets.extend(io.detections_from_geojson(doc))
        if doc.get("scene_id") is not None and doc.get("timestamp"):
            scenes.append((doc["scene_id"], doc["timestamp"]))
    table = timeseries.aggregate(dets, scenes=scenes)
    if len(table) >= window:
        timeseries.volume_anomaly(table, window, z)
    return table


def cmd_timeseries(args):
    paths = _expand(args.dets)
    if not paths:
        raise DataError(f"no detection files match {args.dets}", field="dets")
    table = series_from_files(paths, args.window, args.z)
    io.atomic_write_text(args.out, table.to_csv())
    if args.json:
        io.atomic_write_text(args.json, io.dumps_json(table.to_dict()))
    if args.plots:
        timeseries.write_plots(table, args.plots)
    print(f"{len(table)} dates from {len(paths)} files -> {args.out}")


def _pipeline_scene(job):
    preset, n_vehicles, seed, n_clouds, snr, ts, sid, cfg_d, out = job
    spec = _random_spec(preset, n_vehicles, seed, n_clouds, snr, timestamp=ts, scene_id=sid)
    bundle, truth = synth.render_scene(spec)
    sdir = Path(out) / sid
    _write_scene(bundle, truth, sdir)
    dets = detector.detect(bundle, cfg=detector.DetectorConfig.from_dict(cfg_d))
    io.write_geojson(sdir / "detections.geojson", io.detections_to_geojson(dets, bundle))
    return evaluation.evaluate(dets, truth.records)


def cmd_pipeline(args):
    cfg = detector_config(args.config)
    if args.scenes < 1:
        raise ConfigError("--scenes must be >= 1")
    start = datetime(2023, 4, 1, 8, 0, tzinfo=timezone.utc)
    rng = np.random.default_rng(args.seed)
    seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=args.scenes)]
    jobs = []
    for i, s in enumerate(seeds):
        ts = (start + timedelta(days=i)).strftime("%Y-%m-%dT%H:%M:%SZ")
        jobs.append((args.preset, args.n_vehicles, s, args.clouds, args.snr, ts, f"scene-{i:04d}",
                     cfg.to_dict(), args.out))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(_pipeline_scene, jobs))
    else:
        reports = [_pipeline_scene(j) for j in jobs]
    rep = evaluation.EvalReport.merge(reports)
    out = Path(args.out)
    io.atomic_write_text(out / "report.json", rep.to_json())
    io.atomic_write_text(out / "report.txt", rep.to_text())
    table = series_from_files([out / j[6] / "detections.geojson" for j in jobs], args.window, args.z)
    io.atomic_write_text(out / "series.csv", table.to_csv())
    if args.plots:
        timeseries.write_plots(table, out / "plots")
    sys.stdout.write(rep.to_text())


def cmd_dump_config(args):
    cfg = detector.DetectorConfig()
    if args.preset:
        cfg = cfg.resolved(PRESETS[args.preset])
    sys.stdout.write(io.dumps_json(cfg.to_dict()))


# --- parser -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="rainbow-vectors", description="Vehicle velocity vectors from band-sequential imagery.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic scene bundle plus truth")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--spec", help="scene spec JSON")
    g.add_argument("--preset", choices=sorted(PRESETS), help="random scene for this sensor")
    s.add_argument("--n-vehicles", type=int, default=30)
    s.add_argument("--clouds", type=int, default=0)
    s.add_argument("--snr", type=float, default=8.0)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("detect", help="baseline detector on a bundle")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--config", help="TOML or JSON detector config")
    s.add_argument("--out", required=True)
    s.add_argument("--mask-out", help="also write the moving-score mask as PNG")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("vectorize", help="components, ellipses and vectors from an external mask")
    s.add_argument("--mask", required=True, help="8-bit PNG; one channel per label")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--labels", default="moving_car", help="comma-separated class per mask channel")
    s.add_argument("--thresh", type=float, default=128.0)
    s.add_argument("--min-area", type=int, default=3)
    s.add_argument("--max-area", type=int, default=2000)
    s.add_argument("--link", type=float, default=0.0, help="group pieces within this many pixels")
    s.add_argument("--config", help="TOML/JSON with vectorize settings")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_vectorize)

    s = sub.add_parser("eval", help="score detections against truth")
    s.add_argument("--pred", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--iou", type=float, default=0.25)
    s.add_argument("--method", choices=evaluation.MATCH_METHODS, default="greedy")
    s.add_argument("--json", help="also write the report as JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("timeseries", help="daily series, anomalies and plots")
    s.add_argument("--dets", required=True, nargs="+", help="detection GeoJSON files or glob patterns")
    s.add_argument("--out", required=True, help="CSV output")
    s.add_argument("--json")
    s.add_argument("--plots", help="directory for SVG plots")
    s.add_argument("--window", type=int, default=7)
    s.add_argument("--z", type=float, default=3.0)
    s.set_defaults(func=cmd_timeseries)

    s = sub.add_parser("pipeline", help="synth -> detect -> eval -> series self-test")
    s.add_argument("--preset", choices=sorted(PRESETS), default="skysat")
    s.add_argument("--n-vehicles", type=int, default=30)
    s.add_argument("--scenes", type=int, default=1)
    s.add_argument("--clouds", type=int, default=0)
    s.add_argument("--snr", type=float, default=8.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--window", type=int, default=7)
    s.add_argument("--z", type=float, default=3.0)
    s.add_argument("--plots", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("dump-config", help="print detector defaults as JSON")
    s.add_argument("--preset", choices=sorted(PRESETS), help="fill sensor-derived values")
    s.set_defaults(func=cmd_dump_config)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        where = f" [{exc.field}]" if getattr(exc, "field", None) else ""
        print(f"data error{where}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
