"""Command-line interface.

Subcommands: synth, align, train-teacher, distill, eval, sync-sim, report.
Every command writes a resolved config snapshot (``config.json``) and a
``manifest.json`` listing the sha256 of each output file. Exit codes: 0 on
success, 2 for configuration errors, 3 for data errors and 4 for numeric
failures; failures print a JSON error object on stderr.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline, synth
from .body_model import default_tree
from .capture_sync import CaptureConfig, run_capture_sim, verify_log
from .errors import ConfigError, NumericFailure, WearMocapError
from .metrics import METRIC_NAMES
from .nn.model import load_params, save_params
from .sequence import read_motion, read_stream, scalar_stream, write_motion, write_stream
from .streams import AlignedBundle, estimate_offset_extremum, estimate_offset_peaks

log = logging.getLogger("wearmocap")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class DataError(WearMocapError, ValueError):
    """Input data is missing or unusable."""


_GESTURE_DEFAULTS = {"offsets": None, "offset_range": 2.0}
_EVAL_DEFAULTS = {"split": "test", "with_scale": True}
_SENSOR_DEFAULTS = {"student": list(pipeline.STUDENT_SITES)}


def _dataclass_defaults(cls):
    out = {}
    for f in dataclasses.fields(cls):
        v = f.default
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def default_config():
    capture = _dataclass_defaults(CaptureConfig)
    capture.pop("seed")
    train = _dataclass_defaults(pipeline.TrainConfig)
    train.pop("seed")
    return {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "data": _dataclass_defaults(pipeline.DataConfig),
        "noise": dict(synth.CONSUMER_NOISE),
        "gesture": dict(_GESTURE_DEFAULTS),
        "sensors": dict(_SENSOR_DEFAULTS),
        "train": train,
        "eval": dict(_EVAL_DEFAULTS),
        "capture": capture,
    }


def _merge(base, override, path=""):
    out = dict(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, seed=None):
    """Defaults overlaid with the JSON file at ``path``; unknown keys are rejected."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as f:
                user = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, user)
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']}")
    if seed is not None:
        cfg["seed"] = int(seed)
    return cfg


def _tuples(d):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}


def data_config(cfg):
    return _build(pipeline.DataConfig, _tuples(cfg["data"]), "data")


def train_config(cfg):
    return _build(pipeline.TrainConfig, dict(cfg["train"], seed=cfg["seed"]), "train")


def capture_config(cfg):
    c = dict(cfg["capture"], seed=cfg["seed"])
    c["jitter_ms"] = tuple(c["jitter_ms"])
    c["writer_latency_ms"] = tuple(c["writer_latency_ms"])
    c["stalls"] = tuple(tuple(s) for s in c["stalls"])
    return _build(CaptureConfig, c, "capture")


def sensor_selection(cfg):
    return _build(pipeline.SensorSelection, {"student": tuple(cfg["sensors"]["student"])}, "sensors")


def _build(cls, kwargs, section):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {section} config: {e}") from e


# ----------------------------------------------------------------------------
# Output helpers
# ----------------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _finish(out, cfg, command, extra=None):
    """Write the config snapshot and a manifest of every file under ``out``."""
    _write_json(out / "config.json", cfg)
    files = {}
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out).as_posix()] = _sha256(p)
    manifest = {"schema_version": SCHEMA_VERSION, "command": command, "files": files}
    manifest.update(extra or {})
    _write_json(out / "manifest.json", manifest)
    return manifest


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x):
    return repr(float(x))


# ----------------------------------------------------------------------------
# synth
# ----------------------------------------------------------------------------

def _offsets(cfg, n):
    g = cfg["gesture"]
    if g["offsets"] is not None:
        offs = [tuple(map(float, o)) for o in g["offsets"]]
        if len(offs) != n:
            raise ConfigError(f"gesture.offsets has {len(offs)} entries for {n} sequences")
        return offs
    rng = np.random.default_rng(pipeline.sub_seed(cfg["seed"], "gesture_offsets"))
    r = float(g["offset_range"])
    return [tuple(rng.uniform(-r, r, size=2)) for _ in range(n)]


def cmd_synth(cfg, out):
    """Synthesize recordings with per-device clock offsets and the alignment gestures."""
    data_cfg = data_config(cfg)
    sensor_selection(cfg)
    tree = default_tree()
    plan = pipeline.sequence_plan(data_cfg)
    offsets = _offsets(cfg, len(plan))
    sequences = []
    for (name, kind), (off_phone, off_cam) in zip(plan, offsets):
        seed = pipeline.sub_seed(cfg["seed"], name)
        rec = pipeline.synthesize_recording(kind, seed, data_cfg, cfg["noise"], tree, name)
        d = out / name
        d.mkdir(parents=True, exist_ok=True)
        files = {"imu": [], "consumer_imu": [], "feat": [], "head": [], "gesture": []}
        write_motion(d / "motion.jsonl", rec.motion)
        for site, s in rec.dense_imu.items():
            write_stream(d / f"imu_{site}.jsonl", s)
            files["imu"].append(f"imu_{site}.jsonl")
        # consumer devices and cameras run on their own clocks: an event at
        # mocap time t is stamped t - offset
        for site, s in rec.consumer_imu.items():
            write_stream(d / f"consumer_{site}.jsonl", s.shifted(-off_phone))
            files["consumer_imu"].append(f"consumer_{site}.jsonl")
        for view, s in rec.features.items():
            write_stream(d / f"feat_{view}.jsonl", s.shifted(-off_cam))
            files["feat"].append(f"feat_{view}.jsonl")
        write_stream(d / "head.jsonl", rec.slam.shifted(-off_cam))
        files["head"].append("head.jsonl")
        phone, mocap1 = synth.gen_gesture1(off_phone, pipeline.sub_seed(seed, "gesture1"))
        cam, mocap2 = synth.gen_gesture2(off_cam, pipeline.sub_seed(seed, "gesture2"))
        for fname, s in (("gesture1_phone", phone), ("gesture1_mocap", mocap1),
                         ("gesture2_camera", cam), ("gesture2_mocap", mocap2)):
            write_stream(d / f"{fname}.jsonl", s)
            files["gesture"].append(f"{fname}.jsonl")
        sequences.append({"name": name, "kind": kind, "motion": "motion.jsonl", "streams": files,
                          "injected_offsets": {"phone": off_phone, "camera": off_cam}})
    _write_json(out / "sequences.json", sequences)
    return _finish(out, cfg, "synth", {"sequences": sequences})


# ----------------------------------------------------------------------------
# align
# ----------------------------------------------------------------------------

def _read_sequences(data):
    try:
        with open(Path(data) / "sequences.json") as f:
            return json.load(f)
    except OSError as e:
        raise FileNotFoundError(f"{data} is not a dataset directory: {e}") from e


def _align_one(seq_dir, entry, data_cfg):
    g = {n: read_stream(seq_dir / f"{n}.jsonl")
         for n in ("gesture1_phone", "gesture1_mocap", "gesture2_camera", "gesture2_mocap")}
    off_phone = estimate_offset_peaks(g["gesture1_phone"], g["gesture1_mocap"])
    off_cam = estimate_offset_extremum(g["gesture2_camera"], g["gesture2_mocap"])
    rec = pipeline.Recording(
        motion=read_motion(seq_dir / "motion.jsonl"),
        dense_imu={s: read_stream(seq_dir / f"imu_{s}.jsonl") for s in pipeline.TEACHER_SITES},
        consumer_imu={s: read_stream(seq_dir / f"consumer_{s}.jsonl").shifted(off_phone)
                      for s in pipeline.TEACHER_SITES},
        features={v: read_stream(seq_dir / f"feat_{v}.jsonl").shifted(off_cam) for v in synth.CAMERA_VIEWS},
        slam=read_stream(seq_dir / "head.jsonl").shifted(off_cam),
        name=entry["name"],
    )
    bundle, motion = pipeline.align_recording(rec, data_cfg)
    return bundle, motion, off_phone, off_cam


def _stream_file(key):
    return key.replace(":", "_") + ".jsonl"


def write_aligned(d, bundle, motion):
    d.mkdir(parents=True, exist_ok=True)
    write_motion(d / "motion.jsonl", motion)
    for key, s in sorted(bundle.streams.items()):
        write_stream(d / _stream_file(key), s)
        if "valid" in s.channels:
            write_stream(d / ("valid_" + _stream_file(key)),
                         scalar_stream(s.timestamps, s.channels["valid"], s.native_rate_hz, s.site))


def read_aligned(d):
    keys = [f"dense:{s}" for s in pipeline.TEACHER_SITES] + [f"consumer:{s}" for s in pipeline.TEACHER_SITES]
    keys += [f"feat:{v}" for v in synth.CAMERA_VIEWS] + ["slam"]
    streams = {}
    for key in keys:
        s = read_stream(d / _stream_file(key))
        vpath = d / ("valid_" + _stream_file(key))
        if vpath.exists():
            s = s.with_channels(valid=read_stream(vpath).channels["value"])
        streams[key] = s
    motion = read_motion(d / "motion.jsonl")
    return AlignedBundle(streams["slam"].timestamps, streams), motion


def cmd_align(cfg, out, data):
    """Estimate per-device clock offsets from the gestures and align every sequence to 25 Hz."""
    data_cfg = data_config(cfg)
    data = Path(data)
    rows, errors, aligned = [], [], []
    for entry in _read_sequences(data):
        name = entry["name"]
        try:
            bundle, motion, off_phone, off_cam = _align_one(data / name, entry, data_cfg)
        except (WearMocapError, OSError, ValueError) as e:
            errors.append({"sequence": name, "error": type(e).__name__, "message": str(e)})
            log.warning("sequence %s skipped: %s", name, e)
            continue
        write_aligned(out / name, bundle, motion)
        aligned.append(name)
        inj = entry.get("injected_offsets", {})
        rows.append({
            "sequence": name,
            "estimated_phone_s": off_phone,
            "injected_phone_s": inj.get("phone"),
            "estimated_camera_s": off_cam,
            "injected_camera_s": inj.get("camera"),
        })
    for r in rows:
        for dev in ("phone", "camera"):
            inj = r[f"injected_{dev}_s"]
            r[f"error_{dev}_s"] = None if inj is None else abs(r[f"estimated_{dev}_s"] - inj)
    report = {"sequences": rows, "errors": errors}
    _write_json(out / "alignment_report.json", report)
    header = ["sequence", "estimated_phone_s", "injected_phone_s", "error_phone_s",
              "estimated_camera_s", "injected_camera_s", "error_camera_s"]
    _write_csv(out / "alignment_report.csv", header,
               [[r[h] if isinstance(r[h], str) or r[h] is None else _fmt(r[h]) for h in header] for r in rows])
    _write_json(out / "sequences.json", [{"name": n} for n in aligned])
    if not aligned:
        raise DataError("no sequence could be aligned")
    return _finish(out, cfg, "align", {"aligned": aligned, "errors": errors})


# ----------------------------------------------------------------------------
# Training and evaluation
# ----------------------------------------------------------------------------

def load_dataset(cfg, data):
    data = Path(data)
    aligned = []
    for entry in _read_sequences(data):
        bundle, motion = read_aligned(data / entry["name"])
        aligned.append((entry["name"], bundle, motion))
    if not aligned:
        raise DataError(f"{data} holds no aligned sequences")
    return pipeline.dataset_from_aligned(aligned, cfg["seed"], int(cfg["train"]["window"]),
                                         student_sites=sensor_selection(cfg).student)


def _write_curve(out, curve):
    header = list(curve[0]) if curve else ["epoch", "loss_train", "loss_val"]
    _write_csv(out / "curve.csv", header, [[r[h] if h == "epoch" else _fmt(r[h]) for h in header] for r in curve])
    _write_json(out / "curve.json", curve)


def cmd_train_teacher(cfg, out, data, mode="full"):
    tcfg = train_config(cfg)
    dataset = load_dataset(cfg, data)
    params, curve = pipeline.train_teacher(dataset, tcfg, mode=mode)
    save_params(out / "teacher.json", params, {"role": "teacher", "mode": mode})
    _write_curve(out, curve)
    return _finish(out, cfg, "train-teacher")


def cmd_distill(cfg, out, data, teacher):
    tcfg = train_config(cfg)
    dataset = load_dataset(cfg, data)
    params, curve = pipeline.train_student(dataset, load_params(teacher), tcfg)
    save_params(out / "student.json", params, {"role": "student"})
    _write_curve(out, curve)
    return _finish(out, cfg, "distill")


def cmd_eval(cfg, out, data, model, mode="full"):
    dataset = load_dataset(cfg, data)
    split = cfg["eval"]["split"]
    if split not in ("train", "val", "test"):
        raise ConfigError(f"eval.split must be train, val or test, not {split!r}")
    params = load_params(model)
    report = pipeline.evaluate(params, getattr(dataset, split), mode, with_scale=bool(cfg["eval"]["with_scale"]))
    (out / "metrics.json").write_text(report.to_json() + "\n")
    (out / "metrics.csv").write_text(report.to_csv())
    return _finish(out, cfg, "eval", {"mode": mode, "split": split})


def cmd_sync_sim(cfg, out):
    log_ = run_capture_sim(capture_config(cfg))
    report = verify_log(log_)
    (out / "capture_log.json").write_text(log_.to_json() + "\n")
    _write_json(out / "sync_report.json", report.to_dict())
    return _finish(out, cfg, "sync-sim", {"ok": report.ok})


def cmd_report(cfg, out, inputs):
    """Merge evaluation outputs into one table, one row per run."""
    rows = []
    for path in inputs:
        label, _, path = path.rpartition("=") if "=" in path else ("", "", path)
        p = Path(path)
        metrics = p / "metrics.json" if p.is_dir() else p
        with open(metrics) as f:
            m = json.load(f)
        rows.append([label or p.name, m.get("mode", "full")] + [_fmt(m[k]) for k in METRIC_NAMES])
    _write_csv(out / "summary.csv", ["run", "mode"] + list(METRIC_NAMES), rows)
    return _finish(out, cfg, "report")


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="wearmocap", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="root seed (overrides the config)")
        sp.add_argument("--out", required=True, help="output directory")
        return sp

    add("synth", "synthesize recordings and alignment gestures")
    add("align", "estimate clock offsets and align streams to 25 Hz").add_argument("--data", required=True)
    sp = add("train-teacher", "train the dense-IMU teacher")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", default="full", choices=pipeline.EVAL_MODES)
    sp = add("distill", "distill the teacher into the sparse-IMU student")
    sp.add_argument("--data", required=True)
    sp.add_argument("--teacher", required=True)
    sp = add("eval", "evaluate a model on a split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--mode", default="full", choices=pipeline.EVAL_MODES)
    add("sync-sim", "run the camera synchronization simulator")
    add("report", "merge evaluation outputs").add_argument("inputs", nargs="+", help="[label=]eval output dir")
    return p


def run(args):
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args.out)
    c = args.command
    if c == "synth":
        return cmd_synth(cfg, out)
    if c == "align":
        return cmd_align(cfg, out, args.data)
    if c == "train-teacher":
        return cmd_train_teacher(cfg, out, args.data, args.mode)
    if c == "distill":
        return cmd_distill(cfg, out, args.data, args.teacher)
    if c == "eval":
        return cmd_eval(cfg, out, args.data, args.model, args.mode)
    if c == "sync-sim":
        return cmd_sync_sim(cfg, out)
    return cmd_report(cfg, out, args.inputs)


def _fail(code, exc):
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None):
    logging.basicConfig(level=os.environ.get("WEARMOCAP_LOG", "WARNING"), format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except ConfigError as e:
        return _fail(EXIT_CONFIG, e)
    except (NumericFailure, FloatingPointError) as e:
        return _fail(EXIT_NUMERIC, e)
    except (WearMocapError, ValueError, KeyError, OSError) as e:
        return _fail(EXIT_DATA, e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
