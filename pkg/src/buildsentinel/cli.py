"""``sentinel`` command line.

Every command reads an optional YAML/JSON config; flags override config
values.  Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import logging
import os
import re
import sys
import time
from pathlib import Path

import yaml

from . import synth
from .core import (CONDITIONS, DETECTORS, config_hash, frame_from_csv, frame_to_csv, load_inventory,
                   read_meta, reference_inventory, verdicts_from_csv, verdicts_to_csv)
from .errors import ValidationError

log = logging.getLogger("sentinel")

SCALES = ("none", "standard", "minmax")
FORECASTER_KEYS = ("time_steps", "kernel_size", "filters", "activation", "units", "max_epochs",
                   "batch_size", "learning_rate", "min_delta", "patience")


class UsageError(ValidationError):
    pass


# -- helpers -----------------------------------------------------------------------

def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Independent 32-bit seed for a named component."""
    digest = hashlib.sha256(f"{int(seed)}/{label}/{index}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def parse_duration(text) -> int:
    """``90``, ``60s``, ``5m``, ``2h``, ``7d`` to seconds."""
    m = re.fullmatch(r"\s*(\d+)\s*([smhd]?)\s*", str(text))
    if not m:
        raise UsageError(f"bad duration {text!r}; use e.g. 60s, 5m, 2h or 7d")
    return int(m.group(1)) * {"": 1, "s": 1, "m": 60, "h": 3600, "d": 86400}[m.group(2)]


def existing(path, what="file") -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def load_config(path) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(existing(path, "config file").read_text(encoding="utf-8"))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must be a mapping")
    return data


def pick(flag, cfg: dict, key: str, default=None):
    return flag if flag is not None else cfg.get(key, default)


def resolve_seed(flag, cfg: dict, required: bool = True):
    seed = pick(flag, cfg, "seed")
    if seed is None and os.environ.get("SENTINEL_SEED", "").strip():
        seed = os.environ["SENTINEL_SEED"].strip()
    if seed is None:
        if required:
            raise UsageError("a seed is required: pass --seed, set seed in the config or SENTINEL_SEED")
        return None
    try:
        return int(seed)
    except (TypeError, ValueError):
        raise UsageError(f"seed must be an integer, got {seed!r}") from None


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n",
                          encoding="utf-8")


def out_path(flag, cfg, key, default_name):
    if flag is not None:
        p = Path(flag)
    elif cfg.get(key):
        p = Path(cfg[key])
    else:
        p = Path(cfg.get("output_dir", ".")) / default_name
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def pipeline_stages(scale: str | None, stages=None) -> list[dict]:
    if stages is not None and scale is None:
        return [dict(s) for s in stages]
    scale = scale or "none"
    if scale not in SCALES:
        raise UsageError(f"--scale must be one of {SCALES}")
    return [] if scale == "none" else [{"stage": "scale", "kind": scale}]


# -- commands ------------------------------------------------------------------------

def cmd_ingest(args) -> int:
    from .ingestion import IngestConfig, align, clean, read_replay_csv, write_replay_csv

    cfg = load_config(args.config)
    icfg = cfg.get("ingest", cfg)
    inventory = load_inventory(existing(args.inventory, "inventory")) if args.inventory else reference_inventory()
    grid = int(pick(args.grid, icfg, "grid_period", 60))
    topics = tuple(args.topic or icfg.get("topics", ()))
    gap = int(pick(args.max_gap_fill, icfg, "max_gap_fill", 5))
    out = out_path(args.out, cfg, "out", "frame.csv")

    if args.live:
        broker = pick(args.broker, icfg, "broker_uri")
        if not broker:
            raise UsageError("--live needs --broker")
        duration = parse_duration(pick(args.duration, icfg, "duration", "60s"))
        if not topics:
            topics = tuple(sorted({e.topic for e in inventory.entries}))
        ic = IngestConfig(grid, "live", broker, topics, gap)
        from .mqtt import ReadingBuffer, subscribe

        buf = ReadingBuffer()
        sub = subscribe(ic, buf, inventory)
        try:
            time.sleep(duration)
        finally:
            sub.stop()
        readings = buf.snapshot()
        write_replay_csv(readings, out)
        if sub.connect_failures and not sub.received:
            print(f"warning: broker {broker} unreachable ({sub.connect_failures} failed attempts)",
                  file=sys.stderr)
        print(f"captured {len(readings)} readings ({sub.malformed} malformed payloads) -> {out}")
        return 0

    if not args.replay:
        raise UsageError("pass --replay FILE or --live --broker URI")
    src = existing(args.replay, "replay file")
    ic = IngestConfig(grid, "replay", None, topics, gap, not args.keep_incomplete)
    kept, dropped = clean(read_replay_csv(src))
    frame = align(kept, ic, inventory)
    if frame.n_rows == 0:
        raise UsageError(f"every row misses at least one of {frame.n_columns} streams; "
                         "pass --topic, --inventory or --keep-incomplete")
    chash = config_hash({"command": "ingest", "grid_period": grid, "topics": list(topics),
                         "max_gap_fill": gap, "drop_incomplete_rows": not args.keep_incomplete,
                         "source": file_digest(src)})
    frame_to_csv(frame, out, {"config_hash": chash, "source": str(src), "dropped_readings": dropped})
    print(f"{frame.n_rows} rows x {frame.n_columns} streams ({dropped} readings dropped) -> {out}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    scen = dict(cfg.get("scenario", {}))
    if args.days is not None:
        scen["duration"] = args.days * synth.DAY
    if args.grid is not None:
        scen["grid_period"] = args.grid
    scen.setdefault("streams", [vars(s) for s in synth.default_streams()])
    scen["seed"] = derive_seed(seed, "synth.generate")
    scenario = synth.ScenarioConfig.from_dict(scen)
    inj = dict(cfg.get("inject", {}))
    n_point = pick(args.points, inj, "points", 5)
    n_ctx = pick(args.contextual, inj, "contextual", 3)

    clean_frame = synth.generate(scenario)
    if "entries" in inj:
        truth = synth.InjectionLog.from_dict(inj)
    elif n_point or n_ctx:
        truth = synth.plan_injections(clean_frame, n_point, n_ctx, derive_seed(seed, "synth.plan"),
                                      margin=int(inj.get("margin", 120)))
    else:
        truth = synth.InjectionLog()
    frame = synth.inject(clean_frame, truth, derive_seed(seed, "synth.inject"))

    chash = config_hash({"command": "synth", "seed": seed, "scenario": scenario.to_dict(),
                         "truth": truth.to_dict()})
    out = out_path(args.out, cfg, "out", "frame.csv")
    frame_to_csv(frame, out, {"config_hash": chash, "seed": seed})
    if args.clean_out:
        frame_to_csv(clean_frame, args.clean_out, {"config_hash": chash, "seed": seed, "clean": True})
    truth_out = out_path(args.truth, cfg, "truth", "truth.json")
    truth.save(truth_out, {"config_hash": chash, "frame_digest": file_digest(out)})
    print(f"{frame.n_rows} rows x {frame.n_columns} streams, {len(truth)} injected events -> {out}, {truth_out}")
    return 0


def train_settings(args, cfg: dict) -> dict:
    det = dict(cfg.get("detect", {}))
    detector = pick(args.detector, det, "kind", "recurrent_forecaster")
    if detector not in DETECTORS:
        raise UsageError(f"unknown detector {detector!r}; choose from {', '.join(DETECTORS)}")
    params = dict(det.get("params", {}))
    for k in FORECASTER_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            params[k] = v
    if "time_steps" in det and "time_steps" not in params and detector.endswith("forecaster"):
        params["time_steps"] = det["time_steps"]
    if not detector.endswith("forecaster"):
        params = {k: v for k, v in params.items() if k not in FORECASTER_KEYS}
    condition = pick(args.condition, cfg, "condition", "UC")
    if condition not in CONDITIONS:
        raise UsageError(f"condition must be one of {CONDITIONS}")
    return {"detector": detector, "params": params, "condition": condition,
            "condition_source": cfg.get("condition_source", "nir/natural"),
            "condition_threshold": float(cfg.get("condition_threshold", 0.02)),
            "stages": pipeline_stages(args.scale, cfg.get("preprocess"))}


def cmd_train(args) -> int:
    from .detect import save_model
    from .evaluate import train_detector
    from .preprocess import Pipeline, condition_frame

    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    frame_path = existing(pick(args.frame, cfg, "frame") or _missing("--frame"), "frame")
    s = train_settings(args, cfg)
    frame = condition_frame(frame_from_csv(frame_path), s["condition"], s["condition_source"],
                            s["condition_threshold"])
    pipe = Pipeline(s["stages"])
    data = pipe.fit_apply(frame)
    t0 = time.perf_counter()
    model, thr, epochs = train_detector(s["detector"], data, s["params"], derive_seed(seed, f"detect.{s['detector']}"))
    wall = time.perf_counter() - t0
    chash = config_hash({"command": "train", "seed": seed, **s})
    meta = {"config_hash": chash, "seed": seed, "frame_digest": file_digest(frame_path),
            "frame_config_hash": read_meta(frame_path).get("config_hash"), "condition": s["condition"],
            "condition_source": s["condition_source"], "condition_threshold": s["condition_threshold"],
            "wall_seconds": wall, "epochs": epochs, "columns": list(data.columns)}
    out = out_path(args.out, cfg, "model", "model.npz")
    save_model(out, model, thr, pipe, meta)
    print(f"trained {s['detector']} on {frame.n_rows} rows in {wall:.2f}s ({epochs} epochs) -> {out}")
    return 0


def _missing(flag):
    raise UsageError(f"{flag} is required")


def cmd_detect(args) -> int:
    from .detect import load_model
    from .evaluate import run_detector
    from .detect.io import detector_name
    from .preprocess import condition_frame

    model_path = existing(args.model, "model file")
    frame_path = existing(args.frame, "frame")
    model, thr, pipe, header = load_model(model_path)
    meta = header.get("meta", {})
    frame = frame_from_csv(frame_path)
    if args.condition is not None:
        condition = args.condition
    else:
        condition = meta.get("condition", "UC")
    frame = condition_frame(frame, condition, meta.get("condition_source", "nir/natural"),
                            meta.get("condition_threshold", 0.02))
    if pipe is not None:
        frame = pipe.apply(frame)
    columns = getattr(model, "columns", None) or meta.get("columns")
    if columns is not None and tuple(columns) != tuple(frame.columns):
        raise UsageError("model was trained on different streams than this frame provides")
    det = detector_name(model)
    verdicts = run_detector(det, model, thr, frame, meta.get("config_hash", ""))
    out = out_path(args.out, {}, "", "verdicts.csv")
    verdicts_to_csv(verdicts, out, {"config_hash": meta.get("config_hash"), "model_digest": file_digest(model_path),
                                    "frame_digest": file_digest(frame_path), "condition": condition,
                                    "period": frame.period})
    flagged = sum(v.is_anomaly for v in verdicts)
    print(f"{flagged} of {len(verdicts)} verdicts flagged -> {out}")
    return 0


def cmd_eval(args) -> int:
    from .evaluate import score

    vpath = existing(args.verdicts, "verdict file")
    tpath = existing(args.truth, "truth file")
    vmeta, tmeta = read_meta(vpath), json.loads(tpath.read_text(encoding="utf-8")).get("meta", {})
    if vmeta.get("frame_digest") and tmeta.get("frame_digest") and vmeta["frame_digest"] != tmeta["frame_digest"]:
        raise UsageError("verdicts were produced on a different frame than the truth log describes")
    if args.model:
        mdig = file_digest(existing(args.model, "model file"))
        if vmeta.get("model_digest") and vmeta["model_digest"] != mdig:
            raise UsageError("verdicts were not produced by this model")
    if args.frame:
        fdig = file_digest(existing(args.frame, "frame"))
        if fdig not in (vmeta.get("frame_digest"), tmeta.get("frame_digest")):
            raise UsageError("frame does not match the verdicts or the truth log")
    truth = synth.InjectionLog.load(tpath)
    verdicts = verdicts_from_csv(vpath)
    counts = score(verdicts, truth, args.tolerance, vmeta.get("period"))
    report = {**counts.to_dict(), "tolerance_ticks": args.tolerance,
              "config_hash": vmeta.get("config_hash"), "truth_config_hash": tmeta.get("config_hash"),
              "frame_digest": vmeta.get("frame_digest")}
    out = out_path(args.out, {}, "", "report.json")
    write_json(out, report)
    print(f"tp={counts.tp} fp={counts.fp} tn={counts.tn} fn={counts.fn} "
          f"recall={counts.recall:.3f} fp_rate={counts.fp_rate:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    from .evaluate import RunSpec, benchmark

    cfg = load_config(args.config)
    seed = resolve_seed(args.seed, cfg)
    train_path = existing(pick(args.frame, cfg, "frame") or _missing("--frame"), "frame")
    test_path = pick(args.test_frame, cfg, "test_frame")
    truth_path = pick(args.truth, cfg, "truth")
    train = frame_from_csv(train_path)
    test = frame_from_csv(existing(test_path, "test frame")) if test_path else None
    truth = synth.InjectionLog.load(existing(truth_path, "truth file")) if truth_path else None
    conditions = args.conditions or cfg.get("conditions", ["UC"])
    detectors = args.detectors or cfg.get("detectors", ["isolation_forest"])
    scales = args.scales or cfg.get("scales", ["none"])
    params = cfg.get("params", {})
    for c in conditions:
        if c not in CONDITIONS:
            raise UsageError(f"unknown condition {c!r}")
    for d in detectors:
        if d not in DETECTORS:
            raise UsageError(f"unknown detector {d!r}")
    plan = []
    for k, (cond, scale, det) in enumerate(itertools.product(conditions, scales, detectors)):
        p = dict(params.get(det, {}))
        if args.max_epochs is not None and det.endswith("forecaster"):
            p["max_epochs"] = args.max_epochs
        if args.time_steps is not None and det.endswith("forecaster"):
            p["time_steps"] = args.time_steps
        spec = RunSpec(train, det, cond, tuple(pipeline_stages(scale)), p, test, truth,
                       cfg.get("condition_source", "nir/natural"),
                       float(cfg.get("condition_threshold", 0.02)), int(cfg.get("tolerance_ticks", 2)),
                       derive_seed(seed, f"sweep.{det}", k))
        spec.config_id = config_hash({"command": "sweep", "seed": seed, **spec.describe()})
        plan.append(spec)
    out = out_path(args.out, cfg, "results", "results.csv")
    plot = Path(args.plot) if args.plot else out.with_suffix(".plot.json")
    workers = int(pick(args.workers, cfg, "workers", 1))
    records = benchmark(plan, workers, out, plot,
                        {"config_hash": config_hash({"command": "sweep", "seed": seed, "cfg": cfg,
                                                     "conditions": conditions, "detectors": detectors,
                                                     "scales": scales}),
                         "frame_digest": file_digest(train_path)})
    failed = [r for r in records if not r.ok]
    for r in failed:
        print(f"run {r.config_id} failed: {r.error}", file=sys.stderr)
    print(f"{len(records)} runs ({len(failed)} failed) -> {out}, {plot}")
    return 0


def cmd_combos(args) -> int:
    from .evaluate import enumerate_combinations

    inventory = load_inventory(existing(args.inventory, "inventory")) if args.inventory else reference_inventory()
    intra, inter, listing = enumerate_combinations(inventory)
    print(f"intra={intra}")
    print(f"inter={inter}")
    if args.list:
        for scope, device, cols in itertools.islice(listing, args.list):
            print(f"{scope}\t{device or '-'}\t{';'.join(cols)}")
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sentinel", description="Building telemetry anomaly detection.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    s = sub.add_parser("ingest", help="align raw readings into a frame, or capture from a broker",
                       description="Replay a readings CSV into an aligned frame, or capture live MQTT "
                                   "readings into a replay-format CSV.")
    s.add_argument("--config", help="YAML/JSON config (an 'ingest' section or top-level keys)")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--replay", metavar="CSV", help="readings file: timestamp,device_id,topic,stream,value")
    src.add_argument("--live", action="store_true", help="subscribe to a broker instead of replaying")
    s.add_argument("--broker", metavar="URI", help="broker URI for --live, e.g. mqtt://host:1883")
    s.add_argument("--duration", help="capture length for --live (e.g. 60s, 5m)")
    s.add_argument("--topic", action="append", help="restrict to a topic (repeatable)")
    s.add_argument("--grid", type=int, help="grid period in seconds (default 60)")
    s.add_argument("--max-gap-fill", type=int, help="longest gap, in ticks, to forward-fill (default 5)")
    s.add_argument("--keep-incomplete", action="store_true", help="keep rows with missing cells")
    s.add_argument("--inventory", help="stream inventory CSV (default: bundled reference inventory)")
    s.add_argument("--out", help="output file (frame CSV, or capture CSV with --live)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("synth", help="generate a synthetic frame plus its truth log",
                       description="Generate synthetic building telemetry and inject labelled anomalies.")
    s.add_argument("--config", help="YAML/JSON with 'scenario' and 'inject' sections")
    s.add_argument("--seed", type=int, help="seed (falls back to config, then SENTINEL_SEED)")
    s.add_argument("--days", type=int, help="scenario length in days (default 7)")
    s.add_argument("--grid", type=int, help="grid period in seconds (default 60)")
    s.add_argument("--points", type=int, help="number of point anomalies (default 5)")
    s.add_argument("--contextual", type=int, help="number of 21:00 contextual bursts (default 3)")
    s.add_argument("--out", help="frame CSV to write")
    s.add_argument("--clean-out", help="also write the frame before injection")
    s.add_argument("--truth", help="truth log JSON to write")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="fit preprocessing and a detector on a frame",
                       description="Fit the preprocessing pipeline and a detector, save a model file.")
    s.add_argument("--config", help="YAML/JSON pipeline config")
    s.add_argument("--frame", help="training frame CSV")
    s.add_argument("--seed", type=int, help="seed (falls back to config, then SENTINEL_SEED)")
    s.add_argument("--detector", choices=DETECTORS, help="detector kind (default recurrent_forecaster)")
    s.add_argument("--condition", choices=CONDITIONS, help="train on UC, DT or NT rows (default UC)")
    s.add_argument("--scale", choices=SCALES, help="scaler stage (overrides the config's preprocess list)")
    _forecaster_flags(s)
    s.add_argument("--out", help="model file to write (.npz)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("detect", help="score a frame with a trained model",
                       description="Apply a saved model to a frame and write one verdict per row or window.")
    s.add_argument("--model", required=True, help="model file from 'train'")
    s.add_argument("--frame", required=True, help="frame CSV to score")
    s.add_argument("--condition", choices=CONDITIONS, help="override the model's training condition")
    s.add_argument("--out", help="verdict CSV to write")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", help="score verdicts against a truth log",
                       description="Event-level confusion counts for a verdict file.")
    s.add_argument("--verdicts", required=True, help="verdict CSV from 'detect'")
    s.add_argument("--truth", required=True, help="truth log from 'synth'")
    s.add_argument("--model", help="model file; checked against the verdicts' provenance")
    s.add_argument("--frame", help="frame CSV; checked against the verdicts' provenance")
    s.add_argument("--tolerance", type=int, default=2, help="event tolerance in ticks (default 2)")
    s.add_argument("--out", help="report JSON to write")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="run a condition x scaling x detector matrix",
                       description="Benchmark every combination and append rows to the results store.")
    s.add_argument("--config", help="YAML/JSON sweep config")
    s.add_argument("--frame", help="training frame CSV")
    s.add_argument("--test-frame", help="frame to score (default: the training frame)")
    s.add_argument("--truth", help="truth log for the scored frame")
    s.add_argument("--seed", type=int, help="seed (falls back to config, then SENTINEL_SEED)")
    s.add_argument("--conditions", nargs="+", choices=CONDITIONS, help="conditions to run")
    s.add_argument("--detectors", nargs="+", choices=DETECTORS, help="detectors to run")
    s.add_argument("--scales", nargs="+", choices=SCALES, help="scaler stages to run")
    s.add_argument("--max-epochs", type=int, help="forecaster epoch cap")
    s.add_argument("--time-steps", type=int, help="forecaster window length")
    s.add_argument("--workers", type=int, help="parallel runs (default 1)")
    s.add_argument("--out", help="results CSV (appended)")
    s.add_argument("--plot", help="plot-data JSON (default: next to the results CSV)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("combos", help="count intra- and inter-device stream combinations",
                       description="Print intra-device and inter-device combination counts.")
    s.add_argument("--inventory", help="stream inventory CSV (default: bundled reference inventory)")
    s.add_argument("--list", type=int, default=0, metavar="N", help="also print the first N combinations")
    s.set_defaults(func=cmd_combos)
    return p


def _forecaster_flags(s):
    s.add_argument("--time-steps", type=int, help="window length T (default 74)")
    s.add_argument("--kernel-size", type=int, help="conv kernel size (default 32)")
    s.add_argument("--filters", type=int, help="conv filters (default 5)")
    s.add_argument("--activation", choices=("relu", "linear", "tanh"), help="conv activation (default relu)")
    s.add_argument("--units", type=int, help="recurrent units (default 32)")
    s.add_argument("--max-epochs", type=int, help="epoch cap (default 100)")
    s.add_argument("--batch-size", type=int, help="batch size (default 10)")
    s.add_argument("--learning-rate", type=float, help="Adam learning rate (default 1e-3)")
    s.add_argument("--min-delta", type=float, help="early-stopping min delta (default 1e-2)")
    s.add_argument("--patience", type=int, help="early-stopping patience (default 3)")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130
    except Exception as exc:
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
