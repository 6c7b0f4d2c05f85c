"""``grasp`` command line: gen | train | infer | eval | stats.

All commands read one JSON config file (``--config``); flags override its
values. Machine-readable results go to stdout as JSON, diagnostics to stderr.

Exit codes: 0 ok, 1 unexpected error, 2 configuration, 3 data, 4 training.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .bundle import load_bundle, read_manifest, save_bundle
from .detector import AlarmReport, run_inference
from .errors import ConfigError, DataError, GraspError
from .events import EventLog, read_events, split_dataset, write_events
from .evalkit import GroundTruth, RunResult, summarize_runs, unseen_exec_baseline
from .synthgen import build_scenario, load_profiles
from .trainer import TrainConfig, fit
from .windows import HopStats, build_windows, hop_statistics

logger = logging.getLogger("grasp")

GEN_META = "gen.json"
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def load_config(path) -> dict:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    base = os.path.dirname(os.path.abspath(path))
    for key in ("events", "train_events", "test_events", "gt", "bundle", "report_dir", "profiles"):
        if isinstance(cfg.get(key), str) and not os.path.isabs(cfg[key]):
            cfg[key] = os.path.join(base, cfg[key])
    gen = cfg.get("gen")
    if isinstance(gen, dict) and isinstance(gen.get("out_dir"), str) and not os.path.isabs(gen["out_dir"]):
        gen["out_dir"] = os.path.join(base, gen["out_dir"])
    if "reports" in cfg:
        cfg["reports"] = [r if os.path.isabs(r) else os.path.join(base, r) for r in cfg["reports"]]
    return cfg


def apply_overrides(cfg: dict, args) -> dict:
    """Fold command-line flags into the config; flags win."""
    cfg = dict(cfg)
    train = dict(cfg.get("train", {}))
    unknown = set(train) - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown training options: {sorted(unknown)}")
    if args.seed is not None:
        cfg["seed"] = args.seed
    for flag, key in (("fanout1", "fanout1"), ("fanout2", "fanout2"),
                      ("context_min", "context_minutes"), ("step_min", "step_minutes")):
        value = getattr(args, flag, None)
        if value is not None:
            train[key] = value
    if getattr(args, "ablate_autoencoder", False):
        train["location_mode"] = "disabled"
    if getattr(args, "ablate_neighborhood", False):
        train["fanout1"] = train["fanout2"] = 0
    if getattr(args, "ablate_clustering", False):
        train["clustering"] = False
    cfg["train"] = train
    for key in ("runs", "jobs", "report_dir", "bundle", "events"):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg.setdefault("seed", 0)
    cfg.setdefault("runs", 1)
    cfg.setdefault("jobs", 1)
    if cfg["runs"] < 1 or cfg["jobs"] < 1:
        raise ConfigError("runs and jobs must be >= 1")
    return cfg


def train_config(cfg: dict, run: int = 0) -> TrainConfig:
    train = dict(cfg.get("train", {}))
    train["seed"] = cfg["seed"] + run
    return TrainConfig.from_dict(train)


def _require(cfg: dict, key: str) -> str:
    path = cfg.get(key)
    if not path:
        raise ConfigError(f"config needs {key!r}")
    return path


def _input_path(cfg: dict, key: str) -> str:
    path = _require(cfg, key)
    if not os.path.exists(path):
        raise ConfigError(f"{key} path does not exist: {path}")
    return path


def _cutoff(cfg: dict) -> int:
    if "cutoff_ts" in cfg:
        return int(cfg["cutoff_ts"])
    meta = os.path.join(os.path.dirname(cfg["events"]), GEN_META)
    if os.path.isfile(meta):
        with open(meta) as fh:
            return int(json.load(fh)["cutoff_ts"])
    raise ConfigError("config needs 'cutoff_ts' (or separate train_events/test_events files)")


def _schema(cfg: dict) -> str:
    return cfg.get("train", {}).get("schema", "TC")


def load_split(cfg: dict, side: str) -> EventLog:
    """Training or test log, from explicit files or from ``events`` + cutoff."""
    explicit = f"{side}_events"
    if cfg.get(explicit):
        return read_events(_input_path(cfg, explicit), _schema(cfg))
    log = read_events(_input_path(cfg, "events"), _schema(cfg))
    split = split_dataset(log, _cutoff(cfg))
    return split.train if side == "train" else split.test


def _run_dirs(root: str, runs: int) -> list[str]:
    return [root] if runs == 1 else [os.path.join(root, f"run-{i}") for i in range(runs)]


# --- commands ----------------------------------------------------------------

def cmd_gen(cfg: dict) -> dict:
    gen = dict(cfg.get("gen", {}))
    out_dir = _require(cfg, "report_dir") if "out_dir" not in gen else gen.pop("out_dir")
    profiles = load_profiles(cfg["profiles"]) if cfg.get("profiles") else None
    attack = gen.get("attack")
    sc = build_scenario(attack, days=gen.get("days", 14), train_days=gen.get("train_days", 10),
                        seed=cfg["seed"], mode=gen.get("mode", "deterministic"),
                        profiles=profiles, n_attacks=gen.get("n_attacks", 1),
                        window_minutes=gen.get("window_minutes", 120))
    os.makedirs(out_dir, exist_ok=True)
    events_path = os.path.join(out_dir, "events.jsonl")
    write_events(sc.log, events_path)
    gt_path = os.path.join(out_dir, "gt.json")
    if sc.gt is not None:
        sc.gt.save(gt_path)
    elif os.path.exists(gt_path):
        os.remove(gt_path)
    meta = {"version": __version__, "seed": cfg["seed"], "cutoff_ts": sc.cutoff_ts,
            "attack": attack, "n_events": len(sc.log.events),
            "n_processes": len(sc.log.subjects()), "gen": gen}
    with open(os.path.join(out_dir, GEN_META), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"events": events_path, "gt": gt_path if sc.gt is not None else None, **meta}


def cmd_train(cfg: dict) -> dict:
    root = _require(cfg, "bundle")
    train_log = load_split(cfg, "train")
    if not train_log.events:
        raise DataError("training split is empty")
    out = []
    for run, directory in enumerate(_run_dirs(root, cfg["runs"])):
        tc = train_config(cfg, run)
        logger.info("training run %d (seed %d) -> %s", run, tc.seed, directory)
        model = fit(train_log, tc)
        ablations = {"autoencoder": tc.location_mode == "disabled",
                     "neighborhood": tc.fanout1 == 0 and tc.fanout2 == 0,
                     "clustering": not tc.clustering}
        bundle_id = save_bundle(model, directory, extra={"ablations": ablations})
        out.append({"bundle": directory, "bundle_id": bundle_id, "seed": tc.seed,
                    "config_hash": tc.config_hash(), "macro_f1": model.report.macro_f1,
                    "weighted_f1": model.report.weighted_f1,
                    "clusters": sum(len(v) for v in model.clusters.values())})
    return {"version": __version__, "runs": out}


def _check_bundle_against(cfg: dict, manifest: dict) -> None:
    trained = manifest["config"]
    for key in ("context_minutes", "step_minutes", "schema"):
        if key in cfg.get("train", {}) and cfg["train"][key] != trained[key]:
            raise ConfigError(f"{key} mismatch: bundle trained with {trained[key]!r}, "
                              f"config asks for {cfg['train'][key]!r}")


def cmd_infer(cfg: dict) -> dict:
    root = _input_path(cfg, "bundle")
    report_root = _require(cfg, "report_dir")
    side = cfg.get("infer_on", "test")
    if side not in ("train", "test"):
        raise ConfigError("infer_on must be 'train' or 'test'")
    log = load_split(cfg, side)
    bundles = _run_dirs(root, cfg["runs"])
    out = []
    for directory, rdir in zip(bundles, _run_dirs(report_root, cfg["runs"])):
        manifest = read_manifest(directory)
        _check_bundle_against(cfg, manifest)
        model = load_bundle(directory)
        report = run_inference(model, log, jobs=cfg["jobs"],
                               metadata={"version": __version__, "infer_on": side})
        report.write(rdir)
        out.append({"report_dir": rdir, "seed": model.config.seed,
                    "time_alarms": report.time_alarms, "unique_alarms": len(report.alarmed_nodes),
                    "unseen_coverage": report.unseen_coverage})
    return {"version": __version__, "runs": out}


def _report_dirs(cfg: dict) -> list[str]:
    if cfg.get("reports"):
        dirs = list(cfg["reports"])
    else:
        root = _require(cfg, "report_dir")
        dirs = sorted(glob.glob(os.path.join(root, "run-*")))
        if not dirs and os.path.isfile(os.path.join(root, "summary.json")):
            dirs = [root]
    dirs = [d for d in dirs if os.path.isfile(os.path.join(d, "summary.json"))]
    if not dirs:
        raise DataError("no alarm reports found to evaluate")
    return dirs


def cmd_eval(cfg: dict) -> dict:
    gt_path = cfg.get("gt")
    if not gt_path or not os.path.isfile(gt_path):
        raise DataError(f"ground truth file not found: {gt_path}")
    gt = GroundTruth.load(gt_path)
    if gt.k == 0:
        raise DataError("ground truth defines no attacks")
    results = []
    for d in _report_dirs(cfg):
        report = AlarmReport.load(d)
        results.append(RunResult.score(report, gt, report.metadata.get("seed")))
    summary = summarize_runs(results)
    out_csv = cfg.get("summary_csv") or os.path.join(_require(cfg, "report_dir"), "summary.csv")
    os.makedirs(os.path.dirname(os.path.abspath(out_csv)), exist_ok=True)
    summary.write_csv(out_csv, dataset=cfg.get("dataset", "synthetic"))
    return {"version": __version__, "summary_csv": out_csv, **summary.row(),
            "per_run": [vars(r) for r in results]}


def cmd_stats(cfg: dict) -> dict:
    log = read_events(_input_path(cfg, "events"), _schema(cfg))
    tc = train_config(cfg)
    windows = build_windows(log, tc.context_minutes, tc.step_minutes)
    max_hop = int(cfg.get("max_hop", 4))
    budget = int(cfg.get("node_budget", 250_000))
    parts = [hop_statistics(w, max_hop, budget) for w in windows]
    stats = HopStats.merge(parts) if parts else HopStats(max_hop, np.zeros((0, max_hop), np.int64))
    out_dir = _require(cfg, "report_dir")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "hop_stats.csv")
    stats.write_csv(path)
    meta = {"version": __version__, "seed": tc.seed, "config_hash": tc.config_hash(),
            "windows": len(windows), "empty": stats.empty}
    with open(os.path.join(out_dir, "hop_stats.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"hop_stats": path, **meta,
            "rows": [{"hop": h, "max": mx, "mean": mean} for h, mx, mean in stats.rows()]}


def cmd_baseline(cfg: dict) -> dict:
    """Unseen-executable baseline written as an ordinary alarm report."""
    root = _input_path(cfg, "bundle")
    directory = _run_dirs(root, cfg["runs"])[0]
    model = load_bundle(directory)
    test = load_split(cfg, "test")
    report = unseen_exec_baseline(model.vocab, test, model.config.context_minutes,
                                  model.config.step_minutes)
    out = _require(cfg, "report_dir")
    report.write(out)
    return {"report_dir": out, "unique_alarms": len(report.alarmed_nodes)}


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "stats": cmd_stats, "baseline": cmd_baseline}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="base rng seed (run i uses seed + i)")
    common.add_argument("--runs", type=int, help="number of runs / seeds")
    common.add_argument("--jobs", type=int, help="inference worker threads")
    common.add_argument("--report-dir", dest="report_dir", help="output directory")
    common.add_argument("--bundle", help="model bundle directory")
    common.add_argument("--events", help="JSONL event file")
    common.add_argument("--ablate-autoencoder", action="store_true",
                        help="zero location embeddings")
    common.add_argument("--ablate-neighborhood", action="store_true",
                        help="classify each process from itself only (fanouts 0, 0)")
    common.add_argument("--ablate-clustering", action="store_true",
                        help="train without the benign mix-up map")
    common.add_argument("--fanout1", type=int)
    common.add_argument("--fanout2", type=int)
    common.add_argument("--context-min", dest="context_min", type=float)
    common.add_argument("--step-min", dest="step_min", type=float)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="grasp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"grasp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate a synthetic corpus (+ ground truth)",
        "train": "train model bundle(s)",
        "infer": "score a log with trained bundle(s)",
        "eval": "summarize alarm reports against ground truth",
        "stats": "hop statistics of the window graphs",
        "baseline": "unseen-executable baseline report",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), args)
        result = COMMANDS[args.command](cfg)
    except GraspError as exc:
        print(f"grasp {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"grasp {args.command}: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    _emit(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
