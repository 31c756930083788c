"""Command-line entry point: ``mio simulate|train|infer|run|serve|eval``.

Every subcommand accepts ``--config FILE.json``; its keys mirror the flag
names (dashes or underscores) and explicit flags take precedence. Exit
codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import __version__

log = logging.getLogger("mio")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# Defaults live here rather than in argparse so a config file can tell
# "flag not given" apart from "flag given with the default value".
DEFAULTS = {
    "simulate": {"script": "search", "duration": 60.0, "sensor": {}, "floorplan": None},
    "train": {"epochs": 40, "learning_rate": 0.002, "batch_size": 8, "rot_weight": 100.0,
              "momentum": 0.9, "bptt_window": 4, "init_scale": 1.0},
    "infer": {"queue_capacity": 4},
    "run": {"queue_capacity": 4, "time_scale": 1.0, "inference_delay": 0.0, "uplink": None},
    "serve": {"bind": "127.0.0.1:5555", "duration": None},
    "eval": {"delta": 1, "baseline": None, "imu": None, "tolerance": None, "no_figures": False},
}
# keys that may appear in a config file but have no flag
CONFIG_ONLY = {"simulate": {"sensor", "floorplan"}}
REQUIRED = {
    "simulate": ("seed", "out"),
    "train": ("data", "seed", "out"),
    "infer": ("model", "data", "out"),
    "run": ("model", "data", "out"),
    "serve": ("out",),
    "eval": ("est", "truth", "out"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mio", description="mmWave radar + IMU odometry toolkit")
    p.add_argument("--version", action="version", version=f"mio {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def cmd(name, help_text):
        s = sub.add_parser(name, help=help_text, description=help_text,
                           argument_default=argparse.SUPPRESS)
        s.add_argument("--config", help="JSON file with default values for the flags below")
        return s

    s = cmd("simulate", "simulate one recording (truth, IMU, radar) into a sequence directory")
    s.add_argument("--out", help="output sequence directory")
    s.add_argument("--seed", type=int, help="noise seed (required)")
    s.add_argument("--script", help="'search' (default held-out walk) or 'random'")
    s.add_argument("--duration", type=float, help="seconds (default 60)")
    s.add_argument("--walk-seed", type=int, dest="walk_seed", help="route seed for --script random")

    s = cmd("train", "train the fusion network on simulated sequences")
    s.add_argument("--data", nargs="+", help="sequence directories")
    s.add_argument("--out", help="checkpoint file (model.mio)")
    s.add_argument("--seed", type=int, help="initialisation/shuffle seed (required)")
    s.add_argument("--epochs", type=int)
    s.add_argument("--lr", type=float, dest="learning_rate")
    s.add_argument("--batch-size", type=int, dest="batch_size")
    s.add_argument("--rot-weight", type=float, dest="rot_weight")
    s.add_argument("--momentum", type=float)
    s.add_argument("--bptt-window", type=int, dest="bptt_window")
    s.add_argument("--init-scale", type=float, dest="init_scale")

    for name, text in (("infer", "offline pipeline over a sequence directory"),
                       ("run", "real-time (paced) pipeline over a sequence directory")):
        s = cmd(name, text)
        s.add_argument("--model", help="checkpoint file")
        s.add_argument("--data", help="sequence directory")
        s.add_argument("--out", help="output directory (trajectory.csv, stats.json)")
        s.add_argument("--queue-capacity", type=int, dest="queue_capacity")
        if name == "run":
            s.add_argument("--uplink", help="pose collector host:port")
            s.add_argument("--time-scale", type=float, dest="time_scale",
                           help="replay speed factor (default 1.0)")
            s.add_argument("--inference-delay", type=float, dest="inference_delay",
                           help="extra seconds per inference (load testing)")

    s = cmd("serve", "run a pose collector writing one CSV per connection")
    s.add_argument("--bind", help="host:port (default 127.0.0.1:5555)")
    s.add_argument("--out", help="output directory")
    s.add_argument("--duration", type=float, help="stop after this many seconds")

    s = cmd("eval", "compare an estimated trajectory with ground truth")
    s.add_argument("--est", help="estimated trajectory CSV")
    s.add_argument("--truth", help="ground-truth trajectory CSV or sequence directory")
    s.add_argument("--out", help="report directory")
    s.add_argument("--baseline", help="baseline trajectory CSV")
    s.add_argument("--imu", help="sequence directory whose IMU stream gives a dead-reckoning baseline")
    s.add_argument("--delta", type=int, help="RPE interval in frames (default 1)")
    s.add_argument("--tolerance", type=float, help="association tolerance in seconds")
    s.add_argument("--no-figures", action="store_true", dest="no_figures", help="skip PNG figures")
    return p


def resolve(command: str, args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """Merge defaults < config file < flags and check required keys."""
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "verbose", "config")}
    allowed = set(DEFAULTS[command]) | set(REQUIRED[command]) | CONFIG_ONLY.get(command, set())
    allowed |= {a.dest for a in parser._subparsers._group_actions[0].choices[command]._actions}
    allowed -= {"help", "config"}
    cfg = dict(DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            overlay = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(overlay, dict):
            raise UsageError(f"{config_path}: top level must be an object")
        for key, value in overlay.items():
            k = key.replace("-", "_")
            if k == "lr":
                k = "learning_rate"
            if k not in allowed:
                raise UsageError(f"{config_path}: unknown key {key!r}")
            cfg[k] = value
    cfg.update(flags)
    missing = [k for k in REQUIRED[command] if cfg.get(k) is None]
    if missing:
        raise UsageError(f"mio {command}: missing required " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


def _need_dir(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{what} {path} is not a directory")
    return p


def _need_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} {path} does not exist")
    return p


# --- subcommands --------------------------------------------------------------

def cmd_simulate(cfg: dict) -> int:
    from . import world

    plan = world.Floorplan.from_dict(cfg["floorplan"]) if cfg["floorplan"] else world.two_bed_apartment()
    sensor = world.SensorNoiseConfig.from_dict({**cfg["sensor"], "rng_seed": int(cfg["seed"])})
    if cfg["script"] == "search":
        script = world.search_script(float(cfg["duration"]))
    elif cfg["script"] == "random":
        walk_seed = cfg.get("walk_seed")
        if walk_seed is None:
            raise UsageError("--script random needs --walk-seed")
        script = world.random_walk_script(plan, float(cfg["duration"]), int(walk_seed))
    else:
        raise UsageError(f"unknown script {cfg['script']!r} (use 'search' or 'random')")
    rec = world.record_sequence(plan, script, sensor, cfg["out"])
    print(json.dumps({"out": str(cfg["out"]), "radar_frames": len(rec.scans), "imu_samples": len(rec.imu),
                      "points": int(sum(len(s) for s in rec.scans))}))
    return EXIT_OK


def cmd_train(cfg: dict) -> int:
    from . import dataset, model, world

    dirs = [_need_dir(d, "--data") for d in cfg["data"]]
    out = Path(cfg["out"])
    if not out.parent.exists():
        raise UsageError(f"--out directory {out.parent} does not exist")
    tcfg = model.TrainingConfig(learning_rate=float(cfg["learning_rate"]), epochs=int(cfg["epochs"]),
                                batch_size=int(cfg["batch_size"]), rot_weight=float(cfg["rot_weight"]),
                                rng_seed=int(cfg["seed"]), init_scale=float(cfg["init_scale"]),
                                momentum=float(cfg["momentum"]), bptt_window=int(cfg["bptt_window"]))
    data = [dataset.sequence_data(world.load_sequence(d)) for d in dirs]
    res = model.train(data, tcfg, progress=lambda e, l: log.info("epoch %d loss %.6g", e, l))
    model.save_checkpoint(res.params, out, extra={"losses": res.losses, "training": vars(tcfg)})
    print("epoch,mean_loss")
    for e, l in enumerate(res.losses, 1):
        print(f"{e},{l:.9g}")
    return EXIT_OK


def _pipeline(cfg: dict, realtime: bool) -> int:
    from . import model, pipeline
    from .imaging import ImagingConfig

    params = model.load_checkpoint(_need_file(cfg["model"], "--model"))
    data = _need_dir(cfg["data"], "--data")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    pcfg = pipeline.PipelineConfig(
        realtime=realtime, queue_capacity=int(cfg["queue_capacity"]),
        imaging=ImagingConfig(height=params.config.height, width=params.config.width))
    if realtime:
        pcfg.time_scale = float(cfg["time_scale"])
        pcfg.inference_delay = float(cfg["inference_delay"])
        pcfg.uplink = cfg["uplink"]
    result = pipeline.run_pipeline(data, params, pcfg)
    result.trajectory.to_csv(out / "trajectory.csv")
    result.stats.write_json(out / "stats.json")
    s = result.stats
    print(json.dumps({"poses": len(result.trajectory), "processed": s.processed, "dropped": s.dropped,
                      "fps": round(s.fps, 3)}))
    return EXIT_OK


def cmd_serve(cfg: dict) -> int:
    from .wire import PoseSink, parse_address

    try:
        bind = parse_address(cfg["bind"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    sink = PoseSink(bind, cfg["out"]).start()
    print(json.dumps({"listening": "%s:%d" % sink.address}), flush=True)
    stop = threading.Event()
    try:
        stop.wait(cfg["duration"])
    except KeyboardInterrupt:
        pass
    finally:
        sink.stop()
    for cid, (path, n) in sorted(sink.connections.items()):
        log.info("connection %d: %d poses -> %s", cid, n, path)
    return EXIT_OK


def cmd_eval(cfg: dict) -> int:
    from . import evaluation, world
    from .se3 import read_trajectory_csv

    est = read_trajectory_csv(_need_file(cfg["est"], "--est"))
    truth_path = Path(cfg["truth"])
    if truth_path.is_dir():
        truth = read_trajectory_csv(_need_file(str(truth_path / "truth.csv"), "--truth"))
    else:
        truth = read_trajectory_csv(_need_file(cfg["truth"], "--truth"))
    baseline = None
    if cfg["baseline"] and cfg["imu"]:
        raise UsageError("give at most one of --baseline and --imu")
    if cfg["baseline"]:
        baseline = read_trajectory_csv(_need_file(cfg["baseline"], "--baseline"))
    elif cfg["imu"]:
        rec = world.load_sequence(_need_dir(cfg["imu"], "--imu"))
        baseline = evaluation.imu_dead_reckoning(rec.imu, truth.poses[0])
    result = evaluation.report(est, truth, baseline, cfg["out"], delta=int(cfg["delta"]),
                               tolerance=cfg["tolerance"], figures=not cfg["no_figures"])
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "infer": lambda c: _pipeline(c, False),
            "run": lambda c: _pipeline(c, True), "serve": cmd_serve, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if not args.command:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        cfg = resolve(args.command, args, parser)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        sub.print_help(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Exception, KeyboardInterrupt) as exc:  # noqa: BLE001 - mapped to exit code 2
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
