"""Command-line entry points for batch experiments.

Subcommands: simulate, train, infer, eval, icp. Every artifact is written
under --out. On failure the process exits nonzero after printing one
machine-parseable line `error:<category>: <message>` to stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import experiment
from . import attention_net as net
from . import training
from .dataset_io import load_checkpoint, load_scenes, save_checkpoint, save_scenes
from .experiment import ConfigError, StageError, run_experiment
from .metrics import EvalReport


def _load_config(path: str, seed: int | None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if seed is not None:
        cfg["seed"] = seed
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    scfg = experiment.sim_config(cfg)
    sigma_pos, sigma_rot = experiment.gps_noise(cfg)
    n = int(experiment._section(cfg, "eval").get("n_train_scenes", 2000))
    scenes = experiment.generate_scene_set(scfg, sigma_pos, sigma_rot, n, int(cfg.get("seed", 0)))
    save_scenes(scenes, os.path.join(args.out, "scenes.jsonl"))
    print(f"wrote {len(scenes)} scenes to {args.out}/scenes.jsonl")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    if args.scenes:
        scenes = load_scenes(args.scenes)
    else:
        scfg = experiment.sim_config(cfg)
        sigma_pos, sigma_rot = experiment.gps_noise(cfg)
        n = int(experiment._section(cfg, "eval").get("n_train_scenes", 2000))
        scenes = experiment.generate_scene_set(scfg, sigma_pos, sigma_rot, n, int(cfg.get("seed", 0)))
    pool = [(sc.measurements, sc.landmarks) for sc in scenes if sc.landmarks is not None]
    if not pool:
        raise ConfigError("training scenes carry no landmarks")
    params = net.init_params(experiment.net_config(cfg))
    tcfg = experiment.train_config(cfg)

    def progress(epoch, stats):
        print(f"epoch {epoch}: loss {stats.loss:.4f} (tran {stats.loss_tran:.4f}, rot {stats.loss_rot:.6f})")

    params, history = training.train(params, tcfg, pool, progress=progress if args.verbose else None)
    save_checkpoint(params, os.path.join(args.out, "checkpoint.json"))
    experiment._write_history(os.path.join(args.out, "loss_history.csv"), history)
    print(f"trained {params.param_count()} parameters; checkpoint at {args.out}/checkpoint.json")
    return 0


def _cmd_infer(args) -> int:
    cfg = _load_config(args.config, args.seed)
    cfg["mode"] = args.mode
    checkpoint = load_checkpoint(args.checkpoint) if args.checkpoint else None
    report = run_experiment(cfg, args.out, checkpoint=checkpoint)
    print(json.dumps(report, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    rows = experiment.read_trace(args.trace)
    report = EvalReport.from_error_rows(rows[:, 1:])
    doc = report.metrics_dict()
    experiment.write_json(os.path.join(args.out, "report.json"), doc)
    print(json.dumps(doc, sort_keys=True))
    return 0


def _cmd_icp(args) -> int:
    cfg = _load_config(args.config, args.seed)
    cfg["mode"] = "icp"
    report = run_experiment(cfg, args.out)
    print(json.dumps(report, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnloc", description="Landmark localization experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("simulate", help="generate synthetic scenes")
    common(p)
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("train", help="train the offset regressor")
    common(p)
    p.add_argument("--scenes", default=None, help="existing scenes.jsonl to train on")
    p.add_argument("--verbose", action="store_true", help="print per-epoch loss")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="run an inference experiment")
    common(p)
    p.add_argument("--mode", choices=("gps", "filter"), required=True)
    p.add_argument("--checkpoint", default=None, help="reuse a trained checkpoint")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("eval", help="recompute a report from a trace CSV")
    p.add_argument("--trace", required=True, help="trace.csv from a previous run")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("icp", help="run the ICP baseline experiment")
    common(p)
    p.set_defaults(fn=_cmd_icp)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error:{exc.stage}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
