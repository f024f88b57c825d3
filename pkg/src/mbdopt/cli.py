"""Command-line front end.

Verbs: numeric1d, numeric2d, vehicle, train-alp, train-avp, compare, validate.
Settings come from an INI-style config file (sections are cosmetic; keys must
match ExperimentConfig fields) overridden by command-line flags -- a flag
always wins over the file.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import fields, replace

from .runner import (
    ExperimentConfig,
    METHODS,
    OBJECTIVES_1D,
    compare_methods,
    run_experiment,
    validate_config,
)

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def load_config_file(path: str) -> dict:
    """Flat key-value file with sections; unknown keys are rejected."""
    parser = configparser.ConfigParser()
    with open(path) as f:
        parser.read_file(f)
    values: dict = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in _FIELD_TYPES:
                raise KeyError(f"unknown config key {key!r} (section [{section}])")
            values[key] = _coerce(key, raw)
    return values


def _coerce(key: str, raw: str):
    if key == "seeds":
        return tuple(int(s) for s in raw.replace(",", " ").split())
    default = getattr(ExperimentConfig(), key)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--outdir", help="artifact root (default out)")
    p.add_argument("--seeds", help="comma-separated seed list, e.g. 0,1,2")
    p.add_argument("--samples", type=int, dest="n_samples", help="MC batch size per step")
    p.add_argument("--temperature", type=float, help="target density temperature")


def _add_schedule(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--sigma-max", type=float, dest="sigma_max")
    p.add_argument("--steps", type=int, help="diffusion steps / baseline iterations")
    p.add_argument("--beta0", type=float)
    p.add_argument("--beta1", type=float)
    p.add_argument("--policy", dest="policy_path", help="checkpoint for alp/avp")


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="mbdopt",
                                   description="model-based diffusion experiments")
    sub = root.add_subparsers(dest="verb", required=True)

    p1 = sub.add_parser("numeric1d", help="1D objective studies")
    _add_common(p1)
    _add_schedule(p1)
    p1.add_argument("--objective", help=f"built-ins: {', '.join(OBJECTIVES_1D)}; registered names also accepted")

    p2 = sub.add_parser("numeric2d", help="constrained 2D mixture study")
    _add_common(p2)
    _add_schedule(p2)

    pv = sub.add_parser("vehicle", help="closed-loop trajectory tracking")
    _add_common(pv)
    _add_schedule(pv)
    pv.add_argument("--reference", choices=("s_curve", "oval"))
    pv.add_argument("--horizon", type=int)
    pv.add_argument("--episode-len", type=int, dest="episode_len")
    pv.add_argument("--plan-temperature", type=float, dest="plan_temperature")

    for kind in ("alp", "avp"):
        pt = sub.add_parser(f"train-{kind}", help=f"train the {kind} scheduler policy")
        _add_common(pt)
        pt.add_argument("--task", dest="train_task", choices=("numeric2d", "vehicle"))
        pt.add_argument("--updates", type=int, help="policy-gradient updates / PPO iterations")
        pt.add_argument("--step-penalty", type=float, dest="step_penalty")
        pt.add_argument("--t-min", type=int, dest="t_min")
        pt.add_argument("--t-max", type=int, dest="t_max")
        pt.add_argument("--out-policy", dest="policy_path", help="checkpoint output path")
        pt.add_argument("--reference", choices=("s_curve", "oval"))
        pt.add_argument("--horizon", type=int)
        pt.add_argument("--episode-len", type=int, dest="episode_len")
        pt.add_argument("--ppo-lr", type=float, dest="ppo_lr")
        pt.add_argument("--episodes-per-iter", type=int, dest="episodes_per_iter")

    pc = sub.add_parser("compare", help="side-by-side method comparison")
    _add_common(pc)
    _add_schedule(pc)
    pc.add_argument("--methods", required=True, help="comma-separated method list")
    pc.add_argument("--experiment", required=True,
                    choices=("numeric1d", "numeric2d", "vehicle"))
    pc.add_argument("--objective")
    pc.add_argument("--reference", choices=("s_curve", "oval"))
    pc.add_argument("--horizon", type=int)
    pc.add_argument("--episode-len", type=int, dest="episode_len")
    pc.add_argument("--alp-policy", dest="alp_policy", help="checkpoint for the alp row")

    pval = sub.add_parser("validate", help="check a config and print diagnostics")
    _add_common(pval)
    _add_schedule(pval)
    pval.add_argument("--experiment", choices=("numeric1d", "numeric2d", "vehicle"))
    pval.add_argument("--objective")
    pval.add_argument("--reference", choices=("s_curve", "oval"))
    return root


def config_from_args(args: argparse.Namespace, experiment: str) -> ExperimentConfig:
    values = {"experiment": experiment}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key in _FIELD_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "seeds", None):
        values["seeds"] = _coerce("seeds", args.seeds)
    return replace(ExperimentConfig(), **values)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verb = args.verb
    if verb in ("numeric1d", "numeric2d", "vehicle"):
        return run_experiment(config_from_args(args, verb))
    if verb in ("train-alp", "train-avp"):
        cfg = config_from_args(args, verb)
        if cfg.train_task == "vehicle" and args.t_max is None and verb == "train-alp":
            cfg = replace(cfg, t_max=30)
        return run_experiment(cfg)
    if verb == "compare":
        base = config_from_args(args, args.experiment)
        cfgs = []
        for m in args.methods.split(","):
            c = replace(base, method=m.strip())
            if c.method == "alp" and getattr(args, "alp_policy", None):
                c = replace(c, policy_path=args.alp_policy)
            cfgs.append(c)
        try:
            compare_methods(cfgs)
        except (ValueError, RuntimeError) as e:
            print(f"compare failed: {e}")
            return 1
        return 0
    if verb == "validate":
        cfg = config_from_args(args, getattr(args, "experiment", None) or "numeric1d")
        diags = validate_config(cfg)
        if diags:
            for d in diags:
                print(f"invalid: {d}")
            return 2
        print("config ok")
        return 0
    return 2


if __name__ == "__main__":
    sys.exit(main())
