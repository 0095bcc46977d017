from dotenv import load_dotenv
load_dotenv()

import argparse
import json
import sys
import traceback
from typing import Dict, List, Optional

from pydantic import ValidationError

from config import EXPERIMENTS, ExperimentConfig, env_seed, env_threads, parse_seed
from routers.experiments import router
from services.errors import AmdError, ConfigError
from services.event_log import log_app_event
from services.presets import build_system, list_presets
from storage import ResultStore

PARAMETER_FLAGS = ("omega", "gamma_plus", "gamma_minus", "gamma", "a", "b", "g", "theta", "N", "steps", "s_points")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="amd",
        description="Adiabatic Markovian dynamics: noiseless blocks, gaps, effective Hamiltonians, holonomic gates.",
    )
    parser.add_argument("experiment", choices=list(EXPERIMENTS) + ["presets"])
    parser.add_argument("--preset", help="registered system (see `amd presets`)")
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--out", help="output directory (default $AMD_OUT_DIR or ./results)")
    parser.add_argument("--seed", help="seed as a hex string, e.g. ADAB")
    parser.add_argument("--threads", type=int)

    parser.add_argument("--omega", type=float)
    parser.add_argument("--gamma-plus", dest="gamma_plus", type=float)
    parser.add_argument("--gamma-minus", dest="gamma_minus", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--a", type=float)
    parser.add_argument("--b", type=float)
    parser.add_argument("--g", type=float)
    parser.add_argument("--theta", type=float)
    parser.add_argument("--T", help="comma-separated total times, e.g. 10,30,100")
    parser.add_argument("--N", type=int, help="projections for discrete transport")
    parser.add_argument("--steps", type=int)
    parser.add_argument("--s-points", dest="s_points", type=int)
    parser.add_argument("--v", action="append", help="perturbation term, e.g. sigma-z@1 (repeatable)")
    parser.add_argument("--block", type=int)
    parser.add_argument("--start-mixed", action="store_true")
    parser.add_argument("--method", choices=["propagate", "transport"])
    parser.add_argument("--plot", action="store_true", help="write plot.svg for scans")
    parser.add_argument("--xlsx", action="store_true", help="write report.xlsx")
    return parser


def _load_config_file(path: str) -> Dict:
    try:
        with open(path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")


def _parse_times(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --T '{text}' as a comma-separated list of numbers")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """File config first, then command-line flags, then AMD_SEED / AMD_THREADS."""
    raw: Dict = _load_config_file(args.config) if args.config else {}
    raw.setdefault("schema_version", 1)
    raw["experiment"] = args.experiment
    system = raw.setdefault("system", {})
    if args.preset:
        system.clear()
        system["preset"] = args.preset
    if not system:
        raise ConfigError("no system given: use --preset NAME or --config FILE")

    params = raw.setdefault("parameters", {})
    for key in PARAMETER_FLAGS:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    if args.T:
        params["T"] = _parse_times(args.T)
    if args.v:
        params["v"] = list(args.v)
    if args.block is not None:
        params["block"] = args.block
    if args.start_mixed:
        params["start_mixed"] = True
    if args.method:
        params["method"] = args.method

    seed = env_seed()
    if args.seed:
        seed = parse_seed(args.seed)
    if seed is not None:
        params["seed"] = seed
    threads = args.threads if args.threads is not None else env_threads()
    if threads is not None:
        params["threads"] = threads

    outputs = raw.setdefault("outputs", {})
    if args.out:
        outputs["out_dir"] = args.out
    if args.plot:
        outputs["plot"] = True
    if args.xlsx:
        outputs["xlsx"] = True
    return ExperimentConfig.model_validate(raw)


def run(config: ExperimentConfig) -> List[str]:
    """Execute one experiment and write its artifacts; returns the written paths."""
    system = build_system(config)
    output = router.dispatch(system, config)
    store = ResultStore(config.outputs.out_dir)
    return store.write(output, plot=config.outputs.plot, xlsx=config.outputs.xlsx)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "presets":
        print(list_presets())
        return 0
    try:
        config = config_from_args(args)
    except ValidationError as e:
        log_app_event("ERROR", "CLI", f"invalid config: {e}")
        return 2
    except AmdError as e:
        log_app_event("ERROR", "CLI", e.detail)
        return e.exit_code
    except ValueError as e:
        # --seed that is not hex
        log_app_event("ERROR", "CLI", str(e))
        return 2

    try:
        paths = run(config)
    except AmdError as e:
        log_app_event("ERROR", "CLI", e.detail)
        return e.exit_code
    except Exception as e:
        log_app_event("CRITICAL", "CLI", f"Unhandled error: {e}", traceback.format_exc())
        return 1
    for path in paths:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
