# main.py
"""dob: design, verify and simulate disturbance-observer loops."""
import argparse
import json
import logging
import sys
from typing import Any, Callable, Dict, List, Optional, Tuple, Type

import numpy as np
import pandas as pd
from pydantic import ValidationError

from schemas.schemas import (
    AnalyzeConfig,
    CompareTransientConfig,
    DesignQConfig,
    PolesConfig,
    RunConfig,
    SimulateConfig,
    SimulateNlConfig,
)
from services.analysis_services import AnalysisService
from services.catalog_services import benchmark_defaults
from services.errors import ConditionFailure, DobError, InvalidInputError
from services.linear_sim_services import SimulationService
from services.nonlinear_services import NonlinearService
from services.qfilter_services import DesignService
from storage import storage

logger = logging.getLogger("dob")


def parse_floats(text: str) -> List[float]:
    """Comma list ("1e-1,1e-2") or log range ("1e-1:1e-4:log10", one point per decade)."""
    try:
        if ":" in text:
            start, stop, kind = text.split(":")
            if kind != "log10":
                raise ValueError(kind)
            lo, hi = np.log10(float(start)), np.log10(float(stop))
            count = int(round(abs(hi - lo))) + 1
            return [float(v) for v in np.logspace(lo, hi, count)]
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"cannot parse number list '{text}'")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config; explicit flags override its fields")
    parser.add_argument("--benchmark", help="start from a named benchmark (B1, N1)")
    parser.add_argument("--out", help="report or CSV destination (default: standard output)")
    parser.add_argument("--seed", type=int, help="seed for every random draw")
    parser.add_argument("--emit-config", dest="emit_config", help="write the resolved config here before running")
    parser.add_argument("--log-level", dest="log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dob", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    design = sub.add_parser(
        "design-q", help="pick a0 so the fast dynamics stay Hurwitz over the gain interval (closed-disk Nyquist test)"
    )
    _common(design)
    design.add_argument("--nu", type=int)
    design.add_argument("--a-tail", dest="a_tail", type=parse_floats, help="a_1,...,a_(nu-1)")
    design.add_argument("--gains", type=parse_floats, help="g_lower,g_upper,g_star")
    design.add_argument("--a0-initial", dest="a0_initial", type=float)
    design.add_argument("--safety-fraction", dest="safety_fraction", type=float)

    analyze = sub.add_parser(
        "analyze",
        help="check nominal stability, minimum phase and the fast-dynamics disk test, then sweep tau",
    )
    _common(analyze)
    analyze.add_argument("--family", help="PlantFamily JSON file")
    analyze.add_argument("--nominal", help="PlantSample JSON file")
    analyze.add_argument("--controller", help="controller transfer-function JSON file")
    analyze.add_argument("--qfilter", help="QFilterSpec JSON file")
    analyze.add_argument("--tau-grid", dest="tau_grid", type=parse_floats, help='e.g. "1e-1:1e-4:log10"')
    analyze.add_argument("--samples", type=int, help="random interior samples")
    analyze.add_argument("--poles-out", dest="poles_out", help="pole-locus CSV destination")

    poles = sub.add_parser(
        "poles", help="closed-loop poles as tau -> 0: slow ones reach the nominal loop, fast ones the fast polynomial"
    )
    _common(poles)
    poles.add_argument("--plant", help="PlantSample JSON file")
    poles.add_argument("--nominal", help="PlantSample JSON file")
    poles.add_argument("--controller")
    poles.add_argument("--qfilter")
    poles.add_argument("--tau-seq", dest="tau_seq", type=parse_floats)

    simulate = sub.add_parser(
        "simulate", help="time-domain run of the linear DOB loop; y tracks the nominal loop as tau shrinks"
    )
    _common(simulate)
    simulate.add_argument("--loop", help="LoopDoc JSON file")
    for name in ("r", "d", "n"):
        simulate.add_argument(f"--{name}", help=f"SignalSpec JSON file for {name}")
    simulate.add_argument("--t-end", dest="t_end", type=float)
    simulate.add_argument("--dt", type=float)
    simulate.add_argument("--allow-unstable", dest="allow_unstable", action="store_true", default=None)

    for name, text in (
        ("simulate-nl", "run the saturated nonlinear DOB beside the nominal closed loop it should recover"),
        ("compare-transient", "sweep tau; the sup deviation from the nominal transient should shrink with tau"),
    ):
        nl = sub.add_parser(name, help=text)
        _common(nl)
        for field in ("plant", "nominal", "controller", "params", "envelope"):
            nl.add_argument(f"--{field}", help=f"{field} JSON file")
        nl.add_argument("--x0", type=parse_floats)
        nl.add_argument("--z0", type=parse_floats)
        nl.add_argument("--eta0", type=parse_floats)
        nl.add_argument("--t-end", dest="t_end", type=float)
        nl.add_argument("--dt", type=float)
        nl.add_argument("--s-phi-samples", dest="s_phi_samples", type=int)
        if name == "compare-transient":
            nl.add_argument("--tau-sweep", dest="tau_sweep", type=parse_floats)
    return parser


RUNNERS: Dict[str, Tuple[Type[RunConfig], Callable[[Any], int]]] = {}

CONTROL_FLAGS = {"command", "config", "emit_config"}

DOCUMENT_FLAGS = {
    "family", "nominal", "controller", "qfilter", "plant", "loop",
    "r", "d", "n", "params", "envelope",
}


def resolve_config(command: str, args: argparse.Namespace) -> RunConfig:
    """Benchmark defaults, then the config file, then explicit flags."""
    flags = {k: v for k, v in vars(args).items() if k not in CONTROL_FLAGS and v is not None}
    for key in DOCUMENT_FLAGS & flags.keys():
        flags[key] = storage.read_document(flags[key])
    document = storage.read_document(args.config) if args.config else {}
    if command == "design-q" and "gains" in flags:
        gains = flags.pop("gains")
        if len(gains) != 3:
            raise InvalidInputError("--gains takes g_lower,g_upper,g_star")
        flags["gains"] = dict(zip(("g_lower", "g_upper", "g_star"), gains))
    benchmark = flags.get("benchmark", document.get("benchmark"))
    merged = benchmark_defaults(benchmark, command) if benchmark else {}
    merged.update(document)
    merged.update(flags)
    model, _ = RUNNERS[command]
    return model.model_validate(merged)


def _field_path(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        where = ".".join(str(p) for p in error["loc"]) or "config"
        parts.append(f"{where}: {error['msg']}")
    return "; ".join(parts)


def run_design_q(config: DesignQConfig) -> int:
    result = DesignService.design_q(config)
    logger.info(result["message"])
    storage.write_report(result["data"], config.out)
    return 0


def run_analyze(config: AnalyzeConfig) -> int:
    result = AnalysisService.analyze(config)
    report = result["report"]
    storage.write_report(result["data"], config.out)
    if config.poles_out and report.loci is not None:
        storage.write_table(report.loci.to_frame(), config.poles_out)
    logger.info(result["message"])
    if not report.conditions_hold:
        failed = [k for k, ok in (("a", report.condition_a), ("b", report.condition_b), ("c", report.condition_c)) if not ok]
        raise ConditionFailure(f"robust-stability condition(s) {', '.join(failed)} fail")
    if not report.sweep_clean:
        raise ConditionFailure(
            f"tau sweep fails at {len(report.unstable_points)} (sample, tau) pairs on the grid"
        )
    return 0


def run_poles(config: PolesConfig) -> int:
    result = AnalysisService.poles(config)
    for row in result["data"]:
        logger.info(
            "tau=%.3g fast_error=%.3g slow_error=%.3g misclassified=%d",
            row["tau"], row["fast_error"], row["slow_error"], row["misclassified"],
        )
    storage.write_table(result["table"].to_frame(), config.out)
    return 0


def run_simulate(config: SimulateConfig) -> int:
    result = SimulationService.simulate(config)
    logger.info(result["message"])
    storage.write_table(result["data"].to_frame(), config.out)
    return 0


def run_simulate_nl(config: SimulateNlConfig) -> int:
    result = NonlinearService.simulate(config)
    logger.info(result["message"])
    storage.write_table(result["data"].to_frame(), config.out)
    return 0


def run_compare_transient(config: CompareTransientConfig) -> int:
    result = NonlinearService.compare_transient(config)
    logger.info(result["message"])
    storage.write_table(pd.DataFrame(result["data"]), config.out)
    return 0


RUNNERS.update(
    {
        "design-q": (DesignQConfig, run_design_q),
        "analyze": (AnalyzeConfig, run_analyze),
        "poles": (PolesConfig, run_poles),
        "simulate": (SimulateConfig, run_simulate),
        "simulate-nl": (SimulateNlConfig, run_simulate_nl),
        "compare-transient": (CompareTransientConfig, run_compare_transient),
    }
)


def configure_logging(level: Optional[str]) -> None:
    logging.basicConfig(
        level=level or storage.LOG_LEVEL,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = resolve_config(args.command, args)
        if config.log_level and not args.log_level:
            configure_logging(config.log_level)
        if args.emit_config:
            target = storage.resolve_path(args.emit_config)
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_text(json.dumps(config.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
        logger.info("%s started", args.command)
        _, runner = RUNNERS[args.command]
        code = runner(config)
        logger.info("%s finished", args.command)
        return code
    except ValidationError as exc:
        logger.error("invalid config: %s", _field_path(exc))
        return InvalidInputError.exit_code
    except DobError as exc:
        logger.error("%s", exc.message)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
