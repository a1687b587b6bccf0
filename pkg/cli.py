"""
Batch front end: expand Heisenberg-picture observables, report bounds, estimate
expectation values and run the verification and imaginary-time workflows.

Usage::

    python cli.py expand --hamiltonian heisenberg:4:1 --observable staggered:4 --time 0.1
    python cli.py verify --hamiltonian sys.txt --guess guess.txt --observable pauli:ZII \\
        --state neel:3 --time 0.05 --backend importance --shots 20000

The full JSON report goes to ``--output`` (or stdout when omitted); a short
human summary is printed to stdout otherwise.
"""

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

import reference_backend
from bounds import compute_bound_report, gamma_l1_bound, term_count_bound
from estimation import (
    MeasurementSource,
    loschmidt_estimate,
    read_shadows_jsonl,
    shadow_estimate_sum,
)
from expansion import (
    DEFAULT_MAX_ORDER,
    DEFAULT_MAX_TERMS,
    TermCountExceededError,
    TimeParameter,
    TruncationOrderError,
    expand_propagator,
    heisenberg_taylor_concat,
)
from model_io import ObservableSpec, load_hamiltonian, load_observable, parse_state
from pauli_algebra import PauliSum
from reference_backend import (
    DenseState,
    ExactSimulatorSource,
    StatisticalRefusalError,
    WorkflowConfig,
    exact_evolve,
    exact_expectation,
    exact_loschmidt,
    expand_observable,
    hybrid_time_extension,
    imaginary_time_energy,
    partition_trace,
    resolve_expansion_parameters,
    resolve_order,
    resolve_shots,
    verify_hamiltonian_residual,
)

logger = logging.getLogger("pauli_cli")

# --- Constants ---
VERSION = "0.1.0"
SCHEMA_VERSION = 1
SUBCOMMANDS = ("expand", "bounds", "estimate", "loschmidt", "verify", "imag-energy", "trace-z", "extend")
CLI_MODES = ("concat", "direct", "commutator", "propagator-only")
REPORT_TERM_LIMIT = 1000

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_GUARD_ABORT = 3
EXIT_STATISTICAL_REFUSAL = 4

ENV_MAX_TERMS = "PAULI_TAYLOR_MAX_TERMS"
ENV_QUBIT_CAP = "PAULI_TAYLOR_QUBIT_CAP"
ENV_MAX_ORDER = "PAULI_TAYLOR_MAX_ORDER"

# Inputs each subcommand cannot run without; tuples inside mean "one of".
REQUIRED_FIELDS = {
    "expand": ("hamiltonian", ("time", "tau")),
    "bounds": ("hamiltonian", ("time", "tau")),
    "estimate": ("hamiltonian", "observable", ("time", "tau"), ("state", "shadows")),
    "loschmidt": ("hamiltonian", ("time", "tau"), ("state", "shadows")),
    "verify": ("hamiltonian", "guess", "observable", "state", "time"),
    "imag-energy": ("hamiltonian", "state", "tau"),
    "trace-z": ("hamiltonian", "tau"),
    "extend": ("hamiltonian", "observable", "state", "t1", "time"),
}


def _handle_exception(exc: Exception, message: str) -> None:
    """Helper function to log exceptions."""
    logger.error(f"{message}: {exc}")
    if logging.getLogger().level <= logging.DEBUG:
        logger.exception("Detailed traceback:")


# --- Data Structures ---
@dataclass
class RunConfig:
    """One invocation. None for order, segments or shots means "resolve automatically"."""

    subcommand: str
    hamiltonian: Optional[str] = None
    guess: Optional[str] = None
    observable: Optional[str] = None
    state: Optional[str] = None
    shadows: Optional[str] = None
    time: Optional[float] = None
    tau: Optional[float] = None
    t1: Optional[float] = None
    eps: float = 1e-3
    delta: float = 0.05
    order: Optional[int] = None
    segments: Optional[int] = None
    shots: Optional[int] = None
    seed: int = 0
    mode: str = "concat"
    backend: str = "exact"
    workers: int = 1
    norm_bound: Optional[float] = None
    normalization: str = "state"
    output: Optional[str] = None
    max_terms: int = DEFAULT_MAX_TERMS
    max_order: int = DEFAULT_MAX_ORDER
    auto_resolved: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @property
    def evolution_time(self) -> TimeParameter:
        if self.time is not None:
            return TimeParameter.real(self.time)
        return TimeParameter.imaginary(self.tau)

    def workflow_config(self) -> WorkflowConfig:
        return WorkflowConfig(
            eps=self.eps,
            delta=self.delta,
            K=self.order,
            r=self.segments,
            mode=self.mode if self.mode != "propagator-only" else "concat",
            shots=self.shots,
            seed=self.seed,
            backend=self.backend,
            workers=self.workers,
            norm_bound=self.norm_bound,
            normalization=self.normalization,
            max_terms=self.max_terms,
            max_order=self.max_order,
        )


@dataclass
class RunReport:
    subcommand: str
    config: Dict[str, Any]
    expansion: Optional[Dict[str, Any]] = None
    bounds: Optional[Dict[str, Any]] = None
    estimate: Optional[Dict[str, Any]] = None
    extra: Dict[str, Any] = field(default_factory=dict)
    wall_time_s: float = 0.0
    version: str = VERSION
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> Dict[str, Any]:
        return _finite(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _finite(value: Any) -> Any:
    """Replace non-finite floats by None so every number in the report is finite."""
    if isinstance(value, dict):
        return {key: _finite(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite(item) for item in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, complex):
        return {"real": _finite(value.real), "imag": _finite(value.imag)}
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


# --- Configuration ---
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields; flags override it")
    common.add_argument("--hamiltonian", help="Model file or heisenberg:<n>:<J>")
    common.add_argument("--guess", help="Guess Hamiltonian for verify")
    common.add_argument("--observable", help="Model file, pauli:<label> or staggered:<n>")
    common.add_argument("--state", help="basis:<bits>, neel:<n>, plus:<n> or density-matrix JSON")
    common.add_argument("--shadows", help="Recorded snapshots (JSON lines)")
    common.add_argument("--time", type=float, help="Real evolution time t")
    common.add_argument("--tau", type=float, help="Imaginary time tau")
    common.add_argument("--t1", type=float, help="Exactly simulated time before extension")
    common.add_argument("--eps", type=float, help="Accuracy target (default 1e-3)")
    common.add_argument("--delta", type=float, help="Failure probability (default 0.05)")
    common.add_argument("--order", type=int, help="Truncation order K (default auto)")
    common.add_argument("--segments", type=int, help="Segment count r (default auto)")
    common.add_argument("--shots", type=int, help="Shots or snapshots (default auto)")
    common.add_argument("--seed", type=int, help="Random seed (default 0)")
    common.add_argument("--mode", choices=CLI_MODES, help="Expansion mode (default concat)")
    common.add_argument("--backend", choices=reference_backend.BACKENDS, help="Estimator (default exact)")
    common.add_argument("--normalization", choices=("state", "partition"), help="imag-energy denominator")
    common.add_argument("--workers", type=int, help="Sampling worker threads (default 1)")
    common.add_argument("--norm-bound", dest="norm_bound", type=float, help="Certified bound on ||H||")
    common.add_argument("--output", help="Write the JSON report here")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="Warnings and errors only")

    parser = argparse.ArgumentParser(
        prog="pauli-taylor",
        description="Heisenberg-picture Taylor expansions estimated from Pauli measurements",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "expand": "Expand O(t) (or the propagator) into a Pauli sum",
        "bounds": "A-priori truncation, term-count and shot bounds",
        "estimate": "Estimate tr(O(t) rho) from a state or recorded shadows",
        "loschmidt": "Estimate tr(rho e^{-iHt})",
        "verify": "Residual of a guess Hamiltonian against the system",
        "imag-energy": "Energy after imaginary-time evolution",
        "trace-z": "Partition function tr(e^{-2 tau H})",
        "extend": "Exact evolution to t1, classical extension by --time",
    }
    for name in SUBCOMMANDS:
        subparsers.add_parser(name, parents=[common], help=helps[name])
    return parser


def _env_int(name: str) -> Optional[int]:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise ValueError(f"Environment variable {name} must be an integer, got {raw!r}") from exc


def _load_config_file(path: str) -> Dict[str, Any]:
    with open(path, "r") as f:
        values = json.load(f)
    if not isinstance(values, dict):
        raise ValueError(f"{path}: config file must hold a JSON object")
    known = {item.name for item in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config fields {', '.join(unknown)}")
    return values


def _check_required(cfg: RunConfig) -> None:
    missing = []
    for requirement in REQUIRED_FIELDS[cfg.subcommand]:
        options = requirement if isinstance(requirement, tuple) else (requirement,)
        if all(getattr(cfg, name) is None for name in options):
            missing.append(" or ".join(f"--{name.replace('_', '-')}" for name in options))
    if missing:
        raise ValueError(f"'{cfg.subcommand}' needs {', '.join(missing)}")
    if cfg.time is not None and cfg.tau is not None and cfg.subcommand not in ("imag-energy", "trace-z"):
        raise ValueError("Give either --time or --tau, not both")
    if cfg.mode != "propagator-only" and cfg.subcommand == "expand" and cfg.observable is None:
        raise ValueError(f"'expand' in mode {cfg.mode!r} needs --observable")
    if cfg.mode == "propagator-only" and cfg.subcommand not in ("expand", "bounds"):
        raise ValueError("Mode 'propagator-only' is only available for expand and bounds")


def resolve_config(args: argparse.Namespace, config_path: Optional[str] = None) -> RunConfig:
    """
    Merge the config file (if any) with command-line flags, apply environment
    overrides, validate, and resolve automatic K and r.

    Auto r = ceil(||H|| t); auto K is the smallest order meeting the budget of
    ``resolve_expansion_parameters``. Auto shots are resolved after expansion,
    from the exact coefficient norm.
    """
    values: Dict[str, Any] = {}
    config_path = config_path or getattr(args, "config", None)
    if config_path:
        values.update(_load_config_file(config_path))
    for item in fields(RunConfig):
        flag = getattr(args, item.name, None)
        if flag is not None:
            values[item.name] = flag
    values.pop("auto_resolved", None)
    env_terms = _env_int(ENV_MAX_TERMS)
    env_order = _env_int(ENV_MAX_ORDER)
    if env_terms is not None and "max_terms" not in values:
        values["max_terms"] = env_terms
    if env_order is not None and "max_order" not in values:
        values["max_order"] = env_order

    cfg = RunConfig(**values)
    if cfg.subcommand not in SUBCOMMANDS:
        raise ValueError(f"Unknown subcommand {cfg.subcommand!r}")
    if cfg.mode not in CLI_MODES:
        raise ValueError(f"Unknown mode {cfg.mode!r}; expected one of {CLI_MODES}")
    _check_required(cfg)
    # Validates eps, delta, backend and normalization.
    cfg.workflow_config()
    for name in ("time", "tau", "t1"):
        value = getattr(cfg, name)
        if value is not None and value < 0:
            raise ValueError(f"--{name} must be non-negative, got {value}")
    if cfg.order is not None and cfg.order < 0:
        raise ValueError(f"--order must be non-negative, got {cfg.order}")
    if cfg.segments is not None and cfg.segments < 1:
        raise ValueError(f"--segments must be at least 1, got {cfg.segments}")
    if cfg.shots is not None and cfg.shots < 1:
        raise ValueError(f"--shots must be at least 1, got {cfg.shots}")
    if cfg.workers < 1:
        raise ValueError(f"--workers must be at least 1, got {cfg.workers}")

    _resolve_orders(cfg)
    logger.info(f"Resolved {cfg.subcommand}: K={cfg.order}, r={cfg.segments}, auto={cfg.auto_resolved}")
    return cfg


def _resolve_orders(cfg: RunConfig) -> None:
    h = load_hamiltonian(cfg.guess if cfg.subcommand == "verify" else cfg.hamiltonian)
    norm_h = h.lam if cfg.norm_bound is None else cfg.norm_bound
    if cfg.order is None:
        cfg.auto_resolved.append("order")
    if cfg.segments is None and cfg.subcommand not in ("imag-energy", "trace-z", "loschmidt"):
        cfg.auto_resolved.append("segments")
    if cfg.shots is None and cfg.backend != "exact":
        cfg.auto_resolved.append("shots")

    if cfg.subcommand == "imag-energy":
        cfg.segments = 1
        if cfg.order is None:
            cfg.order = resolve_order(2 * norm_h * cfg.tau, cfg.eps, True, cfg.max_order)
        return
    if cfg.subcommand == "trace-z":
        cfg.segments = 1
        if cfg.order is None:
            cfg.order = resolve_order(2 * norm_h * cfg.tau, cfg.eps / 2**h.n_qubits, True, cfg.max_order)
        return
    t = cfg.evolution_time
    if cfg.subcommand == "loschmidt":
        cfg.segments = 1
        if cfg.order is None:
            cfg.order = resolve_order(norm_h * t.value, cfg.eps, t.is_imaginary, cfg.max_order)
        return
    norm_o = 1.0
    needs_norm = cfg.mode in ("direct", "commutator") or (t.is_imaginary and cfg.mode == "concat")
    if cfg.observable is not None and needs_norm:
        norm_o = load_observable(cfg.observable).norm_bound
    cfg.order, cfg.segments = resolve_expansion_parameters(
        norm_h, t, cfg.eps, cfg.mode, norm_o, cfg.order, cfg.segments, cfg.max_order
    )


# --- Execution ---
def _load_state(cfg: RunConfig) -> DenseState:
    return DenseState.from_state_spec(parse_state(cfg.state))


def _load_observable(cfg: RunConfig) -> ObservableSpec:
    return load_observable(cfg.observable)


def _terms_listing(s: PauliSum) -> Optional[Dict[str, List[float]]]:
    if len(s) > REPORT_TERM_LIMIT:
        return None
    return {string.to_label(): [coeff.real, coeff.imag] for string, coeff in s.items()}


def _run_expand(cfg: RunConfig, report: RunReport) -> None:
    h = load_hamiltonian(cfg.hamiltonian)
    t = cfg.evolution_time
    if cfg.mode == "propagator-only":
        result = heisenberg_taylor_concat(
            h,
            PauliSum.identity(h.n_qubits),
            t,
            cfg.order,
            cfg.segments,
            mode="propagator-only",
            max_terms=cfg.max_terms,
        )
        bound = compute_bound_report(
            "propagator-only",
            h.lam,
            t.value,
            cfg.order,
            cfg.segments,
            cfg.eps,
            cfg.delta,
            1.0,
            h.L,
            result.stats.m_tot,
            result.stats.gamma_l1,
            result.stats.w_max,
            norm_h=cfg.norm_bound,
            imaginary=t.is_imaginary,
        )
    else:
        result, bound = expand_observable(h, _load_observable(cfg), t, cfg.workflow_config())
    report.expansion = result.stats.to_dict()
    report.bounds = bound.to_dict()
    report.extra["terms"] = _terms_listing(result.sum)


def _run_bounds(cfg: RunConfig, report: RunReport) -> None:
    """A-priori bounds from the model alone: worst-case term counts and coefficient norms."""
    h = load_hamiltonian(cfg.hamiltonian)
    t = cfg.evolution_time
    conjugated = cfg.mode != "propagator-only"
    obs = _load_observable(cfg) if cfg.observable is not None else None
    norm_o = obs.norm_bound if obs is not None else 1.0
    observable_terms = len(obs.observable) if obs is not None else 1
    observable_l1 = obs.observable.coefficient_l1() if obs is not None else 1.0
    observable_weight = obs.w_O if obs is not None else 0
    m_bound = term_count_bound(h.L, cfg.order, cfg.segments, conjugated, observable_terms if conjugated else 1)
    gamma_bound = gamma_l1_bound(
        h.lam, t.value, cfg.order, cfg.segments, observable_l1 if conjugated else 1.0, conjugated
    )
    sides = 2 if conjugated else 1
    w_bound = min(h.n_qubits, observable_weight + sides * cfg.order * cfg.segments * h.w)
    bound = compute_bound_report(
        cfg.mode,
        h.lam,
        t.value,
        cfg.order,
        cfg.segments,
        cfg.eps,
        cfg.delta,
        norm_o,
        h.L,
        m_bound,
        gamma_bound,
        w_bound,
        norm_h=cfg.norm_bound,
        observable_terms=observable_terms,
        observable_l1=observable_l1,
        imaginary=t.is_imaginary,
    )
    report.bounds = bound.to_dict()
    report.extra["a_priori"] = True


def _run_estimate(cfg: RunConfig, report: RunReport) -> None:
    h = load_hamiltonian(cfg.hamiltonian)
    obs = _load_observable(cfg)
    t = cfg.evolution_time
    wcfg = cfg.workflow_config()
    result, bound = expand_observable(h, obs, t, wcfg)
    report.expansion = result.stats.to_dict()
    report.bounds = bound.to_dict()
    if cfg.shadows is not None:
        estimate = shadow_estimate_sum(read_shadows_jsonl(cfg.shadows), result.sum, cfg.delta)
        estimate.seed = cfg.seed
    else:
        state = _load_state(cfg)
        estimate = reference_backend.estimate_with_backend(result.sum, state, wcfg)
        if not t.is_imaginary:
            report.extra["exact"] = exact_expectation(obs.observable, exact_evolve(h, state, t)).real
    estimate.systematic_bound = bound.total_systematic
    report.estimate = estimate.to_dict()


def _run_loschmidt(cfg: RunConfig, report: RunReport) -> None:
    h = load_hamiltonian(cfg.hamiltonian)
    t = cfg.evolution_time
    if cfg.shadows is not None:
        estimate = loschmidt_estimate(h, t, cfg.order, read_shadows_jsonl(cfg.shadows), delta=cfg.delta)
        estimate.seed = cfg.seed
    else:
        state = _load_state(cfg)
        src: MeasurementSource = ExactSimulatorSource(state)
        method = {"exact": "exact", "importance": "importance", "shadows": "shadow"}[cfg.backend]
        shots = 0
        if method != "exact":
            shots = resolve_shots(expand_propagator(h, t, cfg.order, cfg.max_terms), cfg.workflow_config())
        estimate = loschmidt_estimate(
            h, t, cfg.order, src, method, shots, cfg.seed, cfg.delta, cfg.workers
        )
        report.extra["exact"] = exact_loschmidt(h, state, t)
    report.estimate = estimate.to_dict()


def _run_verify(cfg: RunConfig, report: RunReport) -> None:
    estimate = verify_hamiltonian_residual(
        load_hamiltonian(cfg.hamiltonian),
        load_hamiltonian(cfg.guess),
        _load_observable(cfg),
        TimeParameter.real(cfg.time),
        _load_state(cfg),
        cfg.workflow_config(),
    )
    report.expansion = estimate.details.pop("expansion", None)
    report.bounds = estimate.details.pop("bounds", None)
    radius = estimate.confidence_radius + estimate.systematic_bound
    report.extra["consistent"] = abs(estimate.estimate) <= radius
    report.estimate = estimate.to_dict()


def _run_imag_energy(cfg: RunConfig, report: RunReport) -> None:
    h = load_hamiltonian(cfg.hamiltonian)
    state = _load_state(cfg)
    estimate = imaginary_time_energy(h, state, cfg.tau, cfg.order, cfg.workflow_config())
    evolved = exact_evolve(h, state, TimeParameter.imaginary(cfg.tau))
    report.extra["exact"] = exact_expectation(h.to_pauli_sum(), evolved).real
    report.estimate = estimate.to_dict()


def _run_trace_z(cfg: RunConfig, report: RunReport) -> None:
    estimate = partition_trace(load_hamiltonian(cfg.hamiltonian), cfg.tau, cfg.order)
    report.estimate = estimate.to_dict()


def _run_extend(cfg: RunConfig, report: RunReport) -> None:
    estimate = hybrid_time_extension(
        load_hamiltonian(cfg.hamiltonian),
        _load_observable(cfg),
        _load_state(cfg),
        cfg.t1,
        cfg.time,
        cfg.workflow_config(),
    )
    report.expansion = estimate.details.pop("expansion", None)
    report.bounds = estimate.details.pop("bounds", None)
    report.extra["exact"] = estimate.details.pop("exact", None)
    report.estimate = estimate.to_dict()


_RUNNERS = {
    "expand": _run_expand,
    "bounds": _run_bounds,
    "estimate": _run_estimate,
    "loschmidt": _run_loschmidt,
    "verify": _run_verify,
    "imag-energy": _run_imag_energy,
    "trace-z": _run_trace_z,
    "extend": _run_extend,
}


def execute(cfg: RunConfig) -> RunReport:
    """Run the selected workflow and assemble its report."""
    report = RunReport(subcommand=cfg.subcommand, config=cfg.to_dict())
    started = time.perf_counter()
    _RUNNERS[cfg.subcommand](cfg, report)
    report.wall_time_s = time.perf_counter() - started
    logger.info(f"{cfg.subcommand} finished in {report.wall_time_s:.3f} s")
    return report


def write_report(report: RunReport, output: Optional[str]) -> None:
    text = report.to_json()
    if output is None:
        sys.stdout.write(text + "\n")
        return
    with open(output, "w") as f:
        f.write(text + "\n")
    logger.info(f"Report written to {output}")
    sys.stdout.write(summarize(report) + "\n")


def summarize(report: RunReport) -> str:
    lines = [f"{report.subcommand}: done in {report.wall_time_s:.3f} s"]
    if report.expansion:
        lines.append(
            f"  m_tot={report.expansion['m_tot']}  gamma_l1={report.expansion['gamma_l1']:.6g}"
            f"  w_max={report.expansion['w_max']}"
        )
    if report.bounds:
        lines.append(f"  systematic bound {report.bounds['total_systematic']:.3g}")
    if report.estimate:
        value = report.estimate["estimate"]
        lines.append(
            f"  estimate {value['real']:.6g}{value['imag']:+.6g}i"
            f" +/- {report.estimate['confidence_radius']:.3g} ({report.estimate['method']})"
        )
    return "\n".join(lines)


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
    )
    logging.getLogger().setLevel(level)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args)
    try:
        reference_backend.configure_caps(qubit_cap=_env_int(ENV_QUBIT_CAP))
        cfg = resolve_config(args)
        report = execute(cfg)
        write_report(report, cfg.output)
    except (TermCountExceededError, TruncationOrderError) as exc:
        _handle_exception(exc, "Expansion guard aborted the run")
        return EXIT_GUARD_ABORT
    except StatisticalRefusalError as exc:
        _handle_exception(exc, "Refusing to report a ratio")
        return EXIT_STATISTICAL_REFUSAL
    except (ValueError, OSError, KeyError) as exc:
        _handle_exception(exc, "Invalid input")
        return EXIT_INPUT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
