"""
Command-line entry point: analyze / simulate / verify reaction networks.

    python cli.py analyze networks/four_components.crn
    python cli.py simulate two_species.crn --t-end 10 --out trace.csv
    python cli.py verify two_species.crn

Network files are looked up as given, then under CRN_EXAMPLES_DIR.
Exit codes: 0 success (verify: every applicable check passed), 1 domain
error or failed verification, 2 usage error (including a missing file).
"""
import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from dotenv import load_dotenv

from entropy import (
    DecayReport,
    EntropyTrace,
    dissipation_identity_residuals,
    eed_bound_terms,
    entropy_monotone,
    fit_decay_rate,
    verify_eed,
)
from equilibria import component_equilibria, equilibrium_cramer, injected_mass, limit_state, time_integrals
from errors import CRNError, InsufficientDecay
from graph import (
    ComponentKind,
    balance_report,
    ensure_connected,
    eigenvalues_in_disk,
    gershgorin_bound,
    is_weakly_reversible,
    matrix_rank,
    strongly_connected_components,
)
from netparse import ReactionNetwork, build_reaction_matrix, parse_network
from sim import SimulationState, SolverConfig, initial_averages, simulate

__version__ = "0.1.0"

# Load environment variables
load_dotenv()

CRN_EXAMPLES_DIR = os.getenv("CRN_EXAMPLES_DIR", "./networks")

# Configure logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO").upper()
logging.basicConfig(level=getattr(logging, LOG_LEVEL))
logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
NONNEG_TOL = -1e-12
IDENTITY_TOL = 0.05
DEGENERATE_DECAY = 1e-8
SOURCE_L2_TOL = 1e-6
TARGET_STATE_TOL = 1e-5
INJECTED_TOL = 1e-6
ENTROPY_AT_LIMIT = 1e-20
L2_AT_LIMIT = 1e-10


@dataclass
class RunManifest:
    """Provenance record written next to every --out file."""

    command: str
    input_path: str
    input_sha256: str
    network_sha256: str
    config: Dict[str, Any]
    version: str
    content_sha256: str
    timestamp: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def write(self, out_path: Path) -> Path:
        target = Path(f"{out_path}.manifest.json")
        target.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return target


def resolve_network_path(raw: str) -> Optional[Path]:
    """Find a network file as given or inside CRN_EXAMPLES_DIR."""
    candidates = [Path(raw), Path(CRN_EXAMPLES_DIR) / raw, Path(CRN_EXAMPLES_DIR) / Path(raw).name]
    for candidate in candidates:
        if candidate.is_file():
            return candidate
    return None


def load_network(path: Path) -> ReactionNetwork:
    net = parse_network(path.read_text(encoding="utf-8"))
    ensure_connected(net)
    logger.info(f"Parsed {path.name}: {net.n_species} species, {len(net.rates)} reactions")
    return net


def analyze_network(net: ReactionNetwork) -> Dict[str, Any]:
    """Structure, balance, equilibria and spectral bounds of a network."""
    A = build_reaction_matrix(net)
    A.validate()
    dec = strongly_connected_components(net)
    averages = initial_averages(net)
    weakly_reversible = is_weakly_reversible(dec, net)
    equilibrium = equilibrium_cramer(A, float(averages.sum())) if weakly_reversible else None
    balance = balance_report(net, A, dec, equilibrium)
    center, radius = gershgorin_bound(A)
    logger.info(f"Found {dec.n_components} components, weakly reversible: {weakly_reversible}")

    report: Dict[str, Any] = {
        "network_sha256": net.fingerprint(),
        "species": list(net.species),
        "components": [
            {"index": c, "species": [net.species[s] for s in members], "kind": dec.kinds[c].value}
            for c, members in enumerate(dec.components)
        ],
        "condensation_edges": sorted([list(e) for e in dec.condensation_edges]),
        "cumulative": list(dec.cumulative),
        "permutation": [net.species[s] for s in dec.permutation],
        "balance": {
            "weakly_reversible": balance.weakly_reversible,
            "indecomposable_graph": balance.indecomposable_graph,
            "indecomposable_algebraic": balance.indecomposable_algebraic,
            "detailed_balanced": balance.detailed_balanced,
            "complex_balanced": balance.complex_balanced,
        },
        "minors_diag": list(balance.minors_diag),
        "gershgorin": {"center": center, "radius": radius, "eigenvalues_inside": eigenvalues_in_disk(A)},
        "rank": matrix_rank(A),
        "total_mass": float(averages.sum()),
        "equilibria": [None if s is None else s.as_dict() for s in component_equilibria(net, A, dec, averages)],
    }
    if not weakly_reversible:
        integrals = time_integrals(A, dec, averages)
        report["time_integrals"] = {net.species[s]: v for s, v in integrals.as_dict().items()}
        report["injected_mass"] = {str(c): m for c, m in injected_mass(net, dec, averages, A).items()}
        report["condition_estimate"] = integrals.condition
    elif all(d > 0 for d in net.diffusions):
        report["eed_bound"] = eed_bound_terms(net, equilibrium).as_dict()
    return report


def build_config(args: argparse.Namespace) -> SolverConfig:
    defaults = SolverConfig()
    return SolverConfig(
        dt=args.dt if args.dt is not None else defaults.dt,
        t_end=args.t_end if args.t_end is not None else defaults.t_end,
        sample_every=args.sample_every if args.sample_every is not None else defaults.sample_every,
        grid_cells=args.grid,
    )


def _check(name: str, passed: bool, **values: Any) -> Dict[str, Any]:
    entry = {"check": name, "passed": bool(passed)}
    entry.update(values)
    return entry


def _decay_check(
    trace: EntropyTrace,
    name: str,
    column: str,
    at_limit: float,
    lambda_lb: Optional[float] = None,
) -> Tuple[Dict[str, Any], Optional[DecayReport]]:
    """Fit a decay rate, or pass when the column never leaves the floor."""
    peak = float(np.nanmax(trace.column(column)))
    if peak <= at_limit:
        return _check(name, True, lambda_fit=None, at_limit=True, peak=peak), None
    try:
        report = fit_decay_rate(trace, column=column, lambda_lower_bound=lambda_lb)
    except InsufficientDecay as e:
        logger.warning(f"Decay fit for '{column}' failed: {e.message}")
        return _check(name, False, lambda_fit=None, error=e.message), None
    return _check(name, report.lambda_fit > 0, lambda_fit=report.lambda_fit), report


def run_checks(net: ReactionNetwork, config: SolverConfig) -> Dict[str, Any]:
    """Simulate and run every check that applies to the network."""
    A = build_reaction_matrix(net)
    dec = strongly_connected_components(net)
    weakly_reversible = is_weakly_reversible(dec, net)
    all_diffusive = all(d > 0 for d in net.diffusions)

    final: List[SimulationState] = []

    def keep_last(state: SimulationState) -> None:
        final[:] = [state]

    trace = simulate(net, config, on_sample=keep_last)
    grid_cells = trace.metadata["grid_cells"]
    mass = trace.column("mass")
    scale = max(1.0, float(mass[0]))
    checks = [
        _check("mass_conservation", np.abs(mass - mass[0]).max() <= MASS_TOL * mass[0],
               max_drift=float(np.abs(mass - mass[0]).max())),
        _check("nonnegativity", trace.column("min_u").min() >= NONNEG_TOL, min_u=float(trace.column("min_u").min())),
    ]
    verdict: Dict[str, Any] = {"weakly_reversible": weakly_reversible}

    if weakly_reversible:
        E = trace.column("E")
        lambda_lb = None
        if all_diffusive:
            lambda_lb = eed_bound_terms(net, np.asarray(trace.metadata["limit"]), grid_cells).value
        report = None
        if float(np.nanmax(E)) <= ENTROPY_AT_LIMIT * scale:
            checks.append(_check("entropy_at_limit", True, max_entropy=float(np.nanmax(E))))
        else:
            checks.append(_check("entropy_monotone", entropy_monotone(trace)))
            if lambda_lb is not None:
                residuals = dissipation_identity_residuals(trace)
                worst = float(residuals.max()) if residuals.size else 0.0
                checks.append(_check("dissipation_identity", worst <= IDENTITY_TOL, max_relative_residual=worst))
                eed = verify_eed(trace, lambda_lb)
                checks.append(_check("eed_inequality", bool(eed), first_violation=eed.first_violation))
            entry, report = _decay_check(trace, "positive_decay", "E", ENTROPY_AT_LIMIT * scale, lambda_lb)
            checks.append(entry)
            if lambda_lb is not None:
                if report is not None:
                    checks.append(_check("bound_below_fit", report.bound_consistent))
            else:
                checks.append(
                    _check("degenerate_decay", E[-1] < DEGENERATE_DECAY * E[0], final_ratio=float(E[-1] / E[0]))
                )
        verdict["lambda_lb"] = lambda_lb
        verdict["lambda_fit"] = report.lambda_fit if report is not None else None
        verdict["decay"] = report.as_dict() if report is not None else None
    else:
        rates: Dict[str, Optional[float]] = {}
        for c, kind in enumerate(dec.kinds):
            for s in dec.components[c]:
                name = net.species[s]
                column = f"l2_dist_{name}"
                entry, _ = _decay_check(trace, f"decay_{name}", column, L2_AT_LIMIT * scale)
                rates[name] = entry["lambda_fit"]
                checks.append(entry)
                if kind != ComponentKind.TARGET:
                    final_l2 = float(trace.column(column)[-1])
                    checks.append(_check(f"vanishes_{name}", final_l2 < SOURCE_L2_TOL, final_l2=final_l2))

        averages0 = np.array([trace.column(f"avg_{name}")[0] for name in net.species])
        limit = limit_state(net, dec, averages0, A)
        deviation = np.abs(final[0].fields - limit[:, None]).max(axis=1)
        for c in dec.indices_of((ComponentKind.TARGET,)):
            worst = float(deviation[list(dec.components[c])].max())
            checks.append(_check(f"target_state_c{c}", worst <= TARGET_STATE_TOL, max_deviation=worst))

        exact = injected_mass(net, dec, averages0, A)
        quadrature = trace.metadata["time_integrals"]
        tail = trace.metadata["time_integral_tail"]
        a = np.asarray(A)
        for c, mass_in in exact.items():
            members = list(dec.components[c])
            quad = float(sum(a[k, s] * v for k in members for s, v in quadrature.items()))
            feed = float(sum(a[k, s] for k in members for s in quadrature))
            gap = abs(quad - mass_in)
            checks.append(
                _check(f"injected_mass_c{c}", gap <= INJECTED_TOL + feed * tail,
                       exact=mass_in, quadrature=quad, tail=tail)
            )
        verdict["decay_rates"] = rates

    verdict["checks"] = checks
    verdict["passed"] = all(entry["passed"] for entry in checks)
    logger.info(f"Verification {'passed' if verdict['passed'] else 'FAILED'} ({len(checks)} checks)")
    return verdict


def _json_safe(value: Any) -> Any:
    """Replace NaN and infinities with None so the output stays strict JSON."""
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if np.isfinite(value) else None
    return value


def _dump(payload: Any, compact: bool) -> str:
    payload = _json_safe(payload)
    if compact:
        return json.dumps(payload, sort_keys=True, separators=(",", ":"), allow_nan=False) + "\n"
    return json.dumps(payload, sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, args: argparse.Namespace, path: Path, net: ReactionNetwork, config: Dict[str, Any]) -> None:
    if not args.out:
        sys.stdout.write(text)
        return
    out = Path(args.out)
    data = text.encode("utf-8")
    out.write_bytes(data)
    manifest = RunManifest(
        command=args.command,
        input_path=str(path),
        input_sha256=hashlib.sha256(path.read_bytes()).hexdigest(),
        network_sha256=net.fingerprint(),
        config=config,
        version=__version__,
        content_sha256=hashlib.sha256(data).hexdigest(),
    )
    manifest.write(out)
    logger.info(f"Wrote {out} and its manifest")


def cmd_analyze(path: Path, args: argparse.Namespace) -> int:
    net = load_network(path)
    report = analyze_network(net)
    _emit(_dump(report, args.json), args, path, net, {})
    return 0


def cmd_simulate(path: Path, args: argparse.Namespace) -> int:
    net = load_network(path)
    config = build_config(args)
    trace = simulate(net, config)
    if args.json:
        last = trace.frame.iloc[-1]
        summary = {
            "t": float(last["t"]),
            "E": float(last["E"]),
            "D": float(last["D"]),
            "mass": float(last["mass"]),
            "samples": len(trace),
            "metadata": trace.metadata,
        }
        text = _dump(summary, compact=False)
    else:
        text = trace.to_csv()
    _emit(text, args, path, net, config.as_dict())
    return 0


def cmd_verify(path: Path, args: argparse.Namespace) -> int:
    net = load_network(path)
    config = build_config(args)
    verdict = run_checks(net, config)
    verdict["network_sha256"] = net.fingerprint()
    _emit(_dump(verdict, args.json), args, path, net, config.as_dict())
    return 0 if verdict["passed"] else 1


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="First-order reaction network analyzer and entropy-decay verifier")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "Structure, balance and equilibria report (JSON)"),
        ("simulate", "Run the reaction-diffusion simulation and write the trace (CSV)"),
        ("verify", "Simulate and check conservation, entropy decay and rate bounds (JSON verdict)"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("network", help="Network file (.crn), looked up in CRN_EXAMPLES_DIR if not found")
        cmd.add_argument("--out", help="Write output to this file (plus <out>.manifest.json)")
        cmd.add_argument("--json", action="store_true", help="Compact JSON (simulate: JSON summary instead of CSV)")
        if name != "analyze":
            cmd.add_argument("--dt", type=float, help="Time step")
            cmd.add_argument("--t-end", type=float, help="Final time")
            cmd.add_argument("--grid", type=int, help="Number of grid cells (overrides the file)")
            cmd.add_argument("--sample-every", type=int, help="Trace sampling stride in steps")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    path = resolve_network_path(args.network)
    if path is None:
        parser.error(f"network file not found: {args.network}")
    try:
        return COMMANDS[args.command](path, args)
    except CRNError as e:
        logger.error(f"{e.code}: {e.message}")
        sys.stderr.write(json.dumps(_json_safe(e.as_dict()), sort_keys=True, default=str) + "\n")
        return 1
    except ValueError as e:
        parser.error(str(e))


if __name__ == "__main__":
    sys.exit(main())
