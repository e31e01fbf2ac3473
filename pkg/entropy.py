"""
Relative entropy, its dissipation and the entropy-entropy dissipation bound.

All spatial integrals are midpoint sums over the cell-centered grid; the
gradient term uses the n-1 interior faces with (u[k+1] - u[k]) / dx and
quadrature weight dx, which makes the semi-discrete identity dE/dt = -D
exact for the finite-volume Laplacian.
"""
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from errors import DegenerateDiffusion, DisconnectedNetwork, InsufficientDecay, WrongComponentKind
from graph import ComponentDecomposition, ComponentKind, ensure_connected
from netparse import ReactionMatrix, ReactionNetwork, build_reaction_matrix

if TYPE_CHECKING:
    from sim import SimulationState

logger = logging.getLogger(__name__)

FIT_WINDOW_START = 0.2
MIN_FIT_SAMPLES = 10
EED_SLACK = 1e-9
IDENTITY_FLOOR = 1e-8
BUDGET_SPLITS = ("equal", "halved")


@dataclass
class EntropyTrace:
    """Sampled time series of a simulation plus run metadata.

    The frame holds t, E, D, mass, l2_dist_<species>, mass_c<k> and the
    auxiliary columns min_u and avg_<species>.
    """

    frame: pd.DataFrame
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def times(self) -> np.ndarray:
        return self.frame["t"].to_numpy()

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    def csv_columns(self) -> List[str]:
        cols = ["t", "E", "D", "mass"]
        cols += [c for c in self.frame.columns if c.startswith("l2_dist_")]
        cols += [c for c in self.frame.columns if c.startswith("mass_c")]
        return cols

    def to_csv(self, path_or_buf=None) -> Optional[str]:
        return self.frame[self.csv_columns()].to_csv(
            path_or_buf, index=False, float_format="%.17g", na_rep="nan", lineterminator="\n"
        )


@dataclass
class DecayReport:
    lambda_fit: float
    lambda_lower_bound: Optional[float]
    fit_window: Tuple[float, float]
    fit_residual: float
    column: str = "E"
    n_points: int = 0

    @property
    def bound_consistent(self) -> bool:
        if self.lambda_lower_bound is None:
            return True
        return self.lambda_lower_bound <= self.lambda_fit * 1.05

    def as_dict(self) -> Dict[str, Any]:
        return {
            "lambda_fit": self.lambda_fit,
            "lambda_lower_bound": self.lambda_lower_bound,
            "fit_window": list(self.fit_window),
            "fit_residual": self.fit_residual,
            "column": self.column,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class EEDBound:
    """Pieces of the constructive lower bound lambda = min(lambda_diff, lambda_react)."""

    lambda_diff: float
    lambda_react: float
    poincare: float
    xi: float
    zero_mass_factor: float
    completed_pairs: Tuple[Tuple[int, int, Tuple[int, ...]], ...] = ()

    @property
    def value(self) -> float:
        return min(self.lambda_diff, self.lambda_react)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "lambda": self.value,
            "lambda_diff": self.lambda_diff,
            "lambda_react": None if np.isinf(self.lambda_react) else self.lambda_react,
            "poincare": self.poincare,
            "xi": None if np.isinf(self.xi) else self.xi,
            "zero_mass_factor": self.zero_mass_factor,
            "completed_pairs": [[i, j, list(path)] for i, j, path in self.completed_pairs],
        }


@dataclass(frozen=True)
class EEDVerdict:
    ok: bool
    lambda_lb: float
    first_violation: Optional[Dict[str, float]] = None
    min_margin: float = 0.0

    def __bool__(self) -> bool:
        return self.ok


def _values(x) -> np.ndarray:
    return np.asarray(getattr(x, "values", x), dtype=float)


def relative_entropy(state: "SimulationState", x_inf) -> float:
    x = _values(x_inf)
    diff = state.fields - x[:, None]
    return float(((diff**2) / x[:, None]).sum() * state.grid.dx)


def split_entropy(state: "SimulationState", x_inf) -> Tuple[float, float]:
    """(E(W - avg W), E(avg W)) for W = X - X_inf; the two add up to E."""
    x = _values(x_inf)
    averages = state.averages()
    fluctuation = state.fields - averages[:, None]
    e_fluct = float(((fluctuation**2) / x[:, None]).sum() * state.grid.dx)
    e_mean = float((((averages - x) ** 2) / x).sum())
    return e_fluct, e_mean


def _gradient_energy(fields: np.ndarray, dx: float) -> np.ndarray:
    """Per-species sum over interior faces of ((u[k+1]-u[k])/dx)^2 dx."""
    if fields.shape[1] < 2:
        return np.zeros(fields.shape[0])
    grad = np.diff(fields, axis=1) / dx
    return (grad**2).sum(axis=1) * dx


def pair_coefficients(A: ReactionMatrix, x: np.ndarray) -> np.ndarray:
    """c_ij = a_ij x_j + a_ji x_i, symmetric with zero diagonal."""
    a = np.asarray(A)
    flux = a * x[None, :]
    c = flux + flux.T
    np.fill_diagonal(c, 0.0)
    return c


def _reaction_dissipation(fields: np.ndarray, A: ReactionMatrix, x: np.ndarray, dx: float) -> float:
    c = pair_coefficients(A, x)
    z = fields / x[:, None]
    total = 0.0
    for i, j in zip(*np.nonzero(np.triu(c))):
        total += c[i, j] * float(((z[i] - z[j]) ** 2).sum()) * dx
    return total


def entropy_dissipation(state: "SimulationState", x_inf, net: ReactionNetwork) -> float:
    x = _values(x_inf)
    d = np.asarray(net.diffusions, dtype=float)
    diffusion = 2.0 * float((d * _gradient_energy(state.fields, state.grid.dx) / x).sum())
    reaction = _reaction_dissipation(state.fields, build_reaction_matrix(net), x, state.grid.dx)
    return diffusion + reaction


def out_flow_rates(A: ReactionMatrix, dec: ComponentDecomposition, index: int) -> np.ndarray:
    """f_k = total rate out of member k into species of other components."""
    members = list(dec.components[index])
    outside = [s for s in range(A.n) if s not in set(members)]
    a = np.asarray(A)
    if not outside:
        return np.zeros(len(members))
    return a[np.ix_(outside, members)].sum(axis=0)


def _non_target(dec: ComponentDecomposition, index: int) -> List[int]:
    if dec.kinds[index] == ComponentKind.TARGET:
        raise WrongComponentKind(
            f"component {index} is a target; component functionals apply to source and transmission components",
            component=index,
        )
    return list(dec.components[index])


def component_entropy(state: "SimulationState", dec: ComponentDecomposition, index: int, x_art) -> float:
    """sum_k int u_k^2 / v_k over the component, against its artificial equilibrium."""
    members = _non_target(dec, index)
    v = _values(x_art)
    u = state.fields[members]
    return float(((u**2) / v[:, None]).sum() * state.grid.dx)


def component_dissipation(
    state: "SimulationState",
    net: ReactionNetwork,
    dec: ComponentDecomposition,
    index: int,
    x_art,
) -> float:
    """-d/dt of component_entropy.

    Diffusion, within-component reaction and out-flow terms, minus twice the
    in-flow cross term (zero for source components).
    """
    members = _non_target(dec, index)
    A = build_reaction_matrix(net)
    v = _values(x_art)
    u = state.fields[members]
    dx = state.grid.dx
    d = np.asarray(net.diffusions, dtype=float)[members]

    diffusion = 2.0 * float((d * _gradient_energy(u, dx) / v).sum())
    reaction = _reaction_dissipation(u, A.closed_block(members), v, dx)
    f = out_flow_rates(A, dec, index)
    outflow = 2.0 * float((f * (u**2).sum(axis=1) * dx / v).sum())

    inflow = 0.0
    if dec.kinds[index] == ComponentKind.TRANSMISSION:
        a = np.asarray(A)
        upstream = [s for s in range(net.n_species) if s not in set(members)]
        feed = a[np.ix_(members, upstream)] @ state.fields[upstream]
        inflow = 2.0 * float(((u / v[:, None]) * feed).sum() * dx)
    return diffusion + reaction + outflow - inflow


def poincare_constant(n: int) -> float:
    """Smallest nonzero eigenvalue of the discrete Neumann -Laplacian on n cells."""
    if n < 2:
        return float("inf")
    diag = np.full(n, 2.0)
    diag[0] = diag[-1] = 1.0
    off = np.full(n - 1, -1.0)
    eig = scipy.linalg.eigvalsh_tridiagonal(diag, off, select="i", select_range=(1, 1))
    return float(eig[0] * n**2)


def _missing_pair_paths(c: np.ndarray) -> List[Tuple[int, int, Tuple[int, ...]]]:
    n = c.shape[0]
    support = csr_matrix((c > 0).astype(float))
    dist, pred = shortest_path(support, directed=False, unweighted=True, return_predecessors=True)
    completed = []
    for i in range(n):
        for j in range(i + 1, n):
            if c[i, j] > 0:
                continue
            if not np.isfinite(dist[i, j]):
                raise DisconnectedNetwork(f"species {i} and {j} are not linked by any reaction", pair=[i, j])
            path = [j]
            while path[-1] != i:
                path.append(int(pred[i, path[-1]]))
            completed.append((i, j, tuple(reversed(path))))
    return completed


def eed_bound_terms(
    net: ReactionNetwork, x_inf, grid_cells: Optional[int] = None, budget: str = "equal"
) -> EEDBound:
    """Assemble the constructive bound.

    lambda_diff = 2 C_P min d_i, from the discrete Poincare inequality on the
    fluctuation part E(W - avg W).

    lambda_react = xi * min x_i / max_{i<j} x_i x_j bounds the mean part
    E(avg W). With z = avg W / x and sum x_i z_i = 0,
    E(avg W) = (1/M) sum_{i<j} x_i x_j (z_i - z_j)^2
             <= (max x_i x_j / min x_i) sum_{i<j} (z_i - z_j)^2,
    using M >= min x_i. xi is the smallest coefficient after completing the
    missing pairs: a pair joined only by a path of r-1 edges with smallest
    edge coefficient sigma gets sigma / (r-1) by Cauchy-Schwarz.

    budget="equal" shares the dissipation equally among the K completed
    pairs, so each path term is sigma / (K (r-1)) and direct pairs keep
    their coefficients. budget="halved" reserves half for the direct pairs
    (c_min / 2) and splits the other half, sigma / (2K (r-1)).
    """
    if budget not in BUDGET_SPLITS:
        raise ValueError(f"budget must be one of {BUDGET_SPLITS}, got '{budget}'")
    x = _values(x_inf)
    d = np.asarray(net.diffusions, dtype=float)
    if (d <= 0).any():
        raise DegenerateDiffusion(
            "constructive bound needs every diffusion coefficient positive",
            zero_diffusion=[net.species[k] for k in np.flatnonzero(d <= 0)],
        )
    ensure_connected(net)
    n_cells = grid_cells or net.grid_cells
    c_p = poincare_constant(n_cells)
    lambda_diff = 2.0 * c_p * float(d.min())
    if net.n_species == 1:
        return EEDBound(lambda_diff, float("inf"), c_p, float("inf"), 1.0)

    c = pair_coefficients(build_reaction_matrix(net), x)
    direct = c[np.triu_indices_from(c, k=1)]
    c_min = float(direct[direct > 0].min())
    completed = _missing_pair_paths(c)
    if not completed:
        xi = c_min
    else:
        share = float(len(completed)) if budget == "equal" else 2.0 * len(completed)
        path_terms = []
        for _, _, path in completed:
            sigma = min(c[a, b] for a, b in zip(path[:-1], path[1:]))
            path_terms.append(sigma / (share * (len(path) - 1)))
        direct_term = c_min if budget == "equal" else c_min / 2.0
        xi = min(direct_term, min(path_terms))
    products = np.outer(x, x)[np.triu_indices(net.n_species, k=1)]
    zero_mass_factor = float(x.min() / products.max())
    lambda_react = xi * zero_mass_factor
    logger.debug(f"EED bound: lambda_diff={lambda_diff:.6g} lambda_react={lambda_react:.6g} K={len(completed)}")
    return EEDBound(lambda_diff, lambda_react, c_p, xi, zero_mass_factor, tuple(completed))


def eed_lambda_lower_bound(
    net: ReactionNetwork, x_inf, grid_cells: Optional[int] = None, budget: str = "equal"
) -> float:
    return eed_bound_terms(net, x_inf, grid_cells, budget).value


def fit_decay_rate(
    trace: EntropyTrace,
    floor: float = 1e-12,
    column: str = "E",
    lambda_lower_bound: Optional[float] = None,
) -> DecayReport:
    """Fit ln(column) ~ a - lambda t over [0.2 t_last, t_last].

    t_last is the last sample of the leading run where the column stays
    above floor times its largest value.

    Raises:
        InsufficientDecay: the column never falls below half its largest
            value, or fewer than 10 usable samples.
    """
    t = trace.times
    values = trace.column(column)
    reference = float(np.nanmax(values)) if len(values) else 0.0
    if not reference > 0:
        raise InsufficientDecay(f"column '{column}' is identically zero; nothing to fit", column=column)
    above = values > floor * reference
    last = len(values) if above.all() else int(np.argmin(above))
    if last < MIN_FIT_SAMPLES:
        raise InsufficientDecay(
            f"only {last} samples of '{column}' above the floor; need {MIN_FIT_SAMPLES}", column=column
        )
    if values[:last].min() >= 0.5 * reference:
        raise InsufficientDecay(
            f"'{column}' never drops below half of its largest value; run longer", column=column
        )
    t_last = t[last - 1]
    window = (t >= FIT_WINDOW_START * t_last) & (np.arange(len(t)) < last)
    if window.sum() < 2:
        raise InsufficientDecay(f"fit window for '{column}' holds fewer than two samples", column=column)
    tw = t[window]
    log_v = np.log(values[window])
    slope, intercept = np.polyfit(tw, log_v, 1)
    residual = float(np.abs(log_v - (slope * tw + intercept)).max())
    return DecayReport(
        lambda_fit=float(-slope),
        lambda_lower_bound=lambda_lower_bound,
        fit_window=(float(tw[0]), float(tw[-1])),
        fit_residual=residual,
        column=column,
        n_points=int(window.sum()),
    )


def verify_eed(trace: EntropyTrace, lambda_lb: float) -> EEDVerdict:
    """D >= lambda_lb E - 1e-9 E(0) at every sample."""
    E = trace.column("E")
    D = trace.column("D")
    margin = D - lambda_lb * E + EED_SLACK * E[0]
    bad = np.flatnonzero(margin < 0)
    first = None
    if bad.size:
        k = int(bad[0])
        first = {"index": k, "t": float(trace.times[k]), "E": float(E[k]), "D": float(D[k])}
        logger.info(f"EED violated at t={first['t']:.6g}: D={first['D']:.6g} < {lambda_lb:.6g} * E={first['E']:.6g}")
    return EEDVerdict(ok=first is None, lambda_lb=lambda_lb, first_violation=first, min_margin=float(margin.min()))


def entropy_monotone(trace: EntropyTrace, slack: float = EED_SLACK, column: str = "E") -> bool:
    values = trace.column(column)
    return bool((np.diff(values) <= slack * values[0]).all())


def dissipation_identity_residuals(trace: EntropyTrace, floor: float = IDENTITY_FLOOR) -> np.ndarray:
    """Relative mismatch of the central difference dE/dt against -D.

    Only interior samples with E > floor E(0) and D > 0 are compared.
    """
    t = trace.times
    E = trace.column("E")
    D = trace.column("D")
    if len(t) < 3:
        return np.zeros(0)
    rate = (E[2:] - E[:-2]) / (t[2:] - t[:-2])
    Em, Dm = E[1:-1], D[1:-1]
    keep = (Em > floor * E[0]) & (Dm > 0)
    return np.abs(rate[keep] + Dm[keep]) / Dm[keep]
