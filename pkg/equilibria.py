"""
Equilibria of first-order reaction networks.

Two independent routes to the positive equilibrium of an indecomposable
reaction matrix (diagonal minors / least squares on the augmented system),
the unit-mass artificial equilibria of source and transmission components,
and the equilibria of target components once the mass injected from
upstream has been accounted for.

The injected mass is exact: spatial averages obey dU/dt = A U (diffusion
integrates to zero under Neumann conditions), so the improper time
integral of the non-target averages is -inv(A_nt) U_nt(0).
"""
import logging
import os
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from dotenv import load_dotenv

from errors import NonPositiveEquilibrium, NotWeaklyReversible, SingularSubmatrix, WrongComponentKind
from graph import ComponentDecomposition, ComponentKind, diagonal_minors, is_indecomposable_algebraic
from netparse import ReactionMatrix, ReactionNetwork, build_reaction_matrix

load_dotenv()

logger = logging.getLogger(__name__)

CRN_COND_WARN = float(os.getenv("CRN_COND_WARN", "1e12"))
SINGULAR_COND = 1.0 / np.finfo(float).eps


class EquilibriumKind(str, Enum):
    TRUE_EQUILIBRIUM = "true_equilibrium"
    ARTIFICIAL_UNIT_MASS = "artificial_unit_mass"
    TARGET_WITH_INJECTION = "target_with_injection"


@dataclass(frozen=True, eq=False)
class EquilibriumState:
    """Positive state balancing a reaction block, with its mass constraint.

    ``species`` lists the (0-based) species the values belong to, in order.
    ``residual`` is ||A x||_inf / (||A||_inf ||x||_inf) for the block used.
    """

    values: np.ndarray
    mass: float
    kind: EquilibriumKind
    species: Tuple[int, ...] = ()
    residual: float = 0.0
    condition: Optional[float] = None

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if not self.species:
            object.__setattr__(self, "species", tuple(range(values.size)))

    def as_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind.value,
            "species": list(self.species),
            "values": [float(v) for v in self.values],
            "mass": float(self.mass),
            "residual": float(self.residual),
            "condition": None if self.condition is None else float(self.condition),
        }


@dataclass(frozen=True, eq=False)
class TimeIntegrals:
    """Integrals over [0, inf) of the averages of every non-target species."""

    species: Tuple[int, ...]
    integrals: np.ndarray
    condition: float

    def as_dict(self) -> Dict[int, float]:
        return {s: float(v) for s, v in zip(self.species, self.integrals)}


def relative_residual(A: ReactionMatrix, values: np.ndarray) -> float:
    a = np.asarray(A)
    scale = np.abs(a).sum(axis=1).max(initial=0.0) * np.abs(values).max(initial=0.0)
    if scale == 0:
        return 0.0
    return float(np.abs(a @ values).max() / scale)


def _check_mass(M: float) -> None:
    if not M > 0 or not np.isfinite(M):
        raise ValueError(f"total mass must be a positive finite number, got {M}")


def _require_indecomposable(A: ReactionMatrix) -> None:
    if not is_indecomposable_algebraic(A):
        raise NotWeaklyReversible(
            "reaction matrix is decomposable; the equilibrium system has no positive solution or infinitely many"
        )


def equilibrium_cramer(
    A: ReactionMatrix,
    M: float,
    kind: EquilibriumKind = EquilibriumKind.TRUE_EQUILIBRIUM,
    species: Sequence[int] = (),
) -> EquilibriumState:
    """u_j = M rho_jj / sum_i rho_ii."""
    _check_mass(M)
    if A.n == 1:
        values = np.array([float(M)])
    else:
        _require_indecomposable(A)
        rho = diagonal_minors(A)
        values = M * rho / rho.sum()
    return EquilibriumState(
        values=values,
        mass=float(M),
        kind=kind,
        species=tuple(species),
        residual=relative_residual(A, values),
    )


def equilibrium_nullspace(A: ReactionMatrix, M: float) -> EquilibriumState:
    """Least-squares solve of {A x = 0, sum x = M}.

    Raises:
        NotWeaklyReversible: A is decomposable.
        NonPositiveEquilibrium: the solve produced a non-positive entry.
    """
    _check_mass(M)
    n = A.n
    if n > 1:
        _require_indecomposable(A)
    a = np.asarray(A)
    # the mass row is scaled like the reaction rows so lstsq weighs both alike
    weight = max(1.0, A.max_diagonal())
    system = np.vstack([a, weight * np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = weight * M
    x, *_ = scipy.linalg.lstsq(system, rhs)
    if (x <= 0).any():
        raise NonPositiveEquilibrium(
            "least-squares equilibrium has non-positive entries",
            values=[float(v) for v in x],
        )
    x = x * (M / x.sum())
    return EquilibriumState(
        values=x,
        mass=float(M),
        kind=EquilibriumKind.TRUE_EQUILIBRIUM,
        residual=relative_residual(A, x),
    )


def artificial_equilibrium(block: ReactionMatrix, species: Sequence[int] = ()) -> EquilibriumState:
    """Unit-mass equilibrium of a component's closed within-block dynamics."""
    return equilibrium_cramer(block, 1.0, kind=EquilibriumKind.ARTIFICIAL_UNIT_MASS, species=species)


def time_integrals(A: ReactionMatrix, dec: ComponentDecomposition, averages: Sequence[float]) -> TimeIntegrals:
    """Integrate the non-target averages exactly through -inv(A_nt) U_nt(0).

    Raises:
        SingularSubmatrix: A_nt is numerically singular.
    """
    nt = dec.non_target_species()
    if not nt:
        return TimeIntegrals(species=(), integrals=np.zeros(0), condition=1.0)
    sub = np.asarray(A)[np.ix_(nt, nt)]
    condition = float(np.linalg.cond(sub))
    if not np.isfinite(condition) or condition > SINGULAR_COND:
        raise SingularSubmatrix(
            "non-target reaction submatrix is singular; component classification is inconsistent",
            condition=condition if np.isfinite(condition) else None,
        )
    if condition > CRN_COND_WARN:
        logger.warning(f"Non-target submatrix is ill-conditioned (cond ~ {condition:.3e})")
    u0 = np.asarray(averages, dtype=float)[nt]
    integrals = -scipy.linalg.solve(sub, u0)
    # -inv(A_nt) is entrywise nonnegative; clip round-off
    integrals = np.maximum(integrals, 0.0)
    return TimeIntegrals(species=tuple(nt), integrals=integrals, condition=condition)


def injected_mass(
    net: ReactionNetwork,
    dec: ComponentDecomposition,
    initial_averages: Sequence[float],
    A: Optional[ReactionMatrix] = None,
) -> Dict[int, float]:
    """Mass each target component receives from upstream over [0, inf)."""
    A = A if A is not None else build_reaction_matrix(net)
    integrals = time_integrals(A, dec, initial_averages)
    a = np.asarray(A)
    result: Dict[int, float] = {}
    for c in dec.indices_of((ComponentKind.TARGET,)):
        members = list(dec.components[c])
        total = 0.0
        if integrals.species:
            total = float(a[np.ix_(members, list(integrals.species))].sum(axis=0) @ integrals.integrals)
        result[c] = max(total, 0.0)
    return result


def target_equilibrium(
    net: ReactionNetwork,
    dec: ComponentDecomposition,
    target_index: int,
    initial_averages: Sequence[float],
    A: Optional[ReactionMatrix] = None,
) -> EquilibriumState:
    """Equilibrium of a target block holding its own plus the injected mass."""
    if dec.kinds[target_index] != ComponentKind.TARGET:
        raise WrongComponentKind(
            f"component {target_index} is a {dec.kinds[target_index].value} component, not a target",
            component=target_index,
        )
    A = A if A is not None else build_reaction_matrix(net)
    members = list(dec.components[target_index])
    averages = np.asarray(initial_averages, dtype=float)
    injected = injected_mass(net, dec, averages, A)[target_index]
    mass = float(averages[members].sum()) + injected
    if mass <= 0:
        raise NonPositiveEquilibrium(
            f"target component {target_index} receives no mass", component=target_index
        )
    state = equilibrium_cramer(
        A.closed_block(members), mass, kind=EquilibriumKind.TARGET_WITH_INJECTION, species=members
    )
    if dec.non_target_species():
        condition = time_integrals(A, dec, averages).condition
        state = EquilibriumState(
            values=state.values,
            mass=state.mass,
            kind=state.kind,
            species=state.species,
            residual=state.residual,
            condition=condition,
        )
    return state


def limit_state(
    net: ReactionNetwork,
    dec: ComponentDecomposition,
    averages: Sequence[float],
    A: Optional[ReactionMatrix] = None,
) -> np.ndarray:
    """Large-time limit per species.

    Zero on source and transmission species, the target equilibrium on
    target species (zero for targets that never receive mass). For a weakly
    reversible network this is the true equilibrium.
    """
    A = A if A is not None else build_reaction_matrix(net)
    averages = np.asarray(averages, dtype=float)
    limit = np.zeros(net.n_species)
    injected = injected_mass(net, dec, averages, A)
    for c in dec.indices_of((ComponentKind.TARGET,)):
        members = list(dec.components[c])
        mass = float(averages[members].sum()) + injected[c]
        if mass <= 0:
            continue
        state = equilibrium_cramer(A.closed_block(members), mass, species=members)
        limit[members] = state.values
    return limit


def component_equilibria(
    net: ReactionNetwork,
    A: ReactionMatrix,
    dec: ComponentDecomposition,
    averages: Sequence[float],
) -> List[Optional[EquilibriumState]]:
    """One equilibrium per component, in topological order.

    A single-component network gets its true equilibrium. Otherwise source
    and transmission components get their artificial unit-mass equilibrium
    and targets the injected-mass equilibrium (None when no mass arrives).
    """
    averages = np.asarray(averages, dtype=float)
    if dec.n_components == 1:
        return [equilibrium_cramer(A, float(averages.sum()))]
    states: List[Optional[EquilibriumState]] = []
    for c, kind in enumerate(dec.kinds):
        members = list(dec.components[c])
        if kind != ComponentKind.TARGET:
            states.append(artificial_equilibrium(A.closed_block(members), members))
            continue
        try:
            states.append(target_equilibrium(net, dec, c, averages, A))
        except NonPositiveEquilibrium:
            logger.info(f"Target component {c} receives no mass; its limit is zero")
            states.append(None)
    return states
