"""
Structural analysis of first-order reaction networks.

Covers strong connectivity (iterative Tarjan), the condensation DAG with a
deterministic topological order and source/transmission/target labels,
weak reversibility, the algebraic decomposability criterion through the
diagonal minors rho_ii of A, detailed/complex balance at a given positive
state, rank and the Gershgorin disk that contains the spectrum of A.
"""
import heapq
import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from errors import DisconnectedNetwork, IndeterminateMinor
from netparse import ReactionMatrix, ReactionNetwork

logger = logging.getLogger(__name__)

MINOR_REL_TOL = 1e-9
BALANCE_REL_TOL = 1e-9
GERSHGORIN_SLACK = 1e-8
RANK_REL_TOL = 1e-9


class ComponentKind(str, Enum):
    SOURCE = "source"
    TRANSMISSION = "transmission"
    TARGET = "target"


@dataclass(frozen=True)
class ComponentDecomposition:
    """SCCs of the reaction graph in topological order.

    ``components[c]`` lists the species indices of C_{c+1} in ascending
    order; ``cumulative`` is L[0..r]; ``permutation`` concatenates the
    components so that C_i holds positions L[i-1], ..., L[i]-1.
    """

    components: Tuple[Tuple[int, ...], ...]
    kinds: Tuple[ComponentKind, ...]
    condensation_edges: FrozenSet[Tuple[int, int]]
    cumulative: Tuple[int, ...]
    permutation: Tuple[int, ...]

    @property
    def n_components(self) -> int:
        return len(self.components)

    def component_of(self) -> Dict[int, int]:
        return {s: c for c, members in enumerate(self.components) for s in members}

    def indices_of(self, kinds: Sequence[ComponentKind]) -> List[int]:
        return [c for c, kind in enumerate(self.kinds) if kind in kinds]

    def non_target_species(self) -> List[int]:
        species: List[int] = []
        for c in self.indices_of((ComponentKind.SOURCE, ComponentKind.TRANSMISSION)):
            species.extend(self.components[c])
        return sorted(species)


@dataclass(frozen=True)
class BalanceReport:
    weakly_reversible: bool
    indecomposable_graph: bool
    indecomposable_algebraic: bool
    detailed_balanced: bool
    complex_balanced: bool
    minors_diag: Tuple[float, ...]


def _successors(net: ReactionNetwork) -> List[List[int]]:
    succ: List[List[int]] = [[] for _ in range(net.n_species)]
    for j, i in net.edges():
        succ[j].append(i)
    return succ


def _tarjan(succ: List[List[int]]) -> List[List[int]]:
    """Iterative Tarjan; SCCs come out in reverse topological order."""
    n = len(succ)
    index = [-1] * n
    lowlink = [0] * n
    on_stack = [False] * n
    stack: List[int] = []
    sccs: List[List[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        index[root] = lowlink[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            v, pos = work[-1]
            if pos < len(succ[v]):
                work[-1] = (v, pos + 1)
                w = succ[v][pos]
                if index[w] == -1:
                    index[w] = lowlink[w] = counter
                    counter += 1
                    stack.append(w)
                    on_stack[w] = True
                    work.append((w, 0))
                elif on_stack[w]:
                    lowlink[v] = min(lowlink[v], index[w])
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[v])
            if lowlink[v] == index[v]:
                scc = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    scc.append(w)
                    if w == v:
                        break
                sccs.append(sorted(scc))
    return sccs


def strongly_connected_components(net: ReactionNetwork) -> ComponentDecomposition:
    """Decompose the reaction graph and order the condensation topologically.

    Ties in the topological order go to the component holding the smallest
    species index.
    """
    raw = _tarjan(_successors(net))
    owner = {s: c for c, members in enumerate(raw) for s in members}
    raw_edges = {(owner[j], owner[i]) for j, i in net.edges() if owner[j] != owner[i]}

    indegree = [0] * len(raw)
    out: List[List[int]] = [[] for _ in raw]
    for a, b in raw_edges:
        out[a].append(b)
        indegree[b] += 1
    heap = [(raw[c][0], c) for c in range(len(raw)) if indegree[c] == 0]
    heapq.heapify(heap)
    order: List[int] = []
    while heap:
        _, c = heapq.heappop(heap)
        order.append(c)
        for b in out[c]:
            indegree[b] -= 1
            if indegree[b] == 0:
                heapq.heappush(heap, (raw[b][0], b))

    position = {c: k for k, c in enumerate(order)}
    components = tuple(tuple(raw[c]) for c in order)
    edges = frozenset((position[a], position[b]) for a, b in raw_edges)

    with_in = {b for _, b in edges}
    with_out = {a for a, _ in edges}
    kinds = []
    for c in range(len(components)):
        has_in, has_out = c in with_in, c in with_out
        if not has_in and has_out:
            kinds.append(ComponentKind.SOURCE)
        elif not has_out:
            kinds.append(ComponentKind.TARGET)
        else:
            kinds.append(ComponentKind.TRANSMISSION)

    cumulative = [0]
    for members in components:
        cumulative.append(cumulative[-1] + len(members))
    permutation = tuple(s for members in components for s in members)

    logger.debug(f"Found {len(components)} strongly connected components")
    return ComponentDecomposition(
        components=components,
        kinds=tuple(kinds),
        condensation_edges=edges,
        cumulative=tuple(cumulative),
        permutation=permutation,
    )


def ensure_connected(net: ReactionNetwork) -> None:
    """Reject networks whose undirected reaction graph falls apart."""
    if net.n_species == 1:
        return
    edges = net.edges()
    rows = [j for j, _ in edges]
    cols = [i for _, i in edges]
    adjacency = csr_matrix((np.ones(len(edges)), (rows, cols)), shape=(net.n_species, net.n_species))
    count, labels = connected_components(adjacency, directed=True, connection="weak")
    if count > 1:
        groups = [[net.species[k] for k in range(net.n_species) if labels[k] == g] for g in range(count)]
        raise DisconnectedNetwork(
            f"network splits into {count} unconnected parts; split the file into one network per part",
            parts=groups,
        )


def is_weakly_reversible(dec: ComponentDecomposition, net: ReactionNetwork) -> bool:
    owner = dec.component_of()
    return all(owner[j] == owner[i] for j, i in net.edges())


def minor(A: ReactionMatrix, i: int, j: int) -> float:
    """rho_ij = det of A without row i and column j (0-based), via LU."""
    a = np.asarray(A, dtype=float)
    n = a.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"minor index ({i}, {j}) out of range for N={n}")
    if n == 1:
        return 1.0
    sub = np.delete(np.delete(a, i, axis=0), j, axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(sub)
    swaps = np.count_nonzero(piv != np.arange(len(piv)))
    sign = -1.0 if swaps % 2 else 1.0
    return float(sign * np.prod(np.diag(lu)))


def minor_matrix(A: ReactionMatrix) -> np.ndarray:
    n = A.n
    return np.array([[minor(A, i, j) for j in range(n)] for i in range(n)])


def diagonal_minors(A: ReactionMatrix) -> np.ndarray:
    return np.array([minor(A, i, i) for i in range(A.n)])


def minor_tolerance(A: ReactionMatrix) -> float:
    return MINOR_REL_TOL * max(1.0, A.max_diagonal()) ** (A.n - 1)


def is_indecomposable_algebraic(A: ReactionMatrix) -> bool:
    """True iff every diagonal minor is clear of zero.

    Raises:
        IndeterminateMinor: some |rho_ii| sits in the band (0.1 tau, 10 tau)
            around the tolerance, or the sign rule sgn(rho_ii) = (-1)^(N-1)
            fails for an indecomposable matrix.
    """
    tau = minor_tolerance(A)
    rho = diagonal_minors(A)
    for k, value in enumerate(rho):
        if 0.1 * tau < abs(value) < 10 * tau:
            raise IndeterminateMinor(
                f"|rho_{k}{k}| = {abs(value):.3e} is too close to the tolerance {tau:.3e}",
                index=k,
                value=float(value),
                tolerance=tau,
            )
    if not (np.abs(rho) > tau).all():
        return False
    expected = (-1.0) ** (A.n - 1)
    if not (np.sign(rho) == expected).all():
        raise IndeterminateMinor(
            f"diagonal minors violate the sign rule (-1)^(N-1) = {expected:+.0f}",
            minors=[float(v) for v in rho],
        )
    return True


def _values(state) -> np.ndarray:
    return np.asarray(getattr(state, "values", state), dtype=float)


def check_detailed_balance(A: ReactionMatrix, equilibrium) -> bool:
    """Pairwise balance a_ji u_i = a_ij u_j for every reacting pair."""
    a = np.asarray(A)
    u = _values(equilibrium)
    n = A.n
    for i in range(n):
        for j in range(i + 1, n):
            forward, backward = a[j, i], a[i, j]
            if forward == 0 and backward == 0:
                continue
            if forward <= 0 or backward <= 0:
                return False
            lhs, rhs = forward * u[i], backward * u[j]
            if abs(lhs - rhs) > BALANCE_REL_TOL * (lhs + rhs):
                return False
    return True


def check_complex_balance(A: ReactionMatrix, equilibrium) -> bool:
    """In-flow equals out-flow at every species."""
    a = np.asarray(A)
    u = _values(equilibrium)
    off = a - np.diag(np.diag(a))
    inflow = off @ u
    outflow = off.sum(axis=0) * u
    scale = inflow + outflow
    return bool((np.abs(inflow - outflow) <= BALANCE_REL_TOL * scale).all())


def gershgorin_bound(A: ReactionMatrix) -> Tuple[float, float]:
    """Disk |lambda + a_hat| <= a_hat containing the spectrum of A."""
    a_hat = A.max_diagonal()
    return -a_hat, a_hat


def eigenvalues_in_disk(A: ReactionMatrix, slack: float = GERSHGORIN_SLACK) -> bool:
    center, radius = gershgorin_bound(A)
    eig = np.linalg.eigvals(np.asarray(A))
    return bool((np.abs(eig - center) <= radius + slack).all())


def matrix_rank(A: ReactionMatrix) -> int:
    s = np.linalg.svd(np.asarray(A), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > RANK_REL_TOL * s[0]))


def balance_report(net: ReactionNetwork, A: ReactionMatrix, dec: ComponentDecomposition, equilibrium=None) -> BalanceReport:
    """Collect the balance properties; detailed/complex need a positive state."""
    weakly_reversible = is_weakly_reversible(dec, net)
    algebraic = is_indecomposable_algebraic(A)
    if algebraic != (dec.n_components == 1):
        logger.warning(f"Graph and minor criteria disagree: {dec.n_components} components, algebraic={algebraic}")
    detailed = complex_ = False
    if equilibrium is not None and (_values(equilibrium) > 0).all():
        detailed = check_detailed_balance(A, equilibrium)
        complex_ = check_complex_balance(A, equilibrium)
    return BalanceReport(
        weakly_reversible=weakly_reversible,
        indecomposable_graph=dec.n_components == 1,
        indecomposable_algebraic=algebraic,
        detailed_balanced=detailed,
        complex_balanced=complex_,
        minors_diag=tuple(float(v) for v in diagonal_minors(A)),
    )
