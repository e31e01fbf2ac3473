"""
Network description parser.

Reads the line-oriented network DSL into a validated ReactionNetwork and
builds the reaction matrix A of the first-order system X_t = D ΔX + AX.

DSL (one statement per line, ``#`` starts a comment):

    species <name>+
    diff <name> <float>                  diffusion d_i, default 0
    rxn <name> -> <name> <float>         a_target,source > 0
    init <name> const <c>
    init <name> step <c_left> <c_right> <x0>
    init <name> bump <c> <amp> <mode>
    grid <n>                             cell count, default 128

Species order is declaration order; rates are stored as a mapping
(i, j) -> a_ij meaning "from species j to species i" with 0-based indices.
"""
import hashlib
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import NetworkSyntaxError, NetworkValidationError

logger = logging.getLogger(__name__)

DEFAULT_GRID_CELLS = 128
COLUMN_SUM_TOL = 1e-12

NAME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9_]*$")
FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
INT_RE = re.compile(r"^\d+$")

PROFILE_ARITY = {"const": 1, "step": 3, "bump": 3}


@dataclass(frozen=True)
class InitialProfile:
    """Spatial initial datum u_i(x, 0) on the unit interval."""

    kind: str = "const"
    params: Tuple[float, ...] = (0.0,)

    def __post_init__(self):
        if self.kind not in PROFILE_ARITY:
            raise ValueError(f"unknown profile kind '{self.kind}'")
        if len(self.params) != PROFILE_ARITY[self.kind]:
            raise ValueError(
                f"profile '{self.kind}' takes {PROFILE_ARITY[self.kind]} parameters, got {len(self.params)}"
            )
        if any(not math.isfinite(p) for p in self.params):
            raise ValueError("profile parameters must be finite")
        if self.kind == "const":
            (c,) = self.params
            if c < 0:
                raise ValueError("const level must be nonnegative")
        elif self.kind == "step":
            c_left, c_right, x0 = self.params
            if c_left < 0 or c_right < 0:
                raise ValueError("step levels must be nonnegative")
            if not 0.0 <= x0 <= 1.0:
                raise ValueError("step position x0 must lie in [0, 1]")
        else:
            c, amp, mode = self.params
            if c < 0:
                raise ValueError("bump level must be nonnegative")
            if abs(amp) > c:
                raise ValueError("bump amplitude must satisfy |amp| <= c")
            if mode < 1 or mode != int(mode):
                raise ValueError("bump mode must be a positive integer")

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "const":
            return np.full_like(x, self.params[0])
        if self.kind == "step":
            c_left, c_right, x0 = self.params
            return np.where(x < x0, c_left, c_right).astype(float)
        c, amp, mode = self.params
        # cos(mode*pi*x) has zero mean and zero slope at both ends
        return np.maximum(c + amp * np.cos(mode * np.pi * x), 0.0)

    def mean(self) -> float:
        """Exact mean over [0, 1] of the continuous profile."""
        if self.kind == "const":
            return self.params[0]
        if self.kind == "step":
            c_left, c_right, x0 = self.params
            return c_left * x0 + c_right * (1.0 - x0)
        return self.params[0]

    def to_text(self) -> str:
        values = [_format_float(p) for p in self.params]
        if self.kind == "bump":
            values[2] = str(int(self.params[2]))
        return " ".join([self.kind] + values)


@dataclass(frozen=True)
class ReactionNetwork:
    species: Tuple[str, ...]
    rates: Dict[Tuple[int, int], float] = field(default_factory=dict)
    diffusions: Tuple[float, ...] = ()
    initial_profiles: Tuple[InitialProfile, ...] = ()
    grid_cells: int = DEFAULT_GRID_CELLS

    def __post_init__(self):
        n = len(self.species)
        if n < 1:
            raise NetworkValidationError("at least one species is required")
        if len(set(self.species)) != n:
            raise NetworkValidationError("duplicate species name")
        if not self.diffusions:
            object.__setattr__(self, "diffusions", (0.0,) * n)
        if not self.initial_profiles:
            object.__setattr__(self, "initial_profiles", (InitialProfile(),) * n)
        if len(self.diffusions) != n or len(self.initial_profiles) != n:
            raise NetworkValidationError("diffusions and profiles must have one entry per species")
        for (i, j), rate in self.rates.items():
            if not (0 <= i < n and 0 <= j < n):
                raise NetworkValidationError(f"reaction ({j} -> {i}) references an unknown species")
            if i == j:
                raise NetworkValidationError(f"self-reaction on '{self.species[i]}' is not allowed")
            if not rate > 0 or not math.isfinite(rate):
                raise NetworkValidationError(
                    f"rate {self.species[j]} -> {self.species[i]} must be a positive finite number"
                )
        if any(d < 0 or not math.isfinite(d) for d in self.diffusions):
            raise NetworkValidationError("diffusion coefficients must be nonnegative")
        if self.grid_cells < 1:
            raise NetworkValidationError("grid must have at least one cell")
        if self.initial_mass() <= 0:
            raise NetworkValidationError("initial mass is zero; at least one species needs a nonzero profile")
        if self.grid_mass() <= 0:
            raise NetworkValidationError(
                f"initial mass is zero on the {self.grid_cells}-cell grid; every profile vanishes at the cell centers"
            )

    @property
    def n_species(self) -> int:
        return len(self.species)

    def index(self, name: str) -> int:
        return self.species.index(name)

    def rate(self, i: int, j: int) -> float:
        """a_ij, the rate from species j to species i (0 when absent)."""
        return self.rates.get((i, j), 0.0)

    def edges(self) -> List[Tuple[int, int]]:
        """Reaction edges as (source, target) pairs in a stable order."""
        return sorted((j, i) for (i, j) in self.rates)

    def initial_mass(self) -> float:
        return float(sum(p.mean() for p in self.initial_profiles))

    def grid_mass(self, n_cells: Optional[int] = None) -> float:
        """Total mass of the profiles sampled at the cell centers of an n-cell grid."""
        n = n_cells or self.grid_cells
        centers = (np.arange(n) + 0.5) / n
        return float(sum(p.evaluate(centers).mean() for p in self.initial_profiles))

    def to_text(self) -> str:
        """Serialize back to DSL; parse_network(net.to_text()) == net."""
        lines = ["species " + " ".join(self.species), f"grid {self.grid_cells}"]
        for name, d in zip(self.species, self.diffusions):
            if d != 0.0:
                lines.append(f"diff {name} {_format_float(d)}")
        for j, i in self.edges():
            lines.append(f"rxn {self.species[j]} -> {self.species[i]} {_format_float(self.rates[(i, j)])}")
        for name, profile in zip(self.species, self.initial_profiles):
            lines.append(f"init {name} {profile.to_text()}")
        return "\n".join(lines) + "\n"

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


@dataclass(frozen=True, eq=False)
class ReactionMatrix:
    """Dense N x N reaction matrix with zero column sums."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError("reaction matrix must be square")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_off_diagonal(cls, off_diagonal: np.ndarray) -> "ReactionMatrix":
        """Build A from its off-diagonal part; the diagonal is recomputed."""
        entries = np.array(off_diagonal, dtype=float)
        np.fill_diagonal(entries, 0.0)
        np.fill_diagonal(entries, -entries.sum(axis=0))
        return cls(entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def validate(self) -> None:
        """Assert the sign and column-sum conditions."""
        off = self.entries - np.diag(np.diag(self.entries))
        if (off < 0).any():
            raise NetworkValidationError("reaction matrix has a negative off-diagonal entry")
        if np.abs(self.entries.sum(axis=0)).max(initial=0.0) > COLUMN_SUM_TOL:
            raise NetworkValidationError("reaction matrix columns do not sum to zero")
        if np.abs(np.ones(self.n) @ self.entries).max(initial=0.0) > COLUMN_SUM_TOL:
            raise NetworkValidationError("all-ones vector does not annihilate the reaction matrix")

    def closed_block(self, indices: Sequence[int]) -> "ReactionMatrix":
        """Within-block reactions only; diagonal re-closed inside the block."""
        idx = np.asarray(indices, dtype=int)
        return ReactionMatrix.from_off_diagonal(self.entries[np.ix_(idx, idx)])

    def max_diagonal(self) -> float:
        return float(np.abs(np.diag(self.entries)).max(initial=0.0))


def _format_float(value: float) -> str:
    return repr(float(value))


def _parse_float(token: str, line: int, what: str) -> float:
    if not FLOAT_RE.match(token):
        raise NetworkSyntaxError(f"expected a number for {what}, got '{token}'", line)
    return float(token)


def _check_name(token: str, line: int) -> str:
    if not NAME_RE.match(token):
        raise NetworkSyntaxError(f"invalid species name '{token}'", line)
    return token


def _tokenize(text: str) -> Iterable[Tuple[int, List[str]]]:
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].strip()
        if body:
            yield lineno, body.split()


def parse_network(text: str) -> ReactionNetwork:
    """Parse DSL text into a validated ReactionNetwork.

    Raises:
        NetworkSyntaxError: malformed statement (with line number).
        NetworkValidationError: duplicate species or statements, non-positive
            rate, unknown species, zero initial mass.
    """
    statements = list(_tokenize(text))

    species: List[str] = []
    for lineno, tokens in statements:
        if tokens[0] != "species":
            continue
        if len(tokens) < 2:
            raise NetworkSyntaxError("'species' needs at least one name", lineno)
        for token in tokens[1:]:
            name = _check_name(token, lineno)
            if name in species:
                raise NetworkValidationError(f"duplicate species '{name}'", lineno)
            species.append(name)
    if not species:
        raise NetworkSyntaxError("no 'species' statement found")
    index = {name: k for k, name in enumerate(species)}

    def resolve(token: str, lineno: int) -> int:
        name = _check_name(token, lineno)
        if name not in index:
            raise NetworkValidationError(f"unknown species '{name}'", lineno)
        return index[name]

    rates: Dict[Tuple[int, int], float] = {}
    diffusions: Dict[int, float] = {}
    profiles: Dict[int, InitialProfile] = {}
    grid: Optional[int] = None

    for lineno, tokens in statements:
        keyword, args = tokens[0], tokens[1:]
        if keyword == "species":
            continue
        if keyword == "diff":
            if len(args) != 2:
                raise NetworkSyntaxError("expected 'diff <name> <float>'", lineno)
            k = resolve(args[0], lineno)
            d = _parse_float(args[1], lineno, "diffusion")
            if d < 0:
                raise NetworkValidationError(f"negative diffusion for '{species[k]}'", lineno)
            if k in diffusions:
                raise NetworkValidationError(f"duplicate diffusion for '{species[k]}'", lineno)
            diffusions[k] = d
        elif keyword == "rxn":
            if len(args) != 4 or args[1] != "->":
                raise NetworkSyntaxError("expected 'rxn <name> -> <name> <float>'", lineno)
            j = resolve(args[0], lineno)
            i = resolve(args[2], lineno)
            rate = _parse_float(args[3], lineno, "rate")
            if rate < 0:
                raise NetworkValidationError(f"negative rate {args[0]} -> {args[2]}", lineno)
            if rate == 0:
                raise NetworkValidationError(f"rate {args[0]} -> {args[2]} must be positive", lineno)
            if i == j:
                raise NetworkValidationError(f"self-reaction on '{args[0]}'", lineno)
            if (i, j) in rates:
                raise NetworkValidationError(f"duplicate reaction {args[0]} -> {args[2]}", lineno)
            rates[(i, j)] = rate
        elif keyword == "init":
            if len(args) < 2 or args[1] not in PROFILE_ARITY:
                raise NetworkSyntaxError("expected 'init <name> const|step|bump ...'", lineno)
            k = resolve(args[0], lineno)
            kind = args[1]
            values = args[2:]
            if len(values) != PROFILE_ARITY[kind]:
                raise NetworkSyntaxError(
                    f"'{kind}' takes {PROFILE_ARITY[kind]} parameters, got {len(values)}", lineno
                )
            params = tuple(_parse_float(v, lineno, f"{kind} parameter") for v in values)
            if k in profiles:
                raise NetworkValidationError(f"duplicate initial profile for '{species[k]}'", lineno)
            try:
                profiles[k] = InitialProfile(kind, params)
            except ValueError as e:
                raise NetworkValidationError(str(e), lineno) from e
        elif keyword == "grid":
            if len(args) != 1 or not INT_RE.match(args[0]):
                raise NetworkSyntaxError("expected 'grid <positive integer>'", lineno)
            if grid is not None:
                raise NetworkValidationError("duplicate grid statement", lineno)
            grid = int(args[0])
            if grid < 1:
                raise NetworkValidationError("grid must be a positive integer", lineno)
        else:
            raise NetworkSyntaxError(f"unknown statement '{keyword}'", lineno)

    net = ReactionNetwork(
        species=tuple(species),
        rates=rates,
        diffusions=tuple(diffusions.get(k, 0.0) for k in range(len(species))),
        initial_profiles=tuple(profiles.get(k, InitialProfile()) for k in range(len(species))),
        grid_cells=grid if grid is not None else DEFAULT_GRID_CELLS,
    )
    logger.debug(f"Parsed network with {net.n_species} species and {len(rates)} reactions")
    return net


def build_reaction_matrix(net: ReactionNetwork) -> ReactionMatrix:
    """A[i][j] = a_ij off the diagonal, a_jj = -sum of column j's off-diagonals."""
    off = np.zeros((net.n_species, net.n_species))
    for (i, j), rate in net.rates.items():
        off[i, j] = rate
    return ReactionMatrix.from_off_diagonal(off)
