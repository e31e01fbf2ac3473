"""
Tests for netparse.py module.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import NetworkSyntaxError, NetworkValidationError
from netparse import (
    DEFAULT_GRID_CELLS,
    InitialProfile,
    ReactionMatrix,
    ReactionNetwork,
    build_reaction_matrix,
    parse_network,
)
from sim import Grid

TWO_SPECIES = "species A B\nrxn A -> B 1.0\nrxn B -> A 2.0\ninit A const 1.0\ninit B const 2.0"


class TestParseNetwork:
    """Test the DSL parser."""

    def test_two_species_example(self):
        """Test direct transcription of a two-species network."""
        net = parse_network(TWO_SPECIES)

        assert net.species == ("A", "B")
        assert net.rate(1, 0) == 1.0
        assert net.rate(0, 1) == 2.0
        assert net.initial_mass() == pytest.approx(3.0)

    def test_defaults(self):
        """Test that omitted diffusions, profiles and grid get defaults."""
        net = parse_network("species A B\nrxn A -> B 1\ninit A const 1")

        assert net.diffusions == (0.0, 0.0)
        assert net.initial_profiles[1] == InitialProfile("const", (0.0,))
        assert net.grid_cells == DEFAULT_GRID_CELLS

    def test_zero_initial_mass_rejected(self):
        """Test that a network without mass is an error."""
        with pytest.raises(NetworkValidationError, match="mass"):
            parse_network("species A\ninit A const 0")

    def test_mass_missed_by_grid_rejected(self):
        """Test that a step whose mass lies between cell centers is an error."""
        text = "species A\ngrid 8\ninit A step 1 0 0.01"

        with pytest.raises(NetworkValidationError, match="8-cell grid"):
            parse_network(text)

    def test_grid_mass(self):
        """Test mass sampled at cell centers against the continuous mean."""
        net = parse_network("species A B\ninit A step 1 0 0.01\ninit B const 2")

        assert net.initial_mass() == pytest.approx(2.01)
        assert net.grid_mass() == pytest.approx(2.0 + 1.0 / 128)
        assert net.grid_mass(8) == pytest.approx(2.0)

    def test_four_components_network(self, four_components):
        """Test the six-species non-weakly reversible fixture."""
        expected = {(1, 0), (0, 1), (2, 1), (2, 0), (3, 0), (4, 3), (3, 4), (5, 2), (3, 2)}

        assert four_components.n_species == 6
        assert set(four_components.rates) == expected

    def test_comments_and_blank_lines(self):
        """Test that comments and empty lines are ignored."""
        text = "# header\n\nspecies A B   # two\nrxn A -> B 0.5 # forward\n\ninit A const 1\n"

        net = parse_network(text)

        assert net.rate(1, 0) == 0.5

    def test_statements_before_species(self):
        """Test that statement order does not matter."""
        net = parse_network("init A const 1\nrxn A -> B 1\nspecies A B")

        assert net.species == ("A", "B")

    def test_syntax_error_reports_line(self):
        """Test that malformed statements carry their line number."""
        with pytest.raises(NetworkSyntaxError) as exc:
            parse_network("species A B\nrxn A => B 1.0\ninit A const 1")

        assert exc.value.line == 2
        assert "line 2" in str(exc.value)

    @pytest.mark.parametrize(
        "text,message",
        [
            ("species A A\ninit A const 1", "duplicate species"),
            ("species A B\nrxn A -> C 1\ninit A const 1", "unknown species"),
            ("species A B\nrxn A -> B -1\ninit A const 1", "negative rate"),
            ("species A B\nrxn A -> B 0\ninit A const 1", "must be positive"),
            ("species A B\nrxn A -> B 1\nrxn A -> B 2\ninit A const 1", "duplicate reaction"),
            ("species A B\nrxn A -> A 1\ninit A const 1", "self-reaction"),
            ("species A\ndiff A -1\ninit A const 1", "negative diffusion"),
            ("species A\ninit A const 1\ninit A const 2", "duplicate initial"),
            ("species A\ngrid 0\ninit A const 1", "positive integer"),
            ("species A\ninit A bump 1 2 1", "amplitude"),
            ("species A\ninit A bump 1 0.5 1.5", "positive integer"),
            ("species A\ninit A step 1 2 1.5", "x0"),
        ],
    )
    def test_validation_errors(self, text, message):
        """Test the semantic checks of the parser."""
        with pytest.raises(NetworkValidationError, match=message):
            parse_network(text)

    @pytest.mark.parametrize(
        "text",
        [
            "rxn A -> B 1",
            "species A\ninit A const abc",
            "species A\ninit A wave 1",
            "species A\ninit A const 1 2",
            "species A\nfoo A",
            "species 1A\ninit 1A const 1",
            "species A\ngrid 1.5\ninit A const 1",
        ],
    )
    def test_syntax_errors(self, text):
        """Test malformed input."""
        with pytest.raises(NetworkSyntaxError):
            parse_network(text)


class TestInitialProfile:
    """Test initial profile evaluation."""

    def test_const(self):
        """Test constant profile."""
        profile = InitialProfile("const", (2.5,))

        np.testing.assert_array_equal(profile.evaluate(np.array([0.1, 0.9])), [2.5, 2.5])
        assert profile.mean() == 2.5

    def test_step_uses_left_value_before_x0(self):
        """Test step profile on both sides of x0."""
        profile = InitialProfile("step", (3.0, 1.0, 0.5))

        np.testing.assert_array_equal(profile.evaluate(np.array([0.25, 0.5, 0.75])), [3.0, 1.0, 1.0])
        assert profile.mean() == pytest.approx(2.0)

    def test_bump(self):
        """Test bump profile formula and mean."""
        profile = InitialProfile("bump", (1.0, 0.5, 2.0))
        x = np.linspace(0, 1, 11)

        np.testing.assert_allclose(profile.evaluate(x), 1.0 + 0.5 * np.cos(2 * np.pi * x))
        assert profile.mean() == 1.0

    @settings(deadline=None, max_examples=100)
    @given(
        kind=st.sampled_from(["const", "step", "bump"]),
        c=st.floats(0, 10),
        other=st.floats(0, 10),
        frac=st.floats(-1, 1),
        x0=st.floats(0, 1),
        mode=st.integers(1, 8),
        n=st.integers(8, 1024),
    )
    def test_profiles_nonnegative_on_grid(self, kind, c, other, frac, x0, mode, n):
        """Test that admissible profiles never go negative at the cell centers."""
        params = {"const": (c,), "step": (c, other, x0), "bump": (c, frac * c, float(mode))}[kind]
        profile = InitialProfile(kind, params)

        assert (profile.evaluate(Grid(n).centers) >= 0).all()

    def test_to_text_round_trip(self):
        """Test textual form of a profile."""
        assert InitialProfile("bump", (1.0, -0.3, 1.0)).to_text() == "bump 1.0 -0.3 1"


class TestReactionMatrix:
    """Test reaction matrix construction."""

    def test_two_species(self, two_species):
        """Test the two-species matrix."""
        A = build_reaction_matrix(two_species)

        np.testing.assert_array_equal(np.asarray(A), [[-1.0, 2.0], [1.0, -2.0]])

    def test_no_reactions(self):
        """Test that an empty reaction set gives the zero matrix."""
        net = parse_network("species A B\ninit A const 1")

        np.testing.assert_array_equal(np.asarray(build_reaction_matrix(net)), np.zeros((2, 2)))

    def test_triangle_diagonal(self, triangle_detailed):
        """Test that all-ones triangle has diagonal -2."""
        A = np.asarray(build_reaction_matrix(triangle_detailed))

        np.testing.assert_array_equal(np.diag(A), [-2.0, -2.0, -2.0])
        assert (A[~np.eye(3, dtype=bool)] == 1.0).all()

    def test_entries_read_only(self, two_species):
        """Test that the matrix cannot be mutated in place."""
        A = build_reaction_matrix(two_species)

        with pytest.raises(ValueError):
            A.entries[0, 0] = 5.0

    def test_validate_rejects_bad_columns(self):
        """Test that a matrix with nonzero column sums fails validation."""
        with pytest.raises(NetworkValidationError):
            ReactionMatrix(np.array([[-1.0, 0.0], [2.0, 0.0]])).validate()

    def test_closed_block(self, four_components):
        """Test that the within-block diagonal is recomputed."""
        A = build_reaction_matrix(four_components)

        block = A.closed_block([0, 1])

        np.testing.assert_array_equal(np.asarray(block), [[-1.0, 1.0], [1.0, -1.0]])

    def test_max_diagonal(self, two_species):
        """Test the largest absolute diagonal entry."""
        assert build_reaction_matrix(two_species).max_diagonal() == 2.0


@st.composite
def networks(draw):
    n = draw(st.integers(1, 10))
    rates = {}
    for i in range(n):
        for j in range(n):
            if i != j and draw(st.booleans()):
                rates[(i, j)] = draw(st.floats(1e-3, 10.0, allow_nan=False))
    diffusions = tuple(draw(st.sampled_from([0.0, 0.1, 1.0, 2.5])) for _ in range(n))
    profiles = [InitialProfile("const", (draw(st.floats(0.1, 5.0)),))]
    for _ in range(n - 1):
        kind = draw(st.sampled_from(["const", "step", "bump"]))
        c = draw(st.floats(0.0, 5.0))
        if kind == "const":
            profiles.append(InitialProfile("const", (c,)))
        elif kind == "step":
            profiles.append(InitialProfile("step", (c, draw(st.floats(0.0, 5.0)), draw(st.floats(0.0, 1.0)))))
        else:
            profiles.append(InitialProfile("bump", (c, draw(st.floats(-1, 1)) * c, float(draw(st.integers(1, 5))))))
    return ReactionNetwork(
        species=tuple(f"X{k}" for k in range(n)),
        rates=rates,
        diffusions=diffusions,
        initial_profiles=tuple(profiles),
        grid_cells=draw(st.integers(1, 256)),
    )


class TestNetworkProperties:
    """Property tests over random networks."""

    @settings(deadline=None, max_examples=100)
    @given(net=networks())
    def test_round_trip(self, net):
        """Test that serializing and reparsing gives the same network."""
        assert parse_network(net.to_text()) == net

    @settings(deadline=None, max_examples=100)
    @given(net=networks())
    def test_matrix_invariants(self, net):
        """Test sign and column-sum invariants of the reaction matrix."""
        A = build_reaction_matrix(net)
        a = np.asarray(A)
        off = a - np.diag(np.diag(a))

        assert (off >= 0).all()
        assert np.abs(a.sum(axis=0)).max() <= 1e-12
        assert np.abs(np.ones(net.n_species) @ a).max() <= 1e-12
        A.validate()

    def test_fingerprint_stable(self, two_species):
        """Test that the fingerprint depends only on content."""
        again = parse_network(two_species.to_text())

        assert again.fingerprint() == two_species.fingerprint()
        assert len(two_species.fingerprint()) == 64
