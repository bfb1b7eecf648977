import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_skm.model import autoregulatory
from hybrid_skm.modelfile import (ModelFile, ModelParseError, ReactionSpec, bundled_model_path,
                                  load_model_file, parse_model, parse_model_file)


def test_bundled_autoregulatory():
    mf = load_model_file(bundled_model_path())
    net = mf.to_network()
    ref = autoregulatory(1.0)
    np.testing.assert_array_equal(net.net_effect, [[1, 0], [0, 1], [-1, 0], [0, -1], [-1, 1]])
    np.testing.assert_allclose(net.rate_constants, ref.rate_constants)
    assert net.reaction_names == ("R1", "R2", "R3", "R4", "R5")
    np.testing.assert_array_equal(mf.initial_state(), [0, 0])
    assert mf.obs == ("poisson_bernoulli", "0.1")


def test_bindings_override_params():
    mf = load_model_file(bundled_model_path())
    np.testing.assert_allclose(mf.to_network({"sc": 1000}).rate_constants,
                               autoregulatory(1000.0).rate_constants)


def test_unnamed_reactions_and_comments():
    net = parse_model("""
# comment
species: A, B
reactions:
  2 A -> B @ 0.5   # dimerisation
  B -> 0 @ 1
""")
    assert net.reaction_names == ("R1", "R2")
    np.testing.assert_array_equal(net.reactants, [[2, 0], [0, 1]])


@pytest.mark.parametrize("text, fragment, line", [
    ("species: A\nreactions:\n", "empty reactions", 0),
    ("species: A\nreactions:\n  3 A -> 0 @ 1\n", "order 3", 3),
    ("species: A\nreactions:\n  A + A + A -> 0 @ 1\n", "order 3", 3),
    ("species: A\nreactions:\n  B -> 0 @ 1\n", "unknown species", 3),
    ("species: A\nreactions:\n  A -> 0 @ k\n", "unbound parameter", 0),
    ("species: A, A\nreactions:\n  A -> 0 @ 1\n", "duplicate species", 1),
    ("species: A\nreactions:\n  R: A -> 0 @ 1\n  R: 0 -> A @ 1\n", "duplicate reaction", 4),
    ("species: A\nreactions:\n  A -> 0 @ 1\nparams:\n  k = 1\n  k = 2\n", "duplicate parameter",
     6),
    ("species: A\nreactions:\n  A 0 @ 1\n", "expected '->'", 3),
    ("species: A\nreactions:\n  A -> 0 @ 1\ninit: 1 2\n", "init has 2 values", 0),
    ("species: A\nreactions:\n  A -> 0 @ -1\n", "positive", 0),
    ("species: A\nreactions:\n  A -> 0 @ __import__('os')\n", "unsupported", 0),
])
def test_parse_errors(text, fragment, line):
    with pytest.raises(ModelParseError) as err:
        parse_model(text)
    assert fragment in err.value.message
    assert err.value.line == line


def test_cyclic_parameters():
    with pytest.raises(ModelParseError, match="itself"):
        parse_model("species: A\nreactions:\n  A -> 0 @ a\nparams:\n  a = b\n  b = 2 * a\n")


def test_serialize_round_trip_bundled():
    mf = load_model_file(bundled_model_path())
    again = parse_model_file(mf.serialize())
    assert again == mf
    assert again.serialize() == mf.serialize()


_name = st.from_regex(r"[A-Z][a-z0-9]{0,3}", fullmatch=True)


@st.composite
def models(draw):
    species = draw(st.lists(_name, min_size=1, max_size=4, unique=True))
    term = st.tuples(st.sampled_from(species), st.integers(1, 2))
    reactions = []
    for i in range(draw(st.integers(1, 5))):
        lhs = draw(st.lists(term, max_size=2, unique_by=lambda t: t[0]))
        while sum(n for _, n in lhs) > 2:
            lhs = lhs[:-1]
        rhs = draw(st.lists(term, max_size=2, unique_by=lambda t: t[0]))
        rate = repr(draw(st.floats(1e-3, 1e3)))
        # the parser lists terms in species order
        lhs, rhs = (tuple(sorted(x, key=lambda t: species.index(t[0]))) for x in (lhs, rhs))
        reactions.append(ReactionSpec(f"R{i + 1}", lhs, rhs, rate))
    init = tuple(draw(st.lists(st.integers(0, 500), min_size=len(species),
                               max_size=len(species))))
    return ModelFile(tuple(species), tuple(reactions), (), init, ())


@settings(max_examples=150, deadline=None)
@given(models())
def test_serialize_round_trip_random(mf):
    again = parse_model_file(mf.serialize())
    assert again == mf
    a, b = mf.to_network(), again.to_network()
    np.testing.assert_array_equal(a.net_effect, b.net_effect)
    np.testing.assert_array_equal(a.rate_constants, b.rate_constants)
