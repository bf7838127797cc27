import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cavchem import hilbert as hb
from cavchem.hilbert import BasisState, ModeSpec, RegisterSpec

from oracles import grid_placements


def jc_space(constraint=None):
    return hb.enumerate_space([ModeSpec("a", 1)], [RegisterSpec("e", 2)], constraint)


def test_product_space_has_four_states():
    space = jc_space()
    assert space.dim == 4
    assert [s.key for s in space.states] == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_excitation_constraint_leaves_single_excitation_pair():
    space = jc_space(hb.total_equals(["a", "e"], 1))
    assert space.dim == 2
    assert set(space.states) == {space.make_state(a=0, e=1), space.make_state(a=1, e=0)}


def test_two_atoms_on_four_cells_matches_brute_force():
    modes = [ModeSpec("b", 1, "phonon")]
    regs = [
        RegisterSpec("pos_0", 4, "position"),
        RegisterSpec("pos_1", 4, "position"),
        RegisterSpec("cov_0_1", 2, "bond"),
    ]
    space = hb.enumerate_space(modes, regs, hb.exclusion(["pos_0", "pos_1"]))
    expected = len(grid_placements(4, 2)) * 2 * 2
    assert expected == 48
    assert space.dim == expected
    for s in space.states:
        v = space.values(s)
        assert v["pos_0"] != v["pos_1"]


def test_index_of_first_last_and_roundtrip():
    space = hb.enumerate_space([ModeSpec("a", 2)], [RegisterSpec("e", 2), RegisterSpec("s", 2, "spin")])
    assert hb.index_of(space, space.states[0]) == 0
    assert space.states[0] == BasisState((0,), (0, 0))
    assert hb.index_of(space, space.states[-1]) == space.dim - 1
    assert space.states[-1] == BasisState((2,), (1, 1))
    for i in range(space.dim):
        assert space.index_of(space.state_at(i)) == i


def test_unknown_state_raises():
    space = jc_space(hb.total_equals(["a", "e"], 1))
    with pytest.raises(KeyError):
        space.index_of(space.make_state(a=0, e=0))


def test_empty_space_error():
    with pytest.raises(hb.EmptySpaceError, match="empty space"):
        jc_space(lambda v: False)


def test_space_too_large_names_cap():
    with pytest.raises(hb.SpaceTooLargeError, match="3") as info:
        hb.enumerate_space([ModeSpec("a", 5)], max_dim=3)
    assert info.value.cap == 3


def test_env_var_overrides_cap(monkeypatch):
    monkeypatch.setenv(hb.MAX_DIM_ENV, "5")
    assert hb.default_max_dim() == 5
    with pytest.raises(hb.SpaceTooLargeError):
        hb.enumerate_space([ModeSpec("a", 9)])
    monkeypatch.delenv(hb.MAX_DIM_ENV)
    assert hb.default_max_dim() == 2**20


@pytest.mark.parametrize(
    "make",
    [
        lambda: ModeSpec("a", 0),
        lambda: ModeSpec("a", 1, "gluon"),
        lambda: RegisterSpec("e", 1),
        lambda: RegisterSpec("e", 2, "colour"),
    ],
)
def test_spec_validation(make):
    with pytest.raises(ValueError):
        make()


def test_duplicate_labels_rejected():
    with pytest.raises(ValueError, match="unique"):
        hb.enumerate_space([ModeSpec("x", 1)], [RegisterSpec("x", 2)])


def test_needs_a_factor():
    with pytest.raises(ValueError):
        hb.enumerate_space()


specs = st.tuples(
    st.lists(st.integers(1, 3), min_size=0, max_size=2),
    st.lists(st.integers(2, 3), min_size=0, max_size=3),
    st.integers(0, 4),
).filter(lambda x: x[0] or x[1])


@settings(max_examples=60, deadline=None)
@given(specs)
def test_enumeration_properties(shape):
    cutoffs, arities, total = shape
    modes = [ModeSpec(f"m{i}", c) for i, c in enumerate(cutoffs)]
    regs = [RegisterSpec(f"r{i}", a) for i, a in enumerate(arities)]
    labels = [m.label for m in modes] + [r.label for r in regs]
    constraint = hb.total_equals(labels, total)
    try:
        space = hb.enumerate_space(modes, regs, constraint)
    except hb.EmptySpaceError:
        return
    # bijectivity
    assert [space.index_of(s) for s in space.states] == list(range(space.dim))
    # lexicographic order
    keys = [s.key for s in space.states]
    assert keys == sorted(keys)
    # constraint closure
    assert all(constraint(space.values(s)) for s in space.states)
    # determinism
    again = hb.enumerate_space(modes, regs, constraint)
    assert again.states == space.states
