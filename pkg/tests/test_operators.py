import math

import numpy as np
import pytest

from cavchem import hilbert as hb
from cavchem import models as M
from cavchem import operators as ops
from cavchem.hilbert import ModeSpec, RegisterSpec
from cavchem.operators import CouplingSpec, SparseOperator

from oracles import jc_block_eigenvalues


@pytest.fixture
def jc():
    return hb.enumerate_space([ModeSpec("a", 2)], [RegisterSpec("e", 2)])


def apply(op, space, **values):
    return op @ space.basis_vector(space.index_of(space.make_state(**values)))


def test_sparse_operator_merges_duplicates():
    op = SparseOperator.from_entries(2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 3.0)])
    assert op.entries() == [(0, 1, 3 + 0j), (1, 0, 3 + 0j)]
    assert op.hermitian
    assert not SparseOperator.from_entries(2, [(0, 1, 1.0)]).hermitian
    with pytest.raises(ValueError):
        SparseOperator.from_entries(2, [(2, 0, 1.0)])


def test_annihilate(jc):
    a = ops.ladder(jc, "a", "annihilate")
    np.testing.assert_allclose(apply(a, jc, a=1), jc.basis_vector(jc.index_of(jc.make_state(a=0))))
    np.testing.assert_array_equal(apply(a, jc, a=0), np.zeros(jc.dim))


def test_create_and_truncation(jc):
    ad = ops.ladder(jc, "a", "create")
    out = apply(ad, jc, a=1)
    assert out[jc.index_of(jc.make_state(a=2))] == pytest.approx(math.sqrt(2))
    np.testing.assert_array_equal(apply(ad, jc, a=2), np.zeros(jc.dim))


def test_create_is_adjoint_of_annihilate(jc):
    a = ops.ladder(jc, "a", "annihilate")
    ad = ops.ladder(jc, "a", "create")
    assert (ad - a.dag()).nnz == 0


def test_unknown_mode(jc):
    with pytest.raises(KeyError):
        ops.ladder(jc, "b", "create")
    with pytest.raises(ValueError):
        ops.ladder(jc, "a", "sideways")


def test_two_level(jc):
    up = ops.two_level(jc, "e", "raise")
    down = ops.two_level(jc, "e", "lower")
    np.testing.assert_allclose(apply(down, jc, e=1), jc.basis_vector(jc.index_of(jc.make_state(e=0))))
    np.testing.assert_array_equal(apply(up, jc, e=1), np.zeros(jc.dim))
    assert (up.dag() - down).nnz == 0
    three = hb.enumerate_space([], [RegisterSpec("p", 3, "position")])
    with pytest.raises(ops.ShapeError):
        ops.two_level(three, "p", "raise")


def single_excitation_block(H, space):
    idx = [space.index_of(space.make_state(a=0, e=1)), space.index_of(space.make_state(a=1, e=0))]
    return H.toarray()[np.ix_(idx, idx)]


def test_jc_block_values(jc):
    H = ops.build_jc_rwa(jc, CouplingSpec(g_mol=0.01))
    assert H.hermitian
    np.testing.assert_allclose(single_excitation_block(H, jc), [[1, 0.01], [0.01, 1]])
    np.testing.assert_allclose(
        np.linalg.eigvalsh(single_excitation_block(H, jc)), jc_block_eigenvalues(1.0, 0.01), atol=1e-14
    )


def test_jc_without_coupling_is_number_operator(jc):
    H = ops.build_jc_rwa(jc, CouplingSpec(g_mol=0.0))
    expected = ops.number_operator(jc, {"a": 1.0, "e": 1.0})
    assert (H - expected).nnz == 0


def test_jc_conserves_single_excitation(jc):
    H = ops.build_jc_rwa(jc, CouplingSpec(g_mol=0.01))
    out = apply(H, jc, a=0, e=1)
    block = {jc.index_of(jc.make_state(a=0, e=1)), jc.index_of(jc.make_state(a=1, e=0))}
    leak = [abs(out[i]) for i in range(jc.dim) if i not in block]
    assert max(leak) == 0.0


def test_jc_wrong_shape():
    space = hb.enumerate_space([ModeSpec("a", 1), ModeSpec("b", 1)], [RegisterSpec("e", 2)])
    with pytest.raises(ops.ShapeError):
        ops.build_jc_rwa(space, CouplingSpec())


def test_coupling_validation():
    with pytest.raises(ValueError, match="alpha"):
        CouplingSpec(alpha=0.8, beta=0.8)
    with pytest.raises(ValueError):
        CouplingSpec(omega=0.0)
    with pytest.warns(UserWarning, match="RWA validity"):
        assert CouplingSpec(g_mol=0.5).check_rwa()
    assert CouplingSpec(g_mol=0.01).check_rwa() is None


@pytest.mark.parametrize(
    "alpha,beta,expected",
    [
        (1.0, 0.0, np.eye(2)),
        (1 / math.sqrt(2), 1 / math.sqrt(2), np.array([[1, 1], [-1, 1]]) / math.sqrt(2)),
    ],
)
def test_hybrid_basis_change(alpha, beta, expected):
    u = ops.hybrid_basis_change(CouplingSpec(alpha=alpha, beta=beta))
    np.testing.assert_allclose(u, expected, atol=1e-15)


@pytest.mark.parametrize("theta", np.linspace(0.05, 1.5, 7))
def test_hybrid_levels_orthogonal(theta):
    u = ops.hybrid_basis_change(CouplingSpec(alpha=math.cos(theta), beta=math.sin(theta)))
    assert abs(u[0] @ u[1]) < 1e-15
    np.testing.assert_allclose(u @ u.T, np.eye(2), atol=1e-15)


# --- two-electron --------------------------------------------------------


@pytest.fixture
def two_e():
    return M.build(M.default_config("oh_2e"))


def test_two_electron_zero_coupling_is_diagonal():
    b = M.build(M.default_config("oh_2e").replace(coupling=CouplingSpec(g_mol=0.0)))
    H = b.hamiltonian.toarray()
    np.testing.assert_array_equal(H, np.diag(np.diag(H)))


def test_two_electron_annihilates_ground(two_e):
    s = two_e.space
    ground = s.make_state(a_up=0, a_down=0, e1=0, s1=ops.SPIN_UP, e2=0, s2=ops.SPIN_DOWN)
    out = two_e.hamiltonian @ s.basis_vector(s.index_of(ground))
    assert np.max(np.abs(out)) == 0.0


def test_two_electron_selection_rule(two_e):
    s = two_e.space
    H = two_e.hamiltonian.toarray()
    for j, src in enumerate(s.states):
        vs = s.values(src)
        for i in np.flatnonzero(np.abs(H[:, j]) > 0):
            if i == j:
                continue
            vd = s.values(s.states[i])
            changed = {k for k in vs if vs[k] != vd[k]}
            # one photon of spin sigma traded against one level flip of the electron carrying sigma
            assert changed in ({"a_up", "e1"}, {"a_down", "e2"})
            mode = "a_up" if "a_up" in changed else "a_down"
            lvl = "e1" if mode == "a_up" else "e2"
            assert vd[mode] - vs[mode] == -(vd[lvl] - vs[lvl])


def test_two_electron_wrong_shape(jc):
    with pytest.raises(ops.ShapeError):
        ops.build_two_electron_H(jc, CouplingSpec())


# --- grid ------------------------------------------------------------------


def test_center_atom_has_four_hops():
    space = M.grid_space(3, 1, 1)
    H = ops.build_grid_H(space, CouplingSpec(g_tun=1.0, g_cov=0.0))
    j = space.index_of(space.make_state(b=0, pos_0=4))
    col = H.toarray()[:, j]
    off = [v for i, v in enumerate(col) if i != j and v != 0]
    assert off == [1.0] * 4


def test_corner_atom_has_two_hops():
    space = M.grid_space(3, 1, 1)
    H = ops.build_grid_H(space, CouplingSpec(g_tun=1.0, g_cov=0.0))
    j = space.index_of(space.make_state(b=0, pos_0=0))
    row = H.toarray()[j]
    assert sum(1 for i, v in enumerate(row) if i != j and v != 0) == 2


def test_bonded_atoms_do_not_tunnel():
    space = M.grid_space(3, 2, 1)
    H = ops.build_grid_H(space, CouplingSpec(g_tun=1.0, g_cov=0.5))
    j = space.index_of(space.make_state(b=0, pos_0=4, pos_1=5, cov_0_1=1))
    col = H.toarray()[:, j]
    targets = [space.values(space.states[i]) for i in np.flatnonzero(col) if i != j]
    # only bond breaking is possible
    assert targets == [{"b": 1, "pos_0": 4, "pos_1": 5, "cov_0_1": 0}]
    assert col[space.index_of(space.make_state(b=1, pos_0=4, pos_1=5))] == 0.5


def test_grid_hamiltonian_is_hermitian_and_conserves_excitations():
    space = M.grid_space(3, 3, 2)
    c = CouplingSpec(g_tun=0.3, g_cov=0.7)
    H = ops.build_grid_H(space, c)
    assert H.hermitian
    layout = ops.grid_layout(space)
    n_exc = ops.number_operator(space, {"b": 1.0, **{lab: 1.0 for lab in layout.pairs}})
    assert ops.commutator(ops.grid_covalent(space, c.g_cov), n_exc).norm() <= 1e-12
    assert ops.commutator(H, n_exc).norm() <= 1e-12


def test_no_double_bonding():
    space = M.grid_space(3, 3, 2)
    for s in space.states:
        v = space.values(s)
        per_atom = [0, 0, 0]
        for lab in ("cov_0_1", "cov_0_2", "cov_1_2"):
            if v[lab]:
                i, j = map(int, lab.split("_")[1:])
                per_atom[i] += 1
                per_atom[j] += 1
        assert max(per_atom) <= 1


def test_grid_wrong_shape(jc):
    with pytest.raises(ops.ShapeError):
        ops.build_grid_H(jc, CouplingSpec())


# --- hydrogen bond --------------------------------------------------------


@pytest.fixture(scope="module")
def hbond():
    return M.build(M.default_config("hbond"))


def test_hbond_zero_coupling_is_diagonal(hbond):
    H = ops.build_hbond_H(hbond.space, CouplingSpec(g_mol=0.0, g_spin=0.0, g_tun=0.0, g_cov=0.0))
    dense = H.toarray()
    np.testing.assert_array_equal(dense, np.diag(np.diag(dense)))


def test_hbond_families_conserve_their_quanta(hbond):
    c = CouplingSpec(g_mol=0.3, g_spin=0.2, g_tun=0.5, g_cov=0.7)
    parts = ops.hbond_terms(hbond.space, c)
    numbers = ops.hbond_family_numbers(hbond.space)
    for family in ("mol", "spin", "cov"):
        assert parts[family].nnz > 0
        assert ops.commutator(parts[family], numbers[family]).norm() <= 1e-12
    for n in numbers.values():
        assert ops.commutator(parts["tun"], n).norm() <= 1e-12
    assert ops.build_hbond_H(hbond.space, c).hermitian


def test_hbond_initial_state_unique(hbond):
    s = hbond.space.make_state(**M.HBOND_INITIAL)
    idx = hbond.space.index_of(s)
    assert [i for i, t in enumerate(hbond.space.states) if t == s] == [idx]
    assert hbond.initial.amplitudes[idx] == 1.0


def test_hbond_wrong_shape(jc):
    with pytest.raises(ops.ShapeError):
        ops.build_hbond_H(jc, CouplingSpec())


@pytest.mark.parametrize("scenario", M.SCENARIOS)
def test_every_shipped_hamiltonian_is_hermitian(scenario):
    H = M.build(M.default_config(scenario)).hamiltonian
    assert H.hermitian
    assert np.max(np.abs((H - H.dag()).toarray())) <= 1e-12
