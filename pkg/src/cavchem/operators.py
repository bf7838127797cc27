"""
Sparse operators over enumerated Hilbert spaces and the scenario Hamiltonians.

Operators are assembled directly from actions on basis labels rather than by
multiplying single-mode matrices. A constrained space (e.g. a fixed excitation
sector) is not closed under a lone ladder operator, so products like
``b^+ sigma_cov`` must be applied to labels before projecting onto the space;
targets that fall outside the space are dropped.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertSpace

HERMITIAN_TOL = 1e-12
RWA_LIMIT = 1e-2

# spin register values
SPIN_DOWN = 0
SPIN_UP = 1

# bond register values for the hydrogen-bond model: 2 * exist + far
BOND_NOT_CLOSE = 0
BOND_NOT_FAR = 1
BOND_EXIST_CLOSE = 2
BOND_EXIST_FAR = 3


class ShapeError(ValueError):
    """The space does not have the modes/registers a builder expects."""


class SparseOperator:
    """Immutable sparse complex matrix on a space of dimension ``dim``.

    Duplicate coordinates are summed and explicit zeros dropped on
    construction. ``hermitian`` is True only if ``A == A^H`` entrywise within
    1e-12.
    """

    __slots__ = ("_m", "hermitian")

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=complex)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        self._m = m
        diff = m - m.getH()
        self.hermitian = bool(diff.nnz == 0 or np.max(np.abs(diff.data)) <= HERMITIAN_TOL)

    @classmethod
    def from_entries(cls, dim: int, entries: Iterable[tuple[int, int, complex]]):
        entries = list(entries)
        if not entries:
            return cls.zeros(dim)
        rows, cols, vals = zip(*entries)
        if max(max(rows), max(cols)) >= dim or min(min(rows), min(cols)) < 0:
            raise ValueError(f"entry index out of range for dim {dim}")
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)))

    @classmethod
    def zeros(cls, dim: int):
        return cls(sp.csr_matrix((dim, dim), dtype=complex))

    @classmethod
    def identity(cls, dim: int):
        return cls(sp.identity(dim, dtype=complex, format="csr"))

    @classmethod
    def diagonal(cls, values):
        return cls(sp.diags(np.asarray(values, dtype=complex), format="csr"))

    @property
    def dim(self) -> int:
        return self._m.shape[0]

    @property
    def nnz(self) -> int:
        return self._m.nnz

    @property
    def matrix(self) -> sp.csr_matrix:
        return self._m

    def entries(self) -> list[tuple[int, int, complex]]:
        coo = self._m.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self) -> np.ndarray:
        return self._m.toarray()

    def dag(self) -> "SparseOperator":
        return SparseOperator(self._m.getH())

    def norm(self) -> float:
        """Largest absolute entry (0 for the zero operator)."""
        return float(np.max(np.abs(self._m.data))) if self._m.nnz else 0.0

    def restrict(self, indices: Sequence[int]) -> "SparseOperator":
        idx = np.asarray(indices, dtype=int)
        return SparseOperator(self._m[idx][:, idx])

    def __add__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self._m + other._m)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self._m - other._m)
        return NotImplemented

    def __neg__(self):
        return SparseOperator(-self._m)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SparseOperator(self._m * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator(self._m @ other._m)
        return self._m @ other

    def __repr__(self):
        return f"SparseOperator(dim={self.dim}, nnz={self.nnz}, hermitian={self.hermitian})"


def commutator(a: SparseOperator, b: SparseOperator) -> SparseOperator:
    return a @ b - b @ a


# ---------------------------------------------------------------------------
# label actions


Action = Callable[[dict], Optional[tuple[dict, float]]]


def lower_mode(label: str) -> Action:
    def act(v):
        n = v[label]
        if n == 0:
            return None
        w = dict(v)
        w[label] = n - 1
        return w, math.sqrt(n)

    return act


def raise_mode(label: str, cutoff: int) -> Action:
    def act(v):
        n = v[label]
        if n >= cutoff:
            return None
        w = dict(v)
        w[label] = n + 1
        return w, math.sqrt(n + 1)

    return act


def set_register(label: str, src: int, dst: int) -> Action:
    """|dst><src| on one register."""

    def act(v):
        if v[label] != src:
            return None
        w = dict(v)
        w[label] = dst
        return w, 1.0

    return act


def gated(predicate: Callable[[Mapping[str, int]], bool], action: Action) -> Action:
    """Apply ``action`` only on states where ``predicate`` holds (pre-action)."""

    def act(v):
        return action(v) if predicate(v) else None

    return act


def compose(*actions: Action) -> Action:
    """Operator product; the rightmost action is applied first."""

    def act(v):
        amp = 1.0
        for a in reversed(actions):
            res = a(v)
            if res is None:
                return None
            v, f = res
            amp *= f
        return v, amp

    return act


def operator_from_actions(
    space: HilbertSpace,
    terms: Sequence[tuple[complex, Action]],
    diagonal: Optional[Callable[[Mapping[str, int]], float]] = None,
) -> SparseOperator:
    """Sum of ``coef * action`` terms (plus an optional diagonal) on ``space``.

    Targets outside the space are discarded, i.e. the result is the
    compression ``P A P`` onto the enumerated states.
    """
    rows, cols, vals = [], [], []
    for j, s in enumerate(space.states):
        v = space.values(s)
        if diagonal is not None:
            d = diagonal(v)
            if d != 0:
                rows.append(j)
                cols.append(j)
                vals.append(d)
        for coef, action in terms:
            if coef == 0:
                continue
            res = action(v)
            if res is None:
                continue
            i = space.lookup(res[0])
            if i is None:
                continue
            rows.append(i)
            cols.append(j)
            vals.append(coef * res[1])
    return SparseOperator(
        sp.coo_matrix((vals, (rows, cols)), shape=(space.dim, space.dim), dtype=complex)
    )


def number_operator(space: HilbertSpace, weights: Mapping[str, float]) -> SparseOperator:
    """Diagonal operator sum_label weight * value(label)."""
    total = np.zeros(space.dim)
    for label, w in weights.items():
        total += w * space.column(label)
    return SparseOperator.diagonal(total)


def register_projector(space: HilbertSpace, label: str, values: Iterable[int]) -> SparseOperator:
    col = space.column(label)
    return SparseOperator.diagonal(np.isin(col, list(values)).astype(float))


# ---------------------------------------------------------------------------
# couplings


@dataclass(frozen=True)
class CouplingSpec:
    """Frequencies, couplings and hybridization weights (hbar = 1 units)."""

    hbar: float = 1.0
    omega: float = 1.0
    g_mol: float = 0.01
    g_tun: float = 0.0
    g_cov: float = 0.0
    g_spin: float = 0.0
    alpha: float = 0.8
    beta: float = 0.6
    omegas: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.hbar <= 0:
            raise ValueError(f"hbar must be > 0, got {self.hbar}")
        for name, w in [("omega", self.omega), *self.omegas.items()]:
            if w <= 0:
                raise ValueError(f"omega for {name!r} must be > 0, got {w}")
        norm = self.alpha**2 + self.beta**2
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(
                f"alpha^2 + beta^2 must equal 1, got {norm:.12g} "
                f"(alpha={self.alpha}, beta={self.beta})"
            )

    def omega_for(self, label: str) -> float:
        return self.omegas.get(label, self.omega)

    @property
    def rwa_ratio(self) -> float:
        """Largest |g| / smallest omega."""
        g = max(abs(self.g_mol), abs(self.g_tun), abs(self.g_cov), abs(self.g_spin))
        return g / min([self.omega, *self.omegas.values()])

    def check_rwa(self) -> Optional[str]:
        """Warn (and return the message) when couplings exceed the RWA bound."""
        ratio = self.rwa_ratio
        if ratio > RWA_LIMIT:
            msg = f"RWA validity: g/omega = {ratio:.3g} exceeds {RWA_LIMIT:g}"
            warnings.warn(msg, stacklevel=2)
            return msg
        return None


def hybrid_basis_change(c: CouplingSpec) -> np.ndarray:
    """Orthogonal matrix whose rows express |Psi_0>, |Psi_1> in the site basis {|O>, |H>}."""
    a, b = c.alpha, c.beta
    if abs(a * a + b * b - 1.0) > 1e-9:
        raise ValueError("alpha^2 + beta^2 must equal 1")
    u = np.array([[a, b], [-b, a]], dtype=float)
    if not np.allclose(u @ u.T, np.eye(2), atol=1e-12):
        raise ValueError("hybridization matrix is not unitary")
    return u


# ---------------------------------------------------------------------------
# ladder and two-level operators


def ladder(space: HilbertSpace, mode_label: str, direction: str) -> SparseOperator:
    """Truncated boson creation/annihilation operator; create on the cutoff gives 0."""
    mode = space.mode(mode_label)
    if direction == "annihilate":
        act = lower_mode(mode.label)
    elif direction == "create":
        act = raise_mode(mode.label, mode.cutoff)
    else:
        raise ValueError(f"direction must be 'create' or 'annihilate', got {direction!r}")
    return operator_from_actions(space, [(1.0, act)])


def two_level(space: HilbertSpace, register_label: str, direction: str) -> SparseOperator:
    reg = space.register(register_label)
    if reg.arity != 2:
        raise ShapeError(f"register {reg.label!r} has arity {reg.arity}, expected 2")
    if direction == "raise":
        act = set_register(reg.label, 0, 1)
    elif direction == "lower":
        act = set_register(reg.label, 1, 0)
    else:
        raise ValueError(f"direction must be 'raise' or 'lower', got {direction!r}")
    return operator_from_actions(space, [(1.0, act)])


def _of_kind(items, kinds):
    return [x for x in items if x.kind in kinds]


# ---------------------------------------------------------------------------
# scenario Hamiltonians


def build_jc_rwa(space: HilbertSpace, c: CouplingSpec) -> SparseOperator:
    """H = w a^+a + w s^+s + g (s^+ a + s a^+) with g = ``c.g_mol``."""
    photons = _of_kind(space.modes, ("photon",))
    levels = [r for r in space.registers if r.arity == 2 and r.kind == "orbital"]
    if len(space.modes) != 1 or len(photons) != 1 or len(space.registers) != 1 or len(levels) != 1:
        raise ShapeError("JC Hamiltonian needs exactly one photon mode and one two-level register")
    a, s = photons[0], levels[0]
    w_a, w_s = c.omega_for(a.label), c.omega_for(s.label)
    terms = [
        (c.g_mol, compose(set_register(s.label, 0, 1), lower_mode(a.label))),
        (c.g_mol, compose(set_register(s.label, 1, 0), raise_mode(a.label, a.cutoff))),
    ]
    return operator_from_actions(
        space, terms, diagonal=lambda v: c.hbar * (w_a * v[a.label] + w_s * v[s.label])
    )


def build_two_electron_H(space: HilbertSpace, c: CouplingSpec) -> SparseOperator:
    """Two electrons, each a two-level hybrid register with a spin tag.

    The first photon mode carries spin up, the second spin down. The spin-
    resolved lowering operator of electron j with spin s acts on the level
    register of electron j only if its spin register holds s, which realizes

        H_omega = g_mol sum_s [a_s^+ (s_1s + s_2s) + a_s (s_1s^+ + s_2s^+)].
    """
    photons = _of_kind(space.modes, ("photon",))
    levels = _of_kind(space.registers, ("orbital",))
    spins = _of_kind(space.registers, ("spin",))
    if len(photons) != 2 or len(levels) != 2 or len(spins) != 2 or len(space.registers) != 4:
        raise ShapeError(
            "two-electron Hamiltonian needs two photon modes, two orbital and two spin registers"
        )
    if any(r.arity != 2 for r in levels + spins):
        raise ShapeError("orbital and spin registers must be two-level")
    mode_spin = {photons[0].label: SPIN_UP, photons[1].label: SPIN_DOWN}

    terms = []
    for mode in photons:
        tag = mode_spin[mode.label]
        for lvl, spin in zip(levels, spins):
            has_spin = (lambda sl, t: lambda v: v[sl] == t)(spin.label, tag)
            terms.append(
                (c.g_mol, gated(has_spin, compose(raise_mode(mode.label, mode.cutoff),
                                                  set_register(lvl.label, 1, 0))))
            )
            terms.append(
                (c.g_mol, gated(has_spin, compose(lower_mode(mode.label),
                                                  set_register(lvl.label, 0, 1))))
            )

    def diag(v):
        e = sum(c.omega_for(m.label) * v[m.label] for m in photons)
        # sum over (electron, spin) of s^+ s reduces to the electron's level
        # because exactly one spin projector is nonzero
        e += sum(c.omega_for(lvl.label) * v[lvl.label] for lvl in levels)
        return c.hbar * e

    return operator_from_actions(space, terms, diagonal=diag)


@dataclass(frozen=True)
class GridLayout:
    """Geometry of the phonon-grid space: k x k cells, atoms, bond pairs."""

    k: int
    atoms: tuple[str, ...]
    pairs: dict

    def cell(self, row: int, col: int) -> int:
        return row * self.k + col

    def rowcol(self, cell: int) -> tuple[int, int]:
        return divmod(cell, self.k)

    def neighbors(self, cell: int) -> list[int]:
        r, col = self.rowcol(cell)
        out = []
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, col + dc
            if 0 <= rr < self.k and 0 <= cc < self.k:
                out.append(self.cell(rr, cc))
        return out

    def adjacent(self, c1: int, c2: int) -> bool:
        r1, k1 = self.rowcol(c1)
        r2, k2 = self.rowcol(c2)
        return abs(r1 - r2) + abs(k1 - k2) == 1


def bond_label(i: int, j: int) -> str:
    return f"cov_{i}_{j}"


def grid_layout(space: HilbertSpace) -> GridLayout:
    positions = _of_kind(space.registers, ("position",))
    if not positions:
        raise ShapeError("grid Hamiltonian needs position registers")
    cells = positions[0].arity
    k = math.isqrt(cells)
    if k * k != cells or any(p.arity != cells for p in positions):
        raise ShapeError("position registers must all range over k*k cells")
    atoms = tuple(p.label for p in positions)
    pairs = {}
    for reg in _of_kind(space.registers, ("bond",)):
        parts = reg.label.split("_")
        if len(parts) != 3 or parts[0] != "cov" or reg.arity != 2:
            raise ShapeError(f"bond register {reg.label!r} must be named cov_<i>_<j> with arity 2")
        i, j = int(parts[1]), int(parts[2])
        if not (0 <= i < j < len(atoms)):
            raise ShapeError(f"bond register {reg.label!r} refers to unknown atoms")
        pairs[reg.label] = (atoms[i], atoms[j])
    if len(space.modes) != 1 or space.modes[0].kind != "phonon":
        raise ShapeError("grid Hamiltonian needs exactly one phonon mode")
    return GridLayout(k, atoms, pairs)


def _bonded(layout: GridLayout, v: Mapping[str, int], atom: str) -> bool:
    return any(v[lab] == 1 for lab, pair in layout.pairs.items() if atom in pair)


def grid_tunneling(space: HilbertSpace, g_tun: float) -> SparseOperator:
    """Hops of unbonded atoms to free orthogonal neighbour cells."""
    layout = grid_layout(space)
    terms = []
    for atom in layout.atoms:
        for direction in range(4):
            terms.append((g_tun, _hop(layout, atom, direction)))
    return operator_from_actions(space, terms)


def _hop(layout: GridLayout, atom: str, direction: int) -> Action:
    dr, dc = ((-1, 0), (1, 0), (0, -1), (0, 1))[direction]

    def act(v):
        if _bonded(layout, v, atom):
            return None
        r, col = layout.rowcol(v[atom])
        rr, cc = r + dr, col + dc
        if not (0 <= rr < layout.k and 0 <= cc < layout.k):
            return None
        target = layout.cell(rr, cc)
        if any(v[other] == target for other in layout.atoms if other != atom):
            return None
        w = dict(v)
        w[atom] = target
        return w, 1.0

    return act


def grid_covalent(space: HilbertSpace, g_cov: float) -> SparseOperator:
    """g_cov sum_pairs (b^+ s_cov + b s_cov^+) over adjacent, otherwise unbonded pairs."""
    layout = grid_layout(space)
    b = space.modes[0]
    terms = []
    for lab, (x, y) in layout.pairs.items():

        def can_form(v, lab=lab, x=x, y=y):
            return (
                layout.adjacent(v[x], v[y])
                and not _bonded(layout, v, x)
                and not _bonded(layout, v, y)
            )

        terms.append((g_cov, gated(can_form, compose(set_register(lab, 0, 1), lower_mode(b.label)))))
        terms.append((g_cov, compose(set_register(lab, 1, 0), raise_mode(b.label, b.cutoff))))
    return operator_from_actions(space, terms)


def build_grid_H(space: HilbertSpace, c: CouplingSpec) -> SparseOperator:
    """H = H_tun + H_cov + w b^+b + w sum s_cov^+ s_cov on a grid space."""
    layout = grid_layout(space)
    b = space.modes[0]
    w_b = c.omega_for(b.label)

    def diag(v):
        e = w_b * v[b.label]
        e += sum(c.omega_for(lab) * v[lab] for lab in layout.pairs)
        return c.hbar * e

    energy = operator_from_actions(space, [], diagonal=diag)
    return energy + grid_tunneling(space, c.g_tun) + grid_covalent(space, c.g_cov)


HBOND_MODES = ("a_mol", "a_spin", "b")
HBOND_ELECTRONS = ("O1", "H", "O2")
HBOND_BONDS = ("cov_1", "cov_2")


def hbond_terms(space: HilbertSpace, c: CouplingSpec) -> dict[str, SparseOperator]:
    """The separate pieces of the hydrogen-bond Hamiltonian, keyed by family."""
    _check_hbond_shape(space)
    a_mol, a_spin, b = (space.mode(lab) for lab in HBOND_MODES)

    mol, spin = [], []
    for e in HBOND_ELECTRONS:
        lvl, sp_ = f"lvl_{e}", f"spin_{e}"
        mol.append((c.g_mol, compose(raise_mode(a_mol.label, a_mol.cutoff), set_register(lvl, 1, 0))))
        mol.append((c.g_mol, compose(lower_mode(a_mol.label), set_register(lvl, 0, 1))))
        spin.append((c.g_spin, compose(raise_mode(a_spin.label, a_spin.cutoff),
                                       set_register(sp_, SPIN_UP, SPIN_DOWN))))
        spin.append((c.g_spin, compose(lower_mode(a_spin.label),
                                       set_register(sp_, SPIN_DOWN, SPIN_UP))))

    tun, cov = [], []
    for bond in HBOND_BONDS:
        tun.append((c.g_tun, set_register(bond, BOND_NOT_CLOSE, BOND_NOT_FAR)))
        tun.append((c.g_tun, set_register(bond, BOND_NOT_FAR, BOND_NOT_CLOSE)))
        cov.append((c.g_cov, compose(set_register(bond, BOND_NOT_CLOSE, BOND_EXIST_CLOSE),
                                     lower_mode(b.label))))
        cov.append((c.g_cov, compose(set_register(bond, BOND_EXIST_CLOSE, BOND_NOT_CLOSE),
                                     raise_mode(b.label, b.cutoff))))

    def diag(v):
        e = sum(c.omega_for(m) * v[m] for m in HBOND_MODES)
        e += sum(c.omega_for(f"lvl_{x}") * v[f"lvl_{x}"] for x in HBOND_ELECTRONS)
        e += sum(c.omega_for(f"spin_{x}") * (v[f"spin_{x}"] == SPIN_UP) for x in HBOND_ELECTRONS)
        e += sum(c.omega_for(bd) * (v[bd] >= BOND_EXIST_CLOSE) for bd in HBOND_BONDS)
        return c.hbar * e

    return {
        "energy": operator_from_actions(space, [], diagonal=diag),
        "mol": operator_from_actions(space, mol),
        "spin": operator_from_actions(space, spin),
        "tun": operator_from_actions(space, tun),
        "cov": operator_from_actions(space, cov),
    }


def build_hbond_H(space: HilbertSpace, c: CouplingSpec) -> SparseOperator:
    """H = H_tun + H_cov + H_spin + H_mol + free energies of modes, levels, spins and bonds."""
    parts = hbond_terms(space, c)
    total = parts["energy"]
    for key in ("mol", "spin", "tun", "cov"):
        total = total + parts[key]
    return total


def hbond_family_numbers(space: HilbertSpace) -> dict[str, SparseOperator]:
    """Conserved quanta of each exchange family in the hydrogen-bond model."""
    _check_hbond_shape(space)
    mol = space.column("a_mol") + sum(space.column(f"lvl_{e}") for e in HBOND_ELECTRONS)
    spin = space.column("a_spin") + sum(
        (space.column(f"spin_{e}") == SPIN_UP).astype(int) for e in HBOND_ELECTRONS
    )
    cov = space.column("b") + sum(
        (space.column(bd) >= BOND_EXIST_CLOSE).astype(int) for bd in HBOND_BONDS
    )
    return {
        "mol": SparseOperator.diagonal(mol),
        "spin": SparseOperator.diagonal(spin),
        "cov": SparseOperator.diagonal(cov),
    }


def _check_hbond_shape(space: HilbertSpace) -> None:
    try:
        for lab in HBOND_MODES:
            space.mode(lab)
        for e in HBOND_ELECTRONS:
            if space.register(f"lvl_{e}").arity != 2 or space.register(f"spin_{e}").arity != 2:
                raise ShapeError(f"electron {e} registers must be two-level")
        for bd in HBOND_BONDS:
            if space.register(bd).arity != 4:
                raise ShapeError(f"bond register {bd} must have arity 4")
    except KeyError as exc:
        raise ShapeError(f"hydrogen-bond space is missing {exc}") from None
