"""
Composite basis states and finite Hilbert-space enumeration.

A space is the (optionally constrained) product of bosonic modes truncated at
a cutoff and discrete registers (orbital level, spin, grid position, bond
flag). States are ordered lexicographically over modes first, then registers,
both in declaration order.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np

DEFAULT_MAX_DIM = 2**20
MAX_DIM_ENV = "SIM_MAX_DIM"

MODE_KINDS = ("photon", "phonon")
REGISTER_KINDS = ("orbital", "spin", "position", "bond")

Constraint = Callable[[Mapping[str, int]], bool]


class EmptySpaceError(ValueError):
    """Raised when a constraint excludes every basis state."""


class SpaceTooLargeError(ValueError):
    """Raised when enumeration exceeds the configured dimension cap."""

    def __init__(self, cap: int):
        super().__init__(
            f"space too large: more than {cap} admissible states "
            f"(raise the cap via {MAX_DIM_ENV} or max_dim)"
        )
        self.cap = cap


def default_max_dim() -> int:
    """Dimension cap, honouring the ``SIM_MAX_DIM`` environment variable."""
    raw = os.environ.get(MAX_DIM_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_MAX_DIM
    cap = int(raw)
    if cap < 1:
        raise ValueError(f"{MAX_DIM_ENV} must be a positive integer, got {raw!r}")
    return cap


@dataclass(frozen=True)
class ModeSpec:
    """A truncated bosonic mode holding occupations ``0..cutoff``."""

    label: str
    cutoff: int
    kind: str = "photon"

    def __post_init__(self):
        if self.kind not in MODE_KINDS:
            raise ValueError(f"mode {self.label!r}: unknown kind {self.kind!r}")
        if int(self.cutoff) < 1:
            raise ValueError(f"mode {self.label!r}: cutoff must be >= 1, got {self.cutoff}")


@dataclass(frozen=True)
class RegisterSpec:
    """A discrete register taking values ``0..arity-1``."""

    label: str
    arity: int
    kind: str = "orbital"

    def __post_init__(self):
        if self.kind not in REGISTER_KINDS:
            raise ValueError(f"register {self.label!r}: unknown kind {self.kind!r}")
        minimum = 1 if self.kind == "position" else 2
        if int(self.arity) < minimum:
            raise ValueError(
                f"register {self.label!r}: arity must be >= {minimum}, got {self.arity}"
            )


@dataclass(frozen=True, order=True)
class BasisState:
    """Occupation label: one integer per mode, then one per register."""

    modes: tuple[int, ...]
    registers: tuple[int, ...] = ()

    @property
    def key(self) -> tuple[int, ...]:
        return self.modes + self.registers


@dataclass(frozen=True, eq=False)
class HilbertSpace:
    """Ordered, immutable enumeration of admissible basis states."""

    modes: tuple[ModeSpec, ...]
    registers: tuple[RegisterSpec, ...]
    states: tuple[BasisState, ...]
    constraint: Optional[Constraint] = None
    _index: dict = field(default_factory=dict, repr=False)
    _slots: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        labels = [m.label for m in self.modes] + [r.label for r in self.registers]
        if len(set(labels)) != len(labels):
            raise ValueError(f"labels must be unique, got {labels}")
        self._slots.update({lab: i for i, lab in enumerate(labels)})
        self._index.update({s: i for i, s in enumerate(self.states)})

    @property
    def dim(self) -> int:
        return len(self.states)

    @property
    def labels(self) -> list[str]:
        return list(self._slots)

    def __len__(self) -> int:
        return self.dim

    def __contains__(self, s: BasisState) -> bool:
        return s in self._index

    def mode(self, label: str) -> ModeSpec:
        for m in self.modes:
            if m.label == label:
                return m
        raise KeyError(f"unknown mode label {label!r}")

    def register(self, label: str) -> RegisterSpec:
        for r in self.registers:
            if r.label == label:
                return r
        raise KeyError(f"unknown register label {label!r}")

    def slot(self, label: str) -> int:
        """Position of ``label`` in the flattened (modes + registers) key."""
        try:
            return self._slots[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def index_of(self, s: BasisState) -> int:
        try:
            return self._index[s]
        except KeyError:
            raise KeyError(f"state {s} is not in this space") from None

    def state_at(self, i: int) -> BasisState:
        return self.states[i]

    def values(self, s: BasisState) -> dict[str, int]:
        """Label -> value mapping for one state."""
        return dict(zip(self._slots, s.key))

    def make_state(self, **values: int) -> BasisState:
        """Build a state from keyword values; unspecified labels default to 0."""
        unknown = set(values) - set(self._slots)
        if unknown:
            raise KeyError(f"unknown labels {sorted(unknown)}")
        nm = len(self.modes)
        key = [int(values.get(lab, 0)) for lab in self._slots]
        return BasisState(tuple(key[:nm]), tuple(key[nm:]))

    def from_values(self, values: Mapping[str, int]) -> BasisState:
        nm = len(self.modes)
        key = [int(values[lab]) for lab in self._slots]
        return BasisState(tuple(key[:nm]), tuple(key[nm:]))

    def lookup(self, values: Mapping[str, int]) -> Optional[int]:
        """Index of the state with these values, or None if it is not admissible."""
        return self._index.get(self.from_values(values))

    def basis_vector(self, i: int) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[i] = 1.0
        return v

    def column(self, label: str) -> np.ndarray:
        """Integer array of ``label``'s value for every basis state."""
        k = self.slot(label)
        return np.array([s.key[k] for s in self.states], dtype=int)


def enumerate_space(
    modes: Sequence[ModeSpec] = (),
    registers: Sequence[RegisterSpec] = (),
    constraint: Optional[Constraint] = None,
    max_dim: Optional[int] = None,
) -> HilbertSpace:
    """Enumerate every admissible combination of mode and register values.

    Parameters
    ----------
    modes, registers : sequences of specs
        Declaration order fixes the lexicographic ordering of the result.
    constraint : callable, optional
        Admissibility predicate receiving a ``{label: value}`` mapping.
    max_dim : int, optional
        Hard cap on the number of admissible states. Defaults to
        :func:`default_max_dim`.

    Raises
    ------
    EmptySpaceError
        If no combination satisfies the constraint.
    SpaceTooLargeError
        If more than ``max_dim`` states are admissible.
    """
    modes = tuple(modes)
    registers = tuple(registers)
    if not modes and not registers:
        raise ValueError("a space needs at least one mode or register")
    cap = default_max_dim() if max_dim is None else int(max_dim)
    labels = [m.label for m in modes] + [r.label for r in registers]
    ranges = [range(m.cutoff + 1) for m in modes] + [range(r.arity) for r in registers]
    nm = len(modes)

    states = []
    for key in itertools.product(*ranges):
        if constraint is not None and not constraint(dict(zip(labels, key))):
            continue
        if len(states) >= cap:
            raise SpaceTooLargeError(cap)
        states.append(BasisState(key[:nm], key[nm:]))
    if not states:
        raise EmptySpaceError("empty space: the constraint excludes every basis state")
    return HilbertSpace(modes, registers, tuple(states), constraint)


def index_of(space: HilbertSpace, s: BasisState) -> int:
    return space.index_of(s)


def all_of(*predicates: Optional[Constraint]) -> Constraint:
    """Conjunction of predicates; ``None`` entries are skipped."""
    preds = [p for p in predicates if p is not None]

    def check(values):
        return all(p(values) for p in preds)

    return check


def total_equals(labels: Iterable[str], total: int) -> Constraint:
    """Constraint fixing the sum of the given labels' values."""
    labels = tuple(labels)

    def check(values):
        return sum(values[lab] for lab in labels) == total

    return check


def fixed(**pinned: int) -> Constraint:
    """Constraint pinning registers (e.g. frozen spins) to given values."""

    def check(values):
        return all(values[lab] == v for lab, v in pinned.items())

    return check


def exclusion(position_labels: Iterable[str]) -> Constraint:
    """Hard-core exclusion: no two position registers share a cell."""
    labels = tuple(position_labels)

    def check(values):
        cells = [values[lab] for lab in labels]
        return len(set(cells)) == len(cells)

    return check
