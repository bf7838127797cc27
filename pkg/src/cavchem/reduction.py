"""
Amplitude-based state-space selection with connectivity repair.

States are ranked by the largest amplitude they reach during a pilot run in
the full space and the top fraction is kept. Keeping only large-amplitude
states can cut the transition graph (basis states as nodes, nonzero
off-diagonal Hamiltonian entries as edges) into pieces. The repair loop
checks connectivity and, while the graph is disconnected, adds every
neighbour of the current set in one sweep.

When the full graph itself splits into sectors (conserved quantities),
connectivity is required within each sector: the kept set must meet every
component of the full graph in a single connected piece.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .dynamics import (
    DensityMatrix,
    LindbladChannel,
    Observable,
    StateVector,
    evolve_closed,
    evolve_lindblad,
)
from .hilbert import HilbertSpace
from .models import ScenarioBundle
from .operators import SparseOperator

log = logging.getLogger(__name__)

EDGE_TOL = 1e-14
DISCARD_WARN = 1e-6
SEED = "seed-amplitude"
REPAIR = "neighbor-repair"


@dataclass(frozen=True)
class TransitionGraph:
    nodes: tuple[int, ...]
    edges: dict = field(default_factory=dict)  # (i, j) with i < j -> |H_ij|

    def adjacency(self) -> dict[int, list[int]]:
        adj = {n: [] for n in self.nodes}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj


@dataclass(frozen=True)
class ReducedSpace:
    kept: np.ndarray
    full_dim: int
    provenance: dict
    iterations: int = 0
    disconnected: bool = False

    def __post_init__(self):
        kept = np.asarray(self.kept, dtype=int)
        if kept.size == 0:
            raise ValueError("reduced space is empty")
        if np.any(np.diff(kept) <= 0):
            raise ValueError("kept indices must be strictly increasing")
        object.__setattr__(self, "kept", kept)

    @property
    def dim(self) -> int:
        return int(self.kept.size)

    @property
    def reduced_to_full(self) -> np.ndarray:
        return self.kept

    @property
    def full_to_reduced(self) -> dict[int, int]:
        return {int(f): r for r, f in enumerate(self.kept)}

    def tag_counts(self) -> dict[str, int]:
        counts = {SEED: 0, REPAIR: 0}
        for tag in self.provenance.values():
            counts[tag] += 1
        return counts


def amplitude_profile(bundle: ScenarioBundle, times: Sequence[float], solver: str = "closed") -> np.ndarray:
    """Per-state maximum over ``times`` of |<i|psi(t)>| (or sqrt(rho_ii) for open runs)."""
    times = np.asarray(times, dtype=float)
    if solver == "closed":
        traj = evolve_closed(bundle.hamiltonian, bundle.initial, times)
        return np.max(np.abs(traj.states), axis=0)
    if solver == "lindblad":
        cfg = bundle.config
        traj = evolve_lindblad(
            bundle.hamiltonian, bundle.channels, bundle.initial, times,
            dt=None if cfg is None else cfg.dt, omega=1.0 if cfg is None else cfg.coupling.omega,
        )
        pops = np.real(np.einsum("tii->ti", traj.states))
        return np.sqrt(np.clip(np.max(pops, axis=0), 0.0, None))
    raise ValueError(f"solver must be 'closed' or 'lindblad', got {solver!r}")


def _as_support(initial) -> list[int]:
    if initial is None:
        return []
    if isinstance(initial, (int, np.integer)):
        return [int(initial)]
    return sorted({int(i) for i in initial})


def select_top(
    profile: np.ndarray,
    keep_fraction: float,
    initial_index: Union[int, Sequence[int], None] = None,
) -> np.ndarray:
    """The ceil(keep_fraction * dim) largest entries; ties go to the lower index.

    Every index in ``initial_index`` (one index or the initial state's
    support) is forced in, displacing the lowest-ranked picks.
    """
    if not 0 < keep_fraction <= 1:
        raise ValueError(f"keep_fraction must lie in (0, 1], got {keep_fraction}")
    profile = np.asarray(profile, dtype=float)
    dim = profile.size
    n = min(dim, max(1, math.ceil(keep_fraction * dim - 1e-9)))
    # lexsort: last key is primary
    order = [int(i) for i in np.lexsort((np.arange(dim), -profile))]
    forced = _as_support(initial_index)
    forced_set = set(forced)
    rest = [i for i in order if i not in forced_set]
    chosen = forced + rest[: max(0, n - len(forced))]
    return np.sort(np.asarray(chosen, dtype=int))


def build_graph(H: SparseOperator, subset: Sequence[int]) -> TransitionGraph:
    nodes = tuple(sorted(int(i) for i in subset))
    idx = np.asarray(nodes, dtype=int)
    sub = H.matrix[idx][:, idx].tocoo()
    edges = {}
    for r, c, v in zip(sub.row, sub.col, sub.data):
        if r < c and abs(v) > EDGE_TOL:
            edges[(nodes[r], nodes[c])] = float(abs(v))
    # an entry may be stored on one side only for non-Hermitian input
    for r, c, v in zip(sub.row, sub.col, sub.data):
        if r > c and abs(v) > EDGE_TOL:
            edges.setdefault((nodes[c], nodes[r]), float(abs(v)))
    return TransitionGraph(nodes, edges)


def _component(g: TransitionGraph, start: int) -> set[int]:
    adj = g.adjacency()
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def is_connected(g: TransitionGraph) -> bool:
    """Breadth-first reachability from the lowest node covers every node."""
    if not g.nodes:
        raise ValueError("connectivity of an empty graph is undefined")
    return len(_component(g, g.nodes[0])) == len(g.nodes)


def neighbors_of(H: SparseOperator, subset: Sequence[int]) -> set[int]:
    """States outside ``subset`` reachable from it by one application of H."""
    members = np.zeros(H.dim, dtype=bool)
    members[np.asarray(list(subset), dtype=int)] = True
    cols = H.matrix[:, np.flatnonzero(members)].tocoo()
    hit = cols.row[np.abs(cols.data) > EDGE_TOL]
    return {int(j) for j in np.unique(hit) if not members[j]}


def _components(g: TransitionGraph) -> list[set[int]]:
    left = set(g.nodes)
    comps = []
    for n in g.nodes:
        if n in left:
            comp = _component(g, n)
            left -= comp
            comps.append(comp)
    return comps


def sector_labels(H: SparseOperator) -> np.ndarray:
    """Connected-component label of every basis state in the full transition graph."""
    pattern = abs(H.matrix) > EDGE_TOL
    _, labels = connected_components(pattern, directed=False)
    return labels


def repair_connectivity(
    H: SparseOperator,
    subset: Sequence[int],
    initial_index: Union[int, Sequence[int], None] = None,
    provenance: Optional[dict] = None,
) -> ReducedSpace:
    """Grow ``subset`` by whole neighbour sweeps until its transition graph is connected.

    Connectivity is judged per sector of the full graph: the loop stops once
    no two components of the kept graph belong to the same full-graph
    component. If the result still has several components (the full space
    splits and the subset touches more than one sector) it is returned with
    ``disconnected=True``.
    """
    current = {int(i) for i in subset}
    if not current:
        raise ValueError("subset must be non-empty")
    missing = [i for i in _as_support(initial_index) if i not in current]
    if missing:
        raise ValueError(f"initial index {missing[0]} is not in the subset")
    tags = dict(provenance) if provenance is not None else {}
    for i in current:
        tags.setdefault(i, SEED)
    sector = None
    iterations = 0
    while True:
        g = build_graph(H, current)
        if is_connected(g):
            return ReducedSpace(np.array(sorted(current)), H.dim, tags, iterations)
        if sector is None:
            sector = sector_labels(H)
        comps = _components(g)
        owners = [int(sector[min(c)]) for c in comps]
        if len(set(owners)) == len(owners):
            log.warning("full transition graph is disconnected; kept set spans %d sectors", len(comps))
            return ReducedSpace(np.array(sorted(current)), H.dim, tags, iterations, True)
        frontier = neighbors_of(H, current)
        iterations += 1
        for j in frontier:
            tags[j] = REPAIR
        current |= frontier


def reduced_hilbert_space(space: HilbertSpace, r: ReducedSpace) -> HilbertSpace:
    return HilbertSpace(space.modes, space.registers, tuple(space.states[i] for i in r.kept), space.constraint)


def project_state(psi: StateVector, r: ReducedSpace, space: Optional[HilbertSpace] = None):
    """Restrict and renormalize a state; returns (state, discarded weight).

    Raises
    ------
    ValueError
        If the state has no weight on the kept set.
    """
    amp = psi.amplitudes[r.kept]
    weight = float(np.vdot(amp, amp).real)
    if weight == 0.0:
        raise ValueError("initial state has zero weight on the kept set")
    discarded = max(0.0, 1.0 - weight)
    if discarded > DISCARD_WARN:
        warnings.warn(f"projection discards {discarded:.3g} of the state's weight", stacklevel=2)
    if discarded == 0.0:
        return StateVector(amp, space), 0.0
    return StateVector(amp / math.sqrt(weight), space), discarded


def project(obj, r: ReducedSpace, space: Optional[HilbertSpace] = None):
    """Restrict an operator, channel, observable, state or density matrix to ``r``."""
    if isinstance(obj, SparseOperator):
        return obj.restrict(r.kept)
    if isinstance(obj, LindbladChannel):
        return LindbladChannel(obj.A.restrict(r.kept), obj.gamma, obj.label)
    if isinstance(obj, Observable):
        op = obj.op.restrict(r.kept)
        return Observable(op, obj.label, obj.projector and (op @ op - op).norm() <= 1e-10)
    if isinstance(obj, StateVector):
        return project_state(obj, r, space)[0]
    if isinstance(obj, DensityMatrix):
        m = obj.matrix[np.ix_(r.kept, r.kept)]
        tr = np.trace(m).real
        if tr == 0.0:
            raise ValueError("density matrix has zero weight on the kept set")
        return DensityMatrix(m / tr, space)
    raise TypeError(f"cannot project {type(obj).__name__}")


def reduce(
    bundle: ScenarioBundle,
    keep_fraction: float,
    pilot_times: Optional[Sequence[float]] = None,
    pilot_solver: str = "closed",
    pilot_samples: int = 200,
) -> tuple[ReducedSpace, ScenarioBundle, dict]:
    """Select, repair and project a scenario; returns (reduced space, reduced bundle, report)."""
    if pilot_times is None:
        horizon = bundle.config.horizon if bundle.config is not None else 1.0
        pilot_times = np.linspace(0.0, horizon, pilot_samples)
    profile = amplitude_profile(bundle, pilot_times, pilot_solver)
    support = np.flatnonzero(np.abs(bundle.initial.amplitudes) > 0)
    seed = select_top(profile, keep_fraction, support)
    r = repair_connectivity(bundle.hamiltonian, seed, support)
    space = reduced_hilbert_space(bundle.space, r)
    psi, discarded = project_state(bundle.initial, r, space)
    reduced = dataclasses.replace(
        bundle,
        space=space,
        hamiltonian=project(bundle.hamiltonian, r),
        channels=[project(ch, r) for ch in bundle.channels],
        initial=psi,
        observables=[project(o, r) for o in bundle.observables],
        metadata={**bundle.metadata, "dim": r.dim, "reduced_from": bundle.dim},
    )
    counts = r.tag_counts()
    report = {
        "dim_full": bundle.dim,
        "dim_kept": r.dim,
        "dim_seed": int(seed.size),
        "keep_fraction": keep_fraction,
        "repair_iterations": r.iterations,
        "tag_counts": counts,
        "discarded_weight": discarded,
        "disconnected": r.disconnected,
        "pilot_solver": pilot_solver,
        "pilot_samples": int(len(pilot_times)),
    }
    return r, reduced, report
