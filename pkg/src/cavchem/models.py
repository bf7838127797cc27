"""
Scenario builders.

Each builder turns a :class:`ScenarioConfig` into a :class:`ScenarioBundle`
(space, Hamiltonian, Lindblad channels, initial state, observables):

``oh_1e``
    one electron in an O-H double well coupled to a cavity mode;
``oh_2e``
    two opposite-spin electrons in the same double well, one cavity mode per
    spin direction;
``phonon_grid``
    atoms hopping on a k x k grid, forming covalent bonds by absorbing
    phonons;
``hbond``
    two hybridized O-H pairs sharing a hydrogen electron, with molecular,
    spin and phonon modes.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from . import hilbert as hb
from . import operators as ops
from .dynamics import LindbladChannel, Observable, StateVector, site_projectors, site_vectors
from .hilbert import HilbertSpace, ModeSpec, RegisterSpec
from .operators import CouplingSpec, SparseOperator

SCENARIOS = ("oh_1e", "oh_2e", "phonon_grid", "hbond")

DEFAULT_PHOTON_CUTOFF = 2
DEFAULT_PHONON_CUTOFF = 3
PHOTON_ESCAPE = "photon-escape"


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class ChannelSpec:
    """A decay channel A = a on ``mode`` (or on every photon mode for photon-escape)."""

    name: str = PHOTON_ESCAPE
    rate: Optional[float] = None


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    coupling: CouplingSpec = field(default_factory=CouplingSpec)
    cutoffs: Mapping[str, int] = field(default_factory=dict)
    grid_k: int = 3
    atoms: int = 3
    atom_cells: Optional[tuple[int, ...]] = None
    phonons: int = 2
    initial: Mapping[str, int] = field(default_factory=dict)
    horizon: float = 100.0
    samples: int = 201
    channels: tuple[ChannelSpec, ...] = ()
    dt: Optional[float] = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError("scenario", f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not self.horizon > 0:
            raise ConfigError("horizon", f"must be > 0, got {self.horizon}")
        if int(self.samples) < 2:
            raise ConfigError("samples", f"need at least 2 samples, got {self.samples}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt", f"must be > 0, got {self.dt}")
        for lab, cut in self.cutoffs.items():
            if int(cut) < 1:
                raise ConfigError(f"cutoffs.{lab}", f"must be >= 1, got {cut}")
        for ch in self.channels:
            if ch.rate is not None and ch.rate < 0:
                raise ConfigError("channels", f"rate must be >= 0, got {ch.rate}")
        if self.scenario == "phonon_grid":
            if self.grid_k < 2:
                raise ConfigError("grid.k", f"must be >= 2, got {self.grid_k}")
            if not 1 <= self.atoms <= self.grid_k**2:
                raise ConfigError(
                    "grid.atoms", f"atom count {self.atoms} must lie in 1..{self.grid_k ** 2}"
                )
            if self.phonons < 0:
                raise ConfigError("grid.phonons", "must be >= 0")
            if self.atom_cells is not None:
                cells = list(self.atom_cells)
                if len(cells) != self.atoms:
                    raise ConfigError("grid.atom_cells", f"need {self.atoms} cells, got {len(cells)}")
                if len(set(cells)) != len(cells) or not all(0 <= c < self.grid_k**2 for c in cells):
                    raise ConfigError("grid.atom_cells", "cells must be distinct and on the grid")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, int(self.samples))

    def cutoff(self, label: str, default: int) -> int:
        return int(self.cutoffs.get(label, default))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class ScenarioBundle:
    space: HilbertSpace
    hamiltonian: SparseOperator
    channels: list[LindbladChannel]
    initial: StateVector
    observables: list[Observable]
    partitions: list[list[str]] = field(default_factory=list)
    probabilities: list[str] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)
    config: Optional[ScenarioConfig] = None

    @property
    def dim(self) -> int:
        return self.space.dim

    @property
    def initial_index(self) -> int:
        """Index of the largest initial amplitude (lowest index on ties)."""
        return int(np.argmax(np.abs(self.initial.amplitudes)))

    def observable(self, label: str) -> Observable:
        for o in self.observables:
            if o.label == label:
                return o
        raise KeyError(label)


def default_config(scenario: str) -> ScenarioConfig:
    """Shipped defaults for each scenario."""
    if scenario == "oh_1e":
        return ScenarioConfig("oh_1e", CouplingSpec(g_mol=0.01), horizon=20000.0, samples=2001)
    if scenario == "oh_2e":
        return ScenarioConfig(
            "oh_2e", CouplingSpec(g_mol=0.01), horizon=20000.0, samples=2001
        )
    if scenario == "phonon_grid":
        return ScenarioConfig(
            "phonon_grid",
            CouplingSpec(g_mol=0.0, g_tun=0.001, g_cov=0.01),
            grid_k=3,
            atoms=3,
            phonons=2,
            horizon=3000.0,
            samples=1501,
        )
    if scenario == "hbond":
        return ScenarioConfig(
            "hbond",
            # light-matter exchange well inside the RWA regime, bond dynamics at its edge
            CouplingSpec(g_mol=0.0002, g_spin=0.0002, g_tun=0.01, g_cov=0.01),
            cutoffs={"a_mol": 3},
            horizon=2000.0,
            samples=1001,
        )
    raise ConfigError("scenario", f"unknown scenario {scenario!r}; choose from {SCENARIOS}")


def _channels(space: HilbertSpace, cfg: ScenarioConfig) -> list[LindbladChannel]:
    out = []
    default_rate = 0.1 * cfg.coupling.g_mol
    for ch in cfg.channels:
        rate = default_rate if ch.rate is None else ch.rate
        if ch.name == PHOTON_ESCAPE:
            modes = [m.label for m in space.modes if m.kind == "photon"]
            if not modes:
                raise ConfigError("channels", "photon-escape needs a photon mode")
        else:
            try:
                space.mode(ch.name)
            except KeyError:
                raise ConfigError("channels", f"unknown mode {ch.name!r}") from None
            modes = [ch.name]
        for lab in modes:
            out.append(LindbladChannel(ops.ladder(space, lab, "annihilate"), rate, f"a[{lab}]"))
    return out


def _bundle_state(space: HilbertSpace, amplitudes: dict) -> StateVector:
    vec = np.zeros(space.dim, dtype=complex)
    for s, amp in amplitudes.items():
        vec[space.index_of(s)] += amp
    return StateVector(vec, space)


def _meta(cfg: ScenarioConfig, space: HilbertSpace, **extra) -> dict:
    meta = {"scenario": cfg.scenario, "dim": space.dim, "rwa_ratio": cfg.coupling.rwa_ratio}
    meta.update(extra)
    return meta


# ---------------------------------------------------------------------------


def build_oh_1e(cfg: ScenarioConfig) -> ScenarioBundle:
    """Single electron in an O-H double well, JC-coupled to one cavity mode.

    The orbital register holds the hybrid level (0 = Psi_0, 1 = Psi_1); the
    electron starts at the oxygen site with the cavity empty.
    """
    c = cfg.coupling
    space = hb.enumerate_space(
        [ModeSpec("a", cfg.cutoff("a", DEFAULT_PHOTON_CUTOFF), "photon")],
        [RegisterSpec("e", 2, "orbital")],
    )
    H = ops.build_jc_rwa(space, c)
    o = site_vectors(c)["O"]
    psi0 = _bundle_state(space, {space.make_state(a=0, e=lvl): o[lvl] for lvl in (0, 1)})
    sites = site_projectors(c, space)
    photons = Observable(ops.number_operator(space, {"a": 1.0}), "n_photon")
    return ScenarioBundle(
        space,
        H,
        _channels(space, cfg),
        psi0,
        [sites["P(O)"], sites["P(H)"], photons],
        partitions=[["P(O)", "P(H)"]],
        probabilities=["P(O)", "P(H)"],
        metadata=_meta(cfg, space, initial="|0>_ph |O>"),
        config=cfg,
    )


def build_oh_2e(cfg: ScenarioConfig) -> ScenarioBundle:
    """Two electrons with frozen opposite spins in the O-H double well.

    Electron 1 (spin up, starts at O) couples to the spin-up cavity mode,
    electron 2 (spin down, starts at H) to the spin-down mode.
    """
    c = cfg.coupling
    space = hb.enumerate_space(
        [
            ModeSpec("a_up", cfg.cutoff("a_up", DEFAULT_PHOTON_CUTOFF), "photon"),
            ModeSpec("a_down", cfg.cutoff("a_down", DEFAULT_PHOTON_CUTOFF), "photon"),
        ],
        [
            RegisterSpec("e1", 2, "orbital"),
            RegisterSpec("s1", 2, "spin"),
            RegisterSpec("e2", 2, "orbital"),
            RegisterSpec("s2", 2, "spin"),
        ],
        constraint=hb.fixed(s1=ops.SPIN_UP, s2=ops.SPIN_DOWN),
    )
    H = ops.build_two_electron_H(space, c)
    vec = site_vectors(c)
    amps = {}
    for l1 in (0, 1):
        for l2 in (0, 1):
            s = space.make_state(e1=l1, s1=ops.SPIN_UP, e2=l2, s2=ops.SPIN_DOWN)
            amps[s] = vec["O"][l1] * vec["H"][l2]
    psi0 = _bundle_state(space, amps)
    sites = site_projectors(c, space)
    labels = ["P(O-H+)", "P(OH)", "P(O+H-)"]
    return ScenarioBundle(
        space,
        H,
        _channels(space, cfg),
        psi0,
        [sites[lab] for lab in labels],
        partitions=[labels],
        probabilities=labels,
        metadata=_meta(cfg, space, initial="|0>_up |0>_down |O up> |H down>"),
        config=cfg,
    )


def grid_space(
    k: int,
    atoms: int,
    phonon_cutoff: int,
    excitations: Optional[int] = None,
    max_dim: Optional[int] = None,
) -> HilbertSpace:
    """Phonon mode x atom positions x pair bond flags on a k x k grid.

    Admissible states have no two atoms in one cell, bonds only between
    orthogonally adjacent atoms and at most one bond per atom. If
    ``excitations`` is given, phonons + bonds is fixed to it.
    """
    positions = [RegisterSpec(f"pos_{i}", k * k, "position") for i in range(atoms)]
    pairs = [(i, j) for i in range(atoms) for j in range(i + 1, atoms)]
    bonds = [RegisterSpec(ops.bond_label(i, j), 2, "bond") for i, j in pairs]
    pos_labels = [p.label for p in positions]

    def bonds_ok(v):
        used = set()
        for (i, j), reg in zip(pairs, bonds):
            if v[reg.label]:
                ri, ci = divmod(v[pos_labels[i]], k)
                rj, cj = divmod(v[pos_labels[j]], k)
                if abs(ri - rj) + abs(ci - cj) != 1 or i in used or j in used:
                    return False
                used.update((i, j))
        return True

    constraint = hb.all_of(
        hb.exclusion(pos_labels),
        bonds_ok,
        None if excitations is None else hb.total_equals(["b"] + [r.label for r in bonds], excitations),
    )
    return hb.enumerate_space(
        [ModeSpec("b", phonon_cutoff, "phonon")], positions + bonds, constraint, max_dim=max_dim
    )


def build_phonon_grid(cfg: ScenarioConfig) -> ScenarioBundle:
    """Atoms on a k x k grid exchanging phonons with covalent bonds."""
    c = cfg.coupling
    k, n_atoms = cfg.grid_k, cfg.atoms
    cut = cfg.cutoff("b", DEFAULT_PHONON_CUTOFF)
    if cfg.phonons > cut:
        raise ConfigError("grid.phonons", f"{cfg.phonons} phonons exceed the cutoff {cut}")
    cells = list(cfg.atom_cells) if cfg.atom_cells is not None else list(range(n_atoms))
    # the excitation sector is only closed without dissipation
    conserve = None if cfg.channels else cfg.phonons
    space = grid_space(k, n_atoms, cut, excitations=conserve)
    H = ops.build_grid_H(space, c)
    start = space.make_state(b=cfg.phonons, **{f"pos_{i}": cell for i, cell in enumerate(cells)})
    psi0 = _bundle_state(space, {start: 1.0})
    layout = ops.grid_layout(space)
    nbond = Observable(ops.number_operator(space, {lab: 1.0 for lab in layout.pairs}), "N_bond")
    nphon = Observable(ops.number_operator(space, {"b": 1.0}), "n_phonon")
    return ScenarioBundle(
        space,
        H,
        _channels(space, cfg),
        psi0,
        [nbond, nphon],
        metadata=_meta(cfg, space, k=k, atoms=n_atoms, atom_cells=cells, phonons=cfg.phonons),
        config=cfg,
    )


HBOND_INITIAL = {
    "a_mol": 2,
    "a_spin": 1,
    "b": 1,
    "lvl_O1": 0,
    "lvl_H": 1,
    "lvl_O2": 0,
    "spin_O1": ops.SPIN_UP,
    "spin_H": ops.SPIN_UP,
    "spin_O2": ops.SPIN_DOWN,
    "cov_1": ops.BOND_NOT_CLOSE,
    "cov_2": ops.BOND_EXIST_CLOSE,
}


def hbond_space(cfg: ScenarioConfig, initial: Mapping[str, int]) -> HilbertSpace:
    modes = [
        ModeSpec("a_mol", cfg.cutoff("a_mol", 3), "photon"),
        ModeSpec("a_spin", cfg.cutoff("a_spin", DEFAULT_PHOTON_CUTOFF), "photon"),
        ModeSpec("b", cfg.cutoff("b", DEFAULT_PHONON_CUTOFF), "phonon"),
    ]
    registers = []
    for e in ops.HBOND_ELECTRONS:
        registers.append(RegisterSpec(f"lvl_{e}", 2, "orbital"))
        registers.append(RegisterSpec(f"spin_{e}", 2, "spin"))
    registers += [RegisterSpec(bd, 4, "bond") for bd in ops.HBOND_BONDS]

    def close_if_bonded(v):
        return all(v[bd] != ops.BOND_EXIST_FAR for bd in ops.HBOND_BONDS)

    preds = [close_if_bonded]
    if not cfg.channels:
        exist = lambda v: sum(v[bd] >= ops.BOND_EXIST_CLOSE for bd in ops.HBOND_BONDS)  # noqa: E731
        ups = lambda v: sum(v[f"spin_{e}"] == ops.SPIN_UP for e in ops.HBOND_ELECTRONS)  # noqa: E731
        lvls = lambda v: sum(v[f"lvl_{e}"] for e in ops.HBOND_ELECTRONS)  # noqa: E731
        n_mol, n_spin, n_cov = lvls(initial) + initial["a_mol"], ups(initial) + initial["a_spin"], \
            exist(initial) + initial["b"]
        preds.append(lambda v: v["a_mol"] + lvls(v) == n_mol)
        preds.append(lambda v: v["a_spin"] + ups(v) == n_spin)
        preds.append(lambda v: v["b"] + exist(v) == n_cov)
    return hb.enumerate_space(modes, registers, hb.all_of(*preds))


def build_hbond(cfg: ScenarioConfig) -> ScenarioBundle:
    """Hydrogen bond between an -OH group and a second oxygen.

    Three electrons (O1, the shared H, O2) carry a hybrid level and a spin;
    two bond registers record {not, exist} x {close, far}. The start is
    |2>_mol |1>_spin |1>_b with O1 in Psi_0 (up), H in Psi_1 (up), O2 in
    Psi_0 (down), bond 1 absent but close and bond 2 formed.
    """
    c = cfg.coupling
    initial = dict(HBOND_INITIAL)
    unknown = set(cfg.initial) - set(initial)
    if unknown:
        raise ConfigError("initial", f"unknown labels {sorted(unknown)}")
    initial.update({k: int(v) for k, v in cfg.initial.items()})
    space = hbond_space(cfg, initial)
    H = ops.build_hbond_H(space, c)
    try:
        start = space.make_state(**initial)
        psi0 = _bundle_state(space, {start: 1.0})
    except KeyError:
        raise ConfigError("initial", "initial state is not admissible in the hbond space") from None
    bond_obs = []
    for i, bd in enumerate(ops.HBOND_BONDS, start=1):
        proj = ops.register_projector(space, bd, (ops.BOND_EXIST_CLOSE, ops.BOND_EXIST_FAR))
        bond_obs.append(Observable(proj, f"P(bond{i})", projector=True))
    total = Observable(bond_obs[0].op + bond_obs[1].op, "N_bond")
    return ScenarioBundle(
        space,
        H,
        _channels(space, cfg),
        psi0,
        bond_obs + [total],
        probabilities=[o.label for o in bond_obs],
        metadata=_meta(cfg, space, initial=dict(initial)),
        config=cfg,
    )


BUILDERS = {
    "oh_1e": build_oh_1e,
    "oh_2e": build_oh_2e,
    "phonon_grid": build_phonon_grid,
    "hbond": build_hbond,
}


def build(cfg: ScenarioConfig) -> ScenarioBundle:
    return BUILDERS[cfg.scenario](cfg)


# ---------------------------------------------------------------------------
# config (de)serialization


def _number(d: Mapping, key: str, path: str, default=None, kind=float):
    if d.get(key) is None:
        return default
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{path}{key}", f"expected a number, got {val!r}")
    if kind is int:
        if float(val) != int(val):
            raise ConfigError(f"{path}{key}", f"expected an integer, got {val!r}")
        return int(val)
    return float(val)


COUPLING_KEYS = ("hbar", "omega", "g_mol", "g_tun", "g_cov", "g_spin", "alpha", "beta")
TOP_KEYS = (
    "scenario", "coupling", "cutoffs", "grid", "initial", "horizon", "samples", "channels", "dt",
)


def config_from_dict(data: Mapping[str, Any]) -> ScenarioConfig:
    """Validate a nested mapping (as read from a config file) into a config.

    Missing keys fall back to :func:`default_config` for the scenario.
    """
    if not isinstance(data, Mapping):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = set(data) - set(TOP_KEYS)
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown key")
    if "scenario" not in data:
        raise ConfigError("scenario", "missing required key")
    base = default_config(str(data["scenario"]))

    cdata = data.get("coupling", {}) or {}
    if not isinstance(cdata, Mapping):
        raise ConfigError("coupling", "expected a mapping")
    bad = set(cdata) - set(COUPLING_KEYS) - {"omegas"}
    if bad:
        raise ConfigError(f"coupling.{sorted(bad)[0]}", "unknown key")
    ckw = {k: _number(cdata, k, "coupling.") for k in COUPLING_KEYS if k in cdata}
    if "omegas" in cdata:
        om = cdata["omegas"]
        if not isinstance(om, Mapping):
            raise ConfigError("coupling.omegas", "expected a mapping")
        ckw["omegas"] = {str(k): _number(om, k, "coupling.omegas.") for k in om}
    try:
        merged = dataclasses.replace(base.coupling, **ckw)
    except ValueError as exc:
        msg = str(exc)
        fieldname = "coupling.alpha" if "alpha" in msg else "coupling.omega" if "omega" in msg \
            else "coupling.hbar"
        raise ConfigError(fieldname, msg) from None

    kw: dict[str, Any] = {"scenario": str(data["scenario"]), "coupling": merged}
    cut = data.get("cutoffs", {}) or {}
    if not isinstance(cut, Mapping):
        raise ConfigError("cutoffs", "expected a mapping")
    kw["cutoffs"] = {**base.cutoffs, **{str(k): _number(cut, k, "cutoffs.", kind=int) for k in cut}}
    grid = data.get("grid", {}) or {}
    if not isinstance(grid, Mapping):
        raise ConfigError("grid", "expected a mapping")
    bad = set(grid) - {"k", "atoms", "phonons", "atom_cells"}
    if bad:
        raise ConfigError(f"grid.{sorted(bad)[0]}", "unknown key")
    kw["grid_k"] = _number(grid, "k", "grid.", base.grid_k, int)
    kw["atoms"] = _number(grid, "atoms", "grid.", base.atoms, int)
    kw["phonons"] = _number(grid, "phonons", "grid.", base.phonons, int)
    if grid.get("atom_cells") is not None:
        cells = grid["atom_cells"]
        if not isinstance(cells, (list, tuple)) or not all(isinstance(x, int) for x in cells):
            raise ConfigError("grid.atom_cells", "expected a list of integers")
        kw["atom_cells"] = tuple(cells)
    init = data.get("initial", {}) or {}
    if not isinstance(init, Mapping):
        raise ConfigError("initial", "expected a mapping")
    kw["initial"] = {str(k): _number(init, k, "initial.", kind=int) for k in init}
    kw["horizon"] = _number(data, "horizon", "", base.horizon)
    kw["samples"] = _number(data, "samples", "", base.samples, int)
    kw["dt"] = _number(data, "dt", "", base.dt)
    chans = data.get("channels", []) or []
    if not isinstance(chans, (list, tuple)):
        raise ConfigError("channels", "expected a list")
    specs = []
    for i, ch in enumerate(chans):
        if isinstance(ch, str):
            specs.append(ChannelSpec(ch))
        elif isinstance(ch, Mapping):
            bad = set(ch) - {"name", "rate"}
            if bad:
                raise ConfigError(f"channels[{i}].{sorted(bad)[0]}", "unknown key")
            specs.append(ChannelSpec(str(ch.get("name", PHOTON_ESCAPE)),
                                     _number(ch, "rate", f"channels[{i}].")))
        else:
            raise ConfigError(f"channels[{i}]", "expected a name or a mapping")
    kw["channels"] = tuple(specs)
    return ScenarioConfig(**kw)


def config_to_dict(cfg: ScenarioConfig) -> dict[str, Any]:
    """Plain-data echo of a config (used in run metadata)."""
    c = cfg.coupling
    out = {
        "scenario": cfg.scenario,
        "coupling": {k: getattr(c, k) for k in COUPLING_KEYS},
        "cutoffs": dict(sorted(cfg.cutoffs.items())),
        "horizon": cfg.horizon,
        "samples": cfg.samples,
        "dt": cfg.dt,
        "channels": [{"name": ch.name, "rate": ch.rate} for ch in cfg.channels],
    }
    if c.omegas:
        out["coupling"]["omegas"] = dict(sorted(c.omegas.items()))
    if cfg.scenario == "phonon_grid":
        out["grid"] = {
            "k": cfg.grid_k,
            "atoms": cfg.atoms,
            "phonons": cfg.phonons,
            "atom_cells": list(cfg.atom_cells) if cfg.atom_cells is not None else None,
        }
    if cfg.initial:
        out["initial"] = dict(sorted(cfg.initial.items()))
    return out


def check_partitions(series, bundle: ScenarioBundle, tol: float = 1e-7) -> float:
    """Largest deviation from 1 of any partition sum across the series."""
    worst = 0.0
    for labels in bundle.partitions:
        total = sum(series[lab] for lab in labels)
        worst = max(worst, float(np.max(np.abs(total - 1.0))))
    return worst


def dominant_frequency(times: np.ndarray, values: np.ndarray) -> float:
    """Angular frequency of the largest non-DC peak of a uniformly sampled signal."""
    x = np.asarray(values) - np.mean(values)
    dt = times[1] - times[0]
    power = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(x.size, dt) * 2 * math.pi
    power[0] = 0.0
    return float(freqs[int(np.argmax(power))])
