"""
Time evolution and observables.

Closed systems are propagated spectrally, psi(t) = V exp(-i E t / hbar) V^H psi0.
Open systems integrate the Lindblad equation

    d rho/dt = -(i/hbar) [H, rho] + sum_k gamma_k (A_k rho A_k^+ - 1/2 {A_k^+ A_k, rho})

with fixed-step RK4. For an autonomous linear equation one RK4 step is the
matrix polynomial 1 + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24 of the Liouvillian,
so small systems precompute that propagator and raise it to the number of
steps between samples; larger systems step rho directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .hilbert import HilbertSpace
from .operators import CouplingSpec, SparseOperator, hybrid_basis_change

NORM_TOL = 1e-9
TRACE_TOL = 1e-9
POSITIVITY_TOL = 1e-7
IMAG_TOL = 1e-9
TRACE_DRIFT_LIMIT = 1e-4
# above this dimension the d^2 x d^2 propagator is not formed
DENSE_PROPAGATOR_MAX_DIM = 48


class NonHermitianError(ValueError):
    pass


class LindbladInstabilityError(RuntimeError):
    """Trace drift beyond the stability limit; use a smaller time step."""


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    space: Optional[HilbertSpace] = None

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", amp)
        if self.space is not None and self.space.dim != amp.size:
            raise ValueError(f"state has {amp.size} amplitudes, space has dim {self.space.dim}")
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state vector must be normalized, |psi| = {norm:.12g}")

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @classmethod
    def basis(cls, space: HilbertSpace, index: int) -> "StateVector":
        return cls(space.basis_vector(index), space)

    def density(self) -> "DensityMatrix":
        return DensityMatrix(np.outer(self.amplitudes, self.amplitudes.conj()), self.space)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    space: Optional[HilbertSpace] = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if self.space is not None and self.space.dim != m.shape[0]:
            raise ValueError("density matrix does not match the space dimension")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
            raise ValueError("density matrix must be Hermitian")
        m = 0.5 * (m + m.conj().T)
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise ValueError(f"density matrix must have unit trace, got {tr:.12g}")
        lo = np.linalg.eigvalsh(m).min()
        if lo < -POSITIVITY_TOL:
            raise ValueError(f"density matrix is not positive: min eigenvalue {lo:.3g}")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def maximally_mixed(cls, dim: int, space: Optional[HilbertSpace] = None) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim, space)


@dataclass(frozen=True)
class LindbladChannel:
    A: SparseOperator
    gamma: float
    label: str = ""

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"channel rate must be >= 0, got {self.gamma}")


@dataclass(frozen=True)
class Observable:
    op: SparseOperator
    label: str
    projector: bool = False

    def __post_init__(self):
        if not self.op.hermitian:
            raise NonHermitianError(f"observable {self.label!r} is not Hermitian")
        if self.projector:
            sq = self.op @ self.op - self.op
            if sq.norm() > 1e-10:
                raise ValueError(f"observable {self.label!r} is flagged as a projector but P^2 != P")


@dataclass
class TimeSeries:
    """Real samples of labelled observables on a monotone time grid."""

    times: np.ndarray
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size > 1 and np.any(np.diff(self.times) < 0):
            raise ValueError("time grid must be non-decreasing")

    @property
    def labels(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, label: str) -> np.ndarray:
        return self.values[label]


@dataclass
class Trajectory:
    """Sampled states: ``states[k]`` is a vector (closed) or a matrix (open) at ``times[k]``."""

    times: np.ndarray
    states: Optional[np.ndarray]
    series: Optional[TimeSeries] = None


# ---------------------------------------------------------------------------


def eigendecompose(H: SparseOperator) -> tuple[np.ndarray, np.ndarray]:
    """Ascending eigenvalues and a unitary eigenvector matrix of a Hermitian operator."""
    if not H.hermitian:
        raise NonHermitianError("eigendecompose requires a Hermitian operator")
    E, V = np.linalg.eigh(H.toarray())
    return E, V


def _as_vector(psi) -> np.ndarray:
    if isinstance(psi, StateVector):
        return psi.amplitudes
    return StateVector(psi).amplitudes


def evolve_closed(
    H: SparseOperator,
    psi0,
    times: Sequence[float],
    hbar: float = 1.0,
    spectrum: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> Trajectory:
    """Spectral propagation of a pure state; ``states`` has shape (len(times), dim)."""
    E, V = spectrum if spectrum is not None else eigendecompose(H)
    psi = _as_vector(psi0)
    if psi.size != H.dim:
        raise ValueError(f"state dim {psi.size} does not match operator dim {H.dim}")
    times = np.asarray(times, dtype=float)
    lam = V.conj().T @ psi
    phases = np.exp(-1j * np.outer(times, E) / hbar)
    states = (phases * lam) @ V.T
    states[times == 0.0] = psi
    return Trajectory(times, states)


def _as_density(rho0) -> np.ndarray:
    if isinstance(rho0, DensityMatrix):
        return rho0.matrix
    if isinstance(rho0, StateVector):
        return rho0.density().matrix
    arr = np.asarray(rho0, dtype=complex)
    if arr.ndim == 1:
        return StateVector(arr).density().matrix
    return DensityMatrix(arr).matrix


def liouvillian(H: SparseOperator, channels: Sequence[LindbladChannel], hbar: float = 1.0):
    """Sparse superoperator acting on row-major ``rho.reshape(-1)``.

    Uses vec(A rho B) = (A kron B^T) vec(rho) for row-major vectorization.
    """
    d = H.dim
    eye = sp.identity(d, dtype=complex, format="csr")
    h = H.matrix
    L = (-1j / hbar) * (sp.kron(h, eye) - sp.kron(eye, h.T))
    for ch in channels:
        if ch.gamma == 0:
            continue
        a = ch.A.matrix
        k = (a.getH() @ a).tocsr()
        L = L + ch.gamma * (
            sp.kron(a, a.conj()) - 0.5 * sp.kron(k, eye) - 0.5 * sp.kron(eye, k.T)
        )
    return L.tocsr()


def rk4_propagator(L, h: float) -> np.ndarray:
    """Dense one-step RK4 map for d/dt x = L x."""
    Ld = L.toarray() * h
    n = Ld.shape[0]
    M = np.eye(n, dtype=complex)
    term = np.eye(n, dtype=complex)
    for k in range(1, 5):
        term = term @ Ld / k
        M = M + term
    return M


def _step_counts(times: np.ndarray, dt: float) -> list[tuple[int, float]]:
    out = []
    for delta in np.diff(times):
        n = max(1, int(math.ceil(delta / dt - 1e-9)))
        out.append((n, delta / n))
    return out


def evolve_lindblad(
    H: SparseOperator,
    channels: Sequence[LindbladChannel],
    rho0,
    times: Sequence[float],
    dt: Optional[float] = None,
    hbar: float = 1.0,
    omega: float = 1.0,
    observables: Optional[Sequence[Observable]] = None,
    store_states: bool = True,
) -> Trajectory:
    """Fixed-step RK4 integration of the Lindblad equation.

    Each interval between requested samples is split into the fewest equal
    steps no longer than ``dt`` (default ``0.01 / omega``). The density matrix
    is re-symmetrized after every applied propagator and the trace is checked
    at every sample.

    Raises
    ------
    LindbladInstabilityError
        When the trace drifts by more than 1e-4.
    """
    d = H.dim
    for ch in channels:
        if ch.A.dim != d:
            raise ValueError(f"channel {ch.label!r} has dim {ch.A.dim}, expected {d}")
    dt = 0.01 / omega if dt is None else float(dt)
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValueError("times must be a non-empty 1-D grid")
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be non-decreasing")
    rho = _as_density(rho0).copy()
    if rho.shape[0] != d:
        raise ValueError(f"rho0 has dim {rho.shape[0]}, expected {d}")

    observables = list(observables or [])
    obs_mats = [o.op.matrix for o in observables]
    records = {o.label: np.empty(times.size) for o in observables}
    stored = np.empty((times.size, d, d), dtype=complex) if store_states else None

    def record(k, r):
        if stored is not None:
            stored[k] = r
        for o, m in zip(observables, obs_mats):
            records[o.label][k] = _trace_product(m, r, o.label)

    record(0, rho)
    steps = _step_counts(times, dt)

    if d <= DENSE_PROPAGATOR_MAX_DIM:
        L = liouvillian(H, channels, hbar)
        cache: dict = {}
        x = rho.reshape(-1)
        for k, (n, h) in enumerate(steps, start=1):
            key = (n, round(h, 14))
            if key not in cache:
                cache[key] = np.linalg.matrix_power(rk4_propagator(L, h), n)
            x = cache[key] @ x
            r = x.reshape(d, d)
            r = 0.5 * (r + r.conj().T)
            _check_trace(r, times[k])
            x = r.reshape(-1)
            record(k, r)
    else:
        rhs = _lindblad_rhs(H, channels, hbar)
        for k, (n, h) in enumerate(steps, start=1):
            for _ in range(n):
                k1 = rhs(rho)
                k2 = rhs(rho + 0.5 * h * k1)
                k3 = rhs(rho + 0.5 * h * k2)
                k4 = rhs(rho + h * k3)
                rho = rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                rho = 0.5 * (rho + rho.conj().T)
            _check_trace(rho, times[k])
            record(k, rho)

    series = TimeSeries(times, records) if observables else None
    return Trajectory(times, stored, series)


def _lindblad_rhs(H: SparseOperator, channels: Sequence[LindbladChannel], hbar: float):
    h = H.matrix
    ops = []
    for ch in channels:
        if ch.gamma == 0:
            continue
        a = ch.A.matrix
        ops.append((ch.gamma, a, (a.getH() @ a).tocsr()))

    def rhs(rho):
        hr = h @ rho
        out = (-1j / hbar) * (hr - hr.conj().T)
        for gamma, a, k in ops:
            ar = a @ rho
            kr = k @ rho
            # A rho A^+ = (A (A rho)^+)^+ keeps every product sparse @ dense
            out += gamma * ((a @ ar.conj().T).conj().T - 0.5 * (kr + kr.conj().T))
        return out

    return rhs


def _check_trace(rho: np.ndarray, t: float) -> None:
    tr = np.trace(rho).real
    if not np.isfinite(tr) or abs(tr - 1.0) > TRACE_DRIFT_LIMIT:
        raise LindbladInstabilityError(
            f"trace drifted to {tr:.6g} at t={t:g}; reduce dt"
        )
    # RK4 keeps the trace exactly, so an unstable step shows up as purity > 1 first
    purity = np.vdot(rho, rho).real
    if not np.isfinite(purity) or purity > 1.0 + TRACE_DRIFT_LIMIT:
        raise LindbladInstabilityError(
            f"tr(rho^2) grew to {purity:.6g} at t={t:g}; the step is unstable, reduce dt"
        )


def _trace_product(m, rho: np.ndarray, label: str = "") -> float:
    # tr(O rho) = sum_ij O_ij rho_ji
    coo = m.tocoo()
    val = np.sum(coo.data * rho[coo.col, coo.row])
    if abs(val.imag) > IMAG_TOL:
        raise NonHermitianError(f"observable {label!r} has imaginary expectation {val.imag:.3g}")
    return float(val.real)


def expectation(obs: Union[Observable, SparseOperator], state) -> float:
    """<psi|O|psi> for vectors, tr(O rho) for density matrices."""
    op = obs.op if isinstance(obs, Observable) else obs
    label = obs.label if isinstance(obs, Observable) else ""
    if isinstance(state, StateVector):
        vec = state.amplitudes
    elif isinstance(state, DensityMatrix):
        return _trace_product(op.matrix, state.matrix, label)
    else:
        arr = np.asarray(state, dtype=complex)
        if arr.ndim == 2:
            return _trace_product(op.matrix, arr, label)
        vec = arr
    if vec.size != op.dim:
        raise ValueError(f"state dim {vec.size} does not match observable dim {op.dim}")
    val = np.vdot(vec, op.matrix @ vec)
    if abs(val.imag) > IMAG_TOL:
        raise NonHermitianError(f"observable {label!r} has imaginary expectation {val.imag:.3g}")
    return float(val.real)


def observe(traj: Trajectory, observables: Sequence[Observable]) -> TimeSeries:
    """Evaluate observables on every stored sample of a trajectory."""
    if traj.states is None:
        raise ValueError("trajectory has no stored states")
    values = {}
    for o in observables:
        m = o.op.matrix
        if traj.states.ndim == 2:
            # rows are psi(t); <psi|O|psi> for all samples at once
            vals = np.einsum("ti,ti->t", traj.states.conj(), (m @ traj.states.T).T)
            if np.max(np.abs(vals.imag), initial=0.0) > IMAG_TOL:
                raise NonHermitianError(f"observable {o.label!r} has imaginary expectation")
            values[o.label] = vals.real.copy()
        else:
            values[o.label] = np.array([_trace_product(m, r, o.label) for r in traj.states])
    return TimeSeries(traj.times, values)


def local_operator(space: HilbertSpace, label: str, matrix: np.ndarray) -> SparseOperator:
    """Lift a single-register matrix (acting on the register's values) to the space."""
    reg = space.register(label)
    matrix = np.asarray(matrix)
    if matrix.shape != (reg.arity, reg.arity):
        raise ValueError(f"local matrix for {label!r} must be {reg.arity}x{reg.arity}")
    k = space.slot(label)
    rows, cols, vals = [], [], []
    for j, s in enumerate(space.states):
        key = list(s.key)
        src = key[k]
        for dst in range(reg.arity):
            coef = matrix[dst, src]
            if coef == 0:
                continue
            key[k] = dst
            i = space.lookup(dict(zip(space.labels, key)))
            key[k] = src
            if i is not None:
                rows.append(i)
                cols.append(j)
                vals.append(coef)
    return SparseOperator(sp.coo_matrix((vals, (rows, cols)), shape=(space.dim, space.dim)))


def site_vectors(c: CouplingSpec) -> dict[str, np.ndarray]:
    """Site orbitals |O>, |H> expressed in the hybrid energy basis (Psi_0, Psi_1)."""
    u = hybrid_basis_change(c)
    return {"O": u[:, 0].copy(), "H": u[:, 1].copy()}


def site_projectors(c: CouplingSpec, space: HilbertSpace) -> dict[str, Observable]:
    """Site-occupation projectors for one or two hybrid orbital registers.

    One register gives P(O) and P(H). Two registers give the charge-state
    partition P(O-H+) (both electrons at O), P(OH) (one each) and P(O+H-).
    """
    orbitals = [r for r in space.registers if r.kind == "orbital"]
    vec = site_vectors(c)
    local = {site: np.outer(v, v) for site, v in vec.items()}
    if len(orbitals) == 1:
        lab = orbitals[0].label
        return {
            "P(O)": Observable(local_operator(space, lab, local["O"]), "P(O)", projector=True),
            "P(H)": Observable(local_operator(space, lab, local["H"]), "P(H)", projector=True),
        }
    if len(orbitals) == 2:
        e1, e2 = (r.label for r in orbitals)
        p = {
            (site, lab): local_operator(space, lab, local[site])
            for site in ("O", "H")
            for lab in (e1, e2)
        }
        oo = p["O", e1] @ p["O", e2]
        oh = p["O", e1] @ p["H", e2] + p["H", e1] @ p["O", e2]
        hh = p["H", e1] @ p["H", e2]
        return {
            "P(O-H+)": Observable(oo, "P(O-H+)", projector=True),
            "P(OH)": Observable(oh, "P(OH)", projector=True),
            "P(O+H-)": Observable(hh, "P(O+H-)", projector=True),
        }
    raise ValueError(f"site projectors need one or two orbital registers, found {len(orbitals)}")


def steady_state_reached(series: TimeSeries, period: float, tol: float = 1e-4) -> bool:
    """True when every observable varies by less than ``tol`` over the final period."""
    window = series.times >= series.times[-1] - period
    if window.sum() < 2:
        return False
    return all(np.ptp(v[window]) < tol for v in series.values.values())
