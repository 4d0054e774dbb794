"""Unitary propagation of single- and two-photon states along z.

Two routes are provided.  :func:`single_propagator` builds the dense
``U(z) = V exp(-i Lambda z) V^dag`` from a complete eigensystem.
:class:`ChebyshevPropagator` applies ``exp(-i H z)`` to a block of columns
through a Chebyshev expansion on a sparse ``H``; it is used for disordered
instances where a full eigensolve per realisation would dominate the cost.
Two-photon states only need their frame columns propagated because
``U psi U^T = (U F) C (U F)^T``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import jv

from .biphoton import BiphotonState, TwoPhotonEigenbasis, mode_coefficients, reduced_density
from .lattice import operator_hash
from .spectral import EigenSystem, SpectralError

CHEB_TOL = 1e-15


class PropagationError(ValueError):
    """Invalid propagation request."""


@dataclass(frozen=True, eq=False)
class Propagator:
    """Dense unitary ``U(z)`` together with its distance and source hash."""

    matrix: np.ndarray
    z: float
    source_hash: str = ""

    def apply(self, cols: np.ndarray) -> np.ndarray:
        return self.matrix @ cols


def single_propagator(es: EigenSystem, z: float, source_hash: str = "") -> Propagator:
    """``U = sum_n exp(-i lambda_n z) |phi_n><phi_n|`` from a complete eigensystem."""
    if not es.complete:
        raise SpectralError("a propagator needs the complete eigensystem")
    v = es.vectors
    u = (v * np.exp(-1j * es.values * z)) @ v.conj().T
    return Propagator(u, float(z), source_hash)


class ChebyshevPropagator:
    """``exp(-i H z) X`` for sparse Hermitian ``H`` by Chebyshev expansion.

    The spectrum is mapped onto [-1, 1] with Gershgorin bounds; the series is
    truncated once the Bessel coefficients fall below ``tol``.
    """

    def __init__(self, H, tol: float = CHEB_TOL, source_hash: str = ""):
        self.H = sp.csr_matrix(H, dtype=complex)
        self.tol = tol
        self.source_hash = source_hash or operator_hash(self.H)
        diag = np.real(self.H.diagonal())
        radius = np.asarray(abs(self.H).sum(axis=1)).ravel() - np.abs(diag)
        lo, hi = float((diag - radius).min()), float((diag + radius).max())
        pad = 1e-6 * max(1.0, hi - lo)
        self.center = 0.5 * (hi + lo)
        self.half_width = 0.5 * (hi - lo) + pad
        n = self.H.shape[0]
        self._scaled = (self.H - self.center * sp.identity(n, format="csr")) / self.half_width

    def coefficients(self, z: float) -> np.ndarray:
        t = self.half_width * abs(z)
        k_max = int(t + 12 * max(t, 1.0) ** (1 / 3) + 30)
        k = np.arange(k_max + 1)
        c = jv(k, t) * (-1j * np.sign(z)) ** k
        c[1:] *= 2
        tail = np.flatnonzero(np.abs(c) > self.tol)
        return c[: tail[-1] + 1] if tail.size else c[:1]

    def apply(self, cols: np.ndarray, z: float) -> np.ndarray:
        cols = np.asarray(cols, dtype=complex)
        if z == 0:
            return cols.copy()
        c = self.coefficients(z)
        t_prev, t_cur = cols, self._scaled @ cols
        out = c[0] * t_prev
        if len(c) > 1:
            out = out + c[1] * t_cur
        for ck in c[2:]:
            t_prev, t_cur = t_cur, 2 * (self._scaled @ t_cur) - t_prev
            out += ck * t_cur
        return np.exp(-1j * self.center * z) * out


@dataclass(frozen=True, eq=False)
class Segment:
    """One stretch of constant Hamiltonian.

    ``op`` is a complete :class:`EigenSystem`, a :class:`Propagator` already
    evaluated at ``z``, a :class:`ChebyshevPropagator`, or a (dense or
    sparse) Hamiltonian that is wrapped in a Chebyshev propagator.
    """

    op: object
    z: float


def _apply(op, cols, z):
    if isinstance(op, Propagator):
        if not np.isclose(op.z, z, rtol=0, atol=1e-12):
            raise PropagationError(f"propagator is for z={op.z}, segment asks for z={z}")
        return op.apply(cols)
    if isinstance(op, EigenSystem):
        if not op.complete:
            raise SpectralError("propagation needs the complete eigensystem")
        v = op.vectors
        return v @ (np.exp(-1j * op.values * z)[:, None] * (v.conj().T @ cols))
    if isinstance(op, ChebyshevPropagator):
        return op.apply(cols, z)
    return ChebyshevPropagator(op).apply(cols, z)


def propagate_single(phi: np.ndarray, op, z: float) -> np.ndarray:
    return _apply(op, np.asarray(phi, dtype=complex), z)


def propagate_biphoton(state: BiphotonState, U, z: float | None = None) -> BiphotonState:
    """``psi' = U psi U^T`` by propagating the frame columns only.

    ``U`` is a :class:`Propagator` (``z`` taken from it) or any operator
    accepted by :class:`Segment` together with ``z``.
    """
    if isinstance(U, Propagator):
        z = U.z if z is None else z
    elif z is None:
        raise PropagationError("z is required unless U is a Propagator")
    if getattr(U, "matrix", None) is not None and U.matrix.shape[0] != state.n_sites:
        raise PropagationError(f"propagator size {U.matrix.shape[0]} != {state.n_sites} sites")
    return BiphotonState(_apply(U, state.frame, z), state.core, dict(state.meta))


def propagate_schedule(state: BiphotonState, schedule: Sequence[Segment | tuple]) -> BiphotonState:
    """Apply the segments in order.  An empty schedule is an error."""
    if len(schedule) == 0:
        raise PropagationError("empty propagation schedule")
    frame = state.frame
    total = 0.0
    for seg in schedule:
        op, z = (seg.op, seg.z) if isinstance(seg, Segment) else seg
        frame = _apply(op, frame, z)
        total += z
    return BiphotonState(frame, state.core, {**state.meta, "z": total})


def snapshots(state: BiphotonState, op, z: float, dz: float) -> Iterable[tuple[float, BiphotonState]]:
    """Yield ``(z_k, state)`` every ``dz`` up to ``z``; ``dz <= 0`` yields only the end."""
    if dz <= 0:
        yield z, propagate_schedule(state, [(op, z)])
        return
    steps = int(np.floor(z / dz + 1e-9))
    grid = [k * dz for k in range(steps + 1)]
    if z - grid[-1] > 1e-9:
        grid.append(z)
    frame, prev = state.frame, 0.0
    for zk in grid:
        frame = _apply(op, frame, zk - prev)
        prev = zk
        yield zk, BiphotonState(frame, state.core, {**state.meta, "z": zk})


def write_snapshot_csv(path: str | Path, rows: Iterable[tuple[float, BiphotonState]]) -> Path:
    """Rows ``z, site, R`` of the single-photon density along the propagation."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z", "site", "R"])
        for z, st in rows:
            _, r = reduced_density(st, full=False)
            for i, val in enumerate(r):
                writer.writerow([f"{z:.17g}", i, f"{val:.17g}"])
    return path


def two_photon_energy(state: BiphotonState, H) -> float:
    """``<psi| H (x) 1 + 1 (x) H |psi> = 2 Re tr(psi^dag H psi)`` in factored form."""
    f, c = state.frame, state.core
    hf = H @ f
    a = f.conj().T @ hf
    g = f.conj().T @ f
    # tr(psi^dag H psi) = tr(C^dag a C g^T)
    return float(2 * np.real(np.trace(c.conj().T @ a @ c @ g.T)))


def coefficient_overlaps(d: np.ndarray, c_ref: np.ndarray, lam: np.ndarray, zs) -> np.ndarray:
    """``sum conj(d_mn) c_mn exp(-i (lam_m + lam_n) z)`` for each ``z``."""
    pair = np.add.outer(lam, lam).ravel()
    a = (d.conj() * c_ref).ravel()
    return np.exp(-1j * np.outer(np.asarray(zs, dtype=float), pair)) @ a


def reference_overlaps(
    state: BiphotonState, reference: BiphotonState, basis: TwoPhotonEigenbasis, zs
) -> np.ndarray:
    """``<state| reference(z)>`` for each ``z``, with ``reference`` evolved in the clean lattice.

    ``reference`` must lie in the clean E(x)E space, so its evolution is a
    phase per edge-mode pair and the overlap only needs ``state``'s E(x)E
    coefficients.
    """
    phi = basis.edge_vectors
    c_ref = mode_coefficients(reference, phi)
    w = float(np.sum(np.abs(c_ref) ** 2))
    if abs(w - 1.0) > 1e-8:
        raise PropagationError(f"reference has E(x)E weight {w:.12f}, expected 1")
    return coefficient_overlaps(mode_coefficients(state, phi), c_ref, basis.edge_values, zs)


def reference_grid(z_range: tuple[float, float] = (70.0, 80.0), dz: float = 0.1) -> np.ndarray:
    lo, hi = z_range
    return lo + dz * np.arange(int(round((hi - lo) / dz)) + 1)


def best_reference_distance(
    state: BiphotonState,
    reference: BiphotonState,
    basis: TwoPhotonEigenbasis,
    z_range: tuple[float, float] = (70.0, 80.0),
    dz: float = 0.1,
) -> tuple[float, float]:
    """``(z_m, F)`` maximising ``|<state|reference(z_m)>|**2`` over the grid."""
    zs = reference_grid(z_range, dz)
    f = np.abs(reference_overlaps(state, reference, basis, zs)) ** 2
    i = int(np.argmax(f))
    return float(zs[i]), float(f[i])
