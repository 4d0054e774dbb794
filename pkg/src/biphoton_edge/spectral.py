"""Eigensolves, bulk gaps from Bloch spectra, and edge/bulk mode labels."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .lattice import HaldaneSpec, LatticeGeometry, QheSpec

BULK, EDGE, EDGE_PLUS, EDGE_MINUS = "bulk", "edge", "edge+", "edge-"
# labels whose modes carry the input excitation through the ribbon
TRANSPORT_LABELS = (EDGE, EDGE_MINUS)

RESIDUAL_TOL = 1e-10


class SpectralError(RuntimeError):
    """Eigensolver failure or an unusable spectrum."""


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Ascending eigenvalues with eigenvectors as columns.

    ``complete`` is False when only the eigenpairs inside an energy window
    were computed.  ``labels`` is ``None`` until a classifier has run.
    """

    values: np.ndarray
    vectors: np.ndarray
    labels: np.ndarray | None = None
    edge_weight: np.ndarray | None = None
    velocity: np.ndarray | None = None
    complete: bool = True

    def __len__(self):
        return len(self.values)

    @property
    def edge_mask(self) -> np.ndarray:
        if self.labels is None:
            raise SpectralError("eigensystem has not been classified")
        return np.isin(self.labels, TRANSPORT_LABELS)

    @property
    def edge_indices(self) -> np.ndarray:
        return np.flatnonzero(self.edge_mask)

    def edge_only(self) -> "EigenSystem":
        """Sub-system holding the transport edge modes, still sorted by energy."""
        idx = self.edge_indices
        return EigenSystem(
            values=self.values[idx],
            vectors=self.vectors[:, idx],
            labels=self.labels[idx],
            edge_weight=None if self.edge_weight is None else self.edge_weight[idx],
            velocity=None if self.velocity is None else self.velocity[idx],
            complete=False,
        )

    def to_csv(self, path: str | Path) -> Path:
        """Write ``index, eigenvalue, label, edge_weight`` rows."""
        path = Path(path)
        labels = self.labels if self.labels is not None else [""] * len(self)
        weight = self.edge_weight if self.edge_weight is not None else [np.nan] * len(self)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["index", "eigenvalue", "label", "edge_weight"])
            for i, (lam, lab, w) in enumerate(zip(self.values, labels, weight)):
                writer.writerow([i, f"{lam:.17g}", lab, f"{w:.17g}"])
        return path


@dataclass(frozen=True)
class GapInfo:
    """Bulk band edges around a spectral gap.

    ``windows`` lists every gap of the Bloch spectrum wider than the
    tolerance as ``(lower, upper)`` pairs; ``lower``/``upper`` describe the
    primary one (the central gap for Haldane, the lowest gap for QHE).
    """

    lower: float
    upper: float
    windows: tuple = field(default=())

    @property
    def center(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def gapless(self) -> bool:
        return not self.windows

    def contains(self, values, margin: float = 1e-6) -> np.ndarray:
        """True for values strictly inside any gap window shrunk by ``margin``."""
        values = np.asarray(values)
        out = np.zeros(values.shape, dtype=bool)
        for lo, hi in self.windows:
            out |= (values > lo + margin) & (values < hi - margin)
        return out

    def as_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "center": self.center,
            "width": self.width,
            "windows": [list(w) for w in self.windows],
        }


def _residual(H, values, vectors, chunk=256):
    worst = 0.0
    for s in range(0, len(values), chunk):
        v = vectors[:, s:s + chunk]
        r = H @ v - v * values[s:s + chunk]
        worst = max(worst, float(np.abs(r).max(initial=0.0)))
    return worst


def diagonalize(H, window: tuple[float, float] | None = None, check: bool = True) -> EigenSystem:
    """Dense Hermitian eigensolve.

    With ``window=(lo, hi)`` only eigenpairs with ``lo < lambda <= hi`` are
    computed, which is several times cheaper for in-gap modes of large
    ribbons.  The residual ``max ||H v - lambda v||`` is checked against
    1e-10 and reported in the error if exceeded.
    """
    H = np.asarray(H.toarray() if sp.issparse(H) else H)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {H.shape}")
    try:
        if window is None:
            values, vectors = sla.eigh(H, driver="evd", check_finite=False)
        else:
            values, vectors = sla.eigh(H, subset_by_value=window, driver="evr", check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from exc
    if check:
        scale = max(1.0, float(np.abs(values).max(initial=0.0)))
        res = _residual(H, values, vectors)
        if res > RESIDUAL_TOL * scale:
            raise SpectralError(f"eigensolver residual {res:.3e} exceeds {RESIDUAL_TOL:g}")
    return EigenSystem(values=values, vectors=vectors, complete=window is None)


def haldane_bloch(spec: HaldaneSpec, kx, ky) -> np.ndarray:
    """Bloch Hamiltonians ``(..., 2, 2)`` on the (A, B) basis of the honeycomb.

    Hopping orientations follow the ribbon builder, so the torus and the
    ribbon describe the same model.
    """
    k = np.stack(np.broadcast_arrays(np.asarray(kx, float), np.asarray(ky, float)), axis=-1)
    # A -> B nearest-neighbour vectors in the (x down, y right) frame
    delta = np.array([[-1.0, 0.0], [0.5, np.sqrt(3) / 2], [0.5, -np.sqrt(3) / 2]])
    shape = k.shape[:-1]
    out = np.zeros(shape + (2, 2), dtype=complex)
    out[..., 0, 0] = out[..., 1, 1] = spec.beta
    hab = sum(spec.kappa1 * np.exp(1j * k @ d) for d in delta)
    out[..., 0, 1] = hab
    out[..., 1, 0] = hab.conj()
    for i in range(3):
        for m in range(3):
            if i == m:
                continue
            # A -> B -> A' and B -> A -> B' paths
            d1, d2 = delta[i], -delta[m]
            nu = np.sign(d1[0] * d2[1] - d1[1] * d2[0])
            out[..., 0, 0] += spec.t2 * np.exp(1j * spec.phi * nu) * np.exp(1j * k @ (d1 + d2))
            out[..., 1, 1] += spec.t2 * np.exp(1j * spec.phi * nu) * np.exp(-1j * k @ (d1 + d2))
    return out


def qhe_bloch(spec: QheSpec, kx, theta, q: int) -> np.ndarray:
    """Bloch Hamiltonians ``(..., q, q)`` of the q-column magnetic unit cell.

    ``kx`` is the momentum along the gauge-phase direction and ``theta`` the
    Bloch phase accumulated across one magnetic cell along ``y``.
    """
    kx, theta = np.broadcast_arrays(np.asarray(kx, float), np.asarray(theta, float))
    out = np.zeros(kx.shape + (q, q), dtype=complex)
    for m in range(q):
        out[..., m, m] = 2 * spec.kappa * np.cos(kx - spec.phi * (m + 1))
    if q == 1:
        out[..., 0, 0] += 2 * spec.kappa * np.cos(theta)
        return out
    for m in range(q - 1):
        out[..., m, m + 1] += spec.kappa
        out[..., m + 1, m] += spec.kappa
    out[..., q - 1, 0] += spec.kappa * np.exp(1j * theta)
    out[..., 0, q - 1] += spec.kappa * np.exp(-1j * theta)
    return out


def flux_period(phi: float, max_q: int = 64) -> int:
    """Smallest ``q`` with ``q * phi / (2 pi)`` an integer."""
    frac = Fraction(phi / (2 * np.pi)).limit_denominator(max_q)
    if abs(float(frac) - phi / (2 * np.pi)) > 1e-12:
        raise SpectralError(f"flux {phi} is not a rational multiple of 2 pi with q <= {max_q}")
    return frac.denominator


def _band_gaps(bands: np.ndarray, tol: float) -> list[tuple[float, float]]:
    """Gaps between consecutive bands, given ``bands`` as ``(n_k, n_bands)``."""
    tops, bottoms = bands.max(axis=0), bands.min(axis=0)
    gaps = []
    for b in range(bands.shape[1] - 1):
        lo, hi = float(tops[b]), float(bottoms[b + 1])
        if hi - lo > tol:
            gaps.append((lo, hi))
    return gaps


def bulk_gap(model: HaldaneSpec | QheSpec, nk: int = 300, tol: float = 1e-9) -> GapInfo:
    """Band edges from the torus (Bloch) spectrum on an ``nk`` x ``nk`` grid.

    ``nk`` is rounded up so the band extrema lie on the grid: to a multiple
    of 3 (Dirac points) for Haldane and of ``4q`` for the QHE lattice.  A
    gapless spectrum yields ``lower == upper`` at the band touching and
    empty ``windows``.
    """
    if isinstance(model, HaldaneSpec):
        nk += (-nk) % 3
        # reciprocal vectors of the hexagon-centre lattice a1=(0, sqrt3), a2=(1.5, sqrt3/2)
        a = np.array([[0.0, np.sqrt(3)], [1.5, np.sqrt(3) / 2]])
        b = 2 * np.pi * np.linalg.inv(a).T
        f = np.arange(nk) / nk
        f1, f2 = np.meshgrid(f, f, indexing="ij")
        k = f1[..., None] * b[0] + f2[..., None] * b[1]
        bands = np.linalg.eigvalsh(haldane_bloch(model, k[..., 0], k[..., 1])).reshape(-1, 2)
        gaps = _band_gaps(bands, tol)
        if not gaps:
            mid = 0.5 * (bands[:, 0].max() + bands[:, 1].min())
            return GapInfo(mid, mid, ())
        return GapInfo(gaps[0][0], gaps[0][1], tuple(gaps))
    if isinstance(model, QheSpec):
        q = flux_period(model.phi)
        # band extrema sit at multiples of pi / (2q) in both momenta
        nk += (-nk) % (4 * q)
        f = 2 * np.pi * np.arange(nk) / nk
        kx, theta = np.meshgrid(f, f, indexing="ij")
        bands = np.linalg.eigvalsh(qhe_bloch(model, kx, theta, q)).reshape(-1, q)
        gaps = _band_gaps(bands, tol)
        if not gaps:
            return GapInfo(0.0, 0.0, ())
        return GapInfo(gaps[0][0], gaps[0][1], tuple(gaps))
    raise TypeError(f"unsupported model {type(model).__name__}")


def edge_weights(es: EigenSystem, geom: LatticeGeometry, depth: int = 2) -> np.ndarray:
    """Probability of each mode within ``depth`` rows of the boundary."""
    band = geom.boundary_band(depth)
    return (np.abs(es.vectors[band]) ** 2).sum(axis=0)


def classify_haldane(
    es: EigenSystem,
    gap: GapInfo,
    geom: LatticeGeometry | None = None,
    margin: float = 1e-6,
    guard: float = 0.5,
    depth: int = 2,
) -> EigenSystem:
    """Label in-gap modes ``edge`` and everything else ``bulk``.

    When ``geom`` is given, an in-gap mode must also carry at least ``guard``
    of its weight within ``depth`` hexagon rows of the boundary; this keeps
    finite-size bulk states near the band edges and localised disorder
    states out of the edge space.
    """
    in_gap = gap.contains(es.values, margin)
    weight = None
    if geom is not None:
        weight = edge_weights(es, geom, depth)
        in_gap &= weight >= guard
    labels = np.where(in_gap, EDGE, BULK).astype("<U5")
    return replace(es, labels=labels, edge_weight=weight)


def edge_current_operator(H, geom: LatticeGeometry, half: str = "top") -> sp.csr_matrix:
    """``i[H, Y]`` restricted to one half of the ribbon (rows above the midline).

    The full-sample current of a bound eigenstate vanishes; restricted to the
    top half it measures the circulation sense of a chiral edge mode.
    """
    H = sp.csr_matrix(H)
    coo = H.tocoo()
    x, y = geom.positions.T
    mid = 0.5 * (x.min() + x.max())
    sel = x < mid if half == "top" else x > mid
    keep = sel[coo.row] & sel[coo.col] & (coo.row != coo.col)
    r, c, v = coo.row[keep], coo.col[keep], coo.data[keep]
    data = 1j * v * (y[c] - y[r])
    return sp.csr_matrix((data, (r, c)), shape=H.shape)


def mode_velocities(es: EigenSystem, H, geom: LatticeGeometry) -> np.ndarray:
    """Top-half current ``<phi_n| P i[H, Y] P |phi_n>`` for every mode."""
    J = edge_current_operator(H, geom)
    return np.real((es.vectors.conj() * (J @ es.vectors)).sum(axis=0))


def classify_qhe(
    es: EigenSystem,
    gap: GapInfo,
    geom: LatticeGeometry,
    H=None,
    margin: float = 1e-6,
    vtol: float = 1e-3,
) -> EigenSystem:
    """Split in-gap modes into ``edge-`` and ``edge+`` by circulation sense.

    ``edge-`` modes move along the top edge towards ``+y`` (from the input
    corner through the middle region); ``edge+`` modes circulate the other
    way.  Modes with ``|v| < vtol`` are labelled bulk.  For transport only
    ``edge-`` counts as edge space; ``edge+`` is treated like bulk.  ``H``
    is required to evaluate the velocities unless ``es.velocity`` is set.
    """
    if es.velocity is not None:
        v = es.velocity
    elif H is not None:
        v = mode_velocities(es, H, geom)
    else:
        raise SpectralError("classify_qhe needs H or precomputed velocities")
    in_gap = gap.contains(es.values, margin)
    labels = np.full(len(es), BULK, dtype="<U5")
    labels[in_gap & (v > vtol)] = EDGE_MINUS
    labels[in_gap & (v < -vtol)] = EDGE_PLUS
    return replace(es, labels=labels, velocity=v, edge_weight=edge_weights(es, geom, 2))
