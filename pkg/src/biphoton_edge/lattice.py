"""Finite lattices as site-indexed Hermitian matrices.

Two builders are provided:

* :func:`build_haldane` -- a honeycomb ribbon of ``nx`` x ``ny`` hexagons with
  real nearest-neighbour hopping and imaginary next-nearest-neighbour hopping.
* :func:`build_qhe` -- an ``nx`` x ``ny`` square lattice with a uniform
  magnetic flux per plaquette (Landau gauge).

Coordinates follow one convention for both: ``x`` runs from the top edge
downwards (row index), ``y`` runs from the left edge to the right along the
long axis of the ribbon.  The long axis is split into a clean left region, a
disordered middle region and a clean right region.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

SQRT3 = np.sqrt(3.0)

REGION_NAMES = ("left", "middle", "right")
LEFT, MIDDLE, RIGHT = 0, 1, 2


class LatticeError(ValueError):
    """Invalid lattice or disorder parameters."""


@dataclass(frozen=True)
class HaldaneSpec:
    """Haldane honeycomb ribbon.

    ``nx`` hexagon rows (short axis) by ``ny`` hexagons per row (long axis).
    ``t2`` is the magnitude of the next-nearest-neighbour hopping and ``phi``
    its phase; with ``phi = pi/2`` the NNN matrix elements are ``+-1j*t2``.
    ``disorder_length`` is the length of the middle region in hexagons and
    ``disorder_start`` the number of hexagons to its left (``None`` centres it).
    """

    nx: int = 10
    ny: int = 90
    kappa1: float = 1.0
    t2: float = 0.2
    phi: float = np.pi / 2
    beta: float = 0.0
    termination: str = "zigzag"
    disorder_length: int = 20
    disorder_start: int | None = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise LatticeError(f"nx and ny must be >= 1, got nx={self.nx}, ny={self.ny}")
        if self.kappa1 <= 0:
            raise LatticeError(f"kappa1 must be positive, got {self.kappa1}")
        if self.t2 < 0:
            raise LatticeError(f"t2 must be non-negative, got {self.t2}")
        if self.termination != "zigzag":
            raise LatticeError(f"unsupported termination {self.termination!r}")
        _check_regions(self.ny, self.disorder_length, self.disorder_start)


@dataclass(frozen=True)
class QheSpec:
    """Square lattice with flux ``phi`` per plaquette; ``nx`` rows by ``ny`` columns."""

    nx: int = 20
    ny: int = 180
    kappa: float = 1.0
    phi: float = np.pi / 2
    disorder_length: int = 20
    disorder_start: int | None = None

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise LatticeError(f"nx and ny must be >= 2, got nx={self.nx}, ny={self.ny}")
        if self.kappa <= 0:
            raise LatticeError(f"kappa must be positive, got {self.kappa}")
        _check_regions(self.ny, self.disorder_length, self.disorder_start)


@dataclass(frozen=True)
class DisorderSpec:
    """Static Gaussian on-site detuning, zero mean, standard deviation ``sigma``."""

    sigma: float = 1.0
    region: str = "middle"
    seed: int = 0
    distribution: str = "normal"

    def __post_init__(self):
        if self.sigma < 0:
            raise LatticeError(f"sigma must be non-negative, got {self.sigma}")
        if self.region not in (*REGION_NAMES, "all"):
            raise LatticeError(f"unknown region {self.region!r}")
        if self.distribution != "normal":
            raise LatticeError(f"unsupported distribution {self.distribution!r}")


def _check_regions(ny, length, start):
    if length < 0:
        raise LatticeError(f"disorder_length must be non-negative, got {length}")
    if start is not None and (start < 0 or start + min(length, ny) > ny):
        raise LatticeError(f"disorder region [{start}, {start + length}) exceeds ny={ny}")


def _region_bounds(ny, length, start):
    """[start, stop) of the middle region; lengths beyond ``ny`` are clipped."""
    length = min(length, ny)
    start = (ny - length) // 2 if start is None else start
    return start, start + length


@dataclass(frozen=True, eq=False)
class LatticeGeometry:
    """Site positions, labels and the ordered input edge of a finite lattice."""

    kind: str
    nx: int
    ny: int
    positions: np.ndarray
    region: np.ndarray
    sublattice: np.ndarray
    coordination: np.ndarray
    input_edge: np.ndarray
    bonds: np.ndarray
    nnn_bonds: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    def input_sites(self, m_e: int) -> np.ndarray:
        """First ``m_e`` sites of the input edge, ordered away from the corner."""
        if not 1 <= m_e <= len(self.input_edge):
            raise LatticeError(f"m_e must lie in [1, {len(self.input_edge)}], got {m_e}")
        return self.input_edge[:m_e]

    def boundary_band(self, depth: int = 2) -> np.ndarray:
        """Mask of sites lying within ``depth`` rows of the outer boundary.

        For the honeycomb a row is a row (or column) of hexagons; for the
        square lattice it is a row (or column) of sites.
        """
        x, y = self.positions.T
        if self.kind == "haldane":
            # hexagon rows have pitch 1.5 and height 2; columns have width sqrt(3)
            dx = 1.5 * (depth - 1) + 2.0 + 1e-9
            dy = SQRT3 * depth + SQRT3 / 2 + 1e-9
        else:
            dx = dy = depth - 1 + 1e-9
        return (
            (x - x.min() <= dx)
            | (x.max() - x <= dx)
            | (y - y.min() <= dy)
            | (y.max() - y <= dy)
        )

    def to_csv(self, path: str | Path) -> Path:
        """Write ``site, x, y, region, sublattice, coordination, input_index``."""
        path = Path(path)
        order = np.full(self.n_sites, -1)
        order[self.input_edge] = np.arange(len(self.input_edge))
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site", "x", "y", "region", "sublattice", "coordination", "input_index"])
            for i, (xi, yi) in enumerate(self.positions):
                writer.writerow([
                    i, repr(float(xi)), repr(float(yi)), REGION_NAMES[self.region[i]],
                    int(self.sublattice[i]), int(self.coordination[i]), int(order[i]),
                ])
        return path


def operator_hash(H) -> str:
    """Short content hash of a matrix, used to key results to a lattice."""
    arr = np.ascontiguousarray(H.toarray() if hasattr(H, "toarray") else H, dtype=complex)
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


def _nnn_orientation(d1, d2):
    """+1 for a left turn i->k->j in the (x, y) plane, -1 for a right turn."""
    return np.sign(d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0])


def _honeycomb_sites(nx, ny):
    """Integer coordinates of the hexagon vertices, deduplicated and row-major.

    ``xi`` counts half units downwards, ``yi`` counts sqrt(3)/2 units to the right.
    """
    r, c = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    r, c = r.ravel(), c.ravel()
    xc = 2 + 3 * r
    yc = 2 * c + (r % 2) + 1
    # top, upper pair, lower pair, bottom
    dx = np.array([-2, -1, -1, 1, 1, 2])
    dy = np.array([0, -1, 1, -1, 1, 0])
    pts = np.stack([(xc[:, None] + dx).ravel(), (yc[:, None] + dy).ravel()], axis=1)
    pts = np.unique(pts, axis=0)
    return pts[np.lexsort((pts[:, 1], pts[:, 0]))]


def build_haldane(spec: HaldaneSpec) -> tuple[np.ndarray, LatticeGeometry]:
    """Dense Haldane Hamiltonian and geometry for a zigzag honeycomb ribbon.

    Sites are the vertices of ``nx`` rows of pointy-top hexagons, alternate
    rows shifted by half a hexagon, enumerated row-major (top to bottom, then
    left to right).  The ribbon has ``2*(2*ny + 1) + (nx - 1)*(2*ny + 2)``
    sites, 2000 for the default 10 x 90 ribbon.  The NNN hop ``i -> j``
    through the common neighbour ``k`` carries ``t2 * exp(1j*phi*nu)`` with
    ``nu = +1`` for a left turn in the (x down, y right) frame; for
    ``phi > 0`` top-edge wavepackets then travel towards ``+y``.
    """
    ints = _honeycomb_sites(spec.nx, spec.ny)
    pos = np.column_stack([0.5 * ints[:, 0], (SQRT3 / 2) * ints[:, 1]])
    n = len(pos)

    tree = cKDTree(pos)
    nn = np.array(sorted(tree.query_pairs(1.0 + 1e-6)), dtype=int).reshape(-1, 2)
    far = tree.query_pairs(SQRT3 + 1e-6, output_type="ndarray")
    dist = np.linalg.norm(pos[far[:, 0]] - pos[far[:, 1]], axis=1)
    nnn = far[np.abs(dist - SQRT3) < 1e-6]
    nnn = nnn[np.lexsort((nnn[:, 1], nnn[:, 0]))]

    adj = [set() for _ in range(n)]
    for i, j in nn:
        adj[i].add(j)
        adj[j].add(i)

    H = np.zeros((n, n), dtype=complex)
    H[nn[:, 0], nn[:, 1]] = spec.kappa1
    H[nn[:, 1], nn[:, 0]] = spec.kappa1
    if len(nnn) and spec.t2 > 0:
        mid = np.array([min(adj[i] & adj[j]) for i, j in nnn])
        nu = _nnn_orientation(pos[mid] - pos[nnn[:, 0]], pos[nnn[:, 1]] - pos[mid])
        amp = spec.t2 * np.exp(1j * spec.phi * nu)
        H[nnn[:, 0], nnn[:, 1]] = amp
        H[nnn[:, 1], nnn[:, 0]] = amp.conj()
    H[np.diag_indices(n)] = spec.beta

    start, stop = _region_bounds(spec.ny, spec.disorder_length, spec.disorder_start)
    yi = ints[:, 1]
    # a region reaching the right end also owns the last column of vertices
    right_from = 2 * stop if stop < spec.ny else 2 * stop + 1
    region = np.where(yi < 2 * start, LEFT, np.where(yi < right_from, MIDDLE, RIGHT))
    # peaks of the top row: the outermost, two-fold coordinated sites of the top edge
    edge = np.flatnonzero(ints[:, 0] == 0)
    edge = edge[np.argsort(pos[edge, 1])]
    coordination = np.bincount(nn.ravel(), minlength=n)
    geom = LatticeGeometry(
        kind="haldane",
        nx=spec.nx,
        ny=spec.ny,
        positions=pos,
        region=region.astype(np.int8),
        sublattice=(ints[:, 0] % 3 != 0).astype(np.int8),
        coordination=coordination,
        input_edge=edge,
        bonds=nn,
        nnn_bonds=nnn,
    )
    return H, geom


def build_qhe(spec: QheSpec) -> tuple[np.ndarray, LatticeGeometry]:
    """Dense square-lattice Hamiltonian with flux ``phi`` per plaquette.

    Site ``(n, m)`` (row ``n`` from the top, column ``m`` from the left, both
    0-based) has index ``n*ny + m``.  Hopping along a row is ``kappa``;
    hopping from row ``n+1`` to row ``n`` in column ``m`` is
    ``kappa * exp(-1j*phi*(m + 1))``, i.e. the gauge phase uses the 1-based
    column number.  The input edge is the left column, top to bottom.
    """
    nx, ny = spec.nx, spec.ny
    n_idx, m_idx = np.divmod(np.arange(nx * ny), ny)
    H = np.zeros((nx * ny, nx * ny), dtype=complex)

    row = np.flatnonzero(m_idx < ny - 1)
    H[row, row + 1] = spec.kappa
    col = np.flatnonzero(n_idx < nx - 1)
    H[col, col + ny] = spec.kappa * np.exp(-1j * spec.phi * (m_idx[col] + 1))
    H = H + np.triu(H, 1).conj().T

    bonds = np.vstack([np.column_stack([row, row + 1]), np.column_stack([col, col + ny])])
    bonds = bonds[np.lexsort((bonds[:, 1], bonds[:, 0]))]
    start, stop = _region_bounds(ny, spec.disorder_length, spec.disorder_start)
    region = np.where(m_idx < start, LEFT, np.where(m_idx < stop, MIDDLE, RIGHT))
    geom = LatticeGeometry(
        kind="qhe",
        nx=nx,
        ny=ny,
        positions=np.column_stack([n_idx, m_idx]).astype(float),
        region=region.astype(np.int8),
        sublattice=((n_idx + m_idx) % 2).astype(np.int8),
        coordination=np.bincount(bonds.ravel(), minlength=nx * ny),
        input_edge=np.arange(nx) * ny,
        bonds=bonds,
    )
    return H, geom


def plaquette_phases(H: np.ndarray, geom: LatticeGeometry) -> np.ndarray:
    """Phase of the hopping product around every elementary square plaquette.

    The loop is ``(n,m) <- (n+1,m) <- (n+1,m+1) <- (n,m+1) <- (n,m)``, so a
    uniform flux ``phi`` gives ``phi`` for every plaquette.
    """
    if geom.kind != "qhe":
        raise LatticeError("plaquettes are defined for the square lattice only")
    ny = geom.ny
    n, m = np.meshgrid(np.arange(geom.nx - 1), np.arange(ny - 1), indexing="ij")
    a = (n * ny + m).ravel()
    b, c, d = a + ny, a + ny + 1, a + 1
    return np.angle(H[a, b] * H[b, c] * H[c, d] * H[d, a]).reshape(n.shape)


def region_mask(geom: LatticeGeometry, region: str) -> np.ndarray:
    if region == "all":
        return np.ones(geom.n_sites, dtype=bool)
    return geom.region == REGION_NAMES.index(region)


def disorder_potential(geom: LatticeGeometry, d: DisorderSpec) -> np.ndarray:
    """On-site detunings: ``Normal(0, sigma**2)`` on the selected region, 0 elsewhere.

    Draws come from ``numpy.random.default_rng(seed)`` in site order, so a
    given seed always reproduces the same realisation.
    """
    mask = region_mask(geom, d.region)
    out = np.zeros(geom.n_sites)
    rng = np.random.default_rng(d.seed)
    out[mask] = d.sigma * rng.standard_normal(int(mask.sum()))
    return out


def apply_disorder(H, geom: LatticeGeometry, d: DisorderSpec):
    """Return ``H + diag(delta_beta)``; ``H`` itself is left untouched.

    Works for dense arrays and scipy sparse matrices alike.
    """
    if H.shape != (geom.n_sites, geom.n_sites):
        raise LatticeError(f"operator shape {H.shape} does not match {geom.n_sites} sites")
    delta = disorder_potential(geom, d)
    if hasattr(H, "tocsr"):
        import scipy.sparse as sp

        return (H + sp.diags(delta)).tocsr()
    out = np.array(H, dtype=complex, copy=True)
    out[np.diag_indices_from(out)] += delta
    return out
