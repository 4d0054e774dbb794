"""Pure two-photon states, Gaussian templates, edge-edge projection and maps.

A two-photon amplitude matrix ``psi[j, k]`` is symmetric and normalised on
the full site grid, ``sum |psi|**2 = 1``.  States are stored in factored
form ``psi = F @ C @ F.T`` with a frame ``F`` (sites x r) and a symmetric
core ``C`` (r x r).  Both the Gaussian templates (supported on a few input
sites) and edge-projected states (spanned by a few edge modes) are low rank,
so propagation only has to act on the ``r`` frame columns.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .lattice import LatticeGeometry
from .spectral import EigenSystem, SpectralError

SQRT40 = np.sqrt(40.0)


class StateError(ValueError):
    """Invalid recipe or a state that cannot be formed."""


@dataclass(frozen=True, eq=False)
class BiphotonState:
    """Symmetric two-photon amplitude ``psi = frame @ core @ frame.T``."""

    frame: np.ndarray
    core: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f, c = self.frame, self.core
        if f.ndim != 2 or c.shape != (f.shape[1], f.shape[1]):
            raise StateError(f"frame {f.shape} and core {c.shape} do not fit")

    @classmethod
    def from_amplitudes(cls, psi, normalize: bool = True, meta=None) -> "BiphotonState":
        psi = np.asarray(psi, dtype=complex)
        if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
            raise StateError(f"amplitudes must be square, got {psi.shape}")
        psi = 0.5 * (psi + psi.T)
        state = cls(np.eye(len(psi), dtype=complex), psi, dict(meta or {}))
        return state.normalized() if normalize else state

    @classmethod
    def product(cls, phi, meta=None) -> "BiphotonState":
        """``|phi> (x) |phi>``, normalised."""
        phi = np.asarray(phi, dtype=complex).reshape(-1, 1)
        n = np.linalg.norm(phi)
        if n == 0:
            raise StateError("zero single-photon vector")
        return cls(phi / n, np.ones((1, 1), dtype=complex), dict(meta or {}))

    @classmethod
    def pair(cls, n_sites: int, j: int, k: int) -> "BiphotonState":
        """Symmetrised ``(|j,k> + |k,j>)/sqrt(2)`` (or ``|j,j>``)."""
        psi = np.zeros((n_sites, n_sites), dtype=complex)
        psi[j, k] += 1.0
        psi[k, j] += 1.0
        return cls.from_amplitudes(psi)

    @property
    def n_sites(self) -> int:
        return self.frame.shape[0]

    @property
    def rank(self) -> int:
        return self.frame.shape[1]

    @cached_property
    def amplitudes(self) -> np.ndarray:
        return self.frame @ self.core @ self.frame.T

    @cached_property
    def _gram(self) -> np.ndarray:
        return self.frame.conj().T @ self.frame

    def norm(self) -> float:
        return float(np.sqrt(abs(inner(self, self))))

    def normalized(self) -> "BiphotonState":
        n = self.norm()
        if not np.isfinite(n) or n == 0:
            raise StateError("cannot normalise a zero state")
        return BiphotonState(self.frame, self.core / n, dict(self.meta))

    def with_meta(self, **meta) -> "BiphotonState":
        return BiphotonState(self.frame, self.core, {**self.meta, **meta})

    def compress(self, rtol: float = 1e-14) -> "BiphotonState":
        """Orthonormal frame of minimal rank; the represented state is unchanged
        up to singular values below ``rtol`` times the largest."""
        q, r = np.linalg.qr(self.frame)
        core = r @ self.core @ r.T
        u, s, _ = np.linalg.svd(core)
        keep = max(1, int((s > rtol * s[0]).sum())) if s.size and s[0] > 0 else 1
        u = u[:, :keep]
        # psi's column space is range(u) and its row space conj(range(u))
        return BiphotonState(q @ u, u.conj().T @ core @ u.conj(), dict(self.meta))

    def save(self, path: str | Path, extra: dict | None = None) -> Path:
        """Binary ``.npz`` with frame and core plus a ``.json`` sidecar."""
        path = Path(path).with_suffix(".npz")
        np.savez(path, frame=self.frame, core=self.core)
        side = {"n_sites": self.n_sites, "rank": self.rank, "meta": self.meta, **(extra or {})}
        path.with_suffix(".json").write_text(json.dumps(side, indent=2, default=_json_default))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "BiphotonState":
        path = Path(path).with_suffix(".npz")
        with np.load(path) as data:
            frame, core = data["frame"], data["core"]
        meta = {}
        side = path.with_suffix(".json")
        if side.exists():
            meta = json.loads(side.read_text()).get("meta", {})
        return cls(frame, core, meta)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def inner(a: BiphotonState, b: BiphotonState) -> complex:
    """Flat inner product ``sum_jk conj(a_jk) b_jk`` without forming amplitudes."""
    if a.n_sites != b.n_sites:
        raise StateError(f"dimension mismatch: {a.n_sites} vs {b.n_sites} sites")
    g = a.frame.conj().T @ b.frame
    return complex(np.trace(a.core.conj().T @ g @ b.core @ g.T))


@dataclass(frozen=True)
class StateRecipe:
    """Gaussian two-photon template on the first ``m_e`` input-edge sites.

    ``envelope='haldane'`` uses ``(x0 - (j+k)/2)**2 / sigma_c**2`` for the
    centre-of-mass term, ``envelope='qhe'`` uses ``(x0 - (j+k))**2 / sigma_c**2``.
    ``phase`` selects ``(-1)**(j+k)`` or ``(-1j)**(j+k)``.  Site labels
    ``j, k`` run from 1 to ``m_e``.
    """

    sigma_c: float
    sigma_a: float
    m_e: int = 20
    x0: float | None = None
    phase: str = "haldane"
    envelope: str = "haldane"

    def __post_init__(self):
        if not (self.sigma_c > 0 and self.sigma_a > 0):
            raise StateError(f"sigma_c and sigma_a must be positive, got {self.sigma_c}, {self.sigma_a}")
        if self.m_e < 1:
            raise StateError(f"m_e must be >= 1, got {self.m_e}")
        if self.phase not in ("haldane", "qhe") or self.envelope not in ("haldane", "qhe"):
            raise StateError(f"unknown convention phase={self.phase!r} envelope={self.envelope!r}")

    @classmethod
    def for_model(cls, kind: str, sigma_c: float, sigma_a: float, **kw) -> "StateRecipe":
        return cls(sigma_c, sigma_a, phase=kind, envelope=kind, **kw)

    @property
    def center(self) -> float:
        return (self.m_e + 1) / 2 if self.x0 is None else self.x0

    def exponent(self) -> np.ndarray:
        j = np.arange(1, self.m_e + 1, dtype=float)
        jj, kk = np.meshgrid(j, j, indexing="ij")
        com = (jj + kk) / 2 if self.envelope == "haldane" else jj + kk
        # widths whose square underflows give non-finite entries, rejected by the caller
        with np.errstate(divide="ignore", invalid="ignore"):
            return -((jj - kk) ** 2) / (4 * self.sigma_a ** 2) - (self.center - com) ** 2 / self.sigma_c ** 2

    def phases(self) -> np.ndarray:
        j = np.arange(1, self.m_e + 1)
        s = np.add.outer(j, j)
        return (-1.0) ** s if self.phase == "haldane" else (-1j) ** s

    def as_dict(self) -> dict:
        d = asdict(self)
        d["x0"] = self.center
        return d


RECIPES = {
    "correlated": (SQRT40, 0.01),
    "semi_correlated": (SQRT40, SQRT40 / 3),
    "product": (SQRT40, SQRT40),
    "semi_anticorrelated": (SQRT40 / 3, SQRT40),
    "anticorrelated": (0.01, SQRT40),
}


def named_recipe(name: str, kind: str = "haldane", **kw) -> StateRecipe:
    try:
        sc, sa = RECIPES[name]
    except KeyError:
        raise StateError(f"unknown recipe {name!r}; choose from {sorted(RECIPES)}") from None
    return StateRecipe.for_model(kind, sc, sa, **kw)


def template_amplitudes(recipe: StateRecipe) -> np.ndarray:
    """Normalised ``m_e`` x ``m_e`` template, evaluated relative to its peak so
    that tiny widths do not underflow."""
    e = recipe.exponent()
    if not np.all(np.isfinite(e)):
        raise StateError("template exponent is not finite")
    amp = np.exp(e - e.max()) * recipe.phases()
    amp = 0.5 * (amp + amp.T)
    n = np.linalg.norm(amp)
    if n == 0 or not np.isfinite(n):
        raise StateError("template underflows to zero")
    return amp / n


def template_state(recipe: StateRecipe, geom: LatticeGeometry) -> BiphotonState:
    """Template placed on the first ``m_e`` input-edge sites, zero elsewhere."""
    sites = geom.input_sites(recipe.m_e)
    frame = np.zeros((geom.n_sites, recipe.m_e), dtype=complex)
    frame[sites, np.arange(recipe.m_e)] = 1.0
    return BiphotonState(frame, template_amplitudes(recipe), {"recipe": recipe.as_dict()})


PAIR_LABELS = ("E(x)E", "B(x)E", "B(x)B")


@dataclass(frozen=True, eq=False)
class TwoPhotonEigenbasis:
    """Symmetric products of single-photon modes, indexed by ordered pairs ``m <= n``.

    The pair state is ``phi_m (x) phi_m`` for ``m == n`` and
    ``(phi_m (x) phi_n + phi_n (x) phi_m) / sqrt(2)`` otherwise, with
    eigenvalue ``lambda_m + lambda_n``.
    """

    es: EigenSystem

    def __post_init__(self):
        if self.es.labels is None:
            raise SpectralError("two-photon basis needs a classified eigensystem")

    @property
    def n_modes(self) -> int:
        return len(self.es)

    @cached_property
    def edge(self) -> np.ndarray:
        return self.es.edge_indices

    @cached_property
    def edge_vectors(self) -> np.ndarray:
        return self.es.vectors[:, self.edge]

    @property
    def edge_values(self) -> np.ndarray:
        return self.es.values[self.edge]

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.triu_indices(self.n_modes)

    def pair_values(self) -> np.ndarray:
        m, n = self.pairs()
        return self.es.values[m] + self.es.values[n]

    def pair_labels(self) -> np.ndarray:
        m, n = self.pairs()
        e = self.es.edge_mask
        count = e[m].astype(int) + e[n].astype(int)
        return np.asarray(PAIR_LABELS)[2 - count]

    def pair_vector(self, m: int, n: int) -> BiphotonState:
        v = self.es.vectors
        if m == n:
            return BiphotonState(v[:, [m]], np.ones((1, 1), dtype=complex))
        core = np.array([[0, 1], [1, 0]], dtype=complex) / np.sqrt(2)
        return BiphotonState(v[:, [m, n]], core)


def mode_coefficients(state: BiphotonState, vectors: np.ndarray) -> np.ndarray:
    """``c = V^dag psi V^*``, so ``psi`` restricted to the modes is ``V c V^T``."""
    g = vectors.conj().T @ state.frame
    return g @ state.core @ g.T


def _pair_map(c: np.ndarray, triangular: bool) -> np.ndarray:
    p = np.abs(c) ** 2
    if not triangular:
        return p
    return np.triu(2 * p, 1) + np.diag(np.diag(p))


def spectral_map(
    state: BiphotonState,
    basis: TwoPhotonEigenbasis,
    subspace: str = "edge",
    triangular: bool = True,
) -> np.ndarray:
    """``S[m, n] = |<phi2_mn|psi>|**2`` for ``m <= n`` (zero below the diagonal).

    ``subspace='edge'`` indexes the E(x)E block by edge-mode number in
    energy order; ``'full'`` uses every mode and needs a complete
    eigensystem.  With ``triangular=False`` the symmetric matrix
    ``|c_mn|**2`` is returned instead, whose total is the same weight.
    """
    if subspace == "edge":
        vectors = basis.edge_vectors
    elif subspace == "full":
        if not basis.es.complete:
            raise SpectralError("full spectral map needs a complete eigensystem")
        vectors = basis.es.vectors
    else:
        raise ValueError(f"unknown subspace {subspace!r}")
    return _pair_map(mode_coefficients(state, vectors), triangular)


def project_edge_edge(
    state: BiphotonState, basis: TwoPhotonEigenbasis, tol: float = 1e-12
) -> tuple[BiphotonState, float]:
    """Keep only the E(x)E components, renormalise, and return the kept weight."""
    phi = basis.edge_vectors
    if phi.shape[1] == 0:
        raise StateError("basis has no edge modes")
    c = mode_coefficients(state, phi)
    weight = float(np.sum(np.abs(c) ** 2))
    if weight < tol:
        raise StateError(f"edge-edge weight {weight:.3e} is below tolerance {tol:g}")
    out = BiphotonState(phi, c / np.sqrt(weight), {**state.meta, "projection_weight": weight})
    return out, weight


def spatial_map(state: BiphotonState, sites=None) -> np.ndarray:
    """``P[j, k] = |psi_jk|**2``, optionally restricted to ``sites``."""
    if sites is None:
        return np.abs(state.amplitudes) ** 2
    f = state.frame[np.asarray(sites)]
    return np.abs(f @ state.core @ f.T) ** 2


def reduced_density(state: BiphotonState, full: bool = True):
    """Single-photon reduced density ``rho = psi psi^dag`` and its diagonal ``R``.

    With ``full=False`` only ``R`` is computed and ``rho`` is returned as ``None``.
    """
    f = state.frame
    m = state.core @ state._gram.conj() @ state.core.conj().T
    fm = f @ m
    r = np.real(np.einsum("ij,ij->i", fm, f.conj()))
    rho = fm @ f.conj().T if full else None
    return rho, r


def schmidt_coefficients(state: BiphotonState) -> np.ndarray:
    """Squared singular values of ``psi`` normalised to sum 1, descending."""
    q, r = np.linalg.qr(state.frame)
    s = np.linalg.svd(r @ state.core @ r.T, compute_uv=False)
    p = s ** 2
    return p / p.sum()


def schmidt_number(state: BiphotonState) -> float:
    """``1 / sum p_i**2`` of the Schmidt coefficients."""
    p = schmidt_coefficients(state)
    return float(1.0 / np.sum(p ** 2))
