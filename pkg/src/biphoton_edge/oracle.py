"""Independent reference computations used to check the main code paths.

* Second-order transition amplitudes of a single-particle perturbation
  between two-photon product states, once by explicit summation over all
  intermediate pair states and once in the two-term closed form.
* Two-photon evolution by exponentiating ``H (x) 1 + 1 (x) H`` restricted
  to the symmetric subspace, for comparison with ``U psi U^T``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .biphoton import BiphotonState
from .lattice import HaldaneSpec, QheSpec, build_haldane, build_qhe
from .spectral import EigenSystem, diagonalize

DEGENERACY_TOL = 1e-9
MAX_BRUTE_SITES = 64


class OracleError(ValueError):
    """Undefined amplitude or an instance too large for brute force."""


@dataclass(frozen=True, eq=False)
class PerturbationCase:
    """Single-photon energies ``lam``, perturbation ``V`` in the mode basis,
    initial pair ``(n_i, m_i)`` and final pair ``(n_f, m_f)``."""

    lam: np.ndarray
    V: np.ndarray
    initial: tuple[int, int]
    final: tuple[int, int]

    def __post_init__(self):
        n = len(self.lam)
        if self.V.shape != (n, n):
            raise OracleError(f"V has shape {self.V.shape}, expected {(n, n)}")
        if np.abs(self.V - self.V.conj().T).max() > 1e-12 * max(1.0, np.abs(self.V).max()):
            raise OracleError("V is not Hermitian")

    @classmethod
    def from_sites(cls, es: EigenSystem, v_sites, initial, final) -> "PerturbationCase":
        """Perturbation given in the site basis (a diagonal vector or a matrix)."""
        v = np.asarray(v_sites)
        vm = np.diag(v) if v.ndim == 1 else v
        phi = es.vectors
        return cls(es.values, phi.conj().T @ vm @ phi, tuple(initial), tuple(final))

    def scaled(self, c: float) -> "PerturbationCase":
        return PerturbationCase(self.lam, c * self.V, self.initial, self.final)

    def swapped(self) -> "PerturbationCase":
        """Exchange the photon labels in both pairs."""
        return PerturbationCase(self.lam, self.V, self.initial[::-1], self.final[::-1])

    @property
    def energy_mismatch(self) -> float:
        (ni, mi), (nf, mf) = self.initial, self.final
        return float(self.lam[nf] + self.lam[mf] - self.lam[ni] - self.lam[mi])


def pair_perturbation(V: np.ndarray) -> sp.csr_matrix:
    """``V (x) 1 + 1 (x) V`` on ordered product states ``|n, m> -> n*M + m``."""
    eye = sp.identity(V.shape[0], format="csr")
    Vs = sp.csr_matrix(V)
    return (sp.kron(Vs, eye) + sp.kron(eye, Vs)).tocsr()


def second_order_sum(case: PerturbationCase, tol: float = DEGENERACY_TOL, with_excluded: bool = False):
    """``sum_j' V2_{f j'} V2_{j' i} / (lam2_j' - lam2_i)`` over all ordered pairs ``j'``.

    Intermediates with ``|lam2_j' - lam2_i| < tol`` are left out; their
    number (counting only those with a non-zero numerator) is returned as
    the second element when ``with_excluded`` is set.
    """
    M = len(case.lam)
    V2 = pair_perturbation(case.V)
    (ni, mi), (nf, mf) = case.initial, case.final
    i, f = ni * M + mi, nf * M + mf
    lam2 = np.add.outer(case.lam, case.lam).ravel()
    num = V2.getrow(f).toarray().ravel() * V2.getcol(i).toarray().ravel()
    den = lam2 - lam2[i]
    keep = np.abs(den) >= tol
    excluded = int(np.count_nonzero(num[~keep]))
    value = complex(np.sum(num[keep] / den[keep]))
    return (value, excluded) if with_excluded else value


def second_order_closed(case: PerturbationCase, tol: float = DEGENERACY_TOL) -> complex:
    """``V_{nf,ni} V_{mf,mi} [1/(lam_nf - lam_ni) + 1/(lam_mf - lam_mi)]``."""
    (ni, mi), (nf, mf) = case.initial, case.final
    d1 = case.lam[nf] - case.lam[ni]
    d2 = case.lam[mf] - case.lam[mi]
    if abs(d1) < tol or abs(d2) < tol:
        raise OracleError(f"degenerate single-photon transition (differences {d1:.3e}, {d2:.3e})")
    return complex(case.V[nf, ni] * case.V[mf, mi] * (1.0 / d1 + 1.0 / d2))


# --- small test lattices -----------------------------------------------


def haldane_fragment(n_sites: int, t2: float = 0.2, phi: float = np.pi / 2) -> np.ndarray:
    """Leading ``n_sites`` block of a Haldane ribbon (row-major sites)."""
    ny = 1
    while build_haldane(HaldaneSpec(1, ny, t2=t2, phi=phi))[1].n_sites < n_sites:
        ny += 1
    H, _ = build_haldane(HaldaneSpec(1, ny, t2=t2, phi=phi))
    return H[:n_sites, :n_sites].copy()


def chiral_eigensystem(H: np.ndarray, sublattice: np.ndarray) -> EigenSystem:
    """Eigensystem of a bipartite ``H`` with an exactly mirrored spectrum.

    The modes with ``lambda > 0`` are computed; their partners are set to
    ``(-lambda, Gamma phi)`` with ``Gamma = diag(+-1)`` by sublattice, so
    ``lambda_k + lambda_kbar`` vanishes in floating point.  Requires a
    spectrum without zero modes.
    """
    gamma = np.where(np.asarray(sublattice) == 0, 1.0, -1.0)
    if np.abs(gamma[:, None] * H * gamma[None, :] + H).max() > 1e-12:
        raise OracleError("operator is not chiral with respect to the sublattice signs")
    es = diagonalize(H)
    pos = es.values > 1e-8
    if 2 * int(pos.sum()) != len(H):
        raise OracleError("spectrum has zero modes; cannot mirror exactly")
    lam_p, vec_p = es.values[pos], es.vectors[:, pos]
    lam = np.concatenate([-lam_p[::-1], lam_p])
    vec = np.concatenate([(gamma[:, None] * vec_p)[:, ::-1], vec_p], axis=1)
    return EigenSystem(lam, vec)


def qhe_fragment(nx: int = 4, ny: int = 4, phi: float = np.pi / 2):
    H, geom = build_qhe(QheSpec(nx, ny, phi=phi))
    return H, geom.sublattice


def random_hermitian(rng: np.random.Generator, n: int, diagonal: bool = True) -> np.ndarray:
    if diagonal:
        return np.diag(rng.standard_normal(n)).astype(complex)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return 0.5 * (a + a.conj().T)


def degenerate_cases(es: EigenSystem, rng: np.random.Generator, count: int, diagonal: bool = True):
    """Energy-conserving cases ``(k, kbar) -> (l, lbar)`` on a mirrored spectrum.

    Both pairs have total energy exactly 0 and both photons change mode, so
    ``lam_nf - lam_ni`` equals ``-(lam_mf - lam_mi)`` bit for bit.
    """
    M = len(es)
    half = M // 2
    partner = lambda k: M - 1 - k  # noqa: E731
    lam = es.values
    out = []
    while len(out) < count:
        k, l = rng.choice(half, size=2, replace=False)
        k = int(k) if rng.random() < 0.5 else partner(int(k))
        l = int(l) if rng.random() < 0.5 else partner(int(l))
        if abs(lam[l] - lam[k]) < 1e-6:
            continue
        v = random_hermitian(rng, M, diagonal)
        out.append(PerturbationCase.from_sites(es, v, (k, partner(k)), (l, partner(l))))
    return out


def generic_cases(es: EigenSystem, rng: np.random.Generator, count: int, diagonal: bool = True, tol=1e-6):
    """Random pairs with both photons changing mode and no near-degeneracy."""
    M = len(es)
    lam = es.values
    out = []
    while len(out) < count:
        ni, mi, nf, mf = (int(x) for x in rng.integers(0, M, size=4))
        d1, d2 = lam[nf] - lam[ni], lam[mf] - lam[mi]
        if min(abs(d1), abs(d2), abs(d1 + d2)) < tol:
            continue
        out.append(PerturbationCase.from_sites(es, random_hermitian(rng, M, diagonal), (ni, mi), (nf, mf)))
    return out


# --- brute-force two-photon evolution -----------------------------------


def symmetric_isometry(n: int) -> sp.csr_matrix:
    """Columns are ``|j,j>`` and ``(|j,k> + |k,j>)/sqrt(2)`` for ``j < k``."""
    j, k = np.triu_indices(n)
    cols = np.arange(len(j))
    diag = j == k
    rows = np.concatenate([j * n + k, (k * n + j)[~diag]])
    cc = np.concatenate([cols, cols[~diag]])
    vals = np.where(diag, 1.0, 1 / np.sqrt(2))
    data = np.concatenate([vals, vals[~diag]])
    return sp.csr_matrix((data, (rows, cc)), shape=(n * n, len(j)))


def brute_force_biphoton_evolution(H, state: BiphotonState, z: float) -> BiphotonState:
    """``exp(-i H2 z)`` on the symmetric two-photon subspace, ``H2 = H (x) 1 + 1 (x) H``."""
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    if n > MAX_BRUTE_SITES:
        raise OracleError(f"brute force is limited to {MAX_BRUTE_SITES} sites, got {n}")
    if state.n_sites != n:
        raise OracleError(f"state has {state.n_sites} sites, operator {n}")
    P = symmetric_isometry(n)
    H2 = pair_perturbation(H)
    Hs = (P.T @ H2 @ P).toarray()
    vec = P.T @ state.amplitudes.reshape(-1)
    out = P @ (sla.expm(-1j * z * Hs) @ vec)
    return BiphotonState.from_amplitudes(out.reshape(n, n), normalize=False)


# --- batch verification --------------------------------------------------


def verification_report(
    n_degenerate: int = 1000, n_generic: int = 200, n_evolution: int = 20, seed: int = 0
) -> dict:
    """Run the oracle checks on small lattices and summarise the residuals."""
    from .evolve import propagate_biphoton, single_propagator

    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    report = {"seed": seed}

    # exact energy conservation on chiral fragments
    fragments = {
        "qhe_4x4": qhe_fragment(4, 4),
        "graphene_10": _graphene(),
    }
    per = -(-n_degenerate // len(fragments))
    worst_sum = worst_closed = 0.0
    n_deg = 0
    for name, (H, sub) in fragments.items():
        es = chiral_eigensystem(H, sub)
        for case in degenerate_cases(es, rng, per):
            worst_closed = max(worst_closed, abs(second_order_closed(case)))
            worst_sum = max(worst_sum, abs(second_order_sum(case)))
            n_deg += 1
    report["degenerate"] = {"cases": n_deg, "max_abs_closed": worst_closed, "max_abs_sum": worst_sum,
                            "fragments": list(fragments)}

    es = diagonalize(haldane_fragment(8))
    worst_diff = 0.0
    excluded = 0
    scale = 0.0
    for case in generic_cases(es, rng, n_generic, diagonal=False):
        val, exc = second_order_sum(case, with_excluded=True)
        worst_diff = max(worst_diff, abs(val - second_order_closed(case)))
        scale = max(scale, abs(val))
        excluded += exc
    report["generic"] = {"cases": n_generic, "max_abs_difference": worst_diff,
                         "max_abs_value": scale, "excluded_terms": excluded, "lattice": "haldane_8"}

    worst_ev = 0.0
    H = haldane_fragment(8)
    es = diagonalize(H)
    for _ in range(n_evolution):
        a = rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
        st = BiphotonState.from_amplitudes(a)
        for z in (0.1, 1.0, 10.0):
            ref = brute_force_biphoton_evolution(H, st, z).amplitudes
            got = propagate_biphoton(st, single_propagator(es, z)).amplitudes
            worst_ev = max(worst_ev, float(np.abs(ref - got).max()))
    report["evolution"] = {"states": n_evolution, "distances": [0.1, 1.0, 10.0], "max_abs_difference": worst_ev}
    report["seconds"] = time.perf_counter() - t0
    return report


def _graphene():
    """10-site two-hexagon graphene flake (t2 = 0, bipartite)."""
    H, geom = build_haldane(HaldaneSpec(1, 2, t2=0.0))
    return H, geom.sublattice
