"""Figures of merit for propagated two-photon states."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .biphoton import BiphotonState, TwoPhotonEigenbasis, inner, mode_coefficients, schmidt_number


class MetricsError(ValueError):
    """A metric is undefined for the given states."""


@dataclass(frozen=True)
class MetricsRecord:
    """One row of results.  ``F`` is the raw fidelity, ``F_N`` the fidelity
    of the renormalised E(x)E part, ``E`` the edge-mode content."""

    label: str
    seed: int | None
    sigma: float
    sigma_c: float
    sigma_a: float
    z_f: float
    z_m: float
    F: float
    F_N: float
    E: float
    S_N: float
    lattice_hash: str = ""

    def __post_init__(self):
        for name in ("F", "F_N", "E"):
            val = getattr(self, name)
            if not (np.isnan(val) or -1e-9 <= val <= 1 + 1e-9):
                raise MetricsError(f"{name}={val} outside [0, 1]")
        if not (np.isnan(self.S_N) or self.S_N >= 1 - 1e-9):
            raise MetricsError(f"S_N={self.S_N} below 1")

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def fidelity(a: BiphotonState, b: BiphotonState) -> float:
    """``|<a|b>|**2`` with the flat inner product over the site grid."""
    return float(abs(inner(a, b)) ** 2)


def edge_content(state: BiphotonState, basis: TwoPhotonEigenbasis) -> float:
    """Weight of ``state`` inside the clean E(x)E subspace."""
    c = mode_coefficients(state, basis.edge_vectors)
    return float(np.sum(np.abs(c) ** 2))


def transmitted_fidelity(
    state: BiphotonState, reference: BiphotonState, basis: TwoPhotonEigenbasis, tol: float = 1e-12
) -> float:
    """Fidelity of the renormalised E(x)E part of ``state`` with ``reference``."""
    phi = basis.edge_vectors
    c = mode_coefficients(state, phi)
    w = float(np.sum(np.abs(c) ** 2))
    if w < tol:
        raise MetricsError(f"edge-mode content {w:.3e} too small to renormalise")
    return fidelity(BiphotonState(phi, c / np.sqrt(w)), reference)


def record_for(
    label: str,
    state_f: BiphotonState,
    reference_m: BiphotonState,
    initial: BiphotonState,
    basis: TwoPhotonEigenbasis,
    *,
    seed=None,
    sigma=0.0,
    z_f=np.nan,
    z_m=np.nan,
    lattice_hash="",
) -> MetricsRecord:
    """Collect all metrics of a propagated state against its clean reference."""
    recipe = initial.meta.get("recipe", {})
    e = edge_content(state_f, basis)
    return MetricsRecord(
        label=label,
        seed=seed,
        sigma=float(sigma),
        sigma_c=float(recipe.get("sigma_c", np.nan)),
        sigma_a=float(recipe.get("sigma_a", np.nan)),
        z_f=float(z_f),
        z_m=float(z_m),
        F=fidelity(state_f, reference_m),
        F_N=transmitted_fidelity(state_f, reference_m, basis) if e > 1e-12 else float("nan"),
        E=e,
        S_N=schmidt_number(initial),
        lattice_hash=lattice_hash,
    )


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.17g}"
    return "" if v is None else v


def append_records(path: str | Path, records) -> Path:
    """Append rows to a CSV table, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(MetricsRecord.columns())
        for rec in records:
            writer.writerow([_fmt(v) for v in asdict(rec).values()])
    return path
