"""Disorder ensembles, protection windows, (sigma_c, sigma_a) scans and size studies.

Every state that enters the disordered lattice lies in the clean E(x)E
space spanned by the edge modes ``Phi``.  After propagation its E(x)E
coefficients are ``W c W^T`` with ``W = Phi^dag U Phi``, so one
propagation of the edge-mode columns per disorder realisation serves all
probe states, all grid points and the fidelity reference alike.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .biphoton import (
    BiphotonState,
    StateRecipe,
    TwoPhotonEigenbasis,
    mode_coefficients,
    project_edge_edge,
    schmidt_number,
    template_state,
)
from .evolve import ChebyshevPropagator, coefficient_overlaps, reference_grid
from .lattice import (
    DisorderSpec,
    HaldaneSpec,
    LatticeGeometry,
    QheSpec,
    build_haldane,
    build_qhe,
    disorder_potential,
    operator_hash,
)
from .metrics import MetricsRecord
from .spectral import EigenSystem, GapInfo, bulk_gap, classify_haldane, classify_qhe, diagonalize

log = logging.getLogger(__name__)

# propagation distances: disordered run and clean reference for each model
Z_DISORDER = {"haldane": 78.5, "qhe": 450.0}
Z_CLEAN = 75.0
REFERENCE_RANGE = (70.0, 80.0)
REFERENCE_STEP = 0.1
MAX_FAILURE_FRACTION = 0.01


class CampaignError(RuntimeError):
    """A campaign could not produce a valid result."""


@dataclass(frozen=True, eq=False)
class CleanModel:
    """A clean lattice with its gap, classified edge modes and pair basis."""

    spec: HaldaneSpec | QheSpec
    H: np.ndarray
    geom: LatticeGeometry
    gap: GapInfo
    es: EigenSystem
    basis: TwoPhotonEigenbasis
    lattice_hash: str

    @property
    def kind(self) -> str:
        return self.geom.kind

    @property
    def n_edge(self) -> int:
        return len(self.basis.edge)

    def sparse(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.H)

    def disordered(self, d: DisorderSpec) -> sp.csr_matrix:
        return (self.sparse() + sp.diags(disorder_potential(self.geom, d))).tocsr()

    def recipe(self, sigma_c: float, sigma_a: float, **kw) -> StateRecipe:
        return StateRecipe.for_model(self.kind, sigma_c, sigma_a, **kw)

    def prepared(self, recipe: StateRecipe) -> tuple[BiphotonState, float]:
        """Template projected onto E(x)E, and the projection weight."""
        return project_edge_edge(template_state(recipe, self.geom), self.basis)

    def gap_center_index(self) -> int:
        """Edge-mode index closest to the gap centre."""
        return int(np.argmin(np.abs(self.basis.edge_values - self.gap.center)))

    def transfer(self, d: DisorderSpec, z: float, cols: np.ndarray | None = None) -> np.ndarray:
        """``Phi^dag exp(-i H_d z) X`` with ``X = Phi`` (the edge modes) by default."""
        phi = self.basis.edge_vectors
        cols = phi if cols is None else cols
        prop = ChebyshevPropagator(self.disordered(d))
        return phi.conj().T @ prop.apply(cols, z)


def build_model(spec: HaldaneSpec | QheSpec):
    if isinstance(spec, HaldaneSpec):
        return build_haldane(spec)
    if isinstance(spec, QheSpec):
        return build_qhe(spec)
    raise TypeError(f"unsupported model {type(spec).__name__}")


@lru_cache(maxsize=4)
def prepare_model(spec: HaldaneSpec | QheSpec, margin: float = 1e-6) -> CleanModel:
    """Build, solve for the in-gap modes and classify a clean lattice.

    Only eigenpairs inside the transport gap are computed.  For the QHE
    lattice that is the lowest gap, whose chiral modes are the ones excited
    by the input template.
    """
    H, geom = build_model(spec)
    gap = bulk_gap(spec)
    if gap.gapless:
        raise CampaignError("clean lattice is gapless; no edge space to project on")
    es = diagonalize(H, window=(gap.lower, gap.upper))
    if geom.kind == "haldane":
        es = classify_haldane(es, gap, geom, margin=margin)
    else:
        es = classify_qhe(es, gap, geom, H, margin=margin)
    return CleanModel(spec, H, geom, gap, es, TwoPhotonEigenbasis(es), operator_hash(H))


def triangular_map(c: np.ndarray) -> np.ndarray:
    """``|c|**2`` folded onto ordered pairs ``m <= n``."""
    p = np.abs(c) ** 2
    return np.triu(2 * p, 1) + np.diag(np.diag(p))


# --- ensembles -----------------------------------------------------------


@dataclass(frozen=True)
class EnsembleConfig:
    """Disorder ensemble: instance ``i`` uses seed ``disorder.seed + i``."""

    model: HaldaneSpec | QheSpec
    disorder: DisorderSpec
    instances: int
    recipes: tuple
    z: float | None = None
    labels: tuple = ()
    reference: bool = True

    def __post_init__(self):
        if self.instances < 1:
            raise CampaignError(f"instances must be >= 1, got {self.instances}")
        if not self.recipes:
            raise CampaignError("at least one probe recipe is required")
        if self.labels and len(self.labels) != len(self.recipes):
            raise CampaignError("labels and recipes differ in length")

    @property
    def distance(self) -> float:
        if self.z is not None:
            return self.z
        return Z_DISORDER["haldane" if isinstance(self.model, HaldaneSpec) else "qhe"]

    def seeds(self) -> list[int]:
        return [self.disorder.seed + i for i in range(self.instances)]

    def names(self) -> tuple:
        return self.labels or tuple(f"probe{i}" for i in range(len(self.recipes)))


@dataclass
class EnsembleResult:
    config: EnsembleConfig
    mean_maps: dict
    records: list
    failures: list = field(default_factory=list)
    projection_weights: dict = field(default_factory=dict)

    def values(self, label: str, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records if r.label == label])

    def summary(self) -> dict:
        out = {}
        for label in self.mean_maps:
            s = {}
            for name in ("E", "F", "F_N"):
                v = self.values(label, name)
                v = v[np.isfinite(v)]
                s[name] = {
                    "mean": float(v.mean()) if v.size else None,
                    "median": float(np.median(v)) if v.size else None,
                    "min": float(v.min()) if v.size else None,
                    "max": float(v.max()) if v.size else None,
                }
            s["S_N"] = float(self.values(label, "S_N")[0]) if self.records else None
            out[label] = s
        return out


_WORKER_MODEL: CleanModel | None = None


def _init_worker(model):
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _transfer_job(args):
    d, z, cols = args
    try:
        return d.seed, _WORKER_MODEL.transfer(d, z, cols), None
    except Exception as exc:  # recorded per instance, judged by the caller
        return d.seed, None, f"{type(exc).__name__}: {exc}"


def transfers(model: CleanModel, disorders: Sequence[DisorderSpec], z: float, workers: int = 1, cols=None):
    """Yield ``(seed, Phi^dag U X, error)`` for each realisation, in input order."""
    jobs = [(d, z, cols) for d in disorders]
    if workers <= 1 or len(jobs) <= 1:
        _init_worker(model)
        for job in jobs:
            yield _transfer_job(job)
        return
    with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(model,)) as ex:
        yield from ex.map(_transfer_job, jobs)


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def run_ensemble(cfg: EnsembleConfig, model: CleanModel | None = None, workers: int = 1) -> EnsembleResult:
    """Propagate every probe through every realisation; average the E(x)E maps.

    Per instance and probe a :class:`MetricsRecord` is kept.  The fidelity
    reference is the probe propagated in the clean lattice, at the distance
    in [70, 80] (step 0.1) that maximises the overlap.  Failed instances are
    recorded; more than 1% failures abort the run.
    """
    model = model or prepare_model(cfg.model)
    z = cfg.distance
    names = cfg.names()
    phi = model.basis.edge_vectors
    probes, weights, frames = {}, {}, []
    offset = 0
    for name, recipe in zip(names, cfg.recipes):
        state, w = model.prepared(recipe)
        small = state.compress()
        c0 = mode_coefficients(state, phi)
        probes[name] = (c0, small.core, slice(offset, offset + small.rank), schmidt_number(state), recipe)
        frames.append(small.frame)
        offset += small.rank
        weights[name] = w
    # propagate only the probes' own columns unless the edge basis is smaller
    cols = np.hstack(frames) if offset < model.n_edge else None
    lam = model.basis.edge_values
    zs = reference_grid(REFERENCE_RANGE, REFERENCE_STEP)
    sums = {name: np.zeros((model.n_edge, model.n_edge)) for name in names}
    records, failures = [], []
    disorders = [replace(cfg.disorder, seed=s) for s in cfg.seeds()]
    for seed, G, err in transfers(model, disorders, z, workers, cols):
        if err is not None:
            failures.append({"seed": seed, "error": err})
            log.warning("instance seed=%d failed: %s", seed, err)
            continue
        for name, (c0, core, sl, s_n, recipe) in probes.items():
            if cols is None:
                c = G @ c0 @ G.T
            else:
                g = G[:, sl]
                c = g @ core @ g.T
            e = float(np.sum(np.abs(c) ** 2))
            sums[name] += triangular_map(c)
            f = f_n = z_m = np.nan
            if cfg.reference:
                ov = np.abs(coefficient_overlaps(c, c0, lam, zs)) ** 2
                i = int(np.argmax(ov))
                z_m, f = float(zs[i]), float(ov[i])
                f_n = f / e if e > 1e-12 else np.nan
            records.append(MetricsRecord(
                label=name, seed=seed, sigma=cfg.disorder.sigma, sigma_c=recipe.sigma_c,
                sigma_a=recipe.sigma_a, z_f=z, z_m=z_m, F=f, F_N=f_n, E=e, S_N=s_n,
                lattice_hash=model.lattice_hash,
            ))
    ok = cfg.instances - len(failures)
    if len(failures) > MAX_FAILURE_FRACTION * cfg.instances:
        raise CampaignError(f"{len(failures)} of {cfg.instances} instances failed: {failures[:3]}")
    maps = {name: sums[name] / max(ok, 1) for name in names}
    return EnsembleResult(cfg, maps, records, failures, weights)


# --- protection window ---------------------------------------------------


@dataclass(frozen=True)
class ProtectionWindow:
    """Index square ``[lo, hi] x [lo, hi]`` of the E(x)E map."""

    lo: int
    hi: int
    threshold: float
    n_edge: int

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def strictly_inside(self) -> bool:
        return self.lo > 0 and self.hi < self.n_edge - 1

    def as_dict(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "threshold": self.threshold,
                "n_edge": self.n_edge, "center": self.center, "size": self.size}


def extract_window(avg_map: np.ndarray, threshold: float = 0.01) -> ProtectionWindow:
    """Smallest index square holding every cell ``>= threshold * max``."""
    avg_map = np.asarray(avg_map)
    peak = float(avg_map.max(initial=0.0))
    if peak <= 0:
        raise CampaignError("empty window: the averaged map is zero everywhere")
    m, n = np.nonzero(avg_map >= threshold * peak)
    idx = np.concatenate([m, n])
    return ProtectionWindow(int(idx.min()), int(idx.max()), float(threshold), avg_map.shape[0])


# --- parameter scans -----------------------------------------------------


@dataclass(frozen=True)
class ScanGrid:
    sigma_c: tuple
    sigma_a: tuple
    m_e: int = 20
    x0: float | None = None
    seed_policy: str = "shared"

    def __post_init__(self):
        if min(self.sigma_c) <= 0 or min(self.sigma_a) <= 0:
            raise CampaignError("grid widths must be positive")
        if self.seed_policy not in ("shared", "ensemble"):
            raise CampaignError(f"unknown seed policy {self.seed_policy!r}")

    @classmethod
    def log_spaced(cls, lo=0.01, hi=10.0, n=25, **kw) -> "ScanGrid":
        v = tuple(float(x) for x in np.geomspace(lo, hi, n))
        return cls(v, v, **kw)


@dataclass
class ScanResult:
    grid: ScanGrid
    E: np.ndarray
    S_N: np.ndarray
    weight: np.ndarray
    seeds: list
    missing: list = field(default_factory=list)

    @property
    def E_times_S(self) -> np.ndarray:
        return self.E * self.S_N

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sigma_c", "sigma_a", "E", "S_N", "E_S_N", "projection_weight"])
            for i, sc in enumerate(self.grid.sigma_c):
                for j, sa in enumerate(self.grid.sigma_a):
                    writer.writerow([f"{v:.17g}" for v in (
                        sc, sa, self.E[i, j], self.S_N[i, j], self.E_times_S[i, j], self.weight[i, j])])
        return path


def parameter_scan(
    grid: ScanGrid,
    model: CleanModel,
    disorder: DisorderSpec,
    z: float | None = None,
    instances: int = 1,
    workers: int = 1,
) -> ScanResult:
    """Tables ``E[i, j]``, ``S_N[i, j]`` over ``sigma_c[i]`` x ``sigma_a[j]``.

    With the shared policy one realisation (``disorder.seed``) is used for
    every grid point; the ensemble policy averages ``E`` over ``instances``
    consecutive seeds.  ``S_N`` belongs to the projected input state and so
    does not depend on the disorder.
    """
    z = Z_DISORDER[model.kind] if z is None else z
    n = instances if grid.seed_policy == "ensemble" else 1
    disorders = [replace(disorder, seed=disorder.seed + i) for i in range(n)]
    Ws = []
    for seed, W, err in transfers(model, disorders, z, workers):
        if err is not None:
            raise CampaignError(f"disorder realisation seed={seed} failed: {err}")
        Ws.append(W)
    shape = (len(grid.sigma_c), len(grid.sigma_a))
    E, S, wt = np.full(shape, np.nan), np.full(shape, np.nan), np.full(shape, np.nan)
    missing = []
    phi = model.basis.edge_vectors
    for i, sc in enumerate(grid.sigma_c):
        for j, sa in enumerate(grid.sigma_a):
            try:
                state, w = model.prepared(model.recipe(sc, sa, m_e=grid.m_e, x0=grid.x0))
            except ValueError as exc:
                missing.append({"sigma_c": sc, "sigma_a": sa, "error": str(exc)})
                continue
            c0 = mode_coefficients(state, phi)
            S[i, j] = schmidt_number(state)
            wt[i, j] = w
            E[i, j] = np.mean([np.sum(np.abs(W @ c0 @ W.T) ** 2) for W in Ws])
    return ScanResult(grid, E, S, wt, [d.seed for d in disorders], missing)


# --- size study ------------------------------------------------------------


@dataclass
class SizeStudyResult:
    sizes: list
    E_mean: list
    E_all: list
    n_sites: list

    @property
    def spread(self) -> float:
        return float(np.max(self.E_mean) - np.min(self.E_mean))

    @property
    def variance(self) -> float:
        return float(np.var(self.E_mean))

    def as_dict(self) -> dict:
        return {"sizes": self.sizes, "n_sites": self.n_sites, "E_mean": self.E_mean,
                "E_all": self.E_all, "spread": self.spread, "variance": self.variance}


def size_study(
    sizes: Sequence[tuple[int, int]],
    recipe_widths: tuple[float, float] = (5.0, 0.01),
    disorder: DisorderSpec = DisorderSpec(sigma=1.0),
    instances: int = 1,
    base: HaldaneSpec = HaldaneSpec(),
    disorder_start: int | None = 35,
    z: float = Z_DISORDER["haldane"],
    workers: int = 1,
) -> SizeStudyResult:
    """Edge-mode content after disorder for Haldane ribbons of several sizes.

    The disordered stretch keeps its length and its distance from the input
    corner (``disorder_start`` hexagons) so that the packet has crossed it at
    ``z`` on every ribbon.
    """
    sc, sa = recipe_widths
    out = SizeStudyResult([], [], [], [])
    for nx, ny in sizes:
        spec = replace(base, nx=nx, ny=ny, disorder_start=disorder_start)
        model = prepare_model(spec)
        cfg = EnsembleConfig(spec, disorder, instances, (model.recipe(sc, sa),), z=z,
                             labels=("probe",), reference=False)
        res = run_ensemble(cfg, model, workers)
        e = res.values("probe", "E")
        out.sizes.append([nx, ny])
        out.n_sites.append(model.geom.n_sites)
        out.E_all.append([float(v) for v in e])
        out.E_mean.append(float(e.mean()))
    return out


def write_json(path: str | Path, payload: dict) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, default=_jsonable))
    tmp.replace(path)
    return path


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if hasattr(obj, "__dataclass_fields__"):
        from dataclasses import asdict
        return asdict(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")
