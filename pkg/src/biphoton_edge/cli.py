"""Command-line entry point: ``biphoton-edge <command> --config run.yaml``.

Every command writes its tables into ``--out`` together with
``manifest.json`` (config echo, seeds, hashes, version, timing and SHA-256
checksums of all outputs).  Feeding a manifest back as ``--config``
repeats the run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .biphoton import (
    StateError,
    project_edge_edge,
    reduced_density,
    schmidt_number,
    spatial_map,
    spectral_map,
    template_state,
)
from .campaign import (
    CampaignError,
    EnsembleConfig,
    ScanGrid,
    Z_CLEAN,
    Z_DISORDER,
    build_model,
    default_workers,
    extract_window,
    parameter_scan,
    prepare_model,
    run_ensemble,
    size_study,
    write_json,
)
from .config import ConfigError, RunConfig, config_echo, load_config
from .evolve import ChebyshevPropagator, PropagationError, reference_overlaps, reference_grid, snapshots
from .lattice import HaldaneSpec, LatticeError, apply_disorder, operator_hash
from .metrics import MetricsError, MetricsRecord, append_records, edge_content
from .oracle import OracleError, verification_report
from .spectral import SpectralError, bulk_gap, classify_haldane, classify_qhe, diagonalize, haldane_bloch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

log = logging.getLogger("biphoton_edge")


def _fmt(v) -> str:
    return f"{v:.17g}"


def _write_matrix_csv(path: Path, mat: np.ndarray) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(mat):
            writer.writerow([_fmt(float(v)) for v in row])
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class Run:
    """Output directory bookkeeping and manifest writing."""

    def __init__(self, command: str, cfg: RunConfig, out: Path, args):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.args = args
        self.files: list[Path] = []
        self.extra: dict = {}
        self.t0 = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        p = self.out / name
        p.unlink(missing_ok=True)  # tables are appended to; start each run fresh
        self.files.append(p)
        return p

    def finish(self):
        outputs = {}
        for p in self.files:
            if p.exists():
                outputs[p.name] = {"sha256": _sha256(p), "bytes": p.stat().st_size}
            side = p.with_suffix(".json")
            if p.suffix == ".npz" and side.exists():
                outputs[side.name] = {"sha256": _sha256(side), "bytes": side.stat().st_size}
        manifest = {
            "command": self.command,
            "tool": "biphoton-edge",
            "version": __version__,
            "config": config_echo(self.cfg),
            "flags": {"seed": self.args.seed, "workers": self.args.workers, "snapshot_dz": self.args.snapshot_dz},
            "wall_clock_seconds": time.perf_counter() - self.t0,
            "outputs": outputs,
            **self.extra,
        }
        write_json(self.out / "manifest.json", manifest)


def _model_spec(cfg: RunConfig):
    return cfg.model_spec()


def dirac_gap(spec: HaldaneSpec) -> float:
    """Direct gap at the Dirac point K of the Haldane torus."""
    # sum of the three nearest-neighbour phases vanishes here
    k = np.array([0.0, 4 * np.pi / (3 * np.sqrt(3))])
    e = np.linalg.eigvalsh(haldane_bloch(spec, k[0], k[1]))
    return float(e[1] - e[0])


def cmd_spectrum(args, cfg: RunConfig) -> int:
    run = Run("spectrum", cfg, args.out, args)
    spec = _model_spec(cfg)
    H, geom = build_model(spec)
    gap = bulk_gap(spec)
    d = cfg.disorder_spec(args.seed)
    if d.sigma > 0:
        H = apply_disorder(H, geom, d)
    es = diagonalize(H)
    es = classify_haldane(es, gap, geom) if geom.kind == "haldane" else classify_qhe(es, gap, geom, H)
    es.to_csv(run.path("spectrum.csv"))
    geom.to_csv(run.path("geometry.csv"))
    report = {"gap": gap.as_dict(), "n_sites": geom.n_sites, "lattice_hash": operator_hash(H),
              "disorder": asdict(d), "labels": {k: int(v) for k, v in zip(*np.unique(es.labels, return_counts=True))}}
    if isinstance(spec, HaldaneSpec):
        report["dirac_gap"] = dirac_gap(spec)
    write_json(run.path("gap.json"), report)
    run.extra["seeds"] = [d.seed]
    run.finish()
    print(f"gap [{_fmt(gap.lower)}, {_fmt(gap.upper)}] width {_fmt(gap.width)}; "
          f"{int(es.edge_mask.sum())} transport edge modes of {len(es)}")
    return EXIT_OK


def cmd_propagate(args, cfg: RunConfig) -> int:
    run = Run("propagate", cfg, args.out, args)
    spec = _model_spec(cfg)
    model = prepare_model(spec)
    recipe = cfg.recipe()
    state0 = template_state(recipe, model.geom)
    weight = None
    if cfg["state"]["project"]:
        state0, weight = project_edge_edge(state0, model.basis)
    elif not args.allow_unprojected:
        raise ConfigError(f"{cfg.where('state', 'project')}: false, and propagating an unprojected "
                          "state needs --allow-unprojected")
    d = cfg.disorder_spec(args.seed)
    z = cfg["propagation"]["z"]
    if z is None:
        z = Z_DISORDER[model.kind] if d.sigma > 0 else Z_CLEAN
    H = model.disordered(d) if d.sigma > 0 else model.sparse()
    prop = ChebyshevPropagator(H)

    snap_path = run.path("snapshots.csv") if args.snapshot_dz > 0 else None
    writer = fh = None
    if snap_path is not None:
        fh = snap_path.open("w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["z", "site", "R"])
    final = None
    try:
        for zk, st in snapshots(state0, prop, z, args.snapshot_dz):
            if writer is not None:
                _, r = reduced_density(st, full=False)
                writer.writerows([_fmt(zk), i, _fmt(v)] for i, v in enumerate(r))
            final = st
    finally:
        if fh is not None:
            fh.close()

    e = edge_content(final, model.basis)
    f = f_n = z_m = float("nan")
    if weight is not None:
        lo, hi = cfg["propagation"]["reference_range"]
        zs = reference_grid((lo, hi), cfg["propagation"]["reference_step"])
        ov = np.abs(reference_overlaps(final, state0, model.basis, zs)) ** 2
        i = int(np.argmax(ov))
        z_m, f = float(zs[i]), float(ov[i])
        f_n = f / e if e > 1e-12 else float("nan")
    rec = MetricsRecord(
        label=cfg["state"]["recipe"] or "custom", seed=d.seed if d.sigma > 0 else None, sigma=d.sigma,
        sigma_c=recipe.sigma_c, sigma_a=recipe.sigma_a, z_f=z, z_m=z_m, F=f, F_N=f_n, E=e,
        S_N=schmidt_number(state0), lattice_hash=operator_hash(H),
    )
    append_records(run.path("metrics.csv"), [rec])
    _write_matrix_csv(run.path("spectral_map_initial.csv"), spectral_map(state0, model.basis))
    _write_matrix_csv(run.path("spectral_map_final.csv"), spectral_map(final, model.basis))
    sites = model.geom.input_sites(recipe.m_e)
    _write_matrix_csv(run.path("spatial_map_input.csv"), spatial_map(state0, sites))
    _, r = reduced_density(final, full=False)
    with run.path("density_final.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["site", "x", "y", "R"])
        for i, (pos, v) in enumerate(zip(model.geom.positions, r)):
            w.writerow([i, _fmt(pos[0]), _fmt(pos[1]), _fmt(v)])
    final.save(run.path("state_final.npz"), {"recipe": recipe.as_dict(), "lattice_hash": model.lattice_hash,
                                              "z": z, "disorder": asdict(d)})
    run.extra.update({"seeds": [d.seed], "projection_weight": weight, "lattice_hash": model.lattice_hash})
    run.finish()
    print(f"E={_fmt(e)} F={_fmt(f)} F_N={_fmt(f_n)} z_m={_fmt(z_m)} S_N={_fmt(rec.S_N)}")
    return EXIT_OK


def cmd_scan(args, cfg: RunConfig) -> int:
    run = Run("scan", cfg, args.out, args)
    s = cfg["scan"]
    grid = ScanGrid.log_spaced(s["sigma_min"], s["sigma_max"], s["points"], m_e=cfg["state"]["m_e"],
                               x0=cfg["state"]["x0"], seed_policy=s["seed_policy"])
    model = prepare_model(_model_spec(cfg))
    d = cfg.disorder_spec(args.seed)
    res = parameter_scan(grid, model, d, cfg["propagation"]["z"], s["instances"], args.workers)
    res.write_csv(run.path("scan.csv"))
    np.savez(run.path("scan_tables.npz"), sigma_c=np.array(grid.sigma_c), sigma_a=np.array(grid.sigma_a),
             E=res.E, S_N=res.S_N, E_S_N=res.E_times_S, weight=res.weight)
    run.extra.update({"seeds": res.seeds, "seed_policy": grid.seed_policy, "missing": res.missing,
                      "lattice_hash": model.lattice_hash})
    run.finish()
    print(f"{res.E.size} grid points, {len(res.missing)} missing; max E*S_N {_fmt(np.nanmax(res.E_times_S))}")
    return EXIT_OK


def cmd_window(args, cfg: RunConfig) -> int:
    run = Run("window", cfg, args.out, args)
    model = prepare_model(_model_spec(cfg))
    w = cfg["window"]
    d = cfg.disorder_spec(args.seed)
    ecfg = EnsembleConfig(model.spec, d, cfg["ensemble"]["instances"],
                          (model.recipe(w["sigma_c"], w["sigma_a"], m_e=cfg["state"]["m_e"], x0=cfg["state"]["x0"]),),
                          z=cfg["propagation"]["z"], labels=("probe",), reference=False)
    res = run_ensemble(ecfg, model, args.workers)
    avg = res.mean_maps["probe"]
    win = extract_window(avg, w["threshold"])
    _write_matrix_csv(run.path("mean_map.csv"), avg)
    append_records(run.path("instances.csv"), res.records)
    report = {**win.as_dict(), "gap_center_index": model.gap_center_index(),
              "offset_from_gap_center": win.center - model.gap_center_index(),
              "offset_from_range_center": win.center - (model.n_edge - 1) / 2,
              "failures": res.failures, "projection_weight": res.projection_weights["probe"]}
    write_json(run.path("window.json"), report)
    run.extra.update({"seeds": ecfg.seeds(), "lattice_hash": model.lattice_hash})
    run.finish()
    print(f"window [{win.lo}, {win.hi}] of {win.n_edge} edge modes (centre {_fmt(win.center)})")
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    run = Run("verify", cfg, args.out, args)
    v = cfg["verify"]
    seed = cfg["disorder"]["seed"] if args.seed is None else args.seed
    report = verification_report(v["degenerate_cases"], v["generic_cases"], v["evolution_states"], seed)
    write_json(run.path("verify.json"), report)
    run.extra["seeds"] = [seed]
    run.finish()
    print(f"max |V2| on {report['degenerate']['cases']} energy-conserving cases: "
          f"{_fmt(max(report['degenerate']['max_abs_closed'], report['degenerate']['max_abs_sum']))}")
    return EXIT_OK


def cmd_size_study(args, cfg: RunConfig) -> int:
    run = Run("size-study", cfg, args.out, args)
    s = cfg["size_study"]
    spec = _model_spec(cfg)
    if not isinstance(spec, HaldaneSpec):
        raise ConfigError(f"{cfg.where('model', 'kind')}: the size study is defined for the Haldane ribbon")
    d = cfg.disorder_spec(args.seed)
    res = size_study([tuple(x) for x in s["sizes"]], (s["sigma_c"], s["sigma_a"]), d, s["instances"],
                     base=spec, disorder_start=s["disorder_start"],
                     z=cfg["propagation"]["z"] or Z_DISORDER["haldane"], workers=args.workers)
    with run.path("size_study.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["nx", "ny", "n_sites", "E_mean"])
        for (nx, ny), n, e in zip(res.sizes, res.n_sites, res.E_mean):
            w.writerow([nx, ny, n, _fmt(e)])
    write_json(run.path("size_study.json"), res.as_dict())
    run.extra["seeds"] = [d.seed + i for i in range(s["instances"])]
    run.finish()
    print(f"E spread across sizes {_fmt(res.spread)}")
    return EXIT_OK


COMMANDS = {
    "spectrum": (cmd_spectrum, "diagonalise, classify and export the single-photon spectrum"),
    "propagate": (cmd_propagate, "prepare, project and propagate one two-photon state"),
    "scan": (cmd_scan, "edge-mode content and Schmidt number over a (sigma_c, sigma_a) grid"),
    "window": (cmd_window, "disorder ensemble of a probe state and its protection window"),
    "verify": (cmd_verify, "perturbation and evolution oracles on small lattices"),
    "size-study": (cmd_size_study, "edge-mode content after disorder for several ribbon sizes"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="biphoton-edge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML config (or a previous manifest.json)")
        p.add_argument("--out", type=Path, default=Path("results") / name, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override disorder.seed")
        p.add_argument("--workers", type=int, default=default_workers(), help="worker processes")
        p.add_argument("--snapshot-dz", type=float, default=0.0,
                       help="dump R(n) every dz during propagation (0: final state only)")
        p.add_argument("--allow-unprojected", action="store_true",
                       help="permit propagating a template that was not projected on E(x)E")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        if args.workers < 1:
            raise ConfigError(f"--workers must be >= 1, got {args.workers}")
        return handler(args, cfg)
    except (ConfigError, LatticeError, StateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SpectralError, PropagationError, MetricsError, OracleError, CampaignError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
