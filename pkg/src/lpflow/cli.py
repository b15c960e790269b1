"""Configuration-driven command-line driver.

Subcommands mirror the pipeline stages::

    simulate | spectrum | domination | scan | close | compare
        --config <path> [--threads N] [--out DIR]

Each stage reads one JSON config document, recomputes deterministically from
(config, seed), and writes JSON/CSV reports plus rendered figures into the
output directory.  Exit codes: 0 success, 2 configuration error, 3 numerical
error, 4 pipeline failure (no closable candidate, scan empty where required).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import field as vf
from . import flow as fl
from . import measures as ms
from . import orbits as ob
from . import pesin as ps
from . import plots
from . import spectra as sp
from .errors import (ClosingFailureError, ConfigurationError, EscapeError,
                     FitFailureError, LpflowError, NoCrossingError,
                     NumericalError, StepBudgetError)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PIPELINE = 4


@dataclass(frozen=True)
class RunConfig:
    """Validated pipeline configuration assembled from one JSON document."""

    spec: vf.VectorFieldSpec
    integrator: fl.IntegratorConfig
    seed: int
    x0: np.ndarray
    transient: float
    t_final: float
    cocycle_T: float
    cocycle_n: int
    exterior_orders: tuple[int, ...]
    eta: float
    C: float
    pesin_T: float
    D_rel: float
    min_separation_blocks: int
    max_members: int
    close_eps: float
    max_candidates: int
    max_duration: float
    n_nodes: int | None
    family_size: int
    out_dir: str


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}")
    if "field" not in doc:
        raise ConfigurationError("config missing 'field' section")
    spec = vf.from_json(doc["field"])
    integ = doc.get("integrator", {})
    icfg = fl.IntegratorConfig(method=integ.get("method", "rk45"),
                               h=float(integ.get("h", 0.01)),
                               atol=float(integ.get("atol", 1e-10)),
                               rtol=float(integ.get("rtol", 1e-9)))
    sim = doc.get("simulate", {})
    coc = doc.get("cocycle", {})
    pes = doc.get("pesin", {})
    scan = doc.get("scan", {})
    close = doc.get("close", {})
    meas = doc.get("measure", {})
    x0 = np.asarray(sim.get("x0", [1.0] * spec.dimension), dtype=float)
    if x0.shape != (spec.dimension,):
        raise ConfigurationError(f"x0 must have dimension {spec.dimension}")
    return RunConfig(
        spec=spec, integrator=icfg, seed=int(doc.get("seed", 0)),
        x0=x0,
        transient=float(sim.get("transient", 0.0)),
        t_final=float(sim.get("t_final", 100.0)),
        cocycle_T=float(coc.get("T", 0.5)),
        cocycle_n=int(coc.get("n", 200)),
        exterior_orders=tuple(int(k) for k in
                              doc.get("spectrum", {}).get("exterior_orders", ())),
        eta=float(pes.get("eta", 0.3)),
        C=float(pes.get("C", 10.0)),
        pesin_T=float(pes.get("T", coc.get("T", 0.5))),
        D_rel=float(scan.get("D_rel", 0.05)),
        min_separation_blocks=int(scan.get("min_separation_blocks", 3)),
        max_members=int(scan.get("max_members", 30_000)),
        close_eps=float(close.get("eps", 0.1)),
        max_candidates=int(close.get("max_candidates", 8)),
        max_duration=float(close.get("max_duration", 30.0)),
        n_nodes=(int(close["n_nodes"]) if close.get("n_nodes") else None),
        family_size=int(meas.get("family_size", ms.DEFAULT_FAMILY_SIZE)),
        out_dir=str(doc.get("out_dir", "out")))


def _write_json(out_dir: Path, name: str, payload: dict):
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _start_point(cfg: RunConfig) -> np.ndarray:
    if cfg.transient > 0:
        return fl.flow_map(cfg.spec, cfg.x0, cfg.transient, cfg.integrator)
    return cfg.x0.copy()


def stage_simulate(cfg: RunConfig, out_dir: Path) -> dict:
    x_start = _start_point(cfg)
    traj = fl.integrate_flow(cfg.spec, x_start, [0.0, cfg.t_final], cfg.integrator)
    traj.to_csv(out_dir / "trajectory.csv")
    plots.plot_trajectory(traj, out_dir / "trajectory.png")
    payload = {"schema_version": sp.SCHEMA_VERSION,
               "samples": len(traj), "t_final": cfg.t_final,
               "start": x_start.tolist(), "end": traj.xs[-1].tolist(),
               "min_field_norm": float(np.min(traj.field_norms))}
    _write_json(out_dir, "trajectory.json", payload)
    return payload


def _spectrum_cocycle(cfg: RunConfig) -> sp.CocycleSequence:
    return sp.build_cocycle(cfg.spec, _start_point(cfg), cfg.cocycle_T,
                            cfg.cocycle_n, cfg.integrator)


def stage_spectrum(cfg: RunConfig, out_dir: Path) -> dict:
    c = _spectrum_cocycle(cfg)
    spectrum = sp.benettin_spectrum(c)
    payload = spectrum.to_json_dict()
    payload["exterior"] = {
        str(k): sp.exterior_spectrum(c, k).to_json_dict()
        for k in cfg.exterior_orders}
    plots.plot_spectrum_convergence(c, out_dir / "spectrum_convergence.png")
    _write_json(out_dir, "spectrum.json", payload)
    return payload


def _splitting_pair(spectrum: sp.LyapunovSpectrum):
    """(non-positive blocks, positive blocks) of the grouped spectrum; falls
    back to (all but fastest, fastest) when no sign change exists."""
    neg = [i for i, x in enumerate(spectrum.distinct) if x < 0]
    pos = [i for i, x in enumerate(spectrum.distinct) if x >= 0]
    if not neg or not pos:
        k = len(spectrum.distinct)
        if k < 2:
            raise ConfigurationError(
                "splitting pair undefined for a single-block spectrum")
        neg, pos = list(range(k - 1)), [k - 1]
    return neg, pos


def stage_domination(cfg: RunConfig, out_dir: Path) -> dict:
    c = _spectrum_cocycle(cfg)
    spectrum = sp.benettin_spectrum(c)
    split = sp.oseledec_filtration(c, spectrum=spectrum)
    pair = _splitting_pair(spectrum)
    dom = sp.check_domination(c, split, pair)
    cone_ok = None
    if dom["satisfied"] and split.k == 2:
        cone = sp.ConeParams(rho=2.0, gamma=0.75, split=split)
        cone_ok = sp.check_cone_invariance(c, cone, seed=cfg.seed)
    payload = {"schema_version": sp.SCHEMA_VERSION,
               "spectrum": spectrum.to_json_dict(),
               "pair": [list(pair[0]), list(pair[1])],
               "domination": dom, "cone_invariant": cone_ok,
               "equivariance_residual": split.equivariance_residual}
    _write_json(out_dir, "domination.json", payload)
    return payload


def scan_pipeline(cfg: RunConfig) -> dict:
    """Shared heavy stage: trajectory, cocycle, splitting, string scan,
    membership, near-return candidates.  Deterministic in (config, seed)."""
    x_start = _start_point(cfg)
    traj = fl.integrate_flow(cfg.spec, x_start, [0.0, cfg.t_final], cfg.integrator)
    n_blocks = int(math.floor(cfg.t_final / cfg.cocycle_T))
    c = sp.build_cocycle(cfg.spec, x_start, cfg.cocycle_T, n_blocks,
                         cfg.integrator)
    spectrum = sp.benettin_spectrum(c)
    split = sp.oseledec_filtration(c, spectrum=spectrum)
    pair = _splitting_pair(spectrum)
    certs = ps.quasi_hyperbolic_scan(c, split, cfg.eta, cfg.pesin_T, pair)
    # trajectory samples covered by certified strings
    h = traj.ts[1] - traj.ts[0] if len(traj) > 1 else cfg.integrator.h
    covered = np.zeros(len(traj), dtype=bool)
    for cert in certs:
        t_a = cert.start_index * c.T
        t_b = t_a + cert.duration
        i_a = int(math.ceil(t_a / h))
        i_b = min(int(math.floor(t_b / h)), len(traj) - 1)
        covered[i_a:i_b + 1] = True
    members = np.where(covered)[0]
    stride = max(1, len(members) // cfg.max_members)
    members = members[::stride]
    min_sep = max(1, int(round(cfg.min_separation_blocks * cfg.pesin_T / h)))
    candidates = ps.near_return_detect(traj.xs, traj.field_norms, members,
                                       cfg.D_rel, min_separation=min_sep,
                                       dedupe_window=min_sep)
    return {"traj": traj, "cocycle": c, "spectrum": spectrum, "split": split,
            "pair": pair, "certificates": certs, "members": members,
            "candidates": candidates, "min_separation": min_sep,
            "sample_step": h}


def stage_scan(cfg: RunConfig, out_dir: Path) -> dict:
    art = scan_pipeline(cfg)
    payload = {"schema_version": sp.SCHEMA_VERSION,
               "certificates": [c.to_json_dict() for c in art["certificates"]],
               "candidates": [c.to_json_dict() for c in art["candidates"]],
               "n_members": int(len(art["members"])),
               "spectrum": art["spectrum"].to_json_dict()}
    _write_json(out_dir, "scan.json", payload)
    return payload


def _admissible_candidates(cfg: RunConfig, art: dict):
    h = art["sample_step"]
    out = []
    for cand in art["candidates"]:
        duration = (cand.j - cand.i) * h
        if duration <= cfg.max_duration:
            out.append(cand)
        if len(out) >= cfg.max_candidates:
            break
    return out


def _close_one(cfg: RunConfig, art: dict, cand: ps.ReturnCandidate):
    """Close one candidate and validate; returns a result dict or raises."""
    h = art["sample_step"]
    traj = art["traj"]
    segment = traj.slice(cand.i * h, cand.j * h)
    orbit = ob.close_orbit(cfg.spec, segment, cfg.integrator,
                           n_nodes=cfg.n_nodes)
    theta = ob.fit_reparametrization(segment, orbit)
    report = ob.validate_shadowing(cfg.spec, segment, orbit, theta,
                                   cfg.close_eps)
    spectrum = ob.periodic_spectrum(cfg.spec, orbit, cfg.integrator)
    return {"candidate": cand, "orbit": orbit, "theta": theta,
            "shadowing": report, "spectrum": spectrum}


def close_pipeline(cfg: RunConfig, art: dict, threads: int = 1,
                   candidate_id: int | None = None,
                   require_pass: bool = True) -> list[dict]:
    """Attempt closure on admissible candidates (optionally one by id) in
    parallel; results are kept in candidate order, never completion order."""
    if candidate_id is not None:
        if not 0 <= candidate_id < len(art["candidates"]):
            raise ConfigurationError(f"no candidate with id {candidate_id}")
        cands = [art["candidates"][candidate_id]]
    else:
        cands = _admissible_candidates(cfg, art)
    if not cands:
        raise ClosingFailureError("scan produced no admissible near-returns")
    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_close_one, cfg, art, cand) for cand in cands]
            for fut in futures:
                try:
                    results.append(fut.result())
                except (ClosingFailureError, FitFailureError, NoCrossingError,
                        EscapeError, NumericalError):
                    continue
    else:
        for cand in cands:
            try:
                results.append(_close_one(cfg, art, cand))
            except (ClosingFailureError, FitFailureError, NoCrossingError,
                    EscapeError, NumericalError):
                continue
    if require_pass and not any(r["shadowing"].passed for r in results):
        raise ClosingFailureError(
            f"no candidate closed with a passing shadowing report "
            f"({len(results)}/{len(cands)} closed at all)")
    return results


def _best_result(results: list[dict]) -> dict:
    passing = [r for r in results if r["shadowing"].passed]
    pool = passing if passing else results
    return min(pool, key=lambda r: r["shadowing"].max_rel_distance)


def stage_close(cfg: RunConfig, out_dir: Path, threads: int = 1,
                candidate_id: int | None = None) -> dict:
    art = scan_pipeline(cfg)
    results = close_pipeline(cfg, art, threads=threads,
                             candidate_id=candidate_id,
                             require_pass=candidate_id is None)
    best = _best_result(results)
    orbit = best["orbit"]
    payload = {"schema_version": sp.SCHEMA_VERSION,
               "orbit": orbit.to_json_dict(),
               "spectrum": best["spectrum"].to_json_dict(),
               "shadowing": best["shadowing"].to_json_dict(),
               "candidate": best["candidate"].to_json_dict(),
               "n_closed": len(results)}
    _write_json(out_dir, "orbit.json", payload)
    header = "t," + ",".join(f"x{i+1}" for i in range(orbit.xs.shape[1]))
    np.savetxt(out_dir / "orbit.csv",
               np.column_stack([orbit.ts, orbit.xs]),
               delimiter=",", header=header, comments="")
    return payload


def stage_compare(cfg: RunConfig, out_dir: Path, threads: int = 1) -> dict:
    art = scan_pipeline(cfg)
    results = close_pipeline(cfg, art, threads=threads)
    best = _best_result(results)
    mu_spectrum = art["spectrum"]
    traj = art["traj"]
    stride = max(1, len(traj) // 10_000)
    mu = ms.EmpiricalMeasure(points=traj.xs[::stride],
                             weights=np.full(len(traj.xs[::stride]),
                                             1.0 / len(traj.xs[::stride])))
    nu = ms.periodic_measure(best["orbit"])
    fam = ms.default_family(cfg.spec.dimension, cfg.spec.default_box(),
                            n=cfg.family_size, seed=cfg.seed)
    d_m = ms.weak_star_distance(mu, nu, fam)
    report = ms.compare_spectra(mu_spectrum, best["spectrum"],
                                eps=cfg.close_eps * 5, d_m=d_m)
    payload = report.to_json_dict()
    payload["orbit"] = best["orbit"].to_json_dict()
    payload["shadowing"] = best["shadowing"].to_json_dict()
    _write_json(out_dir, "compare.json", payload)
    with open(out_dir / "compare.txt", "w") as fh:
        fh.write(report.summary() + "\n")
    plots.plot_comparison(report, out_dir / "compare.png")
    return payload


_STAGES = {"simulate": stage_simulate, "spectrum": stage_spectrum,
           "domination": stage_domination, "scan": stage_scan,
           "close": stage_close, "compare": stage_compare}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpflow",
        description="Lyapunov spectra, hyperbolic strings, and periodic-orbit "
                    "closing for smooth flows")
    parser.add_argument("command", choices=sorted(_STAGES))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for candidate closing")
    parser.add_argument("--out", default=None,
                        help="output directory (default: config out_dir)")
    parser.add_argument("--candidate", type=int, default=None,
                        help="candidate id for the close stage")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_dir = Path(args.out if args.out is not None else cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stage = _STAGES[args.command]
        if args.command == "close":
            stage(cfg, out_dir, threads=args.threads,
                  candidate_id=args.candidate)
        elif args.command == "compare":
            stage(cfg, out_dir, threads=args.threads)
        else:
            stage(cfg, out_dir)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, StepBudgetError, EscapeError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LpflowError as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
