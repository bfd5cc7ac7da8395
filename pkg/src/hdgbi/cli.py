"""Command-line driver.

Usage::

    hdgbi run --config case.ini --out results/ [--threads N]
    hdgbi convergence | mie | mesh-info | oracle-check ...

The configuration is a flat INI file; complex values are written ``re,im``
and vectors as three space- or comma-separated numbers.  Exit codes:
0 success, 2 configuration or output i/o error, 3 mesh error, 4 assembly or
factorization error, 5 solver non-convergence (or failed oracle check).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bi import BiAssemblyError
from .hdg import AssemblyError
from .mesh import MaterialMap, MeshError, count_dofs, load_mesh
from .physics import PlaneWave, error_sigma, wavelength
from .solver import FactorizationError

log = logging.getLogger("hdgbi")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_ASSEMBLY, EXIT_SOLVE = 0, 2, 3, 4, 5
MODES = ("run", "convergence", "mie", "mesh-info", "oracle-check")


class ConfigError(ValueError):
    pass


class SolveFailure(RuntimeError):
    pass


def parse_complex(text):
    parts = [p.strip() for p in str(text).split(",")]
    try:
        if len(parts) == 1:
            return complex(float(parts[0]), 0.0)
        if len(parts) == 2:
            return complex(float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise ConfigError(f"cannot read complex value {text!r} (expected 're,im')")


def parse_vector(text):
    try:
        v = [float(p) for p in str(text).replace(",", " ").split()]
    except ValueError:
        raise ConfigError(f"cannot read vector {text!r}") from None
    if len(v) != 3:
        raise ConfigError(f"expected three components, got {text!r}")
    return tuple(v)


def parse_tags(text):
    try:
        return tuple(int(t) for t in str(text).replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"cannot read tag list {text!r}") from None


@dataclass
class RunConfig:
    """Parsed configuration (see the module docstring for the file layout)."""

    mode: str = "run"
    mesh: str | None = None
    meshes: list = field(default_factory=list)
    pec_tags: tuple = ()
    radiating_tags: tuple = ()
    materials: dict = field(default_factory=dict)
    frequency: float = 3e8
    amplitude: complex = 1.0
    polarization: tuple = (1.0, 0.0, 0.0)
    direction: tuple = (0.0, 0.0, 1.0)
    tol: float = 1e-3
    restart: int = 50
    max_iter: int = 1000
    precond: str = "none"
    sai_radius: float = 0.25
    theta: tuple = (0.0, 180.0, 1.0)
    phi: float = 0.0
    out: str = "results"
    workers: int = 1
    mie: dict = field(default_factory=dict)
    oracle_tol: float = 1e-7
    oracle_max_unknowns: int = 3000

    def wave(self):
        try:
            return PlaneWave(self.frequency, self.amplitude, self.polarization, self.direction)
        except ValueError as exc:
            raise ConfigError(f"[excitation] {exc}") from None

    def theta_grid(self):
        a, b, d = self.theta
        if d <= 0 or b < a:
            raise ConfigError("[output] theta range is empty")
        n = int(math.floor((b - a) / d + 1e-9)) + 1
        return a + d * np.arange(n)

    def material_map(self):
        try:
            return MaterialMap(self.materials)
        except MeshError as exc:
            raise ConfigError(str(exc)) from None


def load_config(path, mode=None) -> RunConfig:
    """Read an INI configuration; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    base = Path(path).resolve().parent
    cfg = RunConfig()

    def get(sec, key, conv=str, default=None):
        if not cp.has_option(sec, key):
            return default
        raw = cp.get(sec, key)
        try:
            return conv(raw)
        except ConfigError:
            raise
        except (TypeError, ValueError):
            raise ConfigError(f"[{sec}] {key} = {raw!r} is invalid") from None

    def rel(p):
        return str(p if os.path.isabs(p) else base / p)

    cfg.mode = mode or get("run", "mode", default="run")
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    cfg.workers = get("run", "workers", int, 1)
    m = get("mesh", "path")
    cfg.mesh = rel(m) if m else None
    ms = get("mesh", "paths")
    cfg.meshes = [rel(p) for p in ms.replace(",", " ").split()] if ms else []
    cfg.pec_tags = get("mesh", "pec_tags", parse_tags, ())
    cfg.radiating_tags = get("mesh", "radiating_tags", parse_tags, ())
    for sec in cp.sections():
        if sec.startswith("material."):
            try:
                tag = int(sec.split(".", 1)[1])
            except ValueError:
                raise ConfigError(f"bad material section [{sec}]") from None
            eps = get(sec, "eps_r", parse_complex, 1.0)
            mu = get(sec, "mu_r", parse_complex, 1.0)
            cfg.materials[tag] = (eps, mu)
    cfg.frequency = get("excitation", "frequency", float, cfg.frequency)
    cfg.amplitude = get("excitation", "amplitude", parse_complex, cfg.amplitude)
    cfg.polarization = get("excitation", "polarization", parse_vector, cfg.polarization)
    cfg.direction = get("excitation", "direction", parse_vector, cfg.direction)
    cfg.tol = get("solver", "tol", float, cfg.tol)
    cfg.restart = get("solver", "restart", int, cfg.restart)
    cfg.max_iter = get("solver", "max_iter", int, cfg.max_iter)
    cfg.precond = get("solver", "precond", str, cfg.precond).strip().lower()
    cfg.sai_radius = get("solver", "sai_radius", float, cfg.sai_radius)
    cfg.theta = (get("output", "theta_start", float, 0.0), get("output", "theta_stop", float, 180.0),
                 get("output", "theta_step", float, 1.0))
    cfg.phi = get("output", "phi", float, 0.0)
    cfg.out = get("output", "directory", rel, cfg.out)
    if cp.has_section("mie"):
        cfg.mie = {"a": get("mie", "a", float), "b": get("mie", "b", float),
                   "eps_r": get("mie", "eps_r", parse_complex, 1.0),
                   "frequency": get("mie", "frequency", float, cfg.frequency)}
    cfg.oracle_tol = get("oracle", "tolerance", float, cfg.oracle_tol)
    cfg.oracle_max_unknowns = get("oracle", "max_unknowns", int, cfg.oracle_max_unknowns)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig):
    if not 0 < cfg.tol < 1:
        raise ConfigError(f"[solver] tol must lie in (0, 1), got {cfg.tol}")
    if cfg.precond not in ("none", "sai"):
        raise ConfigError(f"[solver] precond must be none or sai, got {cfg.precond!r}")
    if cfg.restart < 1 or cfg.max_iter < 1:
        raise ConfigError("[solver] restart and max_iter must be positive")
    if cfg.workers < 1:
        raise ConfigError("[run] workers must be positive")
    if cfg.mode == "mie":
        if cfg.mie.get("a") is None:
            raise ConfigError("[mie] needs a (PEC radius)")
    elif cfg.mode == "convergence":
        if not cfg.meshes:
            raise ConfigError("[mesh] paths must list the meshes of the convergence study")
        if cfg.mie.get("a") is None:
            raise ConfigError("convergence mode needs a [mie] reference")
    elif cfg.mesh is None:
        raise ConfigError("[mesh] path is required")
    if cfg.mode in ("run", "convergence", "oracle-check"):
        cfg.wave()
        cfg.theta_grid()
        if not cfg.radiating_tags:
            raise ConfigError("[mesh] radiating_tags is required for a solve")


def _load_mesh_checked(cfg, path):
    mesh = load_mesh(path)
    tags = set(np.unique(mesh.tri_tags).tolist()) if len(mesh.tri_tags) else set()
    for t in (*cfg.pec_tags, *cfg.radiating_tags):
        if t not in tags:
            raise ConfigError(f"surface tag {t} does not occur in {path}")
    if cfg.mode != "mesh-info":
        regions = set(np.unique(mesh.tet_tags).tolist())
        missing = regions - set(cfg.materials)
        if missing:
            raise ConfigError(f"no [material.N] section for region tags {sorted(missing)}")
    return mesh


def _fmt(x):
    return f"{x:.12e}"


def write_rcs(path, far):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("theta_deg,phi_deg,sigma_dbsm\n")
        for t, p, s in zip(far.theta_deg, far.phi_deg, far.sigma_dbsm):
            fh.write(f"{t:.6f},{p:.6f},{_fmt(s)}\n")


def write_currents(path, J, M):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("rwg_index,re_J,im_J,re_M,im_M\n")
        for i, (j, m) in enumerate(zip(J, M)):
            fh.write(f"{i},{_fmt(j.real)},{_fmt(j.imag)},{_fmt(m.real)},{_fmt(m.imag)}\n")


def write_mie(path, sol):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("theta_deg,sigma_ref_dbsm\n")
        for t, s in zip(sol.theta_deg, sol.sigma_dbsm):
            fh.write(f"{t:.6f},{_fmt(s)}\n")


def write_summary(path, items):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={v}\n")


def _solve_case(cfg, mesh_path):
    from .pipeline import SolverOptions, prepare, simulate

    mesh = _load_mesh_checked(cfg, mesh_path)
    sk = prepare(mesh, cfg.pec_tags, cfg.radiating_tags)
    opts = SolverOptions(cfg.tol, cfg.restart, cfg.max_iter, cfg.precond, cfg.sai_radius)
    res = simulate(sk, cfg.material_map(), cfg.wave(), opts, theta_deg=cfg.theta_grid(),
                   phi_deg=cfg.phi, workers=cfg.workers)
    return mesh, sk, res


def cmd_run(cfg, out: Path):
    mesh, sk, res = _solve_case(cfg, cfg.mesh)
    write_rcs(out / "rcs.csv", res.far)
    write_currents(out / "currents.csv", res.solution.J, res.solution.M)
    res.report.write_csv(out / "solve_report.csv")
    c = res.counts
    items = {"mode": "run", "n_hdg": c.n_hdg, "n_bi": c.n_bi, "n_dg": c.n_dg, "n_tet": c.n_tet,
             "iterations": res.report.iterations, "restarts": res.report.restarts,
             "residual": f"{res.report.final_residual:.6e}", "converged": res.report.converged,
             "full_residual": f"{res.solution.residual:.6e}", "precond": res.report.precond,
             "fill_ratio": f"{res.report.fill['fill_ratio']:.3f}"}
    items.update({f"time_{k}": f"{v:.3f}" for k, v in res.timings.items()})
    write_summary(out / "summary.txt", items)
    if not res.report.converged:
        raise SolveFailure(f"GMRES did not reach tol {cfg.tol} in {cfg.max_iter} iterations "
                           f"(best residual {res.report.final_residual:.3e})")


def cmd_mie(cfg, out: Path):
    from .mie import mie_coated_pec_sphere

    p = cfg.mie
    sol = mie_coated_pec_sphere(p["a"], p.get("b"), p["eps_r"], p["frequency"], cfg.theta_grid())
    write_mie(out / "mie.csv", sol)
    write_summary(out / "summary.txt", {"mode": "mie", "n_terms": sol.n_terms, "rows": len(sol.theta_deg),
                                        "c_sca": f"{sol.c_sca:.10e}"})


def cmd_mesh_info(cfg, out: Path):
    from .pipeline import prepare

    mesh = _load_mesh_checked(cfg, cfg.mesh)
    sk = prepare(mesh, cfg.pec_tags, cfg.radiating_tags)
    c = count_dofs(sk)
    lam = wavelength(cfg.frequency)
    write_summary(out / "summary.txt", {"mode": "mesh-info", "n_hdg": c.n_hdg, "n_bi": c.n_bi,
                                        "n_dg": c.n_dg, "n_tet": c.n_tet, "n_face": c.n_face,
                                        "n_rwg": c.n_rwg, "closed": sk.closed,
                                        "mean_edge_lambda": f"{mesh.mean_edge_length() / lam:.6f}"})


def cmd_convergence(cfg, out: Path):
    from .mie import mie_coated_pec_sphere

    p = cfg.mie
    ref = mie_coated_pec_sphere(p["a"], p.get("b"), p["eps_r"], p["frequency"], cfg.theta_grid())
    rows = []
    prev = math.inf
    monotone = True
    any_failed = False
    lam = wavelength(cfg.frequency)
    for path in cfg.meshes:
        mesh, sk, res = _solve_case(cfg, path)
        err = error_sigma(res.far.sigma, ref.sigma)
        dec = err < prev
        monotone &= dec
        prev = err
        any_failed |= not res.report.converged
        c = res.counts
        rows.append((Path(path).name, c.n_hdg, c.n_bi, c.n_dg, mesh.mean_edge_length() / lam,
                     res.report.iterations, err, dec))
    with open(out / "convergence.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("mesh,n_hdg,n_bi,n_dg,mean_edge_lambda,iterations,error_sigma,decreasing\n")
        for r in rows:
            fh.write(f"{r[0]},{r[1]},{r[2]},{r[3]},{r[4]:.6f},{r[5]},{r[6]:.8e},{str(r[7]).lower()}\n")
    write_summary(out / "summary.txt", {"mode": "convergence", "meshes": len(rows),
                                        "monotone": str(monotone).lower(),
                                        "final_error_sigma": f"{rows[-1][6]:.8e}"})
    if any_failed:
        raise SolveFailure("at least one convergence case did not converge")


def cmd_oracle(cfg, out: Path):
    from .bi import GreensContext, assemble_bi, assemble_rhs
    from .hdg import assemble_hdg
    from .pipeline import prepare
    from .solver import ReducedOperator, dense_oracle, factorize_q, recover_solution, solve

    mesh = _load_mesh_checked(cfg, cfg.mesh)
    sk = prepare(mesh, cfg.pec_tags, cfg.radiating_tags)
    c = count_dofs(sk)
    if c.n_hdg + c.n_bi > cfg.oracle_max_unknowns:
        raise ConfigError(f"dense oracle limited to {cfg.oracle_max_unknowns} unknowns "
                          f"(mesh has {c.n_hdg + c.n_bi})")
    wave = cfg.wave()
    eps, mu = cfg.material_map().per_tet(mesh)
    hdg = assemble_hdg(sk, eps, mu, wave.k0)
    bi = assemble_bi(sk, GreensContext(wave.k0), workers=cfg.workers)
    b = np.concatenate(assemble_rhs(sk, wave))
    op = ReducedOperator(factorize_q(hdg.Q), hdg.D_LX, bi.D_XL, bi.C, workers=cfg.workers)
    X, rep = solve(op, b, tol=1e-10, restart=cfg.restart, max_iter=max(cfg.max_iter, c.n_bi))
    sol = recover_solution(op, hdg, X, b)
    lam0, X0 = dense_oracle(hdg, bi, b)
    z, z0 = np.concatenate([sol.lam, X]), np.concatenate([lam0, X0])
    err = float(np.linalg.norm(z - z0) / np.linalg.norm(z0))
    ok = err <= cfg.oracle_tol
    write_summary(out / "summary.txt", {"mode": "oracle-check", "n_hdg": c.n_hdg, "n_bi": c.n_bi,
                                        "n_dg": c.n_dg, "iterations": rep.iterations,
                                        "relative_error": f"{err:.6e}", "tolerance": cfg.oracle_tol,
                                        "pass": str(ok).lower()})
    if not ok:
        raise SolveFailure(f"hybrid solution differs from the dense solve by {err:.3e}")


COMMANDS = {"run": cmd_run, "convergence": cmd_convergence, "mie": cmd_mie,
            "mesh-info": cmd_mesh_info, "oracle-check": cmd_oracle}


def build_parser():
    ap = argparse.ArgumentParser(prog="hdgbi", description="Coupled HDG/boundary-integral EM scattering")
    ap.add_argument("command", choices=MODES)
    ap.add_argument("--config", required=True, help="INI configuration file")
    ap.add_argument("--out", help="output directory (overrides [output] directory)")
    ap.add_argument("--threads", type=int, help="worker threads (overrides [run] workers)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.command)
        cfg.material_map()
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be positive")
            cfg.workers = args.threads
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[cfg.mode](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"mesh error: {exc}", file=sys.stderr)
        return EXIT_MESH
    except (AssemblyError, BiAssemblyError, FactorizationError) as exc:
        print(f"assembly error: {exc}", file=sys.stderr)
        return EXIT_ASSEMBLY
    except SolveFailure as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    log.info("done in %.1f s", time.perf_counter() - t0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
