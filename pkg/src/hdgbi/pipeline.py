"""End-to-end scattering run: mesh, assembly, hybrid solve and RCS.

:func:`simulate` is the library entry point used by the command line and
the demos.  The BI system depends only on the radiating surface, the
frequency and the formulation, so callers sweeping materials can assemble
it once with :func:`assemble_bi` and pass it in.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bi import BiSystem, GreensContext, QuadratureSettings, assemble_bi, assemble_rhs
from .formulation import Formulation
from .hdg import HdgSystem, assemble_hdg
from .mesh import DofCounts, MaterialMap, Mesh, Skeleton, build_skeleton, count_dofs
from .physics import FarField, PlaneWave, rcs, wavelength
from .solver import (HybridSolution, ReducedOperator, SolveReport, build_sai_for, factorize_q,
                     recover_solution, solve)

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    tol: float = 1e-3
    restart: int = 50
    max_iter: int = 1000
    precond: str = "none"
    sai_radius: float = 0.25  # in free-space wavelengths

    def __post_init__(self):
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.precond not in ("none", "sai"):
            raise ValueError(f"precond must be 'none' or 'sai', got {self.precond!r}")
        if self.restart < 1 or self.max_iter < 1:
            raise ValueError("restart and max_iter must be positive")


@dataclass
class RunResult:
    counts: DofCounts
    solution: HybridSolution
    report: SolveReport
    far: FarField
    timings: dict = field(default_factory=dict)
    skeleton: Skeleton | None = None
    hdg: HdgSystem | None = None
    bi: BiSystem | None = None


def prepare(mesh: Mesh, pec_tags=(), radiating_tags=()) -> Skeleton:
    return build_skeleton(mesh, pec_tags, radiating_tags)


def simulate(skeleton: Skeleton, materials: MaterialMap, wave: PlaneWave,
             options: SolverOptions = SolverOptions(), form: Formulation = Formulation(),
             quad: QuadratureSettings = QuadratureSettings(), theta_deg=None, phi_deg=0.0,
             workers: int = 1, bi: BiSystem | None = None, keep=False) -> RunResult:
    """Solve one scattering problem and sample the bistatic RCS.

    Parameters
    ----------
    skeleton : Skeleton
        Must have a closed radiating surface.
    materials : MaterialMap
    wave : PlaneWave
    options : SolverOptions
    bi : BiSystem, optional
        Pre-assembled BI blocks for this surface, frequency and formulation.
    keep : bool
        Return the assembled systems in the result.
    """
    t = {}
    k0 = wave.k0
    eps, mu = materials.per_tet(skeleton.mesh)
    t0 = time.perf_counter()
    hdg = assemble_hdg(skeleton, eps, mu, k0, form)
    t["assemble_hdg"] = time.perf_counter() - t0
    if bi is None:
        t0 = time.perf_counter()
        bi = assemble_bi(skeleton, GreensContext(k0), form, quad, workers)
        t["assemble_bi"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    bJ, bM = assemble_rhs(skeleton, wave, form)
    b = np.concatenate([bJ, bM])
    t["rhs"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    qf = factorize_q(hdg.Q)
    t["factorize"] = time.perf_counter() - t0
    op = ReducedOperator(qf, hdg.D_LX, bi.D_XL, bi.C, workers=workers)
    pre = None
    if options.precond == "sai":
        t0 = time.perf_counter()
        pre = build_sai_for(skeleton, bi.C, options.sai_radius * wavelength(wave.frequency))
        t["build_sai"] = time.perf_counter() - t0
    X, rep = solve(op, b, options.tol, options.restart, options.max_iter, pre)
    t["gmres"] = rep.timings["gmres"]
    t0 = time.perf_counter()
    sol = recover_solution(op, hdg, X, b)
    t["recover"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    far = rcs(skeleton, sol.J, sol.M, k0, theta_deg, phi_deg, wave.amplitude)
    t["rcs"] = time.perf_counter() - t0
    rep.timings.update(t)
    rep.fill["nnz_q"] = qf.nnz_q
    log.info("solved n_hdg=%d n_bi=%d in %d iterations (residual %.2e)",
             hdg.n_hdg, op.n_bi, rep.iterations, rep.final_residual)
    out = RunResult(count_dofs(skeleton), sol, rep, far, t)
    if keep:
        out.skeleton, out.hdg, out.bi = skeleton, hdg, bi
    return out
