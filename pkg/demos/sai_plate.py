"""GMRES iterations with and without the sparse approximate inverse.

A square eps_r = 2 plate, 0.1 m thick, at 300 MHz under normal incidence.
The near-field pattern radius is a quarter wavelength.
"""

import sys
import time

from hdgbi import meshgen
from hdgbi.bi import GreensContext, assemble_bi
from hdgbi.mesh import MaterialMap
from hdgbi.physics import PlaneWave
from hdgbi.pipeline import SolverOptions, prepare, simulate

wave = PlaneWave(0.3e9)
mat = MaterialMap.uniform([meshgen.REGION_TAG], 2.0)
sides = [float(x) for x in sys.argv[1:]] or [1.5, 3.0]

for L in sides:
    sk = prepare(meshgen.plate_mesh(L, 0.1, 0.15), (), [meshgen.RADIATING_TAG])
    bi = assemble_bi(sk, GreensContext(wave.k0))
    for pre in ("none", "sai"):
        t0 = time.perf_counter()
        res = simulate(sk, mat, wave, SolverOptions(tol=1e-3, precond=pre), bi=bi)
        print(f"L={L:4.1f} m  N_BI={2 * sk.n_rwg:5d}  precond={pre:4s}  iterations={res.report.iterations:3d}  "
              f"({time.perf_counter() - t0:.1f} s)")
