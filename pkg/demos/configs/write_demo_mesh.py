"""Write the coarse coated-sphere mesh used by coated_sphere.ini."""

from pathlib import Path

from hdgbi import meshgen
from hdgbi.mesh import write_mesh
from hdgbi.physics import wavelength

here = Path(__file__).parent
write_mesh(meshgen.shell_for_edge(0.3, 0.4, 0.1 * wavelength(0.3e9)), here / "coated_sphere.msh")
print("wrote", here / "coated_sphere.msh")
