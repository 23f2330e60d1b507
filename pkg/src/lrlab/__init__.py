"""lrlab: a numerical laboratory for light-ray tomography of wave-equation potentials.

Modules
-------
fields    grids, scalar/covector fields, gauge operations, field files
pde       explicit solver for the expanded wave operator and its boundary data
go        geometric-optics amplitudes and the conjugated source term
lray      light ray transform, hyperplane Fourier slices, curvature systems
carleman  exponentially weighted energy inequalities, term by term
recon     spectral reconstruction of curvature, gauge potential, and potential q
cli       scenario runner behind the `lrlab` executable
"""

__version__ = "0.1.0"
