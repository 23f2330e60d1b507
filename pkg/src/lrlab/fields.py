"""Spacetime grids, scalar/covector fields, and gauge operations.

The cylinder Q = (0,T) x Omega is discretized on a node-centered tensor grid
that includes both endpoints of every axis (axis 0 is time).  Fields carry
grid samples plus an optional closed-form evaluator; operations prefer the
evaluator and fall back to finite differences or multilinear interpolation.

Derivative policy: interior stencils are 4th-order central, falling back to
2nd-order (one-sided at the outermost node) within 2 cells of the boundary.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import GridMismatch, SupportViolation
from .evaluators import (
    PROFILES,
    BumpEvaluator,
    ConstantEvaluator,
    DerivativeEvaluator,
    Evaluator,
    ProductEvaluator,
    SumEvaluator,
    as_coords,
)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class SpacetimeGrid:
    """Uniform node-centered grid on [0,T] x box, box a product of intervals."""

    n_spatial: int
    T: float
    box: tuple[tuple[float, float], ...]
    n_t: int
    n_x: tuple[int, ...]

    def __post_init__(self):
        if not 1 <= self.n_spatial <= 3:
            raise ValueError(f"n_spatial must be 1..3, got {self.n_spatial}")
        if self.T <= 0:
            raise ValueError("T must be positive")
        object.__setattr__(self, "box", tuple((float(a), float(b)) for a, b in self.box))
        object.__setattr__(self, "n_x", tuple(int(m) for m in self.n_x))
        if len(self.box) != self.n_spatial or len(self.n_x) != self.n_spatial:
            raise ValueError("box and n_x must have n_spatial entries")
        for a, b in self.box:
            if b <= a:
                raise ValueError(f"degenerate box interval ({a}, {b})")
        if self.n_t < 4 or any(m < 4 for m in self.n_x):
            raise ValueError("need at least 4 nodes per axis")
        if self.T <= self.diameter:
            warnings.warn(
                f"T = {self.T} does not exceed the spatial diameter {self.diameter:.6g}; "
                "boundary-data experiments need T > diam(Omega)",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def dim(self) -> int:
        return 1 + self.n_spatial

    @property
    def dt(self) -> float:
        return self.T / (self.n_t - 1)

    @property
    def dx(self) -> tuple[float, ...]:
        return tuple((b - a) / (m - 1) for (a, b), m in zip(self.box, self.n_x))

    @property
    def spacings(self) -> tuple[float, ...]:
        return (self.dt,) + self.dx

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_t,) + self.n_x

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((b - a) ** 2 for a, b in self.box)))

    @property
    def axes(self) -> tuple[np.ndarray, ...]:
        ax = [np.linspace(0.0, self.T, self.n_t)]
        for (a, b), m in zip(self.box, self.n_x):
            ax.append(np.linspace(a, b, m))
        return tuple(ax)

    @property
    def bounds(self) -> np.ndarray:
        """(dim, 2) array of axis intervals, time first."""
        out = [(0.0, self.T)]
        out.extend(self.box)
        return np.asarray(out)

    def coords(self) -> tuple[np.ndarray, ...]:
        """Axis arrays reshaped to broadcast over the full grid."""
        out = []
        for i, ax in enumerate(self.axes):
            shape = [1] * self.dim
            shape[i] = ax.size
            out.append(ax.reshape(shape))
        return tuple(out)

    def meshpoints(self) -> np.ndarray:
        """All grid nodes stacked as an array of shape (*shape, dim)."""
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)

    def cfl_number(self, dt: float | None = None) -> float:
        dt = self.dt if dt is None else dt
        return dt * float(np.sqrt(sum(1.0 / h**2 for h in self.dx)))

    def refined(self, factor: int = 2) -> "SpacetimeGrid":
        """Same domain with every cell split by `factor` along every axis."""
        return SpacetimeGrid(
            n_spatial=self.n_spatial,
            T=self.T,
            box=self.box,
            n_t=(self.n_t - 1) * factor + 1,
            n_x=tuple((m - 1) * factor + 1 for m in self.n_x),
        )


def require_same_grid(*objs) -> SpacetimeGrid:
    grids = [o.grid for o in objs]
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise GridMismatch(f"grids differ: {g0} vs {g}")
    return g0


# ---------------------------------------------------------------------------
# Finite differences on sample arrays.


def _move(a, axis):
    return np.moveaxis(a, axis, 0)


def fd_d1(a: np.ndarray, axis: int, h: float, order: int = 4) -> np.ndarray:
    """First derivative along `axis`; one-sided 2nd-order at the edges."""
    f = _move(np.asarray(a), axis)
    out = np.empty_like(f, dtype=np.result_type(f.dtype, float))
    n = f.shape[0]
    if n < 4:
        raise ValueError("need at least 4 nodes for differentiation")
    if order == 4 and n >= 6:
        out[2:-2] = (-f[4:] + 8 * f[3:-1] - 8 * f[1:-3] + f[:-4]) / (12 * h)
        lo = 2
    else:
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        lo = 1
    for i in range(1, lo):
        out[i] = (f[i + 1] - f[i - 1]) / (2 * h)
        out[n - 1 - i] = (f[n - i] - f[n - 2 - i]) / (2 * h)
    out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
    out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
    return np.moveaxis(out, 0, axis)


def fd_d2(a: np.ndarray, axis: int, h: float, order: int = 4) -> np.ndarray:
    """Second derivative along `axis`; one-sided 2nd-order at the edges."""
    f = _move(np.asarray(a), axis)
    out = np.empty_like(f, dtype=np.result_type(f.dtype, float))
    n = f.shape[0]
    h2 = h * h
    if n < 4:
        raise ValueError("need at least 4 nodes for differentiation")
    if order == 4 and n >= 6:
        out[2:-2] = (-f[4:] + 16 * f[3:-1] - 30 * f[2:-2] + 16 * f[1:-3] - f[:-4]) / (12 * h2)
        lo = 2
    else:
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h2
        lo = 1
    for i in range(1, lo):
        out[i] = (f[i + 1] - 2 * f[i] + f[i - 1]) / h2
        out[n - 1 - i] = (f[n - i] - 2 * f[n - 1 - i] + f[n - 2 - i]) / h2
    out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h2
    out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h2
    return np.moveaxis(out, 0, axis)


def max_on_outer_layers(a: np.ndarray, layers: int = 2) -> float:
    """Largest |value| on the outermost `layers` nodes of every axis."""
    a = np.asarray(a)
    best = 0.0
    for axis in range(a.ndim):
        f = _move(np.abs(a), axis)
        best = max(best, float(f[:layers].max()), float(f[-layers:].max()))
    return best


# ---------------------------------------------------------------------------
# Field types.


class ScalarField:
    """Samples on a SpacetimeGrid plus an optional closed-form evaluator."""

    def __init__(self, grid: SpacetimeGrid, samples: np.ndarray,
                 analytic: Evaluator | None = None,
                 support_box: np.ndarray | None = None,
                 check: bool = True):
        samples = np.asarray(samples)
        if samples.shape != grid.shape:
            raise GridMismatch(f"samples shape {samples.shape} != grid shape {grid.shape}")
        self.grid = grid
        self.samples = samples
        self.analytic = analytic
        self.support_box = None if support_box is None else np.asarray(support_box, dtype=float)
        self._interp = None
        if check and analytic is not None:
            self._check_agreement()

    def _check_agreement(self):
        vals = self.analytic.value(self.grid.coords())
        scale = max(float(np.abs(self.samples).max()), 1e-300)
        err = float(np.abs(np.broadcast_to(vals, self.grid.shape) - self.samples).max())
        if err > 1e-12 * max(scale, 1.0):
            raise ValueError(f"samples disagree with analytic evaluator: max err {err:.3e}")

    @classmethod
    def from_evaluator(cls, grid: SpacetimeGrid, ev: Evaluator,
                       support_box: np.ndarray | None = None) -> "ScalarField":
        vals = np.broadcast_to(ev.value(grid.coords()), grid.shape).copy()
        return cls(grid, vals, analytic=ev, support_box=support_box, check=False)

    @classmethod
    def zeros(cls, grid: SpacetimeGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape), analytic=ConstantEvaluator(grid.dim, 0.0), check=False)

    @classmethod
    def constant(cls, grid: SpacetimeGrid, c: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(c)),
                   analytic=ConstantEvaluator(grid.dim, c), check=False)

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.samples)

    def effective_support_box(self) -> np.ndarray:
        return self.grid.bounds if self.support_box is None else self.support_box

    def _interpolator(self):
        if self._interp is None:
            self._interp = RegularGridInterpolator(
                self.grid.axes, self.samples, method="linear",
                bounds_error=False, fill_value=0.0)
        return self._interp

    def evaluate(self, pts) -> np.ndarray:
        """Values at arbitrary points (stacked (..., dim) or coordinate tuple)."""
        if self.analytic is not None:
            return self.analytic.value(as_coords(pts, self.grid.dim))
        if isinstance(pts, tuple):
            pts = np.stack(np.broadcast_arrays(*pts), axis=-1)
        pts = np.asarray(pts, dtype=float)
        flat = pts.reshape(-1, self.grid.dim)
        return self._interpolator()(flat).reshape(pts.shape[:-1])

    def derivative(self, axis: int, fd_order: int = 4) -> "ScalarField":
        if self.analytic is not None:
            ev = DerivativeEvaluator(self.analytic, axis)
            vals = np.broadcast_to(self.analytic.grad(self.grid.coords())[axis],
                                   self.grid.shape).copy()
            return ScalarField(self.grid, vals, analytic=ev,
                               support_box=self.support_box, check=False)
        vals = fd_d1(self.samples, axis, self.grid.spacings[axis], order=fd_order)
        return ScalarField(self.grid, vals, support_box=self.support_box, check=False)

    def l2_norm(self) -> float:
        return l2_norm(self.grid, self.samples)

    def __add__(self, other: "ScalarField") -> "ScalarField":
        require_same_grid(self, other)
        ev = None
        if self.analytic is not None and other.analytic is not None:
            ev = SumEvaluator([self.analytic, other.analytic])
        box = _union_box(self.support_box, other.support_box)
        return ScalarField(self.grid, self.samples + other.samples, analytic=ev,
                           support_box=box, check=False)

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        return self + (other * -1.0)

    def __mul__(self, c):
        if isinstance(c, ScalarField):
            require_same_grid(self, c)
            ev = None
            if self.analytic is not None and c.analytic is not None:
                ev = ProductEvaluator(self.analytic, c.analytic)
            box = _intersection_box(self.support_box, c.support_box)
            return ScalarField(self.grid, self.samples * c.samples, analytic=ev,
                               support_box=box, check=False)
        ev = None if self.analytic is None else self.analytic * float(c)
        return ScalarField(self.grid, self.samples * float(c), analytic=ev,
                           support_box=self.support_box, check=False)

    __rmul__ = __mul__


def _union_box(a, b):
    if a is None or b is None:
        return None
    lo = np.minimum(a[:, 0], b[:, 0])
    hi = np.maximum(a[:, 1], b[:, 1])
    return np.stack([lo, hi], axis=1)


def _intersection_box(a, b):
    if a is None:
        return b
    if b is None:
        return a
    lo = np.maximum(a[:, 0], b[:, 0])
    hi = np.minimum(a[:, 1], b[:, 1])
    return np.stack([lo, hi], axis=1)


def l2_norm(grid: SpacetimeGrid, samples: np.ndarray) -> float:
    acc = np.abs(np.asarray(samples)) ** 2
    for axis in range(grid.dim):
        w = trapezoid_axis_weights(grid.shape[axis], grid.spacings[axis])
        shape = [1] * grid.dim
        shape[axis] = w.size
        acc = acc * w.reshape(shape)
    return float(np.sqrt(acc.sum()))


def trapezoid_axis_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def integrate_grid(grid: SpacetimeGrid, samples: np.ndarray) -> complex | float:
    """Composite-trapezoid integral of grid samples over Q."""
    acc = np.asarray(samples)
    for axis in range(grid.dim):
        w = trapezoid_axis_weights(grid.shape[axis], grid.spacings[axis])
        shape = [1] * acc.ndim
        shape[axis] = w.size
        acc = acc * w.reshape(shape)
    total = acc.sum()
    return complex(total) if np.iscomplexobj(acc) else float(total)


class CovectorField:
    """A (1+n)-component field (A_0, A_1, ..., A_n) of compact support in Q."""

    def __init__(self, components, check_support: bool = True):
        comps = tuple(components)
        grid = require_same_grid(*comps)
        if len(comps) != grid.dim:
            raise GridMismatch(f"covector needs {grid.dim} components, got {len(comps)}")
        self.grid = grid
        self.components = comps
        if check_support:
            scale = max((float(np.abs(c.samples).max()) for c in comps), default=0.0)
            tol = 1e-12 * max(scale, 1.0)
            for i, c in enumerate(comps):
                worst = max_on_outer_layers(c.samples, layers=2)
                if worst > tol:
                    raise SupportViolation(
                        f"component {i} reaches {worst:.3e} on the outer 2 grid layers")

    @classmethod
    def zeros(cls, grid: SpacetimeGrid) -> "CovectorField":
        return cls([ScalarField.zeros(grid) for _ in range(grid.dim)], check_support=False)

    @property
    def time_component(self) -> ScalarField:
        return self.components[0]

    @property
    def spatial_components(self) -> tuple[ScalarField, ...]:
        return self.components[1:]

    @property
    def has_analytic(self) -> bool:
        return all(c.analytic is not None for c in self.components)

    def effective_support_box(self) -> np.ndarray:
        boxes = [c.support_box for c in self.components]
        if any(b is None for b in boxes):
            return self.grid.bounds
        out = boxes[0]
        for b in boxes[1:]:
            out = _union_box(out, b)
        return out

    def evaluate_all(self, pts) -> np.ndarray:
        """Stack of component values at the given points, shape (dim, ...)."""
        vals = [c.evaluate(pts) for c in self.components]
        return np.stack(np.broadcast_arrays(*vals))

    def __add__(self, other: "CovectorField") -> "CovectorField":
        require_same_grid(self, other)
        return CovectorField([a + b for a, b in zip(self.components, other.components)],
                             check_support=False)

    def __sub__(self, other: "CovectorField") -> "CovectorField":
        return self + (other * -1.0)

    def __mul__(self, c: float) -> "CovectorField":
        return CovectorField([comp * float(c) for comp in self.components],
                             check_support=False)

    __rmul__ = __mul__


@dataclass
class GaugeFunction:
    """A compactly supported scalar phi used to shift potentials by its gradient."""

    phi: ScalarField

    def __post_init__(self):
        f = self.phi
        scale = max(float(np.abs(f.samples).max()), 1.0)
        worst = max_on_outer_layers(f.samples, layers=1)
        if worst > 1e-12 * scale:
            raise SupportViolation(f"gauge function reaches {worst:.3e} on the boundary of Q")
        if f.analytic is not None:
            g = f.analytic.grad(f.grid.coords())
            g = np.broadcast_to(g, (f.grid.dim,) + f.grid.shape)
            for axis in range(f.grid.dim):
                layer = np.moveaxis(g, 1 + axis, 1)
                worst = max(float(np.abs(layer[:, 0]).max()), float(np.abs(layer[:, -1]).max()))
                if worst > 1e-12 * scale:
                    raise SupportViolation(
                        f"gauge gradient reaches {worst:.3e} on the boundary of Q")

    @property
    def grid(self) -> SpacetimeGrid:
        return self.phi.grid


@dataclass(frozen=True)
class BumpSpec:
    """Placement of one radial bump; support must sit 2+ cells inside Q."""

    center: tuple[float, ...]
    radii: tuple[float, ...]
    amplitude: float = 1.0
    kind: str = "smooth-bump"
    sharpness: float | None = None

    def __post_init__(self):
        if len(self.center) != len(self.radii):
            raise ValueError("center and radii must have equal length")
        if any(r <= 0 for r in self.radii):
            raise ValueError("radii must be positive")

    def support_box(self) -> np.ndarray:
        c = np.asarray(self.center)
        r = np.asarray(self.radii)
        return np.stack([c - r, c + r], axis=1)

    def validate_against(self, grid: SpacetimeGrid):
        if len(self.center) != grid.dim:
            raise GridMismatch(f"bump is {len(self.center)}-dimensional on a {grid.dim}-axis grid")
        bounds = grid.bounds
        margins = np.asarray(grid.spacings) * 2
        box = self.support_box()
        for i in range(grid.dim):
            if box[i, 0] < bounds[i, 0] + margins[i] or box[i, 1] > bounds[i, 1] - margins[i]:
                raise SupportViolation(
                    f"bump support {box[i].tolist()} on axis {i} is closer than 2 cells "
                    f"to the boundary of [{bounds[i,0]}, {bounds[i,1]}]")


def make_bump(grid: SpacetimeGrid, spec: BumpSpec) -> ScalarField:
    """Peak-normalized radial bump: value at the center equals `amplitude`."""
    spec.validate_against(grid)
    ev = BumpEvaluator(spec.center, spec.radii, spec.amplitude, spec.kind,
                       profile=(None if spec.sharpness is None
                                else PROFILES[spec.kind](spec.sharpness)))
    return ScalarField.from_evaluator(grid, ev, support_box=spec.support_box())


def make_covector(grid: SpacetimeGrid, specs) -> CovectorField:
    """One bump (or None, or a list to sum) per spacetime component.

    Passing specs=None gives the zero covector field.
    """
    if specs is None:
        specs = [None] * grid.dim
    comps = []
    for entry in specs:
        if entry is None:
            comps.append(ScalarField.zeros(grid))
        elif isinstance(entry, BumpSpec):
            comps.append(make_bump(grid, entry))
        else:
            f = make_bump(grid, entry[0])
            for s in entry[1:]:
                f = f + make_bump(grid, s)
            comps.append(f)
    return CovectorField(comps)


def gradient_tx(phi: GaugeFunction | ScalarField, fd_order: int = 4) -> CovectorField:
    """Spacetime gradient (d_t phi, d_1 phi, ..., d_n phi) as a covector field."""
    f = phi.phi if isinstance(phi, GaugeFunction) else phi
    comps = [f.derivative(axis, fd_order=fd_order) for axis in range(f.grid.dim)]
    return CovectorField(comps, check_support=isinstance(phi, GaugeFunction))


def gauge_transform(A: CovectorField, phi: GaugeFunction) -> CovectorField:
    """A + grad(phi): the potential equivalent to A under the gauge phi."""
    require_same_grid(A, phi.phi)
    return A + gradient_tx(phi)


def effective_potential(A: CovectorField, q: ScalarField | None = None) -> ScalarField:
    """Zeroth-order coefficient of the expanded operator.

    q + |A_0|^2 - |A|^2 + d_t A_0 - div_x A, the term that multiplies u when
    the relativistic Schrodinger operator is written as
    box(u) + 2 A_0 d_t u - 2 A . grad u + qtilde u.
    """
    grid = A.grid
    if q is not None:
        require_same_grid(A, q)
    a0 = A.time_component
    out = a0 * a0
    for aj in A.spatial_components:
        out = out - aj * aj
    out = out + a0.derivative(0)
    for j, aj in enumerate(A.spatial_components):
        out = out - aj.derivative(1 + j)
    if q is not None:
        out = out + q
    return out


# ---------------------------------------------------------------------------
# Field files: flat little-endian binary + JSON sidecar.


def _dtype_tag(samples: np.ndarray) -> str:
    return "c128" if np.iscomplexobj(samples) else "f64"


def write_field(obj: ScalarField | CovectorField, path_base: str) -> None:
    """Write samples as raw little-endian binary with a JSON header sidecar.

    Scalar fields write one component; covector fields concatenate their
    components in order, each stored row-major over (t, x1, ..., xn).
    Complex data is stored as interleaved (re, im) float64 pairs.
    """
    if isinstance(obj, CovectorField):
        comps = [c.samples for c in obj.components]
        grid = obj.grid
    else:
        comps = [obj.samples]
        grid = obj.grid
    complex_any = any(np.iscomplexobj(c) for c in comps)
    dtype = "<c16" if complex_any else "<f8"
    blob = b"".join(np.ascontiguousarray(c.astype(dtype)).tobytes() for c in comps)
    header = {
        "version": FORMAT_VERSION,
        "n_spatial": grid.n_spatial,
        "T": grid.T,
        "box": [list(iv) for iv in grid.box],
        "n_t": grid.n_t,
        "n_x": list(grid.n_x),
        "dtype": "c128" if complex_any else "f64",
        "component_count": len(comps),
    }
    with open(path_base + ".bin", "wb") as fh:
        fh.write(blob)
    with open(path_base + ".json", "w") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")


def read_field(path_base: str) -> ScalarField | CovectorField:
    with open(path_base + ".json") as fh:
        header = json.load(fh)
    if header["version"] != FORMAT_VERSION:
        raise ValueError(f"unsupported field file version {header['version']}")
    grid = SpacetimeGrid(
        n_spatial=header["n_spatial"],
        T=header["T"],
        box=tuple(tuple(iv) for iv in header["box"]),
        n_t=header["n_t"],
        n_x=tuple(header["n_x"]),
    )
    dtype = "<c16" if header["dtype"] == "c128" else "<f8"
    raw = np.fromfile(path_base + ".bin", dtype=dtype)
    count = header["component_count"]
    per = int(np.prod(grid.shape))
    if raw.size != count * per:
        raise ValueError(f"field file holds {raw.size} values, expected {count * per}")
    comps = [ScalarField(grid, raw[i * per:(i + 1) * per].reshape(grid.shape), check=False)
             for i in range(count)]
    if count == 1:
        return comps[0]
    return CovectorField(comps, check_support=False)
