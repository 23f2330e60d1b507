"""Geometric-optics amplitudes for the conjugated wave operator.

Along the characteristic spacetime direction (1, -omega) the exponentially
weighted ansatz splits into a transported amplitude and an O(h) remainder.
This module builds the growing and decaying amplitudes from half-line ray
integrals of the potential, checks the transport equation they satisfy, and
evaluates the conjugated source term whose L2 size controls the remainder.
The conjugation is always expanded analytically: no exp(+-phi/h) factor is
ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SliceViolation
from .fields import CovectorField, ScalarField, SpacetimeGrid, fd_d1, fd_d2, l2_norm
from .quadrature import integrate_rays


@dataclass(frozen=True)
class Direction:
    """A unit vector in R^n (spatial); the spacetime ray direction is (1, -omega)."""

    omega: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.omega, dtype=float)
        if abs(float(v @ v) - 1.0) > 2e-12:
            raise ValueError(f"|omega| = {np.sqrt(v @ v):.15f} is not 1 within 1e-12")
        object.__setattr__(self, "omega", tuple(float(c) for c in v))

    @classmethod
    def from_vector(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        norm = float(np.linalg.norm(v))
        if norm == 0:
            raise ValueError("cannot normalize the zero vector")
        return cls(tuple(v / norm))

    @property
    def vec(self) -> np.ndarray:
        return np.asarray(self.omega)

    @property
    def n(self) -> int:
        return len(self.omega)

    def spacetime(self, sign: int = -1) -> np.ndarray:
        """(1, sign*omega); sign=-1 is the characteristic ray direction."""
        return np.concatenate([[1.0], sign * self.vec])


def slice_defect(zeta: np.ndarray, omega: Direction) -> float:
    """|zeta . (1, -omega)| relative to max(1, |zeta|)."""
    zeta = np.asarray(zeta, dtype=float)
    dot = float(zeta @ omega.spacetime(-1))
    return abs(dot) / max(1.0, float(np.linalg.norm(zeta)))


def project_zeta(zeta, omega: Direction) -> np.ndarray:
    """Nearest frequency to zeta lying in the plane orthogonal to (1, -omega).

    The explicit repair for inputs that fail the SliceQuery invariant.
    """
    zeta = np.asarray(zeta, dtype=float)
    d = omega.spacetime(-1)
    return zeta - (zeta @ d) / (d @ d) * d


@dataclass(frozen=True)
class SliceQuery:
    """A direction with a frequency orthogonal to its characteristic ray.

    zeta=None requests the phaseless amplitude (no oscillatory factor).
    """

    omega: Direction
    zeta: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.zeta is not None:
            z = np.asarray(self.zeta, dtype=float)
            if z.size != self.omega.n + 1:
                raise ValueError(f"zeta must have {self.omega.n + 1} components")
            defect = slice_defect(z, self.omega)
            if defect > 1e-12:
                raise SliceViolation(
                    f"zeta . (1,-omega) = {defect:.3e} relative; project_zeta repairs this")
            object.__setattr__(self, "zeta", tuple(float(c) for c in z))

    @property
    def zeta_vec(self) -> np.ndarray | None:
        return None if self.zeta is None else np.asarray(self.zeta)


def _default_step(grid: SpacetimeGrid) -> float:
    return min(grid.spacings) / 2.0


def ray_integral_halfline(F: CovectorField, point, omega: Direction,
                          step: float | None = None) -> np.ndarray:
    """integral_0^inf of (1,-omega) . F at (t+s, x - s*omega) ds.

    Truncated exactly where the ray leaves F's support box.  Closed-form
    components integrate with Gauss-Legendre panels; sampled components with
    composite trapezoid.  `point` may be one point (d,) or a batch (N, d).
    """
    pts = np.atleast_2d(np.asarray(point, dtype=float))
    single = np.asarray(point).ndim == 1
    d = omega.spacetime(-1)
    step = _default_step(F.grid) if step is None else step
    rule = "gauss" if F.has_analytic else "trapezoid"
    w = d  # contraction weights equal the ray direction here

    def integrand(p):
        vals = F.evaluate_all(p)
        return sum(w[i] * vals[i] for i in range(len(w)))

    out = integrate_rays(integrand, pts, d, F.effective_support_box(), step,
                         rule=rule, half_line=True)
    return out[0] if single else out


@dataclass
class GOAmplitude:
    """A transported amplitude sampled on the grid, with its construction data."""

    field: ScalarField
    omega: Direction
    zeta: tuple[float, ...] | None
    kind: str  # "growing" or "decaying"
    potential: CovectorField
    phase_integral: np.ndarray  # the half-line ray integral I(z) on the grid

    @property
    def grid(self) -> SpacetimeGrid:
        return self.field.grid


def _phase_integral_grid(A: CovectorField, omega: Direction,
                         step: float | None = None) -> np.ndarray:
    grid = A.grid
    pts = grid.meshpoints().reshape(-1, grid.dim)
    vals = ray_integral_halfline(A, pts, omega, step=step)
    return vals.reshape(grid.shape)


def _plane_phase(grid: SpacetimeGrid, zeta: np.ndarray) -> np.ndarray:
    coords = grid.coords()
    phase = sum(zeta[i] * coords[i] for i in range(grid.dim))
    return np.exp(-1j * np.broadcast_to(phase, grid.shape))


def amplitude_growing(A: CovectorField, query: SliceQuery,
                      step: float | None = None) -> GOAmplitude:
    """exp(-i zeta.(t,x)) * exp(+ integral of (1,-omega).A along the ray).

    With query.zeta=None the oscillatory factor is dropped (phaseless form).
    """
    grid = A.grid
    ray = _phase_integral_grid(A, query.omega, step=step)
    samples = np.exp(ray).astype(complex)
    if query.zeta is not None:
        samples = samples * _plane_phase(grid, query.zeta_vec)
    f = ScalarField(grid, samples, check=False)
    return GOAmplitude(f, query.omega, query.zeta, "growing", A, ray)


def amplitude_decaying(A: CovectorField, omega: Direction,
                       step: float | None = None) -> GOAmplitude:
    """exp(- integral of (1,-omega).A along the ray); no oscillatory factor."""
    grid = A.grid
    ray = _phase_integral_grid(A, omega, step=step)
    samples = np.exp(-ray).astype(complex)
    f = ScalarField(grid, samples, check=False)
    return GOAmplitude(f, omega, None, "decaying", A, ray)


def _ray_sign(kind: str) -> float:
    if kind == "growing":
        return 1.0
    if kind == "decaying":
        return -1.0
    raise ValueError(f"unknown amplitude kind '{kind}'")


def _phase_gradient_grid(A: CovectorField, omega: Direction, order: int,
                         step: float | None = None, chunk: int = 4096) -> np.ndarray:
    """Derivatives of the half-line phase integral on the grid.

    order=1: gradient, shape (dim, *grid.shape).
    order=2: diagonal second derivatives, same shape.
    Differentiates under the integral; needs closed-form components.
    """
    grid = A.grid
    d = omega.spacetime(-1)
    dim = grid.dim
    step = _default_step(grid) if step is None else step
    pts = grid.meshpoints().reshape(-1, dim)
    out = np.empty((dim, pts.shape[0]))
    box = A.effective_support_box()
    for k in range(dim):
        def integrand(p, k=k):
            coords = tuple(p[..., i] for i in range(dim))
            acc = 0.0
            for i, comp in enumerate(A.components):
                if d[i] == 0.0:
                    continue
                if order == 1:
                    acc = acc + d[i] * comp.analytic.grad(coords)[k]
                else:
                    acc = acc + d[i] * comp.analytic.hess_diag(coords)[k]
            return acc
        out[k] = integrate_rays(integrand, pts, d, box, step, rule="gauss",
                                half_line=True, chunk=chunk)
    return out.reshape((dim,) + grid.shape)


def amplitude_gradient(amp: GOAmplitude, step: float | None = None) -> np.ndarray:
    """Spacetime gradient of the amplitude on the grid, shape (dim, *shape).

    Uses ray integrals of the potential's derivatives when the potential has
    closed-form components, else 4th-order finite differences.
    """
    grid = amp.grid
    if amp.potential.has_analytic:
        sign = _ray_sign(amp.kind)
        gI = _phase_gradient_grid(amp.potential, amp.omega, order=1, step=step)
        grad = sign * gI * amp.field.samples[None]
        if amp.zeta is not None:
            z = np.asarray(amp.zeta)
            grad = grad + (-1j) * z.reshape((grid.dim,) + (1,) * grid.dim) * amp.field.samples[None]
        return grad
    return np.stack([fd_d1(amp.field.samples, ax, grid.spacings[ax], order=4)
                     for ax in range(grid.dim)])


def transport_residual(amp: GOAmplitude, A: CovectorField | None = None,
                       derivative: str = "auto", interior_margin: int = 2) -> float:
    """sup over interior nodes of |(1,-w).grad B +- ((1,-w).A) B| / (1 + |B|).

    Sign + for the growing amplitude, - for the decaying one.  derivative
    controls how grad B is formed: "analytic" (ray integrals of dA), "fd"
    (4th-order differences of the samples), or "auto".
    """
    A = amp.potential if A is None else A
    grid = amp.grid
    d = amp.omega.spacetime(-1)
    if derivative == "auto":
        derivative = "analytic" if A.has_analytic else "fd"
    if derivative == "analytic":
        grad = amplitude_gradient(amp)
    else:
        grad = np.stack([fd_d1(amp.field.samples, ax, grid.spacings[ax], order=4)
                         for ax in range(grid.dim)])
    directional = sum(d[i] * grad[i] for i in range(grid.dim))
    pot = sum(d[i] * A.components[i].samples for i in range(grid.dim))
    sign = _ray_sign(amp.kind)
    res = np.abs(directional + sign * pot * amp.field.samples) / (1.0 + np.abs(amp.field.samples))
    m = interior_margin
    sl = tuple(slice(m, dim - m) for dim in grid.shape)
    return float(res[sl].max())


def conjugated_source_terms(A: CovectorField, q: ScalarField | None,
                            amp: GOAmplitude) -> tuple[np.ndarray, np.ndarray]:
    """The expanded conjugated source split into its h-powers (T0, T1).

    For the weight t + x.omega the conjugation of the expanded operator
    applied to the transported amplitude B reduces (the 1/h coefficient
    cancels by the transport equation) to T0 + h*T1 with

        T0 = (2 A_0 - 2 A.omega + qtilde) B
        T1 = (2 A_0 d_t - 2 A.grad + qtilde + box) B.

    Both are returned as grid sample arrays.
    """
    from .fields import effective_potential

    grid = amp.grid
    omega = amp.omega.vec
    B = amp.field.samples
    qt = effective_potential(A, q).samples
    a0 = A.time_component.samples
    aj = [c.samples for c in A.spatial_components]
    t0 = (2.0 * a0 - 2.0 * sum(omega[j] * aj[j] for j in range(len(aj))) + qt) * B

    if A.has_analytic:
        grad = amplitude_gradient(amp)
        sign = _ray_sign(amp.kind)
        gI = _phase_gradient_grid(A, amp.omega, order=1)
        hI = _phase_gradient_grid(A, amp.omega, order=2)
        z = np.zeros(grid.dim) if amp.zeta is None else np.asarray(amp.zeta)
        zr = z.reshape((grid.dim,) + (1,) * grid.dim)
        # second derivatives: d_k^2 B = B * ((-i z_k + s gI_k)^2 + s hI_k)
        first = -1j * zr + sign * gI
        second = (first**2 + sign * hI) * B[None]
        box = second[0] - second[1:].sum(axis=0)
    else:
        grad = np.stack([fd_d1(B, ax, grid.spacings[ax], order=4)
                         for ax in range(grid.dim)])
        second = np.stack([fd_d2(B, ax, grid.spacings[ax], order=4)
                           for ax in range(grid.dim)])
        box = second[0] - second[1:].sum(axis=0)
    t1 = 2.0 * a0 * grad[0] - 2.0 * sum(aj[j] * grad[1 + j] for j in range(len(aj))) \
        + qt * B + box
    return t0, t1


def conjugated_remainder(A: CovectorField, q: ScalarField | None,
                         amp: GOAmplitude, h: float) -> float:
    """L2(Q) norm of the conjugated source h * e^{-+phi/h} L (e^{+-phi/h} B).

    Evaluated in the expanded form T0 + h*T1; the exponential weights never
    appear.  The value is O(1) in h: its h->0 limit is ||T0||.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    t0, t1 = conjugated_source_terms(A, q, amp)
    return l2_norm(amp.grid, t0 + h * t1)
