"""Weighted a-priori estimate verification for the damped wave operator.

Implements the linear weight phi = t + x.omega and its convexified variant,
semiclassically scaled Sobolev norms, the term-by-term sides of the boundary
estimate, and the interior conjugate-operator ratio h*||u|| / ||L_phi u||.
"Verification" here always means: bounded ratios over a declared family of
test functions and a declared h-grid, never a claim of the universal
inequality.

The conjugated operator is expanded in closed form (the weight is linear, so
conjugation only adds first- and zeroth-order terms), which keeps the interior
sweeps free of exponential factors.  Exponential weights appear only in the
boundary terms, where they multiply bounded traces; an overflow guard rejects
h values small enough to push e^{|phi|/h} past float range.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import PreconditionViolation, SupportViolation
from .fields import (
    BumpSpec,
    CovectorField,
    ScalarField,
    SpacetimeGrid,
    effective_potential,
    integrate_grid,
    make_bump,
)
from .go import Direction

DEFAULT_EPS = 0.5
DEFAULT_H_MAX = 0.5
DEFAULT_H_GRID = (0.2, 0.1, 0.05, 0.025)


# ---------------------------------------------------------------------------
# Weight.


@dataclass(frozen=True)
class CarlemanWeight:
    """Linear spacetime weight phi = t + x.omega with convexified variant.

    phi_tilde = phi - h t^2 / (2 eps); for t >= 0 this never exceeds phi, so
    e^{-phi/h} <= e^{-phi_tilde/h} pointwise.
    """

    omega: Direction
    eps: float = DEFAULT_EPS
    h: float = 0.1
    h_max: float = DEFAULT_H_MAX

    def __post_init__(self):
        if not self.eps > 0:
            raise PreconditionViolation(f"eps must be positive, got {self.eps}")
        if not 0 < self.h <= self.h_max:
            raise PreconditionViolation(
                f"h must lie in (0, {self.h_max}], got {self.h}")

    def with_h(self, h: float) -> "CarlemanWeight":
        return CarlemanWeight(self.omega, self.eps, float(h), self.h_max)

    def phi(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return pts[..., 0] + pts[..., 1:] @ self.omega.vec

    def phi_tilde(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return self.phi(pts) - self.h * pts[..., 0] ** 2 / (2.0 * self.eps)

    def phi_range(self, box: np.ndarray) -> tuple[float, float]:
        """Exact [min, max] of phi over an axis-aligned box (time first)."""
        box = np.asarray(box, dtype=float)
        lo = box[0, 0] + sum(min(w * box[1 + j, 0], w * box[1 + j, 1])
                             for j, w in enumerate(self.omega.vec))
        hi = box[0, 1] + sum(max(w * box[1 + j, 0], w * box[1 + j, 1])
                             for j, w in enumerate(self.omega.vec))
        return float(lo), float(hi)


# ---------------------------------------------------------------------------
# Scaled Sobolev norms.


def _check_compact_support(samples: np.ndarray, layers: int = 2,
                           tol: float = 1e-10) -> None:
    scale = float(np.abs(samples).max())
    if scale == 0.0:
        return
    worst = 0.0
    for axis in range(samples.ndim):
        f = np.moveaxis(np.abs(samples), axis, 0)
        worst = max(worst, float(f[:layers].max()), float(f[-layers:].max()))
    if worst > tol * max(scale, 1.0):
        raise SupportViolation(
            f"field is not compactly supported inside the box: boundary-ring "
            f"magnitude {worst:.3e} exceeds {tol:.0e} x scale {scale:.3e}")


def torus_norm_scl(samples: np.ndarray, spacings, h: float, s: int,
                   pad: bool = True) -> float:
    """H^s scaled norm of samples embedded in a torus of twice the extent.

    The weight on the discrete transform is (1 + h^2 |frequency|^2)^s with
    angular frequencies 2*pi*k/(period); Parseval normalization makes s = 0
    agree with the plain L2 norm of the samples.  With pad=False the samples
    are treated as already periodic on their own torus (used to validate the
    transform norm against closed forms on pure Fourier modes).
    """
    samples = np.asarray(samples)
    spacings = [float(d) for d in spacings]
    if pad:
        padded_shape = tuple(2 * m for m in samples.shape)
        padded = np.zeros(padded_shape, dtype=complex)
        padded[tuple(slice(0, m) for m in samples.shape)] = samples
    else:
        padded_shape = samples.shape
        padded = samples.astype(complex)
    transform = np.fft.fftn(padded)
    weight = np.zeros(padded_shape)
    for axis, (m, d) in enumerate(zip(padded_shape, spacings)):
        freq = 2.0 * np.pi * np.fft.fftfreq(m, d=d)
        shape = [1] * len(padded_shape)
        shape[axis] = m
        weight = weight + freq.reshape(shape) ** 2
    weight = (1.0 + h * h * weight) ** s
    cell = float(np.prod(spacings))
    total = float(np.sum(weight * np.abs(transform) ** 2))
    return float(np.sqrt(total * cell / np.prod(padded_shape)))


def sobolev_norm_scl(u: ScalarField, h: float, s: int) -> float:
    """Scaled Sobolev norm of order s in {-1, 0, 1}.

    s = 1 is the sum ||u|| + ||h grad_{t,x} u|| over the grid box; s = 0 is
    the plain L2 norm; s = -1 is the weighted-transform norm on an enclosing
    torus of twice the extent (u must be compactly supported inside the box).
    """
    if s not in (-1, 0, 1):
        raise ValueError(f"order s must be -1, 0 or 1, got {s}")
    if s == 0:
        return u.l2_norm()
    if s == 1:
        grad_sq = None
        for axis in range(u.grid.dim):
            d = u.derivative(axis)
            term = np.abs(d.samples) ** 2
            grad_sq = term if grad_sq is None else grad_sq + term
        grad_norm = float(np.sqrt(np.real(integrate_grid(u.grid, grad_sq))))
        return u.l2_norm() + h * grad_norm
    _check_compact_support(u.samples)
    return torus_norm_scl(u.samples, u.grid.spacings, h, -1)


# ---------------------------------------------------------------------------
# Conjugated operator, expanded in closed form.


def _operator_fields(A: CovectorField, q: ScalarField | None,
                     u: ScalarField, sign: int) -> ScalarField:
    """L_{sign*A, q} u as a ScalarField (q already the intended potential)."""
    a0 = A.time_component
    lu = u.derivative(0).derivative(0)
    for j in range(1, u.grid.dim):
        lu = lu - u.derivative(j).derivative(j)
    qt = effective_potential(A * float(sign) if sign != 1 else A, q)
    lu = lu + (a0 * u.derivative(0)) * (2.0 * sign)
    for j, aj in enumerate(A.spatial_components):
        lu = lu - (aj * u.derivative(1 + j)) * (2.0 * sign)
    return lu + qt * u


def apply_operator(A: CovectorField, q: ScalarField | None,
                   u: ScalarField) -> ScalarField:
    """L_{A,q} u = box(u) + 2A_0 du/dt - 2A.grad u + qtilde u."""
    return _operator_fields(A, q, u, +1)


def conjugated_operator(A: CovectorField, q: ScalarField | None,
                        u: ScalarField, weight: CarlemanWeight,
                        variant: str = "direct") -> ScalarField:
    """h^2 e^{-phi/h} L e^{phi/h} u, expanded so no exponential is formed.

    The weight is linear, so conjugation contributes exactly
    2h[(d_t - omega.grad)u + (A_0 - A.omega)u] in the direct variant.  The
    adjoint variant conjugates with the opposite sign and uses (-A, conj q):
    the derivative bracket flips sign while the zeroth-order part does not.
    """
    if variant not in ("direct", "adjoint"):
        raise ValueError(f"variant must be 'direct' or 'adjoint', got {variant!r}")
    h = weight.h
    om = weight.omega.vec
    a0 = A.time_component
    bracket = u.derivative(0)
    for j in range(len(om)):
        bracket = bracket - u.derivative(1 + j) * float(om[j])
    zeroth = a0 * u
    for j, aj in enumerate(A.spatial_components):
        zeroth = zeroth - (aj * u) * float(om[j])
    if variant == "direct":
        lu = _operator_fields(A, q, u, +1)
        return lu * (h * h) + (bracket + zeroth) * (2.0 * h)
    if q is None or not np.iscomplexobj(q.samples):
        q_adj = q
    else:
        q_adj = ScalarField(q.grid, np.conj(q.samples),
                            support_box=q.support_box, check=False)
    lu = _operator_fields(A, q_adj, u, -1)
    return lu * (h * h) - bracket * (2.0 * h) + zeroth * (2.0 * h)


# ---------------------------------------------------------------------------
# Interior ratio.


def interior_estimate_ratio(A: CovectorField, q: ScalarField | None,
                            u: ScalarField, weight: CarlemanWeight,
                            s: int = 0, variant: str = "direct") -> float:
    """h * ||u||_{H^{1+s}_scl} / ||L_phi u||_{H^s_scl} for s in {0, -1}.

    Returns inf for u = 0 (the conjugated image vanishes identically); the
    caller sweeps h and checks boundedness.
    """
    if s not in (0, -1):
        raise ValueError(f"interior estimate order s must be 0 or -1, got {s}")
    _check_compact_support(u.samples)
    h = weight.h
    lphi = conjugated_operator(A, q, u, weight, variant=variant)
    if float(np.abs(lphi.samples).max()) == 0.0:
        return float("inf")
    numerator = h * sobolev_norm_scl(u, h, 1 + s)
    if s == 0:
        denominator = lphi.l2_norm()
    else:
        denominator = torus_norm_scl(lphi.samples, u.grid.spacings, h, -1)
    return float(numerator / denominator)


# ---------------------------------------------------------------------------
# Boundary estimate sides.


@dataclass
class EstimateReport:
    """Labeled term values for one h: left side, right side, and their ratio.

    The ratio is lhs_total / rhs_total, i.e. the empirical constant that C
    would need to exceed at this h for the displayed inequality to hold.
    """

    lhs_terms: dict[str, float]
    rhs_terms: dict[str, float]
    h: float

    def __post_init__(self):
        for name, value in {**self.lhs_terms, **self.rhs_terms}.items():
            if not np.isfinite(value) or value < 0:
                raise PreconditionViolation(
                    f"estimate term {name} = {value} is not a finite squared norm")

    @property
    def lhs_total(self) -> float:
        return float(sum(self.lhs_terms.values()))

    @property
    def rhs_total(self) -> float:
        return float(sum(self.rhs_terms.values()))

    @property
    def ratio(self) -> float:
        rhs = self.rhs_total
        return float("inf") if rhs == 0.0 else self.lhs_total / rhs


@lru_cache(maxsize=None)
def _gauss_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _gauss_axis(lo: float, hi: float, step: float,
                order: int = 10) -> tuple[np.ndarray, np.ndarray]:
    nodes01, weights01 = _gauss_rule(order)
    panels = max(1, int(np.ceil((hi - lo) / step)))
    width = (hi - lo) / panels
    starts = lo + width * np.arange(panels)
    nodes = (starts[:, None] + width * nodes01[None, :]).ravel()
    weights = np.tile(width * weights01, panels)
    return nodes, weights


def _gauss_chunks(box: np.ndarray, steps, order: int = 10,
                  chunk: int = 200_000):
    """Stream (points, weights) blocks of a tensor composite-Gauss rule.

    Points come flattened as (N, d) with N at most about `chunk`; the full
    tensor mesh is never materialized, so arbitrarily fine rules stay within
    a bounded memory footprint.
    """
    axes, wts = [], []
    for (lo, hi), st in zip(box, steps):
        n, w = _gauss_axis(float(lo), float(hi), float(st), order)
        axes.append(n)
        wts.append(w)
    dim = len(axes)
    if dim == 1:
        yield axes[0][:, None], wts[0]
        return
    rest_mesh = np.meshgrid(*axes[1:], indexing="ij")
    rest_pts = np.stack(rest_mesh, axis=-1).reshape(-1, dim - 1)
    rest_w = wts[1]
    for w in wts[2:]:
        rest_w = np.multiply.outer(rest_w, w)
    rest_w = rest_w.ravel()
    lead = max(1, chunk // max(rest_w.size, 1))
    n0, w0 = axes[0], wts[0]
    for i in range(0, n0.size, lead):
        tn, tw = n0[i:i + lead], w0[i:i + lead]
        pts = np.empty((tn.size, rest_pts.shape[0], dim))
        pts[..., 0] = tn[:, None]
        pts[..., 1:] = rest_pts[None, :, :]
        yield pts.reshape(-1, dim), np.multiply.outer(tw, rest_w).ravel()


def _trace_scale(u: ScalarField) -> float:
    return max(float(np.abs(u.samples).max()), 1e-300)


def boundary_estimate_sides(A: CovectorField, q: ScalarField | None,
                            u: ScalarField,
                            weight: CarlemanWeight,
                            panel_scale: float = 3.0,
                            quad_steps=None,
                            order: int = 10) -> EstimateReport:
    """Every displayed term of the boundary estimate, via Gauss quadrature.

    Left side: the shadowed-flux term with the (nu.omega)+ weight, the final
    du/dt term, and the three weighted volume norms.  Right side: the weighted
    operator image, the two final-time terms, and the illuminated flux with
    the (nu.omega)- weight.  Requires u|_Sigma = 0 and u = du/dt = 0 at t = 0
    (checked to 1e-10 relative); u must carry a closed-form evaluator.

    Quadrature: composite Gauss panels of width panel_scale * spacing per
    axis (or the explicit widths in quad_steps), streamed in bounded-memory
    blocks.  Tighter panels with a different order give an independent rule
    for cross-checking reported totals.
    """
    grid = u.grid
    if u.analytic is None:
        raise PreconditionViolation(
            "boundary_estimate_sides needs a closed-form u to evaluate traces")
    h = weight.h
    box = grid.bounds
    lo, hi = weight.phi_range(box)
    if 2.0 * max(abs(lo), abs(hi)) / h > 650.0:
        raise PreconditionViolation(
            f"h = {h} underflows the boundary weights on this box "
            f"(phi range [{lo:.3g}, {hi:.3g}])")

    def du(axis):
        return u.derivative(axis)

    # --- precondition traces -------------------------------------------------
    scale = _trace_scale(u)
    t0_u = np.abs(u.samples[0]).max()
    t0_dtu = np.abs(du(0).samples[0]).max()
    if max(t0_u, t0_dtu) > 1e-10 * max(scale, 1.0):
        raise PreconditionViolation(
            f"u or du/dt does not vanish at t = 0 (max {max(t0_u, t0_dtu):.3e})")
    lateral = 0.0
    for axis in range(1, grid.dim):
        sl = np.moveaxis(u.samples, axis, 0)
        lateral = max(lateral, float(np.abs(sl[0]).max()),
                      float(np.abs(sl[-1]).max()))
    if lateral > 1e-10 * max(scale, 1.0):
        raise PreconditionViolation(
            f"u does not vanish on the lateral boundary (max {lateral:.3e})")

    if quad_steps is None:
        steps = [panel_scale * d for d in grid.spacings]
    else:
        steps = [float(s) for s in quad_steps]
    T = box[0, 1]

    # --- volume terms --------------------------------------------------------
    dtu_f = du(0)
    grad_f = [du(j) for j in range(1, grid.dim)]
    lop = apply_operator(A, q, u)
    if lop.analytic is None:
        lop = ScalarField(grid, lop.samples, check=False)
    vol_u = vol_dtu = vol_gradu = source = 0.0
    for pts, w in _gauss_chunks(box, steps, order):
        w2 = np.exp(-2.0 * weight.phi(pts) / h) * w
        vol_u += float(np.sum(w2 * np.abs(u.evaluate(pts)) ** 2))
        vol_dtu += float(np.sum(w2 * np.abs(dtu_f.evaluate(pts)) ** 2))
        g = np.zeros(pts.shape[0])
        for gf in grad_f:
            g += np.abs(gf.evaluate(pts)) ** 2
        vol_gradu += float(np.sum(w2 * g))
        source += float(np.sum(w2 * np.abs(lop.evaluate(pts)) ** 2))
    vol_dtu *= h * h
    vol_gradu *= h * h
    source *= h * h

    # --- final-time terms ----------------------------------------------------
    final_dtu = final_u = final_gradu = 0.0
    for spts, w in _gauss_chunks(box[1:], steps[1:], order):
        full = np.concatenate([np.full((spts.shape[0], 1), T), spts], axis=1)
        wT = np.exp(-2.0 * weight.phi(full) / h) * w
        final_dtu += float(np.sum(wT * np.abs(dtu_f.evaluate(full)) ** 2))
        final_u += float(np.sum(wT * np.abs(u.evaluate(full)) ** 2))
        grad_T = np.zeros(full.shape[0])
        for gf in grad_f:
            grad_T += np.abs(gf.evaluate(full)) ** 2
        final_gradu += float(np.sum(wT * grad_T))
    final_dtu *= h
    final_gradu *= h

    # --- lateral flux terms --------------------------------------------------
    flux_shadowed = 0.0
    flux_illuminated = 0.0
    om = weight.omega.vec
    for axis in range(1, grid.dim):
        dnu_f = du(axis)
        for side in (0, 1):
            nu_dot = om[axis - 1] * (1.0 if side == 1 else -1.0)
            if nu_dot == 0.0:
                continue
            face_axes = [i for i in range(grid.dim) if i != axis]
            coord = box[axis, side]
            integral = 0.0
            for fpts, w in _gauss_chunks(box[face_axes],
                                         [steps[i] for i in face_axes], order):
                full_f = np.empty((fpts.shape[0], grid.dim))
                for slot, i in enumerate(face_axes):
                    full_f[:, i] = fpts[:, slot]
                full_f[:, axis] = coord
                wf = np.exp(-2.0 * weight.phi(full_f) / h) * w
                integral += float(np.sum(wf * np.abs(dnu_f.evaluate(full_f)) ** 2))
            if nu_dot > 0:
                flux_shadowed += h * nu_dot * integral
            else:
                flux_illuminated += h * (-nu_dot) * integral

    lhs = {
        "flux_shadowed": flux_shadowed,
        "final_dtu": final_dtu,
        "vol_u": vol_u,
        "vol_dtu": vol_dtu,
        "vol_gradu": vol_gradu,
    }
    rhs = {
        "source": source,
        "final_u": final_u,
        "final_gradu": final_gradu,
        "flux_illuminated": flux_illuminated,
    }
    return EstimateReport(lhs_terms=lhs, rhs_terms=rhs, h=h)


# ---------------------------------------------------------------------------
# Default sweep family and sweep drivers.


def default_test_family(grid: SpacetimeGrid,
                        amplitudes=(0.5, 1.0, 2.0)) -> list[ScalarField]:
    """Five bump shapes x the given amplitudes, all supported well inside Q."""
    T = grid.T
    n = grid.n_spatial
    extents = [min(abs(b) for b in grid.box[j]) for j in range(n)]

    def spatial(scale, shift=0.0):
        center = tuple(shift * e for e in extents)
        radii = tuple(scale * e for e in extents)
        return center, radii

    shapes = []
    for kind, sharp, scale, tshift, xshift in (
            ("smooth-bump", None, 0.62, 0.0, 0.0),
            ("smooth-bump", None, 0.45, 0.08, 0.1),
            ("smooth-bump", None, 0.58, -0.1, -0.12),
            ("gaussian-truncated", 8.0, 0.6, 0.05, 0.0),
            ("polynomial-bump", None, 0.55, -0.05, 0.08),
    ):
        c_sp, r_sp = spatial(scale, xshift)
        center = (T * (0.5 + tshift),) + c_sp
        radii = (T * 0.32,) + r_sp
        shapes.append(BumpSpec(center, radii, 1.0, kind, sharpness=sharp))
    family = []
    for spec in shapes:
        base = make_bump(grid, spec)
        for amp in amplitudes:
            family.append(base * float(amp))
    return family


def interior_sweep(A: CovectorField, q: ScalarField | None,
                   family: list[ScalarField], weight: CarlemanWeight,
                   h_grid=DEFAULT_H_GRID, s: int = 0,
                   variant: str = "direct") -> list[dict]:
    """Rows (h, per-member ratios, max ratio) over the h-grid."""
    rows = []
    for h in h_grid:
        w = weight.with_h(h)
        ratios = [interior_estimate_ratio(A, q, u, w, s=s, variant=variant)
                  for u in family]
        rows.append({"h": float(h), "ratios": ratios,
                     "max_ratio": float(max(ratios))})
    return rows


def boundary_sweep(A: CovectorField, q: ScalarField | None,
                   family: list[ScalarField], weight: CarlemanWeight,
                   h_grid=DEFAULT_H_GRID) -> list[dict]:
    """Rows (h, summed term values over the family, family-max ratio)."""
    rows = []
    for h in h_grid:
        w = weight.with_h(h)
        reports = [boundary_estimate_sides(A, q, u, w) for u in family]
        lhs = {k: float(sum(r.lhs_terms[k] for r in reports))
               for k in reports[0].lhs_terms}
        rhs = {k: float(sum(r.rhs_terms[k] for r in reports))
               for k in reports[0].rhs_terms}
        rows.append({"h": float(h), "lhs_terms": lhs, "rhs_terms": rhs,
                     "max_ratio": float(max(r.ratio for r in reports))})
    return rows


def max_growth_per_halving(rows: list[dict]) -> float:
    """Largest ratio r(h_{k+1}) / r(h_k) over consecutive h-grid entries."""
    ratios = [row["max_ratio"] for row in rows]
    if any(not np.isfinite(r) for r in ratios):
        return float("inf")
    return float(max(b / a for a, b in zip(ratios, ratios[1:])))
