"""Initial-boundary-value solver for the expanded wave operator.

The equation solved is

    d_tt u - lap u + 2 A_0 d_t u - 2 A . grad u + qtilde u = g     in Q,
    u = f on the lateral boundary,  u(0) = phi,  d_t u(0) = psi,

with qtilde the effective potential of the pair (A, q).  The scheme is an
explicit leapfrog: centered second differences in time and space, the damping
term 2 A_0 d_t u discretized with the centered average so the update stays
pointwise-diagonal, and a Taylor expansion seeding the first step.  Formal
order 2 in dt and dx under the CFL bound.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CflViolation,
    GridMismatch,
    NonfiniteState,
    PreconditionViolation,
)
from .fields import (
    CovectorField,
    ScalarField,
    SpacetimeGrid,
    effective_potential,
    fd_d1,
    gauge_transform,
    require_same_grid,
    trapezoid_axis_weights,
)
from .go import Direction

Face = tuple[int, int]  # (spatial axis 1..n, side 0=lo 1=hi)


def faces_of(grid: SpacetimeGrid) -> list[Face]:
    return [(a, s) for a in range(1, grid.dim) for s in (0, 1)]


def face_shape(grid: SpacetimeGrid, face: Face) -> tuple[int, ...]:
    a, _ = face
    return tuple(m for i, m in enumerate(grid.shape[1:], start=1) if i != a)


def face_slice(grid: SpacetimeGrid, face: Face) -> tuple:
    """Index tuple selecting the face nodes of a spatial slice (no time axis)."""
    a, s = face
    out = [slice(None)] * grid.n_spatial
    out[a - 1] = 0 if s == 0 else -1
    return tuple(out)


def face_normal(grid: SpacetimeGrid, face: Face) -> np.ndarray:
    a, s = face
    nu = np.zeros(grid.n_spatial)
    nu[a - 1] = -1.0 if s == 0 else 1.0
    return nu


def face_points(grid: SpacetimeGrid, face: Face) -> np.ndarray:
    """Spacetime points of the face lattice, shape (n_t, *face_shape, dim)."""
    a, s = face
    axes = [grid.axes[0]]
    for i in range(1, grid.dim):
        if i == a:
            axes.append(np.array([grid.axes[i][0 if s == 0 else -1]]))
        else:
            axes.append(grid.axes[i])
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    return np.squeeze(pts, axis=a)


@dataclass
class BoundaryRegions:
    """Face masks derived from the reference spatial direction omega0.

    A face is shadowed when its outward normal nu satisfies nu.omega0 >= 0 and
    illuminated when nu.omega0 <= 0 (faces with nu.omega0 = 0 are both).  The
    observation region G must contain every illuminated face; F must contain
    every shadowed face.  Masks are boolean arrays over each face lattice.
    """

    omega0: Direction
    grid: SpacetimeGrid
    G: dict[Face, np.ndarray] = field(default_factory=dict)
    F: dict[Face, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.omega0.n != self.grid.n_spatial:
            raise GridMismatch("omega0 dimension does not match the grid")
        if not self.G:
            self.G = {f: np.full(face_shape(self.grid, f), self.is_illuminated(f))
                      for f in faces_of(self.grid)}
        if not self.F:
            self.F = {f: np.full(face_shape(self.grid, f), self.is_shadowed(f))
                      for f in faces_of(self.grid)}
        for f in faces_of(self.grid):
            shp = face_shape(self.grid, f)
            for name, masks in (("G", self.G), ("F", self.F)):
                if f not in masks:
                    raise GridMismatch(f"{name} mask missing for face {f}")
                masks[f] = np.asarray(masks[f], dtype=bool)
                if masks[f].shape != shp:
                    raise GridMismatch(f"{name} mask for face {f} has shape "
                                       f"{masks[f].shape}, expected {shp}")
            if self.is_illuminated(f) and not self.G[f].all():
                raise PreconditionViolation(
                    f"G must contain the whole illuminated face {f}")
            if self.is_shadowed(f) and not self.F[f].all():
                raise PreconditionViolation(
                    f"F must contain the whole shadowed face {f}")

    def normal_dot_omega0(self, f: Face) -> float:
        return float(face_normal(self.grid, f) @ self.omega0.vec)

    def is_shadowed(self, f: Face) -> bool:
        return self.normal_dot_omega0(f) >= 0.0

    def is_illuminated(self, f: Face) -> bool:
        return self.normal_dot_omega0(f) <= 0.0

    def shadowed_faces(self) -> list[Face]:
        return [f for f in faces_of(self.grid) if self.is_shadowed(f)]

    def illuminated_faces(self) -> list[Face]:
        return [f for f in faces_of(self.grid) if self.is_illuminated(f)]


@dataclass
class InitialData:
    """u(0) = phi and d_t u(0) = psi on the spatial lattice."""

    phi: np.ndarray
    psi: np.ndarray

    def validate(self, grid: SpacetimeGrid):
        want = grid.shape[1:]
        if np.shape(self.phi) != want or np.shape(self.psi) != want:
            raise GridMismatch(f"initial data shapes {np.shape(self.phi)}, "
                               f"{np.shape(self.psi)} do not match {want}")

    @classmethod
    def zero(cls, grid: SpacetimeGrid) -> "InitialData":
        shape = grid.shape[1:]
        return cls(np.zeros(shape), np.zeros(shape))


@dataclass
class DirichletData:
    """Trace values on each lateral face, shape (n_t, *face_shape)."""

    values: dict[Face, np.ndarray]

    @classmethod
    def zero(cls, grid: SpacetimeGrid) -> "DirichletData":
        return cls({f: np.zeros((grid.n_t,) + face_shape(grid, f))
                    for f in faces_of(grid)})

    @classmethod
    def from_callable(cls, grid: SpacetimeGrid, fn) -> "DirichletData":
        """fn maps stacked spacetime points (..., dim) to trace values."""
        return cls({f: fn(face_points(grid, f)) for f in faces_of(grid)})

    def validate(self, grid: SpacetimeGrid):
        for f in faces_of(grid):
            if f not in self.values:
                raise GridMismatch(f"missing Dirichlet data for face {f}")
            want = (grid.n_t,) + face_shape(grid, f)
            if self.values[f].shape != want:
                raise GridMismatch(f"Dirichlet data for face {f} has shape "
                                   f"{self.values[f].shape}, expected {want}")

    def check_compatibility(self, grid: SpacetimeGrid, init: InitialData,
                            tol: float = 1e-10) -> float:
        """Mismatch between f(0, .) and phi restricted to each face."""
        worst = 0.0
        for f, vals in self.values.items():
            worst = max(worst, float(np.abs(vals[0] - init.phi[face_slice(grid, f)]).max()))
        return worst

    def max_time_jump(self) -> float:
        return max(float(np.abs(np.diff(v, axis=0)).max()) for v in self.values.values())


@dataclass
class WaveState:
    """A solved (or externally supplied) spacetime field with scheme metadata."""

    grid: SpacetimeGrid
    samples: np.ndarray
    cfl: float | None = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_field(cls, f: ScalarField) -> "WaveState":
        return cls(f.grid, f.samples)

    def as_field(self) -> ScalarField:
        return ScalarField(self.grid, self.samples, check=False)


@dataclass
class LambdaData:
    """The input-output data: Neumann trace on G plus the final-time snapshot."""

    regions: BoundaryRegions
    neumann: dict[Face, np.ndarray]
    final_u: np.ndarray
    final_dtu: np.ndarray | None = None
    probe_id: str = ""

    @property
    def grid(self) -> SpacetimeGrid:
        return self.regions.grid


def _interior(grid: SpacetimeGrid) -> tuple:
    return tuple(slice(1, -1) for _ in range(grid.n_spatial))


def _shifted(sl: list, axis0: int, lo: int, hi: int | None) -> tuple:
    out = list(sl)
    out[axis0] = slice(lo, hi)
    return tuple(out)


def solve_ibvp(A: CovectorField, q: ScalarField | None, init: InitialData,
               bc: DirichletData, source: ScalarField | None = None,
               cfl_max: float = 0.9, compat_tol: float = 1e-8) -> WaveState:
    """March the explicit scheme across all time levels.

    Raises CflViolation when dt * sqrt(sum dx_i^-2) exceeds cfl_max,
    GridMismatch for inconsistent inputs, and NonfiniteState (with the step
    index) if the state leaves float range.
    """
    grid = A.grid
    if q is not None:
        require_same_grid(A, q)
    if source is not None:
        require_same_grid(A, source)
    init.validate(grid)
    bc.validate(grid)
    if grid.T <= grid.diameter:
        raise PreconditionViolation(
            f"solver requires T > diam(Omega); got T = {grid.T}, diam = {grid.diameter:.6g}")
    cfl = grid.cfl_number()
    if cfl > cfl_max + 1e-12:
        raise CflViolation(f"CFL number {cfl:.4f} exceeds {cfl_max}")
    mismatch = bc.check_compatibility(grid, init)
    if mismatch > compat_tol:
        raise PreconditionViolation(
            f"Dirichlet data disagrees with phi on the boundary by {mismatch:.3e}")

    dt = grid.dt
    dx = grid.dx
    qt = effective_potential(A, q).samples
    a0 = A.time_component.samples
    aj = [c.samples for c in A.spatial_components]
    g = None if source is None else source.samples

    dtype = np.result_type(init.phi, init.psi, qt, a0,
                           *(v for v in bc.values.values()),
                           *( (g,) if g is not None else () ))
    dtype = np.result_type(dtype, float)
    u = np.zeros(grid.shape, dtype=dtype)
    u[0] = init.phi
    _impose_bc(grid, u, 0, bc)

    core = _interior(grid)

    def spatial_terms(level: int, w: np.ndarray):
        """(lap + 2 A.grad) w - qtilde w + g on interior nodes."""
        acc = -qt[level][core] * w[core]
        if g is not None:
            acc = acc + g[level][core]
        for ax in range(grid.n_spatial):
            up = _shifted(list(core), ax, 2, None)
            dn = _shifted(list(core), ax, 0, -2)
            acc = acc + (w[up] - 2.0 * w[core] + w[dn]) / dx[ax] ** 2
            acc = acc + aj[ax][level][core] * (w[up] - w[dn]) / dx[ax]
        return acc

    # Taylor seed: u(dt) = phi + dt psi + dt^2/2 (lap phi + 2A.grad phi
    #                                             - 2A_0 psi - qtilde phi + g)
    psi = np.asarray(init.psi, dtype=dtype)
    u[1] = u[0]
    u[1][core] = u[0][core] + dt * psi[core] + 0.5 * dt * dt * (
        spatial_terms(0, u[0]) - 2.0 * a0[0][core] * psi[core])
    _impose_bc(grid, u, 1, bc)

    inv_dt2 = 1.0 / (dt * dt)
    for m in range(1, grid.n_t - 1):
        denom = inv_dt2 + a0[m][core] / dt
        rhs = (2.0 * u[m][core] - u[m - 1][core]) * inv_dt2 \
            + a0[m][core] * u[m - 1][core] / dt + spatial_terms(m, u[m])
        u[m + 1][core] = rhs / denom
        _impose_bc(grid, u, m + 1, bc)
        if not np.isfinite(u[m + 1]).all():
            raise NonfiniteState(m + 1)

    return WaveState(grid, u, cfl=cfl,
                     meta={"scheme": "leapfrog-2", "cfl_max": cfl_max, "dt": dt})


def _impose_bc(grid: SpacetimeGrid, u: np.ndarray, level: int, bc: DirichletData):
    for f, vals in bc.values.items():
        u[level][face_slice(grid, f)] = vals[level]


def neumann_trace(state: WaveState | ScalarField, faces: list[Face] | None = None
                  ) -> dict[Face, np.ndarray]:
    """Outward normal derivative on each lateral face, one-sided 3-point."""
    grid = state.grid
    u = state.samples
    out = {}
    for f in (faces if faces is not None else faces_of(grid)):
        a, s = f
        h = grid.dx[a - 1]
        sl = [slice(None)] * grid.dim
        def at(idx):
            q = list(sl)
            q[a] = idx
            return u[tuple(q)]
        if s == 0:
            out[f] = (3.0 * at(0) - 4.0 * at(1) + at(2)) / (2.0 * h)
        else:
            out[f] = (3.0 * at(-1) - 4.0 * at(-2) + at(-3)) / (2.0 * h)
    return out


def final_time_slices(state: WaveState) -> tuple[np.ndarray, np.ndarray]:
    """u(T) and the one-sided 2nd-order d_t u(T)."""
    u = state.samples
    dt = state.grid.dt
    dtu = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * dt)
    return u[-1].copy(), dtu


def input_output_map(A: CovectorField, q: ScalarField | None, init: InitialData,
                     bc: DirichletData, regions: BoundaryRegions,
                     probe_id: str = "", **solve_kw) -> LambdaData:
    """Solve and read off (Neumann trace on G, final-time snapshot)."""
    require_same_grid(A, *( (q,) if q is not None else () ))
    if regions.grid != A.grid:
        raise GridMismatch("regions grid does not match the coefficient grid")
    state = solve_ibvp(A, q, init, bc, **solve_kw)
    g_faces = [f for f in faces_of(A.grid) if regions.G[f].any()]
    nm = neumann_trace(state, faces=g_faces)
    masked = {f: nm[f] * regions.G[f] for f in g_faces}
    final_u, final_dtu = final_time_slices(state)
    return LambdaData(regions, masked, final_u, final_dtu, probe_id=probe_id)


def lambda_difference(l1: LambdaData, l2: LambdaData) -> float:
    """Sup-norm discrepancy between two input-output data sets."""
    if l1.grid != l2.grid:
        raise GridMismatch("input-output data live on different grids")
    worst = float(np.abs(l1.final_u - l2.final_u).max())
    if l1.final_dtu is not None and l2.final_dtu is not None:
        worst = max(worst, float(np.abs(l1.final_dtu - l2.final_dtu).max()))
    for f in l1.neumann:
        worst = max(worst, float(np.abs(l1.neumann[f] - l2.neumann[f]).max()))
    return worst


# ---------------------------------------------------------------------------
# Integral identity check.


def _check_vanishing(grid: SpacetimeGrid, u: np.ndarray, tol: float):
    scale = max(float(np.abs(u).max()), 1.0)
    t0 = float(np.abs(u[0]).max())
    dtu0 = float(np.abs((-3.0 * u[0] + 4.0 * u[1] - u[2])).max()) / (2.0 * grid.dt)
    lateral = 0.0
    for f in faces_of(grid):
        sl = (slice(None),) + face_slice(grid, f)
        lateral = max(lateral, float(np.abs(u[sl]).max()))
    worst = max(t0, dtu0 * grid.dt, lateral)  # dtu scaled so the tol is absolute
    if worst > tol * scale:
        raise PreconditionViolation(
            f"u must vanish at t=0 (value and velocity) and on the lateral "
            f"boundary; worst violation {worst:.3e} against scale {scale:.3e}")


def _apply_operator(grid: SpacetimeGrid, w: np.ndarray, a0, aj, qt, order: int
                    ) -> np.ndarray:
    """box w + 2 A_0 d_t w - 2 A . grad w + qtilde w with FD of given order."""
    from .fields import fd_d2

    out = fd_d2(w, 0, grid.dt, order=order)
    for ax in range(grid.n_spatial):
        out = out - fd_d2(w, 1 + ax, grid.dx[ax], order=order)
    out = out + 2.0 * a0 * fd_d1(w, 0, grid.dt, order=order)
    for ax in range(grid.n_spatial):
        out = out - 2.0 * aj[ax] * fd_d1(w, 1 + ax, grid.dx[ax], order=order)
    return out + qt * w


def greens_identity_residual(A: CovectorField, q: ScalarField | None,
                             u: ScalarField, v: ScalarField,
                             vanish_tol: float = 1e-10) -> float:
    """Residual of the integration-by-parts identity against its boundary terms.

    For u with u = 0 on the lateral boundary and u(0) = d_t u(0) = 0,

        int_Q (L u) conj(v) - int_Q u conj(L' v)
            = int_Omega [d_t u(T) conj(v(T)) - u(T) conj(d_t v(T))]
              - int_Sigma d_nu u conj(v),

    where L is the expanded operator for (A, q) and L' the one for (-A, conj q).
    The u side uses 2nd-order stencils and the v side 4th-order ones, so the
    residual decays at order 2 without telescoping cancellation.
    """
    grid = require_same_grid(A, u, v, *(() if q is None else (q,)))
    _check_vanishing(grid, u.samples, vanish_tol)

    qt = effective_potential(A, q).samples
    q_adj = None
    if q is not None:
        q_adj = ScalarField(grid, np.conj(q.samples), check=False)
    qt_adj = effective_potential(A * -1.0, q_adj).samples

    a0 = A.time_component.samples
    aj = [c.samples for c in A.spatial_components]
    lu = _apply_operator(grid, u.samples, a0, aj, qt, order=2)
    lv = _apply_operator(grid, v.samples, -a0, [-x for x in aj], qt_adj, order=4)

    side_a = _integrate(grid, lu * np.conj(v.samples))
    side_b = _integrate(grid, u.samples * np.conj(lv))

    dt = grid.dt
    dtu_T = (3.0 * u.samples[-1] - 4.0 * u.samples[-2] + u.samples[-3]) / (2.0 * dt)
    dtv_T = (3.0 * v.samples[-1] - 4.0 * v.samples[-2] + v.samples[-3]) / (2.0 * dt)
    final = _integrate_spatial(grid, dtu_T * np.conj(v.samples[-1])
                               - u.samples[-1] * np.conj(dtv_T))

    nm = neumann_trace(WaveState(grid, u.samples))
    lateral = 0.0 + 0.0j
    for f, tr in nm.items():
        vv = v.samples[(slice(None),) + face_slice(grid, f)]
        lateral = lateral + _integrate_face(grid, f, tr * np.conj(vv))

    rhs = final - lateral
    return abs(side_a - side_b - rhs)


def _integrate(grid: SpacetimeGrid, vals: np.ndarray):
    from .fields import integrate_grid
    return integrate_grid(grid, vals)


def _integrate_spatial(grid: SpacetimeGrid, vals: np.ndarray):
    acc = np.asarray(vals)
    for ax in range(grid.n_spatial):
        w = trapezoid_axis_weights(grid.shape[1 + ax], grid.dx[ax])
        shape = [1] * acc.ndim
        shape[ax] = w.size
        acc = acc * w.reshape(shape)
    return acc.sum()


def _integrate_face(grid: SpacetimeGrid, f: Face, vals: np.ndarray):
    a, _ = f
    spacings = [grid.dt] + [grid.dx[i - 1] for i in range(1, grid.dim) if i != a]
    acc = np.asarray(vals)
    for ax, h in enumerate(spacings):
        w = trapezoid_axis_weights(acc.shape[ax], h)
        shape = [1] * acc.ndim
        shape[ax] = w.size
        acc = acc * w.reshape(shape)
    return acc.sum()


# ---------------------------------------------------------------------------
# Gauge equivalence.


@dataclass
class Probe:
    """A named boundary excitation with zero initial data.

    trace(points) evaluates the Dirichlet values at stacked spacetime points.
    """

    probe_id: str
    trace: callable

    def dirichlet(self, grid: SpacetimeGrid) -> DirichletData:
        return DirichletData.from_callable(grid, self.trace)

    def initial(self, grid: SpacetimeGrid) -> InitialData:
        return InitialData.zero(grid)


def ramp_sine_probe(freq: float = 4.0, wavevec=None, ramp_time: float = 0.6,
                    probe_id: str = "ramp-sine") -> Probe:
    """sin(freq*t + k.x) switched on smoothly over [0, ramp_time]."""
    from .evaluators import _smoothstep

    def trace(pts):
        t = pts[..., 0]
        phase = freq * t
        if wavevec is not None:
            for j, kj in enumerate(wavevec):
                phase = phase + kj * pts[..., 1 + j]
        return _smoothstep(t / ramp_time, 0) * np.sin(phase)

    return Probe(probe_id, trace)


@dataclass
class GaugeReport:
    """Result of comparing two gauge-equivalent systems probe by probe."""

    state_diffs: list[float]
    lambda_diffs: list[float]
    state_orders: list[float]
    lambda_orders: list[float]
    grids: list[tuple[int, ...]]

    @property
    def finest_state_diff(self) -> float:
        return self.state_diffs[-1]

    @property
    def finest_lambda_diff(self) -> float:
        return self.lambda_diffs[-1]


def gauge_equivalence_check(build_coeffs, build_gauge, probe: Probe,
                            omega0: Direction, grid: SpacetimeGrid,
                            refinements: int = 2) -> GaugeReport:
    """Solve the pair (A, q) and (A + grad Phi, q) and compare u and Lambda.

    build_coeffs(grid) -> (A, q); build_gauge(grid) -> GaugeFunction.  Both are
    re-sampled on each refined grid, so closed-form fields are expected.

    With A2 = A + grad Phi the difference A2 - A1 equals grad Phi, so the
    conjugation identity pairs the solutions as u1 = e^Phi u2 (the factor
    attaches to the solution of the shifted system).  The report lists
    sup|u1 - e^Phi u2| and the Lambda discrepancy per grid along with observed
    convergence orders between consecutive grids.
    """
    state_diffs: list[float] = []
    lambda_diffs: list[float] = []
    shapes = []
    g = grid
    for level in range(refinements + 1):
        A, q = build_coeffs(g)
        gauge = build_gauge(g)
        A2 = gauge_transform(A, gauge)
        regions = BoundaryRegions(omega0, g)
        init = probe.initial(g)
        bc = probe.dirichlet(g)
        l1 = input_output_map(A, q, init, bc, regions, probe_id=probe.probe_id)
        l2 = input_output_map(A2, q, init, bc, regions, probe_id=probe.probe_id)
        s1 = solve_ibvp(A, q, init, bc)
        s2 = solve_ibvp(A2, q, init, bc)
        factor = np.exp(gauge.phi.samples)
        state_diffs.append(float(np.abs(s1.samples - factor * s2.samples).max()))
        lambda_diffs.append(lambda_difference(l1, l2))
        shapes.append(g.shape)
        if level < refinements:
            g = g.refined(2)
    state_orders = [float(np.log2(a / b)) if b > 0 else np.inf
                    for a, b in zip(state_diffs, state_diffs[1:])]
    lambda_orders = [float(np.log2(a / b)) if b > 0 else np.inf
                     for a, b in zip(lambda_diffs, lambda_diffs[1:])]
    return GaugeReport(state_diffs, lambda_diffs, state_orders, lambda_orders, shapes)


def energy_series(state: WaveState, q: ScalarField | None = None) -> np.ndarray:
    """Discrete field energy per interior time level (centered velocities)."""
    grid = state.grid
    u = state.samples
    dt = grid.dt
    out = np.empty(grid.n_t - 2)
    qs = None if q is None else q.samples
    for m in range(1, grid.n_t - 1):
        vel = (u[m + 1] - u[m - 1]) / (2.0 * dt)
        dens = np.abs(vel) ** 2
        for ax in range(grid.n_spatial):
            dens = dens + np.abs(fd_d1(u[m], ax, grid.dx[ax], order=2)) ** 2
        if qs is not None:
            dens = dens + qs[m] * np.abs(u[m]) ** 2
        out[m - 1] = 0.5 * _integrate_spatial(grid, dens).real
    return out
