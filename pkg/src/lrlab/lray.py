"""Light ray transform, transverse transform, and Fourier-slice machinery.

The canonical spacetime ray direction is (1, omega): rays advance by
z + s*(1, omega).  Statements phrased for (1, -omega) are obtained by negating
omega at the call site.  All hyperplane constructions live in the linear
subspace (1, omega)-perp of R^{1+n} with its induced Lebesgue measure; the
factor sqrt(2) relating hyperplane Fourier transforms to ambient ones is the
Jacobian of the decomposition z = k + s*(1, omega).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import json

import numpy as np

from .errors import GridMismatch, IllConditioned, NotSpaceLike, SliceViolation
from .fields import CovectorField, ScalarField, SpacetimeGrid
from .go import Direction
from .quadrature import integrate_rays


@dataclass(frozen=True)
class Ray:
    """A light ray through `base` with spacetime direction (1, omega)."""

    base: tuple
    omega: Direction

    def direction_spacetime(self) -> np.ndarray:
        return np.concatenate(([1.0], self.omega.vec))

    def point(self, s: float) -> np.ndarray:
        return np.asarray(self.base, dtype=float) + s * self.direction_spacetime()


def _field_step(grid: SpacetimeGrid) -> float:
    return float(min(grid.spacings)) / 3.0


def _support_box(F) -> np.ndarray:
    box = F.effective_support_box() if hasattr(F, "effective_support_box") \
        else F.support_box
    if box is None:
        box = F.grid.bounds
    return np.asarray(box, dtype=float)


def light_ray_transform(F: CovectorField, ray: Ray, step: float | None = None):
    """Full-line integral of (1, omega).F along the ray."""
    return light_ray_transform_batch(F, np.asarray(ray.base, dtype=float)[None, :],
                                     ray.omega, step=step)[0]


def light_ray_transform_batch(F: CovectorField, bases: np.ndarray,
                              omega: Direction, step: float | None = None
                              ) -> np.ndarray:
    """light_ray_transform at many base points sharing one direction."""
    grid = F.grid
    if omega.n != grid.n_spatial:
        raise GridMismatch("direction dimension does not match the field")
    w = np.concatenate(([1.0], omega.vec))
    weights = np.concatenate(([1.0], omega.vec))
    step = _field_step(grid) if step is None else float(step)
    rule = "gauss" if F.has_analytic else "trapezoid"

    def integrand(pts):
        comps = F.evaluate_all(pts)
        return sum(weights[i] * comps[i] for i in range(len(comps)))

    return integrate_rays(integrand, bases, w, _support_box(F), step, rule=rule)


def scalar_line_transform_batch(g: ScalarField, bases: np.ndarray,
                                omega: Direction, step: float | None = None
                                ) -> np.ndarray:
    """Plain full-line integrals of a scalar field along (1, omega) rays."""
    grid = g.grid
    w = np.concatenate(([1.0], omega.vec))
    step = _field_step(grid) if step is None else float(step)
    rule = "gauss" if g.analytic is not None else "trapezoid"
    box = g.support_box if g.support_box is not None else grid.bounds

    def integrand(pts):
        return g.evaluate(pts)

    return integrate_rays(integrand, bases, w, np.asarray(box, float), step, rule=rule)


# ---------------------------------------------------------------------------
# Two-forms.


class TwoFormField:
    """Antisymmetric (1+n) x (1+n) matrix of scalar fields h_ij.

    Built either from explicit entries (antisymmetry verified to 1e-12) or as
    the curvature of a 1-form F with the index convention
    h_ij = d_j F_i - d_i F_j.
    """

    def __init__(self, entries: list[list[ScalarField | None]],
                 check: bool = True):
        dims = len(entries)
        self.grid = None
        for row in entries:
            for e in row:
                if e is not None:
                    self.grid = e.grid
                    break
            if self.grid is not None:
                break
        if self.grid is None:
            raise GridMismatch("two-form needs at least one non-None entry")
        if dims != self.grid.dim or any(len(r) != dims for r in entries):
            raise GridMismatch("two-form entry table must be (1+n) x (1+n)")
        zero = ScalarField.zeros(self.grid)
        self.entries = [[e if e is not None else zero for e in row]
                        for row in entries]
        if check:
            for i in range(dims):
                for j in range(dims):
                    a = self.entries[i][j].samples
                    b = self.entries[j][i].samples
                    scale = max(float(np.abs(a).max()), 1.0)
                    if float(np.abs(a + b).max()) > 1e-12 * scale:
                        raise GridMismatch(
                            f"two-form entries ({i},{j}) and ({j},{i}) are not "
                            "antisymmetric")

    @property
    def dim(self) -> int:
        return self.grid.dim

    @classmethod
    def from_covector(cls, F: CovectorField, fd_order: int = 4) -> "TwoFormField":
        d = F.grid.dim
        partial = [[F.components[i].derivative(j, fd_order=fd_order)
                    for j in range(d)] for i in range(d)]
        entries: list[list[ScalarField | None]] = [[None] * d for _ in range(d)]
        for i in range(d):
            for j in range(d):
                entries[i][j] = partial[i][j] - partial[j][i]
        return cls(entries, check=False)

    def has_analytic(self) -> bool:
        return all(e.analytic is not None for row in self.entries for e in row)

    def effective_support_box(self) -> np.ndarray:
        boxes = [e.support_box for row in self.entries for e in row
                 if e.support_box is not None]
        if not boxes:
            return np.asarray(self.grid.bounds, dtype=float)
        boxes = np.asarray(boxes, dtype=float)
        return np.stack([boxes[:, :, 0].min(axis=0), boxes[:, :, 1].max(axis=0)],
                        axis=-1)

    def contraction(self, w: np.ndarray, eta: np.ndarray):
        """The scalar field sum_ij w_i eta_j h_ij as (evaluate-fn, support box)."""
        d = self.dim
        coeffs = {}
        for i in range(d):
            for j in range(d):
                c = float(w[i]) * float(eta[j])
                if c != 0.0 and i != j:
                    coeffs[(i, j)] = coeffs.get((i, j), 0.0) + c

        def evaluate(pts):
            acc = None
            for (i, j), c in coeffs.items():
                v = c * self.entries[i][j].evaluate(pts)
                acc = v if acc is None else acc + v
            if acc is None:
                return np.zeros(np.asarray(pts).shape[:-1])
            return acc

        return evaluate


def transverse_ray_transform(h: TwoFormField, ray: Ray, eta, step: float | None = None):
    """Integral of sum_ij omega^i eta_j h_ij along the ray (omega^0 = 1)."""
    eta = np.asarray(eta, dtype=float)
    w = ray.direction_spacetime()
    if eta.shape != w.shape:
        raise GridMismatch("eta must be a spacetime vector")
    evaluate = h.contraction(w, eta)
    step = _field_step(h.grid) if step is None else float(step)
    rule = "gauss" if h.has_analytic() else "trapezoid"
    bases = np.asarray(ray.base, dtype=float)[None, :]
    return integrate_rays(evaluate, bases, w, h.effective_support_box(), step,
                          rule=rule)[0]


# ---------------------------------------------------------------------------
# Hyperplane frames and Fourier slices.


def _orthonormal_complement(*seeds: np.ndarray) -> np.ndarray:
    """Rows: an orthonormal basis of the complement of the orthonormal seeds."""
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    d = seeds[0].size
    target = d - len(seeds)
    basis: list[np.ndarray] = []
    for j in range(d):
        v = np.zeros(d)
        v[j] = 1.0
        for b in (*seeds, *basis):
            v = v - (v @ b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
        if len(basis) == target:
            break
    return np.asarray(basis)


@dataclass
class HyperplaneFrame:
    """Orthonormal basis of (1, omega)-perp with a sampling lattice.

    The lattice covers the projection of `box` onto the hyperplane with
    spacing `deltas[i]` along basis row i; lattice points are hyperplane
    points k = sum c_i b_i.
    """

    omega: Direction
    basis: np.ndarray          # (n, 1+n) rows
    offsets: list[np.ndarray]  # per-basis 1-D coordinate arrays
    delta: float               # spacing along basis row 0
    deltas: np.ndarray | None = None   # per-axis spacings; None = uniform

    @classmethod
    def build(cls, omega: Direction, box, zeta_max: float = 0.0,
              delta: float | None = None, margin: float = 0.5,
              align=None, transverse_delta: float | None = None
              ) -> "HyperplaneFrame":
        """Lattice sized for targets up to |zeta| = zeta_max over `box`.

        With `align` (a spacetime vector orthogonal to (1, omega)), basis
        row 0 points along it and `transverse_delta` may coarsen the
        remaining axes: the Fourier phase then varies only along row 0, so
        the transverse spacing is limited by the integrand's smoothness
        rather than by zeta_max.
        """
        u = np.concatenate(([1.0], omega.vec))
        u = u / np.linalg.norm(u)
        if align is None:
            basis = _orthonormal_complement(u)
        else:
            v0 = np.asarray(align, dtype=float)
            v0 = v0 - (v0 @ u) * u
            norm = np.linalg.norm(v0)
            if norm < 1e-10:
                raise SliceViolation(
                    "frame alignment vector is parallel to the ray direction")
            v0 = v0 / norm
            basis = np.concatenate([v0[None, :],
                                    _orthonormal_complement(u, v0)], axis=0)
        if delta is None:
            delta = np.pi / (float(zeta_max) + 16.0)
        deltas = np.full(len(basis), float(delta))
        if transverse_delta is not None:
            deltas[1:] = float(transverse_delta)
        box = np.asarray(box, dtype=float)
        d = box.shape[0]
        corners = np.stack(np.meshgrid(*[box[i] for i in range(d)],
                                       indexing="ij"), axis=-1).reshape(-1, d)
        offsets = []
        for b, db in zip(basis, deltas):
            proj = corners @ b
            lo, hi = proj.min() - margin, proj.max() + margin
            m = int(np.ceil((hi - lo) / db)) + 1
            offsets.append(lo + db * np.arange(m))
        return cls(omega, basis, offsets, float(delta), deltas)

    def __post_init__(self):
        u = np.concatenate(([1.0], self.omega.vec))
        u = u / np.linalg.norm(u)
        for b in self.basis:
            if abs(b @ u) > 1e-12:
                raise SliceViolation("frame basis vector not orthogonal to the ray")
        gram = self.basis @ self.basis.T
        if float(np.abs(gram - np.eye(len(self.basis))).max()) > 1e-12:
            raise SliceViolation("frame basis is not orthonormal")

    @property
    def n(self) -> int:
        return len(self.basis)

    def lattice_points(self) -> np.ndarray:
        """All lattice points stacked as (N, 1+n)."""
        mesh = np.meshgrid(*self.offsets, indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=-1)  # (N, n)
        return coords @ self.basis

    def cell_measure(self) -> float:
        if self.deltas is not None:
            return float(np.prod(self.deltas))
        return self.delta ** self.n

    def coordinates_of(self, zeta: np.ndarray) -> np.ndarray:
        return self.basis @ np.asarray(zeta, dtype=float)


def _check_on_plane(zeta: np.ndarray, omega: Direction, tol: float = 1e-10):
    w = np.concatenate(([1.0], omega.vec))
    if abs(float(np.dot(zeta, w))) > tol * max(1.0, float(np.linalg.norm(zeta))):
        raise SliceViolation(
            f"zeta {zeta} is not orthogonal to the ray direction (1, omega)")


@dataclass
class ConeSamples:
    """Sampled Fourier data on the light-cone-orthogonal slices.

    Each entry couples a frequency zeta with the ray direction omega used to
    reach it and the sampled value (complex scalar or small complex array).
    Optional labels carry family bookkeeping (tilt axis k, tilt angle alpha).
    """

    entries: list[dict] = field(default_factory=list)

    def add(self, zeta, omega: Direction, value, **labels):
        zeta = np.asarray(zeta, dtype=float)
        _check_on_plane(zeta, omega)
        e = {"zeta": zeta, "omega": omega, "value": np.asarray(value)}
        e.update(labels)
        self.entries.append(e)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def for_zeta(self, zeta, tol: float = 1e-9) -> list[dict]:
        zeta = np.asarray(zeta, dtype=float)
        return [e for e in self.entries
                if np.linalg.norm(e["zeta"] - zeta) <= tol]

    def write(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entries:
                v = np.asarray(e["value"], dtype=complex)
                rec = {"zeta": [float(c) for c in e["zeta"]],
                       "omega": [float(c) for c in e["omega"].vec],
                       "shape": list(v.shape),
                       "re": np.real(v).ravel().tolist(),
                       "im": np.imag(v).ravel().tolist()}
                for key in ("k", "alpha"):
                    if key in e:
                        rec[key] = e[key]
                f.write(json.dumps(rec) + "\n")

    @classmethod
    def read(cls, path: str) -> "ConeSamples":
        out = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                val = (np.asarray(rec["re"]) + 1j * np.asarray(rec["im"]))
                val = val.reshape(rec["shape"]) if rec["shape"] else val[0]
                labels = {k: rec[k] for k in ("k", "alpha") if k in rec}
                out.add(np.asarray(rec["zeta"]),
                        Direction.from_vector(rec["omega"]), val, **labels)
        return out


def fourier_slice(F: CovectorField | ScalarField, frame: HyperplaneFrame,
                  zetas, step: float | None = None) -> ConeSamples:
    """Hyperplane Fourier transform of the line transform at the given zetas.

    Returns sqrt(2)-scaled values: for each zeta orthogonal to (1, omega) the
    value equals the ambient Fourier transform of the ray integrand at zeta.
    """
    pts = frame.lattice_points()
    if isinstance(F, CovectorField):
        line = light_ray_transform_batch(F, pts, frame.omega, step=step)
    else:
        line = scalar_line_transform_batch(F, pts, frame.omega, step=step)
    meas = frame.cell_measure()
    out = ConeSamples()
    for z in zetas:
        z = np.asarray(z, dtype=float)
        _check_on_plane(z, frame.omega)
        phase = np.exp(-1j * (pts @ z))
        val = np.sqrt(2.0) * meas * np.sum(line * phase)
        out.add(z, frame.omega, val)
    return out


def project_to_hyperplane(point, omega: Direction):
    """Decompose a spacetime point as k + s*(1, -omega) with k in (1,-omega)-perp.

    Returns (k, s) with k = ((t + x.omega)/2, x + ((t - x.omega)/2) omega) and
    s = (t - x.omega)/2.
    """
    p = np.asarray(point, dtype=float)
    t, x = p[0], p[1:]
    xw = float(x @ omega.vec)
    s = (t - xw) / 2.0
    k = np.concatenate(([(t + xw) / 2.0], x + s * omega.vec))
    return k, s


def nonlinear_slice_identity(A: CovectorField, omega: Direction, xi,
                             step: float | None = None,
                             frame: HyperplaneFrame | None = None):
    """Two routes to the same nonlinear Fourier-slice value.

    J integrates wtilde.A(z) e^{-i xi.z} exp(int_0^inf wtilde.A(z + s wdir) ds)
    over the whole spacetime grid, with wtilde = wdir = (1, -omega).  The rhs
    evaluates -sqrt(2) FT_perp(1 - exp(full-line integral))(xi) on a hyperplane
    lattice.  Both are returned; they agree up to quadrature error.
    """
    xi = np.asarray(xi, dtype=float)
    neg = Direction.from_vector(-omega.vec)
    _check_on_plane(xi, neg)
    grid = A.grid
    step = _field_step(grid) if step is None else float(step)
    wdir = np.concatenate(([1.0], -omega.vec))
    weights = wdir

    def contraction(pts):
        comps = A.evaluate_all(pts)
        return sum(weights[i] * comps[i] for i in range(len(comps)))

    # Route 1: spacetime quadrature of the conjugated integrand.
    flat = grid.meshpoints().reshape(-1, grid.dim)
    half = integrate_rays(contraction, flat, wdir, _support_box(A), step,
                          rule="gauss" if A.has_analytic else "trapezoid",
                          half_line=True)
    integrand = (contraction(flat) * np.exp(half)
                 * np.exp(-1j * (flat @ xi))).reshape(grid.shape)
    from .fields import integrate_grid
    J = integrate_grid(grid, integrand)

    # Route 2: hyperplane transform of 1 - exp(full-line integral).
    if frame is None:
        frame = HyperplaneFrame.build(neg, _support_box(A),
                                      zeta_max=float(np.linalg.norm(xi)))
    lat = frame.lattice_points()
    full = integrate_rays(contraction, lat, wdir, _support_box(A), step,
                          rule="gauss" if A.has_analytic else "trapezoid")
    vals = 1.0 - np.exp(full)
    phase = np.exp(-1j * (lat @ xi))
    rhs = -np.sqrt(2.0) * frame.cell_measure() * np.sum(vals * phase)
    return J, rhs


# ---------------------------------------------------------------------------
# Direction families and the hhat linear system.


@dataclass
class FamilyMember:
    omega: Direction
    k: int          # tilt axis index (3..n), 0 for the base direction
    alpha: float    # tilt angle


@dataclass
class DirectionFamily:
    """The rotated tilt family attached to a space-like frequency zeta.

    With zeta = (tau, xi), |xi| = r, the base angle phi satisfies
    sin(phi) = -tau/r.  The orthogonal matrix A maps e2 to xi/r and e1 as
    close to the reference direction omega0 as possible.  Members are
    omega = A(cos a cos phi e1 + sin phi e2 + sin a cos phi ek); every member
    satisfies zeta . (1, omega) = 0.
    """

    zeta: np.ndarray
    A: np.ndarray
    phi: float
    members: list[FamilyMember]

    @property
    def base(self) -> FamilyMember:
        return self.members[0]


def _space_like_parts(zeta: np.ndarray):
    zeta = np.asarray(zeta, dtype=float)
    tau, xi = float(zeta[0]), zeta[1:]
    r = float(np.linalg.norm(xi))
    if r == 0.0 or abs(tau) >= r:
        raise NotSpaceLike(f"zeta = {zeta} is not space-like (|tau| < |xi| required)")
    return tau, xi, r


def _rotation_to(xi_hat: np.ndarray, omega0: np.ndarray | None) -> np.ndarray:
    """Orthogonal A with A e2 = xi_hat and A e1 nearest the reference omega0."""
    n = xi_hat.size
    cols = [None] * n
    cols[1] = xi_hat
    if omega0 is None:
        omega0 = np.zeros(n)
        omega0[0] = 1.0
    v = omega0 - (omega0 @ xi_hat) * xi_hat
    norm = np.linalg.norm(v)
    if norm < 1e-8:
        # reference parallel to xi_hat: pick the flattest coordinate direction
        j = int(np.argmin(np.abs(xi_hat)))
        v = np.zeros(n)
        v[j] = 1.0
        v = v - (v @ xi_hat) * xi_hat
        norm = np.linalg.norm(v)
    cols[0] = v / norm
    done = [cols[0], cols[1]]
    idx = 2
    for j in range(n):
        if idx >= n:
            break
        v = np.zeros(n)
        v[j] = 1.0
        for b in done:
            v = v - (v @ b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            cols[idx] = v / norm
            done.append(cols[idx])
            idx += 1
    return np.stack(cols, axis=1)


DEFAULT_TILT_ANGLES = (-0.9, -0.45, 0.45, 0.9)


def direction_family(zeta, omega0=None, alphas=DEFAULT_TILT_ANGLES
                     ) -> DirectionFamily:
    """Build the admissible base + tilted directions for a space-like zeta."""
    zeta = np.asarray(zeta, dtype=float)
    tau, xi, r = _space_like_parts(zeta)
    n = xi.size
    if n < 3:
        raise NotSpaceLike("the tilt family needs spatial dimension n >= 3")
    xi_hat = xi / r
    if omega0 is not None:
        omega0 = np.asarray(omega0, dtype=float)
    A = _rotation_to(xi_hat, omega0)
    sin_phi = -tau / r
    cos_phi = float(np.sqrt(1.0 - sin_phi * sin_phi))
    phi = float(np.arcsin(sin_phi))
    e1, e2 = A[:, 0], A[:, 1]
    members = [FamilyMember(Direction.from_vector(cos_phi * e1 + sin_phi * e2),
                            k=0, alpha=0.0)]
    for k in range(3, n + 1):
        ek = A[:, k - 1]
        for a in alphas:
            vec = (np.cos(a) * cos_phi * e1 + sin_phi * e2
                   + np.sin(a) * cos_phi * ek)
            members.append(FamilyMember(Direction.from_vector(vec), k=k, alpha=a))
    fam = DirectionFamily(zeta, A, phi, members)
    for m in fam.members:
        _check_on_plane(zeta, m.omega, tol=1e-10)
    return fam


def transverse_slice_data(h: TwoFormField, family: DirectionFamily,
                          zetas=None, step: float | None = None,
                          zeta_max: float | None = None) -> ConeSamples:
    """Forward data for the hhat system: per direction, the vector over the
    standard basis eta of sqrt(2) FT_perp(I h(., omega, eta))(zeta).

    `zetas` defaults to the family's own zeta; positive multiples r*zeta may
    be passed to reuse the same lattice and ray data for the whole ray class.
    """
    d = h.dim
    if zetas is None:
        zetas = [family.zeta]
    zetas = [np.asarray(z, dtype=float) for z in zetas]
    if zeta_max is None:
        zeta_max = max(float(np.linalg.norm(z)) for z in zetas)
    box = h.effective_support_box()
    out = ConeSamples()
    rule = "gauss" if h.has_analytic() else "trapezoid"
    for m in family.members:
        frame = HyperplaneFrame.build(m.omega, box, zeta_max=zeta_max)
        pts = frame.lattice_points()
        w = np.concatenate(([1.0], m.omega.vec))
        st = _field_step(h.grid) if step is None else float(step)
        rays = []
        for j in range(d):
            eta = np.zeros(d)
            eta[j] = 1.0
            rays.append(integrate_rays(h.contraction(w, eta), pts, w, box, st,
                                       rule=rule))
        rays = np.stack(rays, axis=0)  # (d, N)
        meas = frame.cell_measure()
        for z in zetas:
            _check_on_plane(z, m.omega)
            phase = np.exp(-1j * (pts @ z))
            vals = np.sqrt(2.0) * meas * (rays @ phase)
            out.add(z, m.omega, vals, k=m.k, alpha=m.alpha)
    return out


def _pair_index(d: int):
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    return pairs, {p: idx for idx, p in enumerate(pairs)}


def _contraction_rows(w: np.ndarray, d: int, pairs) -> np.ndarray:
    """Rows R[j] with R[j] . theta = sum_i w_i h_ij for antisymmetric h."""
    rows = np.zeros((d, len(pairs)))
    for j in range(d):
        for idx, (p, q) in enumerate(pairs):
            if q == j:
                rows[j, idx] += w[p]       # h_pj with p < j: +theta
            elif p == j:
                rows[j, idx] -= w[q]       # h_qj with q > j: -theta
    return rows


@dataclass
class HhatSolution:
    """Recovered Fourier transform of the curvature at one frequency."""

    zeta: np.ndarray
    matrix: np.ndarray          # (1+n)x(1+n) complex, exactly antisymmetric
    residual: float             # rms residual of the overdetermined system
    cond: float                 # conditioning of the reduced system
    asymmetry: float            # pre-enforcement asymmetry measure


def solve_hhat_system(samples: ConeSamples, zeta, cond_limit: float = 1e8
                      ) -> HhatSolution:
    """Recover the antisymmetric matrix hhat(zeta) from tilt-family data.

    Stage 1 separates, for each eta component j and tilt axis k, the data's
    alpha-dependence D(alpha) = c_j + cos(alpha) p_j + sin(alpha) r_jk.
    Stage 2 identifies c, p, r_k with contractions of hhat against the
    spacetime vectors (1, sin phi Ae2), (0, cos phi Ae1), (0, cos phi Aek)
    and solves the stacked linear system over the antisymmetric unknowns.
    """
    zeta = np.asarray(zeta, dtype=float)
    tau, xi, r = _space_like_parts(zeta)
    entries = samples.for_zeta(zeta)
    if not entries:
        raise SliceViolation(f"no samples available for zeta = {zeta}")
    d = zeta.size
    n = d - 1

    ks = sorted({e["k"] for e in entries if e.get("k", 0) >= 3})
    if not ks:
        raise SliceViolation("samples carry no tilted directions (k >= 3)")
    for k in ks:
        alphas = {e["alpha"] for e in entries if e.get("k") == k}
        if len(alphas) < 2:
            raise SliceViolation(
                f"tilt axis {k} needs >= 2 distinct alpha values, got {sorted(alphas)}")

    # Stage 1: joint least-squares fit over the alpha family, per eta index.
    fit_rows = []
    fit_data = []
    n_unknown = 2 + len(ks)      # c, p, r_k...
    col_of_k = {k: 2 + i for i, k in enumerate(ks)}
    for e in entries:
        k, a = e.get("k", 0), e.get("alpha", 0.0)
        row = np.zeros(n_unknown)
        row[0] = 1.0
        row[1] = np.cos(a)
        if k >= 3:
            row[col_of_k[k]] = np.sin(a)
        fit_rows.append(row)
        fit_data.append(np.asarray(e["value"], dtype=complex))
    M = np.asarray(fit_rows)
    rhs = np.stack(fit_data, axis=0)           # (#entries, d)
    sv = np.linalg.svd(M, compute_uv=False)
    cond_fit = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if cond_fit > cond_limit:
        raise IllConditioned(
            f"alpha-separation fit is ill-conditioned (cond {cond_fit:.3e}) "
            f"for alphas {sorted({e.get('alpha') for e in entries})}")
    coef, *_ = np.linalg.lstsq(M, rhs, rcond=None)   # (n_unknown, d)

    # Stage 2: contraction vectors for each separated coefficient.
    A = _rotation_to(xi / r, None)
    # Recover the family's A from the sample omegas instead when available:
    base = [e for e in entries if e.get("k", 0) == 0]
    sin_phi = -tau / r
    cos_phi = float(np.sqrt(1.0 - sin_phi ** 2))
    if base:
        # base omega = cos phi Ae1 + sin phi Ae2 determines Ae1
        w0 = base[0]["omega"].vec
        ae2 = xi / r
        ae1 = (w0 - sin_phi * ae2) / cos_phi
        A[:, 0] = ae1 / np.linalg.norm(ae1)
        A[:, 1] = ae2
        # re-orthonormalize the remaining columns against the fixed two
        for c in range(2, n):
            v = A[:, c]
            for b in range(c):
                v = v - (v @ A[:, b]) * A[:, b]
            A[:, c] = v / np.linalg.norm(v)
    # Tilt columns must match the sampled tilted omegas:
    for k in ks:
        tilted = [e for e in entries if e.get("k") == k]
        if tilted:
            e0 = tilted[0]
            a = e0["alpha"]
            res = (e0["omega"].vec - np.cos(a) * cos_phi * A[:, 0]
                   - sin_phi * A[:, 1]) / np.sin(a) / cos_phi
            A[:, k - 1] = res / np.linalg.norm(res)

    pairs, _ = _pair_index(d)
    w_c = np.concatenate(([1.0], sin_phi * A[:, 1]))
    w_p = np.concatenate(([0.0], cos_phi * A[:, 0]))
    rows = [_contraction_rows(w_c, d, pairs), _contraction_rows(w_p, d, pairs)]
    data = [coef[0], coef[1]]
    for k in ks:
        w_r = np.concatenate(([0.0], cos_phi * A[:, k - 1]))
        rows.append(_contraction_rows(w_r, d, pairs))
        data.append(coef[col_of_k[k]])
    big = np.concatenate(rows, axis=0)
    vec = np.concatenate(data, axis=0)
    sv = np.linalg.svd(big, compute_uv=False)
    cond_sys = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if cond_sys > cond_limit:
        raise IllConditioned(
            f"hhat contraction system is ill-conditioned (cond {cond_sys:.3e})")
    theta, res2, *_ = np.linalg.lstsq(big, vec, rcond=None)
    fitted = big @ theta
    residual = float(np.linalg.norm(fitted - vec) / np.sqrt(len(vec)))

    H = np.zeros((d, d), dtype=complex)
    for idx, (p, q) in enumerate(pairs):
        H[p, q] = theta[idx]
        H[q, p] = -theta[idx]

    # Pre-enforcement diagnostic: solve the same data over general off-diagonal
    # unknowns (no antisymmetry pairing).  When that system has full rank, the
    # drift |H + H^T| of its solution measures how antisymmetric the data
    # itself is; rank-deficient geometries (tau = 0 leaves the time column
    # underdetermined) report nan.
    offdiag = [(i, j) for i in range(d) for j in range(d) if i != j]
    col_of = {p: idx for idx, p in enumerate(offdiag)}
    ws = [w_c, w_p] + [np.concatenate(([0.0], cos_phi * A[:, k - 1])) for k in ks]
    free_rows = np.zeros((len(ws) * d, len(offdiag)))
    for m, w in enumerate(ws):
        for j in range(d):
            for i in range(d):
                if i != j:
                    free_rows[m * d + j, col_of[(i, j)]] = w[i]
    rank = np.linalg.matrix_rank(free_rows, tol=1e-10)
    if rank == len(offdiag):
        free_theta, *_ = np.linalg.lstsq(free_rows, vec, rcond=None)
        H_pre = np.zeros((d, d), dtype=complex)
        for (i, j), idx in col_of.items():
            H_pre[i, j] = free_theta[idx]
        asym = float(np.abs(H_pre + H_pre.T).max())
    else:
        asym = float("nan")
    return HhatSolution(zeta, H, residual, max(cond_fit, cond_sys), asym)
