"""Closed-form field evaluators with exact derivatives.

The package never needs general symbolic algebra: every analytic field is
assembled from a small family of radially scaled bump profiles, 1-D ramp and
plateau profiles along a single axis, and the closure of those under sums,
scalar multiples, products, and coordinate derivatives.  Each evaluator
exposes values and derivatives up to third order at arbitrary points, which
is what the quadrature and conjugation routines need.

Coordinates are passed as a tuple of ``d`` arrays that broadcast against each
other (``d = 1 + n`` for spacetime fields, axis 0 is time).  Derivative
outputs carry the derivative axes in front: ``grad`` has shape
``(d, *shape)``, ``hess`` has ``(d, d, *shape)``.
"""

from __future__ import annotations

import numpy as np

Coords = tuple[np.ndarray, ...]


def as_coords(pts: np.ndarray | Coords, dim: int) -> Coords:
    """Split a stacked point array of shape (..., dim) into a coordinate tuple."""
    if isinstance(pts, tuple):
        if len(pts) != dim:
            raise ValueError(f"expected {dim} coordinate arrays, got {len(pts)}")
        return tuple(np.asarray(c, dtype=float) for c in pts)
    pts = np.asarray(pts, dtype=float)
    if pts.shape[-1] != dim:
        raise ValueError(f"expected points with last axis {dim}, got {pts.shape}")
    return tuple(pts[..., i] for i in range(dim))


def _broadcast(coords: Coords) -> tuple[np.ndarray, ...]:
    return tuple(np.broadcast_arrays(*coords))


class Evaluator:
    """Base class; subclasses override value and the derivative methods."""

    dim: int

    def value(self, coords: Coords) -> np.ndarray:
        raise NotImplementedError

    def grad(self, coords: Coords) -> np.ndarray:
        raise NotImplementedError

    def hess_diag(self, coords: Coords) -> np.ndarray:
        h = self.hess(coords)
        return np.stack([h[i, i] for i in range(self.dim)])

    def hess(self, coords: Coords) -> np.ndarray:
        raise NotImplementedError

    def third(self, coords: Coords) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no third derivatives")

    # Convenience algebra for building composite fields.
    def __add__(self, other: "Evaluator") -> "Evaluator":
        return SumEvaluator([self, other])

    def __mul__(self, other):
        if isinstance(other, Evaluator):
            return ProductEvaluator(self, other)
        return ScaledEvaluator(self, float(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Evaluator":
        return ScaledEvaluator(self, -1.0)

    def __sub__(self, other: "Evaluator") -> "Evaluator":
        return SumEvaluator([self, ScaledEvaluator(other, -1.0)])


# ---------------------------------------------------------------------------
# Radial profiles P(s), s = scaled squared radius, support s < 1.


class SmoothProfile:
    """P(s) = exp(1 - 1/(1-s)), the classic flat C-infinity bump, P(0) = 1."""

    def _w(self, s):
        # w = 1/(1-s) on the support; derivatives of P are polynomials in w.
        return 1.0 / (1.0 - s)

    def eval(self, s: np.ndarray, order: int) -> np.ndarray:
        inside = s < 1.0
        s_safe = np.where(inside, s, 0.0)
        w = self._w(s_safe)
        p = np.exp(1.0 - w)
        if order == 0:
            out = p
        elif order == 1:
            out = -p * w**2
        elif order == 2:
            out = p * (w**4 - 2.0 * w**3)
        elif order == 3:
            out = p * (-(w**6) + 6.0 * w**5 - 6.0 * w**4)
        else:
            raise ValueError(f"profile derivative order {order} not supported")
        return np.where(inside, out, 0.0)


class PolynomialProfile:
    """P(s) = (1-s)^k with k >= 4, C^(k-1) across the support edge."""

    def __init__(self, k: int = 4):
        if k < 4:
            raise ValueError("polynomial bump needs k >= 4 for C^3 regularity")
        self.k = k

    def eval(self, s: np.ndarray, order: int) -> np.ndarray:
        inside = s < 1.0
        s_safe = np.where(inside, s, 1.0)
        k = self.k
        c = 1.0
        for j in range(order):
            c *= -(k - j)
        out = c * (1.0 - s_safe) ** (k - order)
        return np.where(inside, out, 0.0)


class GaussianProfile:
    """Gaussian factor under the smooth bump window: exp(-g*s/2) * SmoothProfile.

    Keeps compact support and full smoothness while concentrating mass at the
    center, which tightens the spectral decay used by the reconstruction tests.
    """

    def __init__(self, gamma: float = 4.0):
        self.gamma = float(gamma)
        self._win = SmoothProfile()

    def eval(self, s: np.ndarray, order: int) -> np.ndarray:
        g = -0.5 * self.gamma
        e = np.exp(g * s)
        win = [self._win.eval(s, j) for j in range(order + 1)]
        if order == 0:
            return e * win[0]
        if order == 1:
            return e * (g * win[0] + win[1])
        if order == 2:
            return e * (g * g * win[0] + 2.0 * g * win[1] + win[2])
        if order == 3:
            return e * (g**3 * win[0] + 3.0 * g * g * win[1] + 3.0 * g * win[2] + win[3])
        raise ValueError(f"profile derivative order {order} not supported")


PROFILES = {
    "smooth-bump": SmoothProfile,
    "gaussian-truncated": GaussianProfile,
    "polynomial-bump": PolynomialProfile,
}


class BumpEvaluator(Evaluator):
    """amplitude * P(sum_i ((z_i - c_i)/r_i)^2) for a radial profile P."""

    def __init__(self, center, radii, amplitude=1.0, kind="smooth-bump", profile=None):
        self.center = np.asarray(center, dtype=float)
        self.radii = np.asarray(radii, dtype=float)
        if np.any(self.radii <= 0):
            raise ValueError("bump radii must be positive")
        if self.center.shape != self.radii.shape:
            raise ValueError("center and radii must have equal length")
        self.amplitude = float(amplitude)
        self.kind = kind
        self.profile = profile if profile is not None else PROFILES[kind]()
        self.dim = self.center.size

    def _scaled(self, coords: Coords):
        u = [(np.asarray(c, dtype=float) - self.center[i]) / self.radii[i]
             for i, c in enumerate(coords)]
        s = sum(ui * ui for ui in u)
        return u, s

    def value(self, coords: Coords) -> np.ndarray:
        _, s = self._scaled(coords)
        s = np.asarray(s)
        # The profiles vanish for s >= 1: evaluate only on the support and
        # scatter back, so the transcendentals run on the interior points only.
        flat = s.ravel()
        inside = flat < 1.0
        out = np.zeros(flat.shape)
        if inside.any():
            out[inside] = self.amplitude * self.profile.eval(flat[inside], 0)
        return out.reshape(s.shape)

    def grad(self, coords: Coords) -> np.ndarray:
        u, s = self._scaled(coords)
        p1 = self.profile.eval(s, 1)
        shape = np.broadcast_shapes(*(ui.shape for ui in u))
        out = np.empty((self.dim,) + shape)
        for i in range(self.dim):
            out[i] = self.amplitude * p1 * 2.0 * u[i] / self.radii[i]
        return out

    def hess(self, coords: Coords) -> np.ndarray:
        u, s = self._scaled(coords)
        p1 = self.profile.eval(s, 1)
        p2 = self.profile.eval(s, 2)
        shape = np.broadcast_shapes(*(ui.shape for ui in u))
        out = np.empty((self.dim, self.dim) + shape)
        for i in range(self.dim):
            for j in range(i, self.dim):
                term = 4.0 * p2 * u[i] * u[j] / (self.radii[i] * self.radii[j])
                if i == j:
                    term = term + 2.0 * p1 / self.radii[i] ** 2
                out[i, j] = self.amplitude * term
                out[j, i] = out[i, j]
        return out

    def hess_diag(self, coords: Coords) -> np.ndarray:
        u, s = self._scaled(coords)
        p1 = self.profile.eval(s, 1)
        p2 = self.profile.eval(s, 2)
        shape = np.broadcast_shapes(*(ui.shape for ui in u))
        out = np.empty((self.dim,) + shape)
        for i in range(self.dim):
            out[i] = self.amplitude * (
                4.0 * p2 * u[i] * u[i] / self.radii[i] ** 2 + 2.0 * p1 / self.radii[i] ** 2
            )
        return out

    def third(self, coords: Coords) -> np.ndarray:
        u, s = self._scaled(coords)
        p2 = self.profile.eval(s, 2)
        p3 = self.profile.eval(s, 3)
        shape = np.broadcast_shapes(*(ui.shape for ui in u))
        r = self.radii
        out = np.empty((self.dim, self.dim, self.dim) + shape)
        for i in range(self.dim):
            for j in range(self.dim):
                for k in range(self.dim):
                    term = 8.0 * p3 * u[i] * u[j] * u[k] / (r[i] * r[j] * r[k])
                    if i == j:
                        term = term + 4.0 * p2 * u[k] / (r[i] ** 2 * r[k])
                    if i == k:
                        term = term + 4.0 * p2 * u[j] / (r[i] ** 2 * r[j])
                    if j == k:
                        term = term + 4.0 * p2 * u[i] / (r[j] ** 2 * r[i])
                    out[i, j, k] = self.amplitude * term
        return out


# ---------------------------------------------------------------------------
# 1-D profiles along a single axis (ramps and plateaus).


def _smoothstep(x: np.ndarray, order: int) -> np.ndarray:
    """Quintic smoothstep on [0,1]: 6x^5 - 15x^4 + 10x^3, C^2 at both ends."""
    xc = np.clip(x, 0.0, 1.0)
    inside = (x > 0.0) & (x < 1.0)
    if order == 0:
        return np.where(x >= 1.0, 1.0, np.where(inside, 6 * xc**5 - 15 * xc**4 + 10 * xc**3, 0.0))
    if order == 1:
        return np.where(inside, 30 * xc**4 - 60 * xc**3 + 30 * xc**2, 0.0)
    if order == 2:
        return np.where(inside, 120 * xc**3 - 180 * xc**2 + 60 * xc, 0.0)
    raise ValueError("smoothstep derivatives available up to order 2")


class RampProfile:
    """Rises smoothly from 0 at t0 to 1 at t0 + width, then stays at 1."""

    max_order = 2

    def __init__(self, t0: float, width: float):
        self.t0 = float(t0)
        self.width = float(width)

    def eval(self, t: np.ndarray, order: int) -> np.ndarray:
        x = (t - self.t0) / self.width
        return _smoothstep(x, order) / self.width**order


class PlateauProfile:
    """Smooth box: 0 outside [a, b], exactly 1 on [a + w, b - w]."""

    max_order = 2

    def __init__(self, a: float, b: float, w: float):
        if b - a <= 2 * w:
            raise ValueError("plateau needs b - a > 2w")
        self.up = RampProfile(a, w)
        self.down = RampProfile(b - w, w)

    def eval(self, t: np.ndarray, order: int) -> np.ndarray:
        # product rule for S_up(t) * (1 - S_down(t))
        u = [self.up.eval(t, j) for j in range(order + 1)]
        d = [self.down.eval(t, j) for j in range(order + 1)]
        if order == 0:
            return u[0] * (1.0 - d[0])
        if order == 1:
            return u[1] * (1.0 - d[0]) - u[0] * d[1]
        if order == 2:
            return u[2] * (1.0 - d[0]) - 2.0 * u[1] * d[1] - u[0] * d[2]
        raise ValueError("plateau derivatives available up to order 2")


class AxisProfileEvaluator(Evaluator):
    """A field depending on one coordinate only, f(z_axis)."""

    def __init__(self, dim: int, axis: int, profile):
        self.dim = dim
        self.axis = axis
        self.profile = profile

    def value(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.broadcast_to(self.profile.eval(np.asarray(coords[self.axis], dtype=float), 0), shape).copy()

    def grad(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        out = np.zeros((self.dim,) + shape)
        out[self.axis] = self.profile.eval(np.asarray(coords[self.axis], dtype=float), 1)
        return out

    def hess(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        out = np.zeros((self.dim, self.dim) + shape)
        out[self.axis, self.axis] = self.profile.eval(np.asarray(coords[self.axis], dtype=float), 2)
        return out

    def hess_diag(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        out = np.zeros((self.dim,) + shape)
        out[self.axis] = self.profile.eval(np.asarray(coords[self.axis], dtype=float), 2)
        return out


class ConstantEvaluator(Evaluator):
    def __init__(self, dim: int, c: float = 1.0):
        self.dim = dim
        self.c = float(c)

    def value(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.full(shape, self.c)

    def grad(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.zeros((self.dim,) + shape)

    def hess(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.zeros((self.dim, self.dim) + shape)

    def hess_diag(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.zeros((self.dim,) + shape)

    def third(self, coords: Coords) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(c) for c in coords))
        return np.zeros((self.dim, self.dim, self.dim) + shape)


# ---------------------------------------------------------------------------
# Algebraic closure.


class SumEvaluator(Evaluator):
    def __init__(self, terms):
        terms = list(terms)
        if not terms:
            raise ValueError("empty sum")
        self.terms = terms
        self.dim = terms[0].dim
        if any(t.dim != self.dim for t in terms):
            raise ValueError("summands have mismatched dimension")

    def value(self, coords):
        return sum(t.value(coords) for t in self.terms)

    def grad(self, coords):
        return sum(t.grad(coords) for t in self.terms)

    def hess(self, coords):
        return sum(t.hess(coords) for t in self.terms)

    def hess_diag(self, coords):
        return sum(t.hess_diag(coords) for t in self.terms)

    def third(self, coords):
        return sum(t.third(coords) for t in self.terms)


class ScaledEvaluator(Evaluator):
    def __init__(self, base: Evaluator, factor: float):
        self.base = base
        self.factor = factor
        self.dim = base.dim

    def value(self, coords):
        return self.factor * self.base.value(coords)

    def grad(self, coords):
        return self.factor * self.base.grad(coords)

    def hess(self, coords):
        return self.factor * self.base.hess(coords)

    def hess_diag(self, coords):
        return self.factor * self.base.hess_diag(coords)

    def third(self, coords):
        return self.factor * self.base.third(coords)


class ProductEvaluator(Evaluator):
    def __init__(self, a: Evaluator, b: Evaluator):
        if a.dim != b.dim:
            raise ValueError("factors have mismatched dimension")
        self.a = a
        self.b = b
        self.dim = a.dim

    def value(self, coords):
        return self.a.value(coords) * self.b.value(coords)

    def grad(self, coords):
        va, vb = self.a.value(coords), self.b.value(coords)
        return self.a.grad(coords) * vb + va * self.b.grad(coords)

    def hess(self, coords):
        va, vb = self.a.value(coords), self.b.value(coords)
        ga, gb = self.a.grad(coords), self.b.grad(coords)
        cross = ga[:, None] * gb[None, :]
        return self.a.hess(coords) * vb + cross + np.swapaxes(cross, 0, 1) + va * self.b.hess(coords)

    def hess_diag(self, coords):
        va, vb = self.a.value(coords), self.b.value(coords)
        ga, gb = self.a.grad(coords), self.b.grad(coords)
        return self.a.hess_diag(coords) * vb + 2.0 * ga * gb + va * self.b.hess_diag(coords)


class DerivativeEvaluator(Evaluator):
    """The coordinate derivative d/dz_axis of a base evaluator."""

    def __init__(self, base: Evaluator, axis: int):
        self.base = base
        self.axis = axis
        self.dim = base.dim

    def value(self, coords):
        return self.base.grad(coords)[self.axis]

    def grad(self, coords):
        return self.base.hess(coords)[self.axis]

    def hess(self, coords):
        return self.base.third(coords)[self.axis]

    def hess_diag(self, coords):
        t = self.base.third(coords)
        return np.stack([t[self.axis, i, i] for i in range(self.dim)])
