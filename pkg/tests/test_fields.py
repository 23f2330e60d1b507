"""Grids, bump fields, gauge algebra, serialization."""
import json

import numpy as np
import pytest

from lrlab.errors import GridMismatch, SupportViolation
from lrlab.evaluators import BumpEvaluator
from lrlab.fields import (
    BumpSpec,
    CovectorField,
    GaugeFunction,
    ScalarField,
    SpacetimeGrid,
    effective_potential,
    fd_d1,
    fd_d2,
    gauge_transform,
    gradient_tx,
    integrate_grid,
    l2_norm,
    make_bump,
    make_covector,
    read_field,
    write_field,
)


@pytest.fixture
def grid1():
    return SpacetimeGrid(1, 2.5, [(-1.0, 1.0)], 41, (33,))


@pytest.fixture
def grid2():
    return SpacetimeGrid(2, 3.0, [(-1.0, 1.0), (-1.2, 0.8)], 23, (17, 19))


class TestSpacetimeGrid:
    def test_basic_geometry(self, grid2):
        assert grid2.dim == 3
        assert grid2.shape == (23, 17, 19)
        assert grid2.dt == pytest.approx(3.0 / 22)
        assert grid2.dx == (pytest.approx(2.0 / 16), pytest.approx(2.0 / 18))
        assert grid2.spacings == (grid2.dt,) + grid2.dx
        assert grid2.diameter == pytest.approx(np.sqrt(4.0 + 4.0))
        assert grid2.bounds[0].tolist() == [0.0, 3.0]
        assert grid2.bounds[1].tolist() == [-1.0, 1.0]

    def test_axes_and_coords(self, grid1):
        t, x = grid1.axes
        assert t[0] == 0.0 and t[-1] == pytest.approx(2.5)
        assert x[0] == -1.0 and x[-1] == 1.0
        tt, xx = grid1.coords()
        assert np.broadcast_shapes(tt.shape, xx.shape) == grid1.shape
        assert np.array_equal((tt + xx)[:, 0], t - 1.0)
        pts = grid1.meshpoints()
        assert pts.shape == (41 * 33, 2)

    def test_cfl(self, grid1):
        # dt = 2.5/40, dx = 2/32
        assert grid1.cfl_number() == pytest.approx((2.5 / 40) / (2.0 / 32))

    def test_refined_halves_spacings(self, grid2):
        fine = grid2.refined(2)
        assert fine.shape == (45, 33, 37)
        assert fine.dt == pytest.approx(grid2.dt / 2)
        for a, b in zip(fine.dx, grid2.dx):
            assert a == pytest.approx(b / 2)
        # same physical domain
        assert np.allclose(fine.bounds, grid2.bounds)

    @pytest.mark.parametrize("bad", [
        dict(n_spatial=0, T=1.0, box=[], n_t=8, n_x=()),
        dict(n_spatial=4, T=1.0, box=[(-1, 1)] * 4, n_t=8, n_x=(8,) * 4),
        dict(n_spatial=1, T=-1.0, box=[(-1, 1)], n_t=8, n_x=(8,)),
        dict(n_spatial=1, T=1.0, box=[(-1, 1)], n_t=3, n_x=(8,)),
        dict(n_spatial=1, T=1.0, box=[(1, -1)], n_t=8, n_x=(8,)),
        dict(n_spatial=2, T=1.0, box=[(-1, 1)], n_t=8, n_x=(8, 8)),
    ])
    def test_invalid_grids(self, bad):
        with pytest.raises(ValueError):
            SpacetimeGrid(**bad)

    def test_short_time_horizon_warns(self):
        with pytest.warns(RuntimeWarning):
            SpacetimeGrid(1, 0.5, [(-1.0, 1.0)], 11, (11,))


class TestBumps:
    def test_center_value_is_amplitude(self, grid2):
        spec = BumpSpec((1.1, 0.0, -0.2), (0.8, 0.5, 0.45), 0.7)
        f = make_bump(grid2, spec)
        assert float(f.evaluate([[1.1, 0.0, -0.2]])[0]) == pytest.approx(0.7, rel=1e-6)

    def test_compact_support(self, grid2):
        spec = BumpSpec((1.1, 0.0, -0.2), (0.6, 0.5, 0.45), 1.0)
        f = make_bump(grid2, spec)
        tt, xx, yy = grid2.coords()
        s = (((tt - 1.1) / 0.6) ** 2 + (xx / 0.5) ** 2
             + ((yy + 0.2) / 0.45) ** 2)
        assert np.all(f.samples[s >= 1.0] == 0.0)
        assert np.all(f.samples[s < 1.0] > 0.0)

    @pytest.mark.parametrize("kind", ["smooth-bump", "gaussian-truncated",
                                      "polynomial-bump"])
    def test_profiles_vanish_smoothly(self, grid1, kind):
        sharp = 6.0 if kind == "gaussian-truncated" else (
            4 if kind == "polynomial-bump" else None)
        f = make_bump(grid1, BumpSpec((1.0, 0.0), (0.7, 0.6), 1.0, kind, sharp))
        assert float(np.abs(f.samples[0]).max()) == 0.0
        assert float(np.abs(f.samples[:, 0]).max()) == 0.0
        assert f.samples.max() == pytest.approx(1.0, rel=0.05)

    def test_support_margin_enforced(self, grid1):
        with pytest.raises(SupportViolation):
            make_bump(grid1, BumpSpec((1.0, 0.1), (0.8, 0.95), 1.0))

    def test_time_margin_enforced(self, grid1):
        with pytest.raises(SupportViolation):
            make_bump(grid1, BumpSpec((0.2, 0.0), (0.3, 0.5), 1.0))

    def test_bad_spec(self):
        with pytest.raises(ValueError):
            BumpSpec((0.0, 0.0), (1.0,), 1.0)
        with pytest.raises(ValueError):
            BumpSpec((0.0,), (-1.0,), 1.0)
        with pytest.raises(KeyError):
            make_bump(SpacetimeGrid(1, 2.0, [(-1, 1)], 21, (21,)),
                      BumpSpec((1.0, 0.0), (0.5, 0.5), 1.0, "no-such-kind"))

    def test_dimension_mismatch(self, grid2):
        with pytest.raises(GridMismatch):
            make_bump(grid2, BumpSpec((1.0, 0.0), (0.5, 0.5), 1.0))


class TestCovector:
    def test_none_gives_zero_field(self, grid2):
        A = make_covector(grid2, None)
        assert all(np.all(c.samples == 0.0) for c in A.components)
        assert len(A.components) == 3

    def test_list_entries_sum(self, grid1):
        s1 = BumpSpec((1.0, -0.2), (0.6, 0.5), 1.0)
        s2 = BumpSpec((1.0, 0.2), (0.6, 0.5), 0.5)
        A = make_covector(grid1, [[s1, s2], None])
        single = make_bump(grid1, s1) + make_bump(grid1, s2)
        assert np.array_equal(A.time_component.samples, single.samples)
        assert np.all(A.spatial_components[0].samples == 0.0)

    def test_component_count_enforced(self, grid2):
        with pytest.raises(GridMismatch):
            CovectorField([ScalarField.zeros(grid2)] * 2)

    def test_arithmetic(self, grid1):
        A = make_covector(grid1, [BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0), None])
        B = A + A - A
        for c, d in zip(B.components, A.components):
            assert np.allclose(c.samples, d.samples)
        C = A * 2.0
        assert np.allclose(C.time_component.samples,
                           2.0 * A.time_component.samples)


class TestDerivatives:
    def test_fd_matches_analytic_gradient(self, grid2):
        spec = BumpSpec((1.1, 0.0, -0.2), (0.8, 0.55, 0.5), 1.0)
        f = make_bump(grid2, spec)
        ev = BumpEvaluator(spec.center, spec.radii, spec.amplitude, spec.kind)
        pts = grid2.meshpoints()
        exact = ev.grad(pts).reshape(grid2.shape + (3,))
        for axis in range(3):
            got = f.derivative(axis).samples
            scale = max(np.abs(exact[..., axis]).max(), 1.0)
            assert np.abs(got - exact[..., axis]).max() / scale < 5e-3

    def test_fd_orders(self):
        x = np.linspace(0.0, 1.0, 81)
        f = np.sin(3.0 * x)
        h = x[1] - x[0]
        d1 = fd_d1(f, 0, h)
        d2 = fd_d2(f, 0, h)
        assert np.abs(d1 - 3.0 * np.cos(3.0 * x)).max() < 2e-5
        assert np.abs(d2 + 9.0 * np.sin(3.0 * x)).max() < 2e-4

    def test_gradient_tx_layout(self, grid1):
        phi = make_bump(grid1, BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0))
        G = gradient_tx(phi)
        assert len(G.components) == 2
        assert np.array_equal(G.time_component.samples,
                              phi.derivative(0).samples)


class TestGauge:
    def test_gauge_transform_is_additive_shift(self, grid1):
        A = make_covector(grid1, [BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0),
                                  BumpSpec((1.0, 0.1), (0.6, 0.5), 0.4)])
        phi = GaugeFunction(make_bump(grid1, BumpSpec((1.0, 0.0), (0.55, 0.45), 0.5)))
        A2 = gauge_transform(A, phi)
        G = gradient_tx(phi)
        for c2, c, g in zip(A2.components, A.components, G.components):
            assert np.allclose(c2.samples, c.samples + g.samples)

    def test_zero_gauge_identity(self, grid1):
        A = make_covector(grid1, [BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0), None])
        phi = GaugeFunction(ScalarField.zeros(grid1))
        A2 = gauge_transform(A, phi)
        for c2, c in zip(A2.components, A.components):
            assert np.array_equal(c2.samples, c.samples)

    def test_gauge_must_vanish_on_boundary(self, grid1):
        tt, xx = grid1.coords()
        with pytest.raises(SupportViolation):
            GaugeFunction(ScalarField(grid1, np.cos(xx) + 0.0 * tt, check=False))


class TestEffectivePotential:
    def test_against_analytic_assembly(self, grid2):
        """q + A0^2 - |A|^2 + dt A0 - div A, with analytic derivatives."""
        s0 = BumpSpec((1.1, 0.0, -0.2), (0.8, 0.55, 0.5), 0.8)
        s1 = BumpSpec((1.1, 0.1, -0.1), (0.8, 0.5, 0.5), 0.5)
        s2 = BumpSpec((1.0, -0.1, -0.3), (0.75, 0.5, 0.4), 0.4)
        sq = BumpSpec((1.1, 0.0, -0.2), (0.7, 0.5, 0.45), 0.6)
        A = make_covector(grid2, [s0, s1, s2])
        q = make_bump(grid2, sq)
        got = effective_potential(A, q).samples

        pts = grid2.meshpoints()
        evs = [BumpEvaluator(s.center, s.radii, s.amplitude, s.kind)
               for s in (s0, s1, s2)]
        vals = [e.value(pts).reshape(grid2.shape) for e in evs]
        grads = [e.grad(pts).reshape(grid2.shape + (3,)) for e in evs]
        expect = (q.samples + vals[0] ** 2 - vals[1] ** 2 - vals[2] ** 2
                  + grads[0][..., 0] - grads[1][..., 1] - grads[2][..., 2])
        assert np.abs(got - expect).max() < 5e-3

    def test_zero_potential_for_zero_inputs(self, grid1):
        A = make_covector(grid1, None)
        out = effective_potential(A)
        assert np.all(out.samples == 0.0)


class TestIntegrals:
    def test_integrate_grid_matches_product_rule(self, grid1):
        tt, xx = grid1.coords()
        f = np.sin(np.pi * xx) ** 2 * tt
        # separable closed form: int t dt * int sin^2(pi x) dx = 3.125 * 1
        assert integrate_grid(grid1, f) == pytest.approx(3.125, abs=2e-3)

    def test_l2_norm_consistency(self, grid1):
        f = np.ones(grid1.shape)
        vol = 2.5 * 2.0
        assert l2_norm(grid1, f) == pytest.approx(np.sqrt(vol), rel=1e-12)


class TestSerialization:
    def test_scalar_roundtrip(self, tmp_path, grid2):
        f = make_bump(grid2, BumpSpec((1.1, 0.0, -0.2), (0.7, 0.5, 0.45), 0.9))
        base = str(tmp_path / "scalar")
        write_field(f, base)
        g = read_field(base)
        assert isinstance(g, ScalarField)
        assert np.array_equal(g.samples, f.samples)
        assert g.grid == grid2

    def test_covector_roundtrip(self, tmp_path, grid1):
        A = make_covector(grid1, [BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0),
                                  BumpSpec((1.0, 0.1), (0.6, 0.45), 0.3)])
        base = str(tmp_path / "cov")
        write_field(A, base)
        B = read_field(base)
        assert isinstance(B, CovectorField)
        for c, d in zip(B.components, A.components):
            assert np.array_equal(c.samples, d.samples)

    def test_complex_roundtrip(self, tmp_path, grid1):
        f = ScalarField(grid1, np.full(grid1.shape, 1.0 + 2.0j), check=False)
        base = str(tmp_path / "cplx")
        write_field(f, base)
        g = read_field(base)
        assert g.samples.dtype == np.complex128
        assert np.array_equal(g.samples, f.samples)

    def test_header_is_versioned_json(self, tmp_path, grid1):
        f = ScalarField.zeros(grid1)
        base = str(tmp_path / "hdr")
        write_field(f, base)
        header = json.loads((tmp_path / "hdr.json").read_text())
        assert header["version"] == 1
        assert header["dtype"] == "f64"
        assert header["n_x"] == [33]

    def test_version_mismatch_rejected(self, tmp_path, grid1):
        f = ScalarField.zeros(grid1)
        base = str(tmp_path / "ver")
        write_field(f, base)
        header = json.loads((tmp_path / "ver.json").read_text())
        header["version"] = 99
        (tmp_path / "ver.json").write_text(json.dumps(header))
        with pytest.raises(ValueError):
            read_field(base)


class TestScalarField:
    def test_interpolation_matches_analytic(self, grid2):
        spec = BumpSpec((1.1, 0.0, -0.2), (0.8, 0.55, 0.5), 1.0)
        f = make_bump(grid2, spec)
        sampled_only = ScalarField(grid2, f.samples.copy(), check=False)
        rng = np.random.default_rng(7)
        pts = np.column_stack([
            rng.uniform(0.4, 1.8, 40), rng.uniform(-0.5, 0.5, 40),
            rng.uniform(-0.7, 0.3, 40)])
        ev = BumpEvaluator(spec.center, spec.radii, spec.amplitude, spec.kind)
        # analytic path is exact; interpolation path is approximate
        assert np.abs(f.evaluate(pts) - ev.value(pts)).max() < 1e-12
        assert np.abs(sampled_only.evaluate(pts) - ev.value(pts)).max() < 2e-2

    def test_shape_mismatch_raises(self, grid1):
        with pytest.raises(GridMismatch):
            ScalarField(grid1, np.zeros((5, 5)))

    def test_samples_must_match_evaluator(self, grid1):
        spec = BumpSpec((1.0, 0.0), (0.6, 0.5), 1.0)
        ev = BumpEvaluator(spec.center, spec.radii, spec.amplitude, spec.kind)
        with pytest.raises(ValueError):
            ScalarField(grid1, np.ones(grid1.shape), analytic=ev)
