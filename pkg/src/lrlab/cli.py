"""Configuration-driven scenario runner behind the ``lrlab`` executable.

One JSON configuration describes a grid, closed-form coefficient fields, and a
list of scenarios; ``lrlab run`` executes them into an artifact directory with
a reproducibility manifest (config hash, package versions, effective
tolerances) plus JSON/CSV reports.  ``lrlab export`` re-serializes a report
directory.  Module subcommands (``pde``, ``go``, ``lray``, ``recon``,
``carleman``) expose single steps of the same machinery.

Exit codes: 0 success, 2 configuration error, 3 assertion failure,
4 numerical failure.  Execution is sequential and deterministic; ``--threads``
is recorded in the manifest and reserved for future intra-step parallelism.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import importlib.resources
import json
import os
import platform
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .errors import (
    AssertionFailed,
    ConfigInvalid,
    LrlabError,
    MissingReport,
    NonConvergence,
)
from .fields import (
    BumpSpec,
    CovectorField,
    GaugeFunction,
    ScalarField,
    SpacetimeGrid,
    gauge_transform,
    gradient_tx,
    l2_norm,
    make_bump,
    make_covector,
    write_field,
)
from .go import (
    Direction,
    SliceQuery,
    amplitude_decaying,
    amplitude_growing,
    conjugated_remainder,
    transport_residual,
)
from .pde import (
    BoundaryRegions,
    DirichletData,
    InitialData,
    LambdaData,
    faces_of,
    input_output_map,
    ramp_sine_probe,
)
from .lray import (
    ConeSamples,
    HyperplaneFrame,
    TwoFormField,
    direction_family,
    fourier_slice,
    light_ray_transform_batch,
    nonlinear_slice_identity,
    solve_hhat_system,
    transverse_slice_data,
)
from .carleman import (
    CarlemanWeight,
    boundary_sweep,
    default_test_family,
    interior_sweep,
    max_growth_per_halving,
)
from .recon import (
    PocsParams,
    RayDataProvider,
    ReconConfig,
    admissible_direction,
    poincare_integrate,
    recover_curvature,
    recover_q,
    spacelike_bins,
    synthetic_conedata,
    write_iteration_log,
)

SCENARIOS = (
    "forward",
    "gauge-check",
    "go-check",
    "slice-check",
    "curvature-recon",
    "q-recon",
    "full-pipeline",
    "carleman-sweep",
)

#: Default assertion thresholds; every value can be overridden per config
#: under the "tolerances" key and the effective set is written to the
#: manifest.
DEFAULT_TOLERANCES = {
    "gauge_order_min": 1.5,
    "gauge_discrepancy_max": 3e-2,
    "slice_rel_max": 1e-4,
    "nonlinear_rel_max": 1e-3,
    "curvature_rel_max": 5e-2,
    "gauge_shift_rel_max": 1e-3,
    "q_rel_max": 0.1,
    "potential_roundtrip_max": 1e-6,
    "go_residual_max": 1e-6,
    "remainder_variation_max": 0.10,
    "carleman_growth_max": 1.25,
}

_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# Config loading and validation.


def _bundled_config_path(name: str):
    base = importlib.resources.files("lrlab") / "scenarios" / f"{name}.json"
    return base if base.is_file() else None


def load_config(path: str) -> dict:
    """Parse a config file; bare names fall back to bundled scenarios."""
    if not os.path.exists(path):
        bundled = _bundled_config_path(path.replace("-", "_"))
        if bundled is None:
            raise ConfigInvalid("(config)", f"no such file or bundled scenario: {path}")
        text = bundled.read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("(root)", f"not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigInvalid("(root)", "top level must be a JSON object")
    cfg["_raw_text"] = text
    return cfg


def _require(cfg: dict, key: str, types, path: str):
    if key not in cfg:
        raise ConfigInvalid(path, "missing required field")
    v = cfg[key]
    if not isinstance(v, types):
        raise ConfigInvalid(path, f"expected {types}, got {type(v).__name__}")
    return v


def _floats(v, path: str, length: int | None = None) -> list[float]:
    if not isinstance(v, (list, tuple)) or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise ConfigInvalid(path, "expected a list of numbers")
    if length is not None and len(v) != length:
        raise ConfigInvalid(path, f"expected {length} entries, got {len(v)}")
    return [float(x) for x in v]


def _unit_vector(v, path: str, length: int | None = None) -> np.ndarray:
    vec = np.asarray(_floats(v, path, length))
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-9:
        raise ConfigInvalid(path, f"must be a unit vector, |v| = {norm:.12g}")
    return vec


def build_grid(cfg: dict) -> SpacetimeGrid:
    g = _require(cfg, "grid", dict, "grid")
    n = _require(g, "n_spatial", int, "grid.n_spatial")
    t_final = _require(g, "t_final", (int, float), "grid.t_final")
    box = _require(g, "box", list, "grid.box")
    n_t = _require(g, "n_t", int, "grid.n_t")
    n_x = _require(g, "n_x", list, "grid.n_x")
    try:
        intervals = tuple((float(a), float(b)) for a, b in box)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid("grid.box", f"expected [[lo, hi], ...]: {exc}") from exc
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return SpacetimeGrid(n, float(t_final), intervals, n_t,
                                 tuple(int(m) for m in n_x))
    except ValueError as exc:
        raise ConfigInvalid("grid", str(exc)) from exc


def _bump_spec(d, dim: int, path: str) -> BumpSpec:
    if not isinstance(d, dict):
        raise ConfigInvalid(path, "expected a bump object")
    center = _floats(_require(d, "center", list, f"{path}.center"),
                     f"{path}.center", dim)
    radii = _floats(_require(d, "radii", list, f"{path}.radii"),
                    f"{path}.radii", dim)
    amplitude = float(d.get("amplitude", 1.0))
    kind = d.get("kind", "smooth-bump")
    sharpness = d.get("sharpness")
    try:
        return BumpSpec(tuple(center), tuple(radii), amplitude, kind,
                        None if sharpness is None else float(sharpness))
    except ValueError as exc:
        raise ConfigInvalid(path, str(exc)) from exc


def _component_specs(v, dim: int, path: str):
    if v is None:
        return None
    if isinstance(v, dict):
        return _bump_spec(v, dim, path)
    if isinstance(v, list):
        return [_bump_spec(b, dim, f"{path}[{i}]") for i, b in enumerate(v)]
    raise ConfigInvalid(path, "expected null, a bump object, or a list of bumps")


def build_covector(grid: SpacetimeGrid, v, path: str) -> CovectorField | None:
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != grid.dim:
        raise ConfigInvalid(
            path, f"expected a list of {grid.dim} components (time first)")
    specs = [_component_specs(c, grid.dim, f"{path}[{i}]")
             for i, c in enumerate(v)]
    try:
        return make_covector(grid, specs)
    except LrlabError as exc:
        raise ConfigInvalid(path, str(exc)) from exc


def build_scalar(grid: SpacetimeGrid, v, path: str) -> ScalarField | None:
    specs = _component_specs(v, grid.dim, path)
    if specs is None:
        return None
    if isinstance(specs, BumpSpec):
        specs = [specs]
    try:
        out = make_bump(grid, specs[0])
        for s in specs[1:]:
            out = out + make_bump(grid, s)
    except LrlabError as exc:
        raise ConfigInvalid(path, str(exc)) from exc
    return out


@dataclass
class Experiment:
    """A validated configuration with lazily built ingredients."""

    cfg: dict
    grid: SpacetimeGrid
    scenarios: list[str]
    tolerances: dict
    omega0: np.ndarray | None
    out_dir: str
    _fields: dict = field(default_factory=dict)

    def field_spec(self, name: str):
        fields = self.cfg.get("fields") or {}
        return fields.get(name)

    def covector(self, name: str, required: bool = False) -> CovectorField | None:
        if name not in self._fields:
            self._fields[name] = build_covector(
                self.grid, self.field_spec(name), f"fields.{name}")
        out = self._fields[name]
        if required and out is None:
            raise ConfigInvalid(f"fields.{name}",
                                "this scenario needs the field declared")
        return out

    def scalar(self, name: str, required: bool = False) -> ScalarField | None:
        key = "s:" + name
        if key not in self._fields:
            self._fields[key] = build_scalar(
                self.grid, self.field_spec(name), f"fields.{name}")
        out = self._fields[key]
        if required and out is None:
            raise ConfigInvalid(f"fields.{name}",
                                "this scenario needs the field declared")
        return out

    def direction0(self) -> Direction:
        if self.omega0 is None:
            raise ConfigInvalid("omega0", "this scenario needs omega0 declared")
        return Direction.from_vector(self.omega0)

    def sub(self, name: str) -> dict:
        v = self.cfg.get(name) or {}
        if not isinstance(v, dict):
            raise ConfigInvalid(name, "expected an object")
        return v


def validate_config(cfg: dict) -> Experiment:
    if cfg.get("schema") != _SCHEMA_VERSION:
        raise ConfigInvalid("schema",
                            f"expected schema version {_SCHEMA_VERSION}")
    _require(cfg, "name", str, "name")
    if "scenario" in cfg and "scenarios" in cfg:
        raise ConfigInvalid("scenario", "give either scenario or scenarios, not both")
    raw = cfg.get("scenarios", [cfg["scenario"]] if "scenario" in cfg else [])
    if not isinstance(raw, list):
        raise ConfigInvalid("scenarios", "expected a list of scenario names")
    for i, s in enumerate(raw):
        if s not in SCENARIOS:
            raise ConfigInvalid(f"scenarios[{i}]",
                                f"unknown scenario '{s}'; valid: {', '.join(SCENARIOS)}")
    grid = build_grid(cfg)
    omega0 = None
    if cfg.get("omega0") is not None:
        omega0 = _unit_vector(cfg["omega0"], "omega0", grid.n_spatial)
    for i, d in enumerate(cfg.get("directions", [])):
        _unit_vector(d, f"directions[{i}]", grid.n_spatial)
    tols = dict(DEFAULT_TOLERANCES)
    for k, v in (cfg.get("tolerances") or {}).items():
        if k not in DEFAULT_TOLERANCES:
            raise ConfigInvalid(f"tolerances.{k}", "unknown tolerance name")
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigInvalid(f"tolerances.{k}", "expected a number")
        tols[k] = float(v)
    out_dir = cfg.get("out_dir") or os.path.join("lrlab-artifacts", cfg["name"])
    exp = Experiment(cfg, grid, list(raw), tols, omega0, out_dir)
    _check_gauge_consistency(exp)
    return exp


def _check_gauge_consistency(exp: Experiment):
    """When A2 and phi are both declared, A2 must equal A1 + grad(phi)."""
    fields = exp.cfg.get("fields") or {}
    if fields.get("A2") is None or fields.get("phi") is None:
        return
    a1 = exp.covector("A1")
    a2 = exp.covector("A2")
    phi = exp.scalar("phi")
    shifted = gauge_transform(
        a1 if a1 is not None else make_covector(exp.grid, None),
        GaugeFunction(phi))
    worst = max(float(np.abs(a2.components[i].samples
                             - shifted.components[i].samples).max())
                for i in range(exp.grid.dim))
    scale = max(max(float(np.abs(c.samples).max()) for c in shifted.components),
                1e-30)
    if worst > 1e-6 * max(scale, 1.0):
        raise ConfigInvalid(
            "fields.A2",
            f"declared A2 differs from A1 + grad(phi) by {worst:.3e}")


# ---------------------------------------------------------------------------
# Artifact helpers.


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path: str, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ScenarioResult:
    report: dict
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    assertions: list = field(default_factory=list)

    def check(self, name: str, passed: bool, **values):
        self.assertions.append({
            "name": name,
            "passed": bool(passed),
            "values": {k: _jsonable(v) for k, v in values.items()},
        })


def _face_name(face) -> str:
    axis, side = face
    return f"x{axis}{'lo' if side == 0 else 'hi'}"


def save_lambda_data(lam: LambdaData, base: str) -> None:
    """Raw binary blob + JSON header, mirroring the field-file layout."""
    segments = [("final_u", np.asarray(lam.final_u))]
    if lam.final_dtu is not None:
        segments.append(("final_dtu", np.asarray(lam.final_dtu)))
    for face in sorted(lam.neumann):
        segments.append((f"neumann:{_face_name(face)}",
                         np.asarray(lam.neumann[face])))
    complex_any = any(np.iscomplexobj(a) for _, a in segments)
    dtype = "<c16" if complex_any else "<f8"
    with open(base + ".bin", "wb") as fh:
        for _, arr in segments:
            fh.write(np.ascontiguousarray(arr.astype(dtype)).tobytes())
    header = {
        "dtype": "c128" if complex_any else "f64",
        "segments": [{"name": n, "shape": list(a.shape)} for n, a in segments],
    }
    with open(base + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
        fh.write("\n")
    manifest = {
        "probe_id": lam.probe_id,
        "omega0": lam.regions.omega0.vec.tolist(),
        "region_masks": {
            _face_name(f): lam.regions.G[f].astype(int).tolist()
            for f in sorted(lam.regions.G)
        },
    }
    write_json(base + "_manifest.json", manifest)


# ---------------------------------------------------------------------------
# Scenario implementations.


def _probe_from(exp: Experiment):
    p = exp.sub("probe")
    wavevec = p.get("wavevec")
    if wavevec is not None:
        wavevec = _floats(wavevec, "probe.wavevec", exp.grid.n_spatial)
    return ramp_sine_probe(freq=float(p.get("freq", 4.0)), wavevec=wavevec,
                           ramp_time=float(p.get("ramp_time", 0.6)))


def _scn_forward(exp: Experiment, out_dir: str,
                 save_lambda: bool = True) -> ScenarioResult:
    grid = exp.grid
    A = exp.covector("A1") or make_covector(grid, None)
    q = exp.scalar("q1")
    regions = BoundaryRegions(exp.direction0(), grid)
    probe = _probe_from(exp)
    lam = input_output_map(A, q, InitialData.zero(grid),
                           probe.dirichlet(grid), regions,
                           probe_id=probe.probe_id)
    res = ScenarioResult(report={
        "probe_id": lam.probe_id,
        "cfl": grid.cfl_number(),
        "final_u_max": float(np.abs(lam.final_u).max()),
        "final_u_l2": float(np.sqrt(np.mean(np.abs(lam.final_u) ** 2))),
        "neumann_max": {_face_name(f): float(np.abs(v).max())
                        for f, v in lam.neumann.items()},
        "observed_faces": [_face_name(f) for f in sorted(lam.neumann)],
    })
    finite = all(np.isfinite(v).all() for v in lam.neumann.values()) \
        and bool(np.isfinite(lam.final_u).all())
    res.check("forward-finite-state", finite,
              final_u_max=res.report["final_u_max"])
    if save_lambda:
        save_lambda_data(lam, os.path.join(out_dir, "lambda"))
    return res


def _scn_gauge_check(exp: Experiment, out_dir: str) -> ScenarioResult:
    from .pde import gauge_equivalence_check

    a1_spec = exp.field_spec("A1")
    q1_spec = exp.field_spec("q1")
    phi_spec = exp.field_spec("phi")
    if phi_spec is None:
        raise ConfigInvalid("fields.phi", "gauge-check needs the gauge bump")

    def build_coeffs(g):
        return (build_covector(g, a1_spec, "fields.A1") or make_covector(g, None),
                build_scalar(g, q1_spec, "fields.q1"))

    def build_gauge(g):
        return GaugeFunction(build_scalar(g, phi_spec, "fields.phi"))

    refinements = int(exp.cfg.get("refinements", 2))
    rep = gauge_equivalence_check(build_coeffs, build_gauge, _probe_from(exp),
                                  exp.direction0(), exp.grid,
                                  refinements=refinements)
    res = ScenarioResult(report={
        "grids": [list(s) for s in rep.grids],
        "state_diffs": rep.state_diffs,
        "lambda_diffs": rep.lambda_diffs,
        "state_orders": rep.state_orders,
        "lambda_orders": rep.lambda_orders,
    })
    rows = []
    for i, shape in enumerate(rep.grids):
        rows.append(["x".join(str(s) for s in shape),
                     rep.state_diffs[i], rep.lambda_diffs[i],
                     rep.state_orders[i] if i < len(rep.state_orders) else "",
                     rep.lambda_orders[i] if i < len(rep.lambda_orders) else ""])
    res.tables["gauge_check"] = (
        ["grid", "state_diff", "lambda_diff", "state_order", "lambda_order"],
        rows)
    tol = exp.tolerances
    res.check("gauge-discrepancy-order",
              min(rep.lambda_orders) >= tol["gauge_order_min"],
              orders=rep.lambda_orders, required_min=tol["gauge_order_min"])
    res.check("gauge-discrepancy-size",
              rep.lambda_diffs[0] <= tol["gauge_discrepancy_max"],
              coarsest=rep.lambda_diffs[0],
              bound=tol["gauge_discrepancy_max"])
    return res


def _scn_go_check(exp: Experiment, out_dir: str) -> ScenarioResult:
    A = exp.covector("A1", required=True)
    q = exp.scalar("q1")
    omega = exp.direction0()
    amp_g = amplitude_growing(A, SliceQuery(omega, None))
    amp_d = amplitude_decaying(A, omega)
    res_g = transport_residual(amp_g)
    res_d = transport_residual(amp_d)
    h_grid = _floats(exp.cfg.get("h_grid", [0.1, 0.05, 0.025]), "h_grid")
    rows = [[h, conjugated_remainder(A, q, amp_g, h)] for h in h_grid]
    values = [r[1] for r in rows]
    variation = (max(values) - min(values)) / max(np.mean(values), 1e-30)
    res = ScenarioResult(report={
        "transport_residual_growing": res_g,
        "transport_residual_decaying": res_d,
        "remainder_rows": {str(h): v for h, v in rows},
        "remainder_variation": float(variation),
    })
    res.tables["go_remainder"] = (["h", "value"], rows)
    tol = exp.tolerances
    res.check("go-transport-residual",
              max(res_g, res_d) <= tol["go_residual_max"],
              growing=res_g, decaying=res_d, bound=tol["go_residual_max"])
    res.check("go-remainder-bounded",
              variation <= tol["remainder_variation_max"],
              variation=float(variation),
              bound=tol["remainder_variation_max"])
    return res


def _slice_zetas(exp: Experiment) -> np.ndarray:
    zeta_max = float(exp.cfg.get("zeta_max", 6.0))
    zetas = spacelike_bins(exp.grid, zeta_max)
    if zetas.size == 0:
        raise ConfigInvalid("zeta_max",
                            "no space-like lattice frequencies below this radius")
    count = int(exp.cfg.get("n_zeta", 20))
    stride = max(1, len(zetas) // count)
    return zetas[::stride][:count]


def _scn_slice_check(exp: Experiment, out_dir: str) -> ScenarioResult:
    grid = exp.grid
    F = exp.covector("A1", required=True)
    zetas = _slice_zetas(exp)
    cell = float(np.prod(grid.spacings))
    z0 = np.array([ax[0] for ax in grid.axes])
    freqs = [np.fft.fftfreq(nn, d=sp) * 2.0 * np.pi
             for nn, sp in zip(grid.shape, grid.spacings)]
    worst = 0.0
    rows = []
    for zeta in zetas:
        omega = admissible_direction(zeta)
        frame = HyperplaneFrame.build(omega, F.effective_support_box(),
                                      zeta_max=float(np.linalg.norm(zeta)))
        val = fourier_slice(F, frame, [zeta]).entries[0]["value"]
        w = np.concatenate(([1.0], omega.vec))
        g = sum(w[i] * F.components[i].samples for i in range(grid.dim))
        spec = np.fft.fftn(g)
        idx = tuple(int(np.argmin(np.abs(fr - z))) for fr, z in zip(freqs, zeta))
        direct = cell * np.exp(-1j * float(zeta @ z0)) * spec[idx]
        rel = abs(val - direct) / max(abs(direct), 1e-30)
        worst = max(worst, float(rel))
        rows.append([*(float(c) for c in zeta), float(abs(val)), float(rel)])
    res = ScenarioResult(report={"n_zeta": len(zetas), "max_rel": worst})
    res.tables["slice_check"] = (
        [f"zeta_{i}" for i in range(grid.dim)] + ["abs_value", "rel_diff"],
        rows)
    res.check("slice-identity", worst <= exp.tolerances["slice_rel_max"],
              max_rel=worst, bound=exp.tolerances["slice_rel_max"])
    return res


def _recon_params(exp: Experiment) -> dict:
    r = exp.sub("recon")
    return {
        "pocs": PocsParams(max_iter=int(r.get("max_iter", 300)),
                           tol=float(r.get("tol", 1e-9)),
                           relaxation=float(r.get("relaxation", 1.0))),
        "zeta_max": float(r.get("zeta_max", exp.cfg.get("zeta_max", 6.0))),
        "step": r.get("step"),
        "transverse_step": r.get("transverse_step"),
        "support_pad_cells": int(r.get("support_pad_cells", 1)),
    }


def _direction_set(exp: Experiment) -> list[Direction]:
    dirs = exp.cfg.get("directions")
    if dirs:
        return [Direction.from_vector(d) for d in dirs]
    return [exp.direction0()]


def _two_form_rel_error(H: TwoFormField, truth: TwoFormField) -> float:
    num = den = 0.0
    d = H.dim
    for i in range(d):
        for j in range(i + 1, d):
            diff = H.entries[i][j].samples - truth.entries[i][j].samples
            num += float(np.sum(np.abs(diff) ** 2))
            den += float(np.sum(np.abs(truth.entries[i][j].samples) ** 2))
    return float(np.sqrt(num / max(den, 1e-300)))


def _recover_curvature_from(exp: Experiment, A: CovectorField,
                            params: dict) -> TwoFormField:
    provider = RayDataProvider.from_field(A)
    zetas = spacelike_bins(exp.grid, params["zeta_max"])
    cfg = ReconConfig(_direction_set(exp), zetas, pocs=params["pocs"])
    step = params["step"]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        return recover_curvature(
            provider, cfg,
            step=None if step is None else float(step),
            transverse_step=(None if params["transverse_step"] is None
                             else float(params["transverse_step"])),
            support_pad_cells=params["support_pad_cells"])


def _write_curvature_logs(H: TwoFormField, out_dir: str, prefix: str) -> None:
    for (i, j), log in H.iteration_logs.items():
        write_iteration_log(
            log, os.path.join(out_dir, f"{prefix}_iterations_{i}{j}.csv"))


def _scn_curvature_recon(exp: Experiment, out_dir: str) -> ScenarioResult:
    A = exp.covector("A1", required=True)
    params = _recon_params(exp)
    H = _recover_curvature_from(exp, A, params)
    truth = TwoFormField.from_covector(A)
    rel = _two_form_rel_error(H, truth)
    res = ScenarioResult(report={
        "rel_l2_error": rel,
        "converged": bool(H.converged),
        "n_frequencies": len(H.hhat_solutions),
        "max_solve_residual": max(s.residual for s in H.hhat_solutions.values()),
        "max_solve_cond": max(s.cond for s in H.hhat_solutions.values()),
    })
    _write_curvature_logs(H, out_dir, "curvature")
    res.check("curvature-error", rel <= exp.tolerances["curvature_rel_max"],
              rel_l2_error=rel, bound=exp.tolerances["curvature_rel_max"])
    return res


def _scn_q_recon(exp: Experiment, out_dir: str) -> ScenarioResult:
    grid = exp.grid
    q = exp.scalar("q1", required=True)
    params = _recon_params(exp)
    zetas = spacelike_bins(grid, params["zeta_max"])
    samples = synthetic_conedata(q, zetas)
    box = q.support_box
    if box is None:
        raise ConfigInvalid("fields.q1", "q must have compact support metadata")
    pad = params["support_pad_cells"]
    mask_arr = np.zeros(grid.shape)
    idx = []
    for ax, (lo, hi) in enumerate(np.asarray(box, dtype=float)):
        coords = grid.axes[ax]
        sp = grid.spacings[ax]
        idx.append((coords >= lo - pad * sp) & (coords <= hi + pad * sp))
    mask_arr = np.ones(grid.shape, dtype=bool)
    for ax, sel in enumerate(idx):
        shape = [1] * grid.dim
        shape[ax] = sel.size
        mask_arr &= sel.reshape(shape)
    support = ScalarField(grid, mask_arr.astype(float), check=False)
    cfg = ReconConfig(_direction_set(exp), zetas, pocs=params["pocs"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonConvergence)
        q_rec = recover_q(samples, support, cfg)
    rel = (l2_norm(grid, q_rec.samples - q.samples)
           / max(l2_norm(grid, q.samples), 1e-300))
    log = q_rec.iteration_log
    misfits = [row["cone_misfit"] for row in log]
    monotone = all(b <= a + 1e-12 * max(1.0, a)
                   for a, b in zip(misfits, misfits[1:]))
    res = ScenarioResult(report={
        "rel_l2_error": float(rel),
        "iterations": int(q_rec.iterations),
        "converged": bool(q_rec.converged),
        "final_misfit": misfits[-1] if misfits else 0.0,
    })
    write_iteration_log(log, os.path.join(out_dir, "q_iterations.csv"))
    res.check("q-error", rel <= exp.tolerances["q_rel_max"],
              rel_l2_error=float(rel), bound=exp.tolerances["q_rel_max"])
    res.check("q-misfit-monotone", monotone, final=misfits[-1] if misfits else 0.0)
    return res


def _scn_full_pipeline(exp: Experiment, out_dir: str) -> ScenarioResult:
    A = exp.covector("A1", required=True)
    phi = exp.scalar("phi", required=True)
    params = _recon_params(exp)
    H1 = _recover_curvature_from(exp, A, params)
    A2 = gauge_transform(A, GaugeFunction(phi))
    H2 = _recover_curvature_from(exp, A2, params)
    truth = TwoFormField.from_covector(A)
    rel = _two_form_rel_error(H1, truth)
    scale = np.sqrt(sum(
        float(np.sum(np.abs(truth.entries[i][j].samples) ** 2))
        for i in range(truth.dim) for j in range(i + 1, truth.dim)))
    shift = np.sqrt(sum(
        float(np.sum(np.abs(H1.entries[i][j].samples
                            - H2.entries[i][j].samples) ** 2))
        for i in range(truth.dim) for j in range(i + 1, truth.dim)))
    gauge_rel = float(shift / max(scale, 1e-300))
    res = ScenarioResult(report={"curvature_rel_error": rel,
                                 "gauge_shift_rel": gauge_rel})
    _write_curvature_logs(H1, out_dir, "pipeline")
    res.check("pipeline-curvature-error",
              rel <= exp.tolerances["curvature_rel_max"],
              rel_l2_error=rel, bound=exp.tolerances["curvature_rel_max"])
    res.check("pipeline-gauge-invariance",
              gauge_rel <= exp.tolerances["gauge_shift_rel_max"],
              gauge_shift_rel=gauge_rel,
              bound=exp.tolerances["gauge_shift_rel_max"])
    q_spec = exp.field_spec("q1")
    if q_spec is not None:
        sub = _scn_q_recon(exp, out_dir)
        res.report["q"] = sub.report
        res.tables.update(sub.tables)
        res.assertions.extend(sub.assertions)
    return res


def _scn_carleman_sweep(exp: Experiment, out_dir: str) -> ScenarioResult:
    c = exp.sub("carleman")
    A = exp.covector("A1") or make_covector(exp.grid, None)
    q = exp.scalar("q1")
    h_grid = _floats(c.get("h_grid", exp.cfg.get("h_grid", [0.2, 0.1, 0.05, 0.025])),
                     "carleman.h_grid")
    s = int(c.get("s", 0))
    if s not in (0, -1):
        raise ConfigInvalid("carleman.s", "the scaled-norm order must be 0 or -1")
    amplitudes = tuple(_floats(c.get("amplitudes", [0.5, 1.0, 2.0]),
                               "carleman.amplitudes"))
    weight = CarlemanWeight(exp.direction0(), eps=float(c.get("eps", 1.0)),
                            h=max(h_grid))
    family = default_test_family(exp.grid, amplitudes=amplitudes)
    rows_i = interior_sweep(A, q, family, weight, h_grid=h_grid, s=s)
    rows_b = boundary_sweep(A, q, family, weight, h_grid=h_grid)
    growth_i = max_growth_per_halving(rows_i)
    growth_b = max_growth_per_halving(rows_b)
    res = ScenarioResult(report={
        "family_size": len(family),
        "interior_growth_per_halving": growth_i,
        "boundary_growth_per_halving": growth_b,
        "s": s,
    })
    int_rows = [[r["h"], *r["ratios"], r["max_ratio"]] for r in rows_i]
    res.tables["carleman_interior"] = (
        ["h"] + [f"ratio_{i}" for i in range(len(family))] + ["max_ratio"],
        int_rows)
    lhs_keys = sorted(rows_b[0]["lhs_terms"])
    rhs_keys = sorted(rows_b[0]["rhs_terms"])
    bnd_rows = [[r["h"], *(r["lhs_terms"][k] for k in lhs_keys),
                 *(r["rhs_terms"][k] for k in rhs_keys), r["max_ratio"]]
                for r in rows_b]
    res.tables["carleman_boundary"] = (
        ["h"] + [f"lhs_{k}" for k in lhs_keys] + [f"rhs_{k}" for k in rhs_keys]
        + ["max_ratio"], bnd_rows)
    bound = 1.0 + exp.tolerances["carleman_growth_max"] - 1.0  # alias for clarity
    res.check("carleman-interior-growth",
              growth_i <= exp.tolerances["carleman_growth_max"],
              growth=growth_i, bound=exp.tolerances["carleman_growth_max"])
    res.check("carleman-boundary-growth",
              growth_b <= exp.tolerances["carleman_growth_max"],
              growth=growth_b, bound=exp.tolerances["carleman_growth_max"])
    return res


SCENARIO_RUNNERS = {
    "forward": _scn_forward,
    "gauge-check": _scn_gauge_check,
    "go-check": _scn_go_check,
    "slice-check": _scn_slice_check,
    "curvature-recon": _scn_curvature_recon,
    "q-recon": _scn_q_recon,
    "full-pipeline": _scn_full_pipeline,
    "carleman-sweep": _scn_carleman_sweep,
}


# ---------------------------------------------------------------------------
# run / export.


def _versions() -> dict:
    import scipy

    return {
        "lrlab": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run(config_path: str, out_dir: str | None = None, threads: int = 1,
        deterministic: bool = True,
        scenario_override: list[str] | None = None) -> tuple[int, str]:
    """Execute the configured scenarios; returns (exit_code, artifact_dir)."""
    cfg = load_config(config_path)
    raw_text = cfg.pop("_raw_text")
    exp = validate_config(cfg)
    scenarios = scenario_override if scenario_override is not None else exp.scenarios
    for s in scenarios:
        if s not in SCENARIOS:
            raise ConfigInvalid("scenarios", f"unknown scenario '{s}'")
    art_dir = out_dir or exp.out_dir
    os.makedirs(art_dir, exist_ok=True)

    assertions: list[dict] = []
    failure: LrlabError | None = None
    ran: list[str] = []
    emitted: list[str] = []
    for name in scenarios:
        try:
            result = SCENARIO_RUNNERS[name](exp, art_dir)
        except ConfigInvalid:
            raise
        except LrlabError as exc:
            failure = exc
            assertions.append({"name": f"{name}:completed", "passed": False,
                               "values": {"error": f"{type(exc).__name__}: {exc}"}})
            break
        ran.append(name)
        path = os.path.join(art_dir, f"{name.replace('-', '_')}.json")
        write_json(path, result.report)
        emitted.append(os.path.basename(path))
        for tname, (header, rows) in result.tables.items():
            tpath = os.path.join(art_dir, f"{tname}.csv")
            write_csv(tpath, header, rows)
            emitted.append(os.path.basename(tpath))
        for extra in sorted(os.listdir(art_dir)):
            if extra.endswith(".csv") and extra not in emitted \
                    and extra.split("_")[0] in name.replace("-", "_"):
                emitted.append(extra)
        assertions.extend(result.assertions)

    manifest = {
        "name": exp.cfg["name"],
        "schema": _SCHEMA_VERSION,
        "config_sha256": hashlib.sha256(raw_text.encode("utf-8")).hexdigest(),
        "versions": _versions(),
        "tolerances": exp.tolerances,
        "scenarios": scenarios,
        "completed": ran,
        "threads": int(threads),
        "deterministic": bool(deterministic),
        "assertions": assertions,
        "status": ("numerical-failure" if failure is not None
                   else "assertion-failed"
                   if any(not a["passed"] for a in assertions) else "ok"),
    }
    write_json(os.path.join(art_dir, "manifest.json"), manifest)
    if failure is not None:
        print(f"numerical failure in scenario: {failure}", file=sys.stderr)
        return 4, art_dir
    failed = [a for a in assertions if not a["passed"]]
    for a in assertions:
        flag = "PASS" if a["passed"] else "FAIL"
        print(f"[{flag}] {a['name']}: " + ", ".join(
            f"{k}={v}" for k, v in a["values"].items()))
    if failed:
        return 3, art_dir
    return 0, art_dir


def _read_csv(path: str) -> tuple[list[str], list[list]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return [], []
    header, body = rows[0], rows[1:]
    out = []
    for row in body:
        conv = []
        for v in row:
            try:
                conv.append(float(v))
            except ValueError:
                conv.append(v)
        out.append(conv)
    return header, out


def _flatten(prefix: str, obj, out: list):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out.append([prefix, obj])


def export(report_dir: str, fmt: str, out_dir: str | None = None) -> str:
    """Deterministically re-serialize a run's reports as csv or json."""
    manifest_path = os.path.join(report_dir, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise MissingReport(f"no manifest.json under {report_dir}")
    if fmt not in ("csv", "json"):
        raise ConfigInvalid("format", f"unknown export format '{fmt}'")
    dest = out_dir or os.path.join(report_dir, f"export-{fmt}")
    os.makedirs(dest, exist_ok=True)
    schema: dict[str, list[str]] = {}
    names = sorted(os.listdir(report_dir))
    for name in names:
        src = os.path.join(report_dir, name)
        if not os.path.isfile(src):
            continue
        ext = os.path.splitext(name)[1]
        # Converted files keep the full source name as their stem
        # (gauge_check.json -> gauge_check.json.csv) so a table and a report
        # sharing a stem can never collide.
        if ext == ".csv":
            header, rows = _read_csv(src)
            if fmt == "csv":
                write_csv(os.path.join(dest, name), header, rows)
                schema[name] = header
            else:
                payload = [dict(zip(header, row)) for row in rows]
                write_json(os.path.join(dest, name + ".json"), payload)
                schema[name + ".json"] = header
        elif ext == ".json":
            with open(src, encoding="utf-8") as fh:
                payload = json.load(fh)
            if fmt == "json":
                write_json(os.path.join(dest, name), payload)
                schema[name] = ["(json document)"]
            else:
                flat: list = []
                _flatten("", payload, flat)
                write_csv(os.path.join(dest, name + ".csv"),
                          ["key", "value"], flat)
                schema[name + ".csv"] = ["key", "value"]
    write_json(os.path.join(dest, "schema.json"), schema)
    return dest


# ---------------------------------------------------------------------------
# Module-verb adapters (thin wrappers over the scenario machinery).


def _single(config_path: str, out_dir, scenario: str, **run_kw) -> int:
    code, art = run(config_path, out_dir=out_dir,
                    scenario_override=[scenario], **run_kw)
    print(f"artifacts: {art}")
    return code


def _cmd_go_amplitude(args) -> int:
    exp = validate_config(load_config(args.config))
    A = exp.covector("A1", required=True)
    omega = Direction.from_vector(_floats(args.omega.split(","), "--omega"))
    zeta = None
    if args.zeta:
        zeta = tuple(_floats(args.zeta.split(","), "--zeta"))
    amp_g = amplitude_growing(A, SliceQuery(omega, zeta))
    amp_d = amplitude_decaying(A, omega)
    out = args.out or exp.out_dir
    os.makedirs(out, exist_ok=True)
    write_field(amp_g.field, os.path.join(out, "amplitude_growing"))
    write_field(amp_d.field, os.path.join(out, "amplitude_decaying"))
    write_json(os.path.join(out, "amplitude.json"), {
        "omega": omega.vec.tolist(),
        "zeta": None if zeta is None else list(zeta),
        "growing_max": float(np.abs(amp_g.field.samples).max()),
        "decaying_max": float(np.abs(amp_d.field.samples).max()),
        "transport_residual_growing": transport_residual(amp_g),
        "transport_residual_decaying": transport_residual(amp_d),
    })
    print(f"artifacts: {out}")
    return 0


def _cmd_go_remainder(args) -> int:
    exp = validate_config(load_config(args.config))
    A = exp.covector("A1", required=True)
    q = exp.scalar("q1")
    omega = exp.direction0()
    amp = amplitude_growing(A, SliceQuery(omega, None))
    h_grid = (_floats(args.h_grid.split(","), "--h-grid") if args.h_grid
              else _floats(exp.cfg.get("h_grid", [0.1, 0.05, 0.025]), "h_grid"))
    rows = [[h, conjugated_remainder(A, q, amp, h)] for h in h_grid]
    out = args.out or exp.out_dir
    os.makedirs(out, exist_ok=True)
    write_csv(os.path.join(out, "go_remainder.csv"), ["h", "value"], rows)
    print(f"artifacts: {out}")
    return 0


def _cmd_lray_transform(args) -> int:
    exp = validate_config(load_config(args.config))
    A = exp.covector("A1", required=True)
    omega = (Direction.from_vector(_floats(args.omega.split(","), "--omega"))
             if args.omega else exp.direction0())
    frame = HyperplaneFrame.build(omega, A.effective_support_box(),
                                  zeta_max=0.0)
    pts = frame.lattice_points()
    vals = light_ray_transform_batch(A, pts, omega)
    out = args.out or exp.out_dir
    os.makedirs(out, exist_ok=True)
    rows = [[*(float(c) for c in p), float(np.real(v))]
            for p, v in zip(pts, vals)]
    write_csv(os.path.join(out, "ray_transform.csv"),
              [f"base_{i}" for i in range(exp.grid.dim)] + ["value"], rows)
    print(f"artifacts: {out}")
    return 0


def _cmd_lray_hhat(args) -> int:
    exp = validate_config(load_config(args.config))
    A = exp.covector("A1", required=True)
    with open(args.zeta_file, encoding="utf-8") as fh:
        zlist = json.load(fh)
    if not isinstance(zlist, list) or not zlist:
        raise ConfigInvalid("zeta-file", "expected a non-empty JSON list of vectors")
    h = TwoFormField.from_covector(A)
    out = args.out or exp.out_dir
    os.makedirs(out, exist_ok=True)
    all_samples = ConeSamples()
    solutions = []
    for i, z in enumerate(zlist):
        zeta = np.asarray(_floats(z, f"zeta-file[{i}]", exp.grid.dim))
        omega0 = exp.omega0 if exp.omega0 is not None else None
        fam = direction_family(zeta, omega0=omega0)
        samples = transverse_slice_data(h, fam)
        for e in samples:
            all_samples.add(e["zeta"], e["omega"], e["value"],
                            k=e.get("k", 0), alpha=e.get("alpha", 0.0))
        sol = solve_hhat_system(samples, zeta)
        solutions.append({
            "zeta": zeta.tolist(),
            "matrix_re": np.real(sol.matrix).tolist(),
            "matrix_im": np.imag(sol.matrix).tolist(),
            "residual": sol.residual,
            "cond": sol.cond,
            "asymmetry": sol.asymmetry,
        })
    all_samples.write(os.path.join(out, "cone_samples.jsonl"))
    write_json(os.path.join(out, "hhat_solutions.json"), solutions)
    print(f"artifacts: {out}")
    return 0


def _cmd_recon_gauge_potential(args) -> int:
    exp = validate_config(load_config(args.config))
    phi = exp.scalar("phi", required=True)
    F = gradient_tx(phi)
    r = exp.sub("recon")
    origin = r.get("path_origin")
    if origin is None:
        origin = [float(b[0]) for b in exp.grid.bounds]
    phi_rec = poincare_integrate(F, origin)
    err = float(np.abs(phi_rec.phi.samples - phi.samples).max())
    scale = max(float(np.abs(phi.samples).max()), 1e-300)
    out = args.out or exp.out_dir
    os.makedirs(out, exist_ok=True)
    write_json(os.path.join(out, "gauge_potential.json"), {
        "origin": [float(c) for c in origin],
        "max_abs_error": err,
        "scale": scale,
        "rel_error": err / scale,
    })
    passed = err <= exp.tolerances["potential_roundtrip_max"] * scale
    print(f"[{'PASS' if passed else 'FAIL'}] potential-roundtrip: "
          f"rel={err / scale:.3e}")
    print(f"artifacts: {out}")
    return 0 if passed else 3


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="lrlab",
        description="Scenario runner for the wave-potential tomography laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="JSON config path or bundled scenario name")
        p.add_argument("--out", default=None, help="artifact directory")
        p.add_argument("--threads", type=int, default=1,
                       help="reserved; recorded in the manifest")
        p.add_argument("--deterministic", action="store_true", default=True,
                       help="force deterministic reductions (default)")

    p_run = sub.add_parser("run", help="execute the configured scenarios")
    add_common(p_run)

    p_exp = sub.add_parser("export", help="re-serialize a report directory")
    p_exp.add_argument("--report-dir", required=True)
    p_exp.add_argument("--format", required=True, choices=("csv", "json"))
    p_exp.add_argument("--out", default=None)

    p_pde = sub.add_parser("pde", help="wave solver verbs")
    pde_sub = p_pde.add_subparsers(dest="verb", required=True)
    for verb in ("solve", "lambda", "gauge-check"):
        add_common(pde_sub.add_parser(verb))

    p_go = sub.add_parser("go", help="geometric-optics verbs")
    go_sub = p_go.add_subparsers(dest="verb", required=True)
    p_amp = go_sub.add_parser("amplitude")
    add_common(p_amp)
    p_amp.add_argument("--omega", required=True,
                       help="comma-separated spatial direction")
    p_amp.add_argument("--zeta", default=None,
                       help="comma-separated spacetime frequency")
    add_common(go_sub.add_parser("residual"))
    p_rem = go_sub.add_parser("remainder-sweep")
    add_common(p_rem)
    p_rem.add_argument("--h-grid", default=None,
                       help="comma-separated h values")

    p_lray = sub.add_parser("lray", help="ray transform verbs")
    lray_sub = p_lray.add_subparsers(dest="verb", required=True)
    p_tr = lray_sub.add_parser("transform")
    add_common(p_tr)
    p_tr.add_argument("--omega", default=None)
    add_common(lray_sub.add_parser("slice"))
    p_hh = lray_sub.add_parser("hhat")
    add_common(p_hh)
    p_hh.add_argument("--zeta-file", required=True)

    p_recon = sub.add_parser("recon", help="reconstruction verbs")
    recon_sub = p_recon.add_subparsers(dest="verb", required=True)
    for verb in ("curvature", "gauge-potential", "q", "pipeline"):
        add_common(recon_sub.add_parser(verb))

    p_car = sub.add_parser("carleman", help="weighted estimate sweeps")
    car_sub = p_car.add_subparsers(dest="verb", required=True)
    add_common(car_sub.add_parser("boundary-sweep"))
    p_int = car_sub.add_parser("interior-sweep")
    add_common(p_int)
    p_int.add_argument("--s", type=int, default=0, choices=(0, -1))

    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MissingReport as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 2
    except AssertionFailed as exc:
        print(f"assertion failure: {exc}", file=sys.stderr)
        return 3
    except LrlabError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def _dispatch(args) -> int:
    kw = {"threads": getattr(args, "threads", 1),
          "deterministic": getattr(args, "deterministic", True)}
    if args.command == "run":
        code, art = run(args.config, out_dir=args.out, **kw)
        print(f"artifacts: {art}")
        return code
    if args.command == "export":
        dest = export(args.report_dir, args.format, out_dir=args.out)
        print(f"artifacts: {dest}")
        return 0
    if args.command == "pde":
        scenario = {"solve": "forward", "lambda": "forward",
                    "gauge-check": "gauge-check"}[args.verb]
        return _single(args.config, args.out, scenario, **kw)
    if args.command == "go":
        if args.verb == "amplitude":
            return _cmd_go_amplitude(args)
        if args.verb == "remainder-sweep":
            return _cmd_go_remainder(args)
        return _single(args.config, args.out, "go-check", **kw)
    if args.command == "lray":
        if args.verb == "transform":
            return _cmd_lray_transform(args)
        if args.verb == "hhat":
            return _cmd_lray_hhat(args)
        return _single(args.config, args.out, "slice-check", **kw)
    if args.command == "recon":
        if args.verb == "gauge-potential":
            return _cmd_recon_gauge_potential(args)
        scenario = {"curvature": "curvature-recon", "q": "q-recon",
                    "pipeline": "full-pipeline"}[args.verb]
        return _single(args.config, args.out, scenario, **kw)
    if args.command == "carleman":
        if args.verb == "interior-sweep":
            cfg = load_config(args.config)
            cfg.setdefault("carleman", {})["s"] = args.s
            raw = cfg.pop("_raw_text")
            exp = validate_config(cfg)
            art = args.out or exp.out_dir
            os.makedirs(art, exist_ok=True)
            result = _scn_carleman_sweep(exp, art)
            write_json(os.path.join(art, "carleman_sweep.json"), result.report)
            for tname, (header, rows) in result.tables.items():
                write_csv(os.path.join(art, f"{tname}.csv"), header, rows)
            ok = all(a["passed"] for a in result.assertions)
            for a in result.assertions:
                flag = "PASS" if a["passed"] else "FAIL"
                print(f"[{flag}] {a['name']}")
            print(f"artifacts: {art}")
            return 0 if ok else 3
        return _single(args.config, args.out, "carleman-sweep", **kw)
    raise ConfigInvalid("(cli)", f"unknown command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
