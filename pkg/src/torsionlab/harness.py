"""Run configurations, the verification suite, convergence studies and report output."""
from __future__ import annotations

import csv
import datetime as _dt
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml
from scipy.special import jn_zeros

from . import __version__, bounds
from .fem import DiscreteField
from .geometry import (
    CANONICAL_KINDS,
    PolygonalDomain,
    make_canonical_domain,
    measures,
    refine,
    triangulate,
)
from .linear import (
    BoundaryCondition,
    functional_inequality_margins,
    heat_trace_partial_sum,
    solve_torsion,
    spectrum,
    torsional_rigidity,
)
from .plaplace import (
    caccioppoli_check,
    dirichlet_p_ratio,
    levelset_profile,
    p_eigenvalue_2d,
    radial_p_eigenvalue,
    solve_p_torsion,
    level_set_verdict,
)
from .wos import distance_to_boundary, wos_exit_time

__all__ = [
    "ConfigError",
    "DomainSpec",
    "WosSettings",
    "RunConfig",
    "Report",
    "ConvergenceTable",
    "default_config",
    "load_config",
    "config_from_dict",
    "run_suite",
    "convergence_study",
    "emit_report",
    "report_from_json",
]


class ConfigError(ValueError):
    def __init__(self, field_name: str, reason: str):
        super().__init__(f"{field_name}: {reason}")
        self.field = field_name
        self.reason = reason


@dataclass(frozen=True)
class DomainSpec:
    kind: str
    params: tuple[float, ...] = ()

    def build(self):
        return make_canonical_domain(self.kind, self.params)

    @property
    def label(self) -> str:
        return self.build().name


@dataclass(frozen=True)
class WosSettings:
    n_walks: int = 20_000
    eps_shell: float | None = None  # None: 1e-4 times the domain diameter
    seed: int = 0
    n_probes: int = 5
    enabled: bool = True


DEFAULT_TOLERANCES = {"default": 0.02, "small_b_limit": 0.02, "wos_agreement": 0.02, "level_set_grid": 0.005,
                      "p_ratio_stability": 0.05}


@dataclass(frozen=True)
class RunConfig:
    corpus: tuple[DomainSpec, ...]
    b_values: tuple[float, ...]
    p_values: tuple[float, ...]
    refinement_levels: int
    seed: int
    eigen_count: int = 10
    small_b: float | None = 1e-3
    mesh_size: float = 0.1  # level-0 target edge length as a fraction of the diameter
    heat_times: tuple[float, ...] = (0.1, 0.5, 1.0, 2.0)
    n_random_fields: int = 1000
    n_cutoffs: int = 100
    n_levels: int = 128
    wos: WosSettings = field(default_factory=WosSettings)
    tolerances: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    output_dir: str = "torsionlab-out"
    workers: int = 1

    def tol(self, name: str) -> float:
        return self.tolerances.get(name, self.tolerances["default"])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["corpus"] = [{"kind": s.kind, "params": list(s.params)} for s in self.corpus]
        for key in ("b_values", "p_values", "heat_times"):
            d[key] = list(d[key])
        return d


DEFAULT_CORPUS = (
    DomainSpec("unit_square"),
    DomainSpec("rectangle", (2.0, 1.0)),
    DomainSpec("disk_polygon", (1.0, 256)),
    DomainSpec("annulus_polygon", (0.5, 1.0, 256)),
    DomainSpec("l_shape"),
)


def default_config(**overrides) -> RunConfig:
    cfg = RunConfig(corpus=DEFAULT_CORPUS, b_values=(0.1, 1.0, 10.0), p_values=(1.5, 2.0, 3.0),
                    refinement_levels=3, seed=0)
    cfg = replace(cfg, **overrides)
    validate_config(cfg)
    return cfg


# configuration loading -------------------------------------------------------------

_TOP_KEYS = {f for f in RunConfig.__dataclass_fields__}
_WOS_KEYS = {f for f in WosSettings.__dataclass_fields__}


def _key_lines(node, prefix="") -> dict[str, int]:
    """Line number (1-based) of every mapping key in a composed YAML tree."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}.{k.value}" if prefix else str(k.value)
            out[path] = k.start_mark.line + 1
            out.update(_key_lines(v, path))
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            out.update(_key_lines(v, f"{prefix}[{i}]"))
    return out


def _where(lines, path, source):
    line = lines.get(path)
    return f"{source}:{line}" if line else source


def load_config(path) -> RunConfig:
    """Read a YAML run configuration; see the README for the schema."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text)) if data else {}
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"parse error in {path}: {exc}") from exc
    return config_from_dict(data, source=str(path), lines=lines)


def config_from_dict(data: Any, source: str = "<dict>", lines: dict | None = None) -> RunConfig:
    lines = lines or {}
    if not isinstance(data, dict):
        raise ConfigError("config", f"top level of {source} must be a mapping")
    for key in data:
        if key not in _TOP_KEYS:
            raise ConfigError(str(key), f"unknown key at {_where(lines, str(key), source)}")
    for req in ("corpus", "b_values", "p_values", "refinement_levels", "seed"):
        if req not in data:
            raise ConfigError(req, f"missing required key in {source}")
    kwargs = dict(data)
    corpus = data["corpus"]
    if not isinstance(corpus, list):
        raise ConfigError("corpus", "must be a list of {kind, params} entries")
    specs = []
    for i, entry in enumerate(corpus):
        if isinstance(entry, str):
            entry = {"kind": entry}
        if not isinstance(entry, dict) or "kind" not in entry:
            raise ConfigError(f"corpus[{i}]", "needs a 'kind'")
        for key in entry:
            if key not in ("kind", "params"):
                raise ConfigError(f"corpus[{i}].{key}", f"unknown key at {_where(lines, f'corpus[{i}].{key}', source)}")
        specs.append(DomainSpec(str(entry["kind"]), tuple(float(v) for v in entry.get("params", []) or [])))
    kwargs["corpus"] = tuple(specs)
    for key in ("b_values", "p_values", "heat_times"):
        if key in kwargs:
            val = kwargs[key]
            if not isinstance(val, list):
                raise ConfigError(key, "must be a list of numbers")
            try:
                kwargs[key] = tuple(float(v) for v in val)
            except (TypeError, ValueError) as exc:
                raise ConfigError(key, f"non-numeric entry: {exc}") from exc
    if "wos" in kwargs:
        w = kwargs["wos"] or {}
        if not isinstance(w, dict):
            raise ConfigError("wos", "must be a mapping")
        for key in w:
            if key not in _WOS_KEYS:
                raise ConfigError(f"wos.{key}", f"unknown key at {_where(lines, f'wos.{key}', source)}")
        kwargs["wos"] = WosSettings(**w)
    if "tolerances" in kwargs:
        t = kwargs["tolerances"] or {}
        if not isinstance(t, dict):
            raise ConfigError("tolerances", "must be a mapping")
        merged = dict(DEFAULT_TOLERANCES)
        for key, val in t.items():
            if key not in DEFAULT_TOLERANCES and key not in bounds.ANCHORS:
                raise ConfigError(f"tolerances.{key}", f"unknown check at {_where(lines, f'tolerances.{key}', source)}")
            merged[key] = float(val)
        kwargs["tolerances"] = merged
    cfg = RunConfig(**kwargs)
    validate_config(cfg)
    return cfg


def validate_config(cfg: RunConfig) -> None:
    if not cfg.corpus:
        raise ConfigError("corpus", "must not be empty")
    for i, spec in enumerate(cfg.corpus):
        if spec.kind not in CANONICAL_KINDS:
            raise ConfigError(f"corpus[{i}].kind", f"unknown domain kind {spec.kind!r}")
        try:
            dom = spec.build()
        except ValueError as exc:
            raise ConfigError(f"corpus[{i}]", str(exc)) from exc
        if not isinstance(dom, PolygonalDomain):
            raise ConfigError(f"corpus[{i}].kind", "the suite meshes polygonal domains only")
    if not cfg.b_values:
        raise ConfigError("b_values", "must not be empty")
    if any(not (math.isfinite(b) and b > 0) for b in cfg.b_values):
        raise ConfigError("b_values", "every Robin constant must be finite and > 0")
    if not cfg.p_values:
        raise ConfigError("p_values", "must not be empty")
    if any(not (math.isfinite(p) and p > 1) for p in cfg.p_values):
        raise ConfigError("p_values", "every p must exceed 1")
    if not isinstance(cfg.refinement_levels, int) or cfg.refinement_levels < 1:
        raise ConfigError("refinement_levels", "must be an integer >= 1")
    if cfg.seed is None or not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed", "a non-negative integer seed is required")
    if not isinstance(cfg.eigen_count, int) or cfg.eigen_count < 1:
        raise ConfigError("eigen_count", "must be an integer >= 1")
    if cfg.small_b is not None and not cfg.small_b > 0:
        raise ConfigError("small_b", "must be > 0 or null")
    if not 0 < cfg.mesh_size <= 0.5:
        raise ConfigError("mesh_size", "must lie in (0, 0.5]")
    if not cfg.heat_times or any(not t > 0 for t in cfg.heat_times):
        raise ConfigError("heat_times", "must be a non-empty list of positive times")
    for key in ("n_random_fields", "n_cutoffs"):
        if not isinstance(getattr(cfg, key), int) or getattr(cfg, key) < 1:
            raise ConfigError(key, "must be an integer >= 1")
    if not isinstance(cfg.n_levels, int) or cfg.n_levels < 16:
        raise ConfigError("n_levels", "must be an integer >= 16")
    for key, val in cfg.tolerances.items():
        if not 0 < val <= 0.1:
            raise ConfigError(f"tolerances.{key}", "must lie in (0, 0.1]")
    if "default" not in cfg.tolerances:
        raise ConfigError("tolerances.default", "missing")
    w = cfg.wos
    if not isinstance(w.n_walks, int) or w.n_walks < 2:
        raise ConfigError("wos.n_walks", "must be an integer >= 2")
    if w.eps_shell is not None and not w.eps_shell > 0:
        raise ConfigError("wos.eps_shell", "must be > 0 or null")
    if not isinstance(w.seed, int) or w.seed < 0:
        raise ConfigError("wos.seed", "a non-negative integer seed is required")
    if not isinstance(w.n_probes, int) or w.n_probes < 1:
        raise ConfigError("wos.n_probes", "must be an integer >= 1")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("workers", "must be an integer >= 1")


# reference values ------------------------------------------------------------------


def _square_series(n_terms: int = 201) -> tuple[float, float]:
    """(center value, integral) of the Dirichlet torsion function of the unit square."""
    n = np.arange(1, 2 * n_terms, 2, dtype=float)
    center = 1.0 / 8.0 - 4.0 / math.pi**3 * np.sum((-1.0) ** ((n - 1) // 2) / (n**3 * np.cosh(n * math.pi / 2)))
    mm, nn = np.meshgrid(n, n)
    rigidity = 64.0 / math.pi**6 * np.sum(1.0 / (mm**2 * nn**2 * (mm**2 + nn**2)))
    return float(center), float(rigidity)


def closed_form(spec: DomainSpec, quantity: str) -> float | None:
    """Dirichlet reference values for the disk and the unit square (None elsewhere)."""
    if spec.kind == "disk_polygon":
        r = spec.params[0]
        return {"lambda1": jn_zeros(0, 1)[0] ** 2 / r**2, "sup_norm": r**2 / 4.0,
                "rigidity": math.pi * r**4 / 8.0}[quantity]
    if spec.kind == "unit_square":
        center, rig = _square_series()
        return {"lambda1": 2.0 * math.pi**2, "sup_norm": center, "rigidity": rig}[quantity]
    return None


# suite -------------------------------------------------------------------------------


def _seed(cfg: RunConfig, *parts) -> int:
    key = "|".join(str(p) for p in parts)
    return int(np.random.SeedSequence([cfg.seed, zlib.crc32(key.encode())]).generate_state(1)[0])


def _meshes(spec: DomainSpec, cfg: RunConfig):
    dom = spec.build()
    mesh = triangulate(dom, cfg.mesh_size * dom.diameter)
    out = [mesh]
    for _ in range(cfg.refinement_levels - 1):
        mesh = refine(mesh)
        out.append(mesh)
    return dom, out


def _cross_section(fld: DiscreteField, n: int = 65) -> dict:
    nodes = fld.mesh.nodes
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    c = 0.5 * (lo + hi)
    half = 0.5 * (hi[0] - lo[0]) * (1 - 1e-9)
    s = np.linspace(-half, half, n)
    vals = fld.at(np.column_stack([c[0] + s, np.full(n, c[1])]))
    keep = np.isfinite(vals)
    return {"center": [float(c[0]), float(c[1])], "s": s[keep].tolist(), "u": vals[keep].tolist()}


def _verdict(cfg, name, lhs, rhs, inputs=None, tol_key=None):
    return bounds.make_verdict(name, bounds.ANCHORS[name], lhs, rhs, cfg.tol(tol_key or name), inputs).to_dict()


def _linear_case(mesh, bc: BoundaryCondition, cfg: RunConfig, label: str, level: int) -> dict:
    k = min(cfg.eigen_count, mesh.n_nodes - 1) if not bc.is_dirichlet else 1
    spec = spectrum(mesh, bc, k)
    lam = float(spec.eigenvalues[0])
    sol = solve_torsion(mesh, bc, with_eigen=False)
    u = sol.field.values
    rig = torsional_rigidity(sol)
    area, perim = measures(mesh)
    q = {"lambda1": lam, "sup_norm": sol.sup_norm, "rigidity": rig, "cg_iterations": sol.cg_iterations,
         "cg_residual": sol.cg_residual, "eigenvalues": spec.eigenvalues.tolist(),
         "max_eigen_residual": max(pr.residual for pr in spec.pairs)}
    verdicts = []
    base = {"lambda1": lam, "sup_norm": sol.sup_norm, "m": 2}
    if bc.is_dirichlet:
        lo, hi = bounds.dirichlet_sup_bound(2, lam)
        verdicts.append(_verdict(cfg, "dirichlet_sup_lower", lo, sol.sup_norm, base))
        verdicts.append(_verdict(cfg, "dirichlet_sup_upper", sol.sup_norm, hi, base))
    else:
        b = bc.b
        lo, hi = bounds.robin_sup_bound(2, b, lam)
        base["b"] = b
        verdicts.append(_verdict(cfg, "robin_sup_lower", lo, sol.sup_norm, base))
        verdicts.append(_verdict(cfg, "robin_sup_upper", sol.sup_norm, hi, base))
        consts = bounds.catalog_constants(2, b, lam)
        lams = spec.eigenvalues
        for t, s in zip(cfg.heat_times, heat_trace_partial_sum(spec, cfg.heat_times)):
            eb = bounds.eigen_bounds(consts, area, lams, t)
            verdicts.append(_verdict(cfg, "heat_trace", s, eb.trace_rhs,
                                     {"t": t, "k": len(lams), "area": area, "N_b": consts.N_b, "b": b}))
        eb = bounds.eigen_bounds(consts, area, lams, 1.0)
        for j, rhs in enumerate(eb.eigfun_rhs):
            verdicts.append(_verdict(cfg, "eigenfunction_sup", spec.eigenfunction(j).sup_norm, rhs,
                                     {"j": j + 1, "lambda_j": float(lams[j]), "N_b": consts.N_b, "b": b}))
        phi = spec.eigenfunction(0).values
        slack = u - eb.comparison_scale * phi
        verdicts.append(bounds.make_verdict(
            "torsion_eigenfunction_comparison", bounds.ANCHORS["torsion_eigenfunction_comparison"],
            float(-slack.min()), 0.0, 0.0,
            {"min_slack": float(slack.min()), "comparison_scale": eb.comparison_scale, "b": b}).to_dict())
        margins = functional_inequality_margins(mesh, b, lam, cfg.n_random_fields,
                                                _seed(cfg, label, level, b, "fields"))
        q["inequality_margins"] = {k_: getattr(margins, k_) for k_ in
                                   ("nash_general", "nash_strong", "boundary_sobolev", "sobolev_general", "sobolev_strong")}
        for name, key in (("nash_general", "nash_general"), ("nash_strong", "nash_strong"),
                          ("boundary_sobolev", "boundary_sobolev"), ("sobolev_general", "sobolev_general"),
                          ("sobolev_strong", "sobolev_strong")):
            if key in margins.worst:
                lhs, rhs = margins.worst[key]
                verdicts.append(bounds.make_verdict(name, bounds.ANCHORS[name], lhs, rhs, 0.0,
                                                    {"n_samples": margins.n_samples, "b": b, "lambda1": lam,
                                                     "min_margin": getattr(margins, key)}).to_dict())
    q["cross_section"] = _cross_section(sol.field)
    return {"quantities": q, "verdicts": verdicts}


def _small_b_case(mesh, cfg: RunConfig) -> dict:
    b = cfg.small_b
    lam = float(spectrum(mesh, BoundaryCondition.robin(b), 1).eigenvalues[0])
    area, perim = measures(mesh)
    target = perim / area
    return {"quantities": {"lambda1": lam, "ratio": lam / b, "perimeter_over_area": target},
            "verdicts": [bounds.make_verdict("small_b_limit", bounds.ANCHORS["small_b_limit"], abs(lam / b - target),
                                             cfg.tol("small_b_limit") * target, 0.0,
                                             {"b": b, "lambda1": lam, "perimeter": perim, "area": area}).to_dict()]}


def _robin_p_case(mesh, b: float, p: float, cfg: RunConfig) -> dict:
    bc = BoundaryCondition.robin(b)
    sol = solve_p_torsion(mesh, p, bc)
    eig = p_eigenvalue_2d(mesh, p, bc)
    area, perim = measures(mesh)
    lo, hi = bounds.rigidity_bounds(2, p, b, area, perim, eig.eigenvalue)
    inputs = {"p": p, "b": b, "area": area, "perimeter": perim, "lambda_p": eig.eigenvalue}
    prof = levelset_profile(sol, cfg.n_levels)
    q = {"sup_norm": sol.sup_norm, "l1_norm": sol.l1_norm, "energy": sol.energy, "iterations": sol.iterations,
         "converged": sol.converged, "lambda_p": eig.eigenvalue, "eigen_converged": eig.converged,
         "eps_grad": sol.epsilon[0], "eps_val": sol.epsilon[1],
         "energy_monotone": bool(np.all(np.diff(sol.energy_history) <= 0)),
         "profile_monotone": bool(np.all(np.diff(prof.level_measure) <= 1e-12 * area)
                                  and np.all(np.diff(prof.f_values) <= 1e-12 * max(sol.l1_norm, 1e-300)))}
    if p == 2:
        lin = solve_torsion(mesh, bc, with_eigen=False)
        q["linear_sup_rel_diff"] = abs(sol.sup_norm - lin.sup_norm) / lin.sup_norm
    verdicts = [
        _verdict(cfg, "rigidity_lower", lo, sol.l1_norm, inputs),
        _verdict(cfg, "rigidity_upper", sol.l1_norm, hi, inputs),
        level_set_verdict(sol, eig.eigenvalue, cfg.tol("level_set_integral"), cfg.n_levels,
                         cfg.tol("level_set_grid")).to_dict(),
    ]
    return {"quantities": q, "verdicts": verdicts}


def random_cutoffs(mesh, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n_nodes, n) nodal cutoffs: tent functions around random centers, alternating with rough fields."""
    nodes = mesh.nodes
    lo, hi = nodes.min(axis=0), nodes.max(axis=0)
    diam = float(np.linalg.norm(hi - lo))
    out = np.empty((mesh.n_nodes, n))
    for j in range(n):
        if j % 2 == 0:
            c = lo + rng.random(2) * (hi - lo)
            r = diam * (0.1 + 0.6 * rng.random())
            out[:, j] = np.clip(1.0 - np.linalg.norm(nodes - c, axis=1) / r, 0.0, 1.0) * rng.uniform(0.5, 2.0)
        else:
            out[:, j] = rng.uniform(-1.0, 1.0, mesh.n_nodes)
    return out


def _dirichlet_p_case(mesh, p: float, cfg: RunConfig, label: str, level: int) -> dict:
    bc = BoundaryCondition.dirichlet()
    sol = solve_p_torsion(mesh, p, bc)
    eig = p_eigenvalue_2d(mesh, p, bc)
    ratio = dirichlet_p_ratio(sol, eig.eigenvalue)
    q = {"sup_norm": sol.sup_norm, "l1_norm": sol.l1_norm, "energy": sol.energy, "iterations": sol.iterations,
         "converged": sol.converged, "lambda_p": eig.eigenvalue, "eigen_converged": eig.converged,
         "p_ratio": ratio, "energy_monotone": bool(np.all(np.diff(sol.energy_history) <= 0))}
    verdicts = []
    if p == 2:
        lo, hi = bounds.dirichlet_sup_bound(2, 1.0)
        inputs = {"p": p, "sup_norm": sol.sup_norm, "lambda_p": eig.eigenvalue}
        verdicts.append(_verdict(cfg, "dirichlet_p_ratio", lo, ratio, inputs))
        verdicts.append(_verdict(cfg, "dirichlet_p_ratio", ratio, hi, inputs))
    c1 = 2.0 ** (p - 1.0) + 1.0
    thetas = random_cutoffs(mesh, cfg.n_cutoffs, np.random.default_rng(_seed(cfg, label, level, p, "cutoffs")))
    checks = [caccioppoli_check(mesh, sol.field, thetas[:, j], p, c1, cfg.tol("caccioppoli"))
              for j in range(thetas.shape[1])]
    worst = min(checks, key=lambda v: v.rhs - v.lhs if v.rhs == 0 else (v.rhs - v.lhs) / abs(v.rhs))
    d = worst.to_dict()
    d["inputs"]["n_cutoffs"] = len(checks)
    d["inputs"]["n_satisfied"] = sum(v.satisfied for v in checks)
    d["satisfied"] = all(v.satisfied for v in checks)
    verdicts.append(d)
    return {"quantities": q, "verdicts": verdicts}


def _probe_points(dom, n: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lp = dom.outer_loop
    lo, hi = lp.min(axis=0), lp.max(axis=0)
    pts = []
    while len(pts) < n:
        cand = lo + rng.random((64, 2)) * (hi - lo)
        d = distance_to_boundary(dom, cand)
        pts.extend(cand[d >= 0.1 * dom.diameter].tolist())
    return np.array(pts[:n])


def _wos_case(dom, fld: DiscreteField, cfg: RunConfig, label: str) -> list[dict]:
    w = cfg.wos
    probes = _probe_points(dom, w.n_probes, _seed(cfg, label, "probes"))
    fem_vals = fld.at(probes)
    out = []
    for i, (x, fem) in enumerate(zip(probes, fem_vals)):
        est = wos_exit_time(dom, x, w.n_walks, w.eps_shell, w.seed + i)
        rhs = max(cfg.tol("wos_agreement") * abs(est.mean), 3.0 * est.standard_error)
        v = bounds.make_verdict("wos_agreement", bounds.ANCHORS["wos_agreement"], abs(fem - est.mean), rhs, 0.0,
                                {"x": float(x[0]), "y": float(x[1]), "fem": float(fem), "wos_mean": est.mean,
                                 "standard_error": est.standard_error, "n_walks": est.n_walks,
                                 "eps_shell": est.eps_shell, "n_capped": est.n_capped})
        out.append(v.to_dict())
    return out


def _record(spec, label, level, mesh, case, bc_kind, b, p, fn) -> dict:
    area, perim = measures(mesh)
    rec = {"domain": label, "kind": spec.kind, "params": list(spec.params), "level": level, "case": case, "bc": bc_kind,
           "b": b, "p": p, "n_nodes": mesh.n_nodes, "h_max": mesh.h_max, "area": area, "perimeter": perim,
           "quantities": {}, "verdicts": [], "error": None}
    try:
        rec.update(fn())
    except Exception as exc:  # a failing case is data; the suite keeps going
        rec["error"] = f"{type(exc).__name__}: {exc}"
    return rec


def _run_domain(spec: DomainSpec, cfg: RunConfig) -> dict:
    label = spec.label
    dom, meshes = _meshes(spec, cfg)
    cases = []
    for level, mesh in enumerate(meshes):
        cases.append(_record(spec, label, level, mesh, "linear", "dirichlet", None, 2.0,
                             lambda: _linear_case(mesh, BoundaryCondition.dirichlet(), cfg, label, level)))
        for b in cfg.b_values:
            cases.append(_record(spec, label, level, mesh, "linear", "robin", b, 2.0,
                                 lambda: _linear_case(mesh, BoundaryCondition.robin(b), cfg, label, level)))
        if cfg.small_b is not None:
            cases.append(_record(spec, label, level, mesh, "small_b", "robin", cfg.small_b, 2.0,
                                 lambda: _small_b_case(mesh, cfg)))
        for p in cfg.p_values:
            cases.append(_record(spec, label, level, mesh, "p_torsion", "dirichlet", None, p,
                                 lambda: _dirichlet_p_case(mesh, p, cfg, label, level)))
            for b in cfg.b_values:
                cases.append(_record(spec, label, level, mesh, "p_torsion", "robin", b, p,
                                     lambda: _robin_p_case(mesh, b, p, cfg)))
    wos = []
    if cfg.wos.enabled:
        finest = meshes[-1]
        try:
            fld = solve_torsion(finest, BoundaryCondition.dirichlet(), with_eigen=False).field
            wos = [dict(v, domain=label, level=len(meshes) - 1) for v in _wos_case(dom, fld, cfg, label)]
        except Exception as exc:
            wos = [{"domain": label, "error": f"{type(exc).__name__}: {exc}"}]
    return {"domain": label, "cases": cases, "wos": wos, "p_ratio": _p_ratio_table(label, cases, cfg)}


def _p_ratio_table(label, cases, cfg) -> list[dict]:
    rows = []
    for p in cfg.p_values:
        vals = [c["quantities"].get("p_ratio") for c in cases
                if c["bc"] == "dirichlet" and c["p"] == p and "p_ratio" in c["quantities"]]
        row = {"domain": label, "p": p, "ratios": vals, "verdict": None}
        if len(vals) >= 2:
            change = abs(vals[-1] - vals[-2]) / abs(vals[-1])
            row["relative_change"] = change
            row["verdict"] = bounds.make_verdict(
                "dirichlet_p_ratio", bounds.ANCHORS["dirichlet_p_ratio"], change, cfg.tol("p_ratio_stability"), 0.0,
                {"p": p, "fine": vals[-1], "coarse": vals[-2], "check": "stability"}).to_dict()
        rows.append(row)
    return rows


def _radial_checks(cfg: RunConfig) -> list[dict]:
    out = []
    if cfg.small_b is None:
        return out
    alpha = cfg.small_b
    for m in (2, 3):
        lam = radial_p_eigenvalue(m, 2.0, 1.0, alpha)
        v = bounds.make_verdict("ball_small_b_limit", bounds.ANCHORS["ball_small_b_limit"], abs(lam / alpha - m),
                                cfg.tol("small_b_limit") * m, 0.0, {"m": m, "alpha": alpha, "lambda": lam, "R": 1.0})
        out.append(dict(v.to_dict(), domain=f"ball_m{m}", level=0))
    return out


@dataclass
class Report:
    config: dict
    cases: list[dict]
    wos: list[dict]
    p_ratio: list[dict]
    radial: list[dict]
    convergence: list[dict]
    summary: dict
    version: str = __version__
    timestamp: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def all_verdicts(self) -> list[dict]:
        """Every verdict with domain/level/b/p context and a severity."""
        out = []
        finest = self.config["refinement_levels"] - 1
        for c in self.cases:
            for v in c["verdicts"]:
                out.append(dict(v, domain=c["domain"], level=c["level"], b=c["b"], p=c["p"], case=c["case"],
                                severity=_severity(v, c["level"], finest)))
        for w in self.wos:
            if "name" in w:
                out.append(dict(w, b=None, p=2.0, severity=_severity(w, w["level"], w["level"])))
        for row in self.p_ratio:
            if row["verdict"]:
                out.append(dict(row["verdict"], domain=row["domain"], level=finest, b=None, p=row["p"],
                                severity=_severity(row["verdict"], finest, finest)))
        for r in self.radial:
            out.append(dict(r, b=None, p=2.0, severity=_severity(r, 0, 0)))
        return out


def _severity(v, level, finest) -> str:
    if v["satisfied"]:
        return "ok"
    return "fail" if level == finest else "warning"


def _summarize(report: Report) -> dict:
    vs = report.all_verdicts()
    errors = [c for c in report.cases if c["error"]] + [w for w in report.wos if "error" in w]
    return {
        "verdicts": len(vs),
        "satisfied": sum(v["satisfied"] for v in vs),
        "violated": sum(not v["satisfied"] for v in vs),
        "failures": sum(v["severity"] == "fail" for v in vs),
        "warnings": sum(v["severity"] == "warning" for v in vs),
        "case_errors": len(errors),
    }


def _sort_key(c):
    return (c["domain"], c["level"], math.inf if c["b"] is None else c["b"], c["p"], c["case"])


def run_suite(config: RunConfig, timestamp: bool = True) -> Report:
    """Run every configured case; results are merged in (domain, level, b, p) order."""
    validate_config(config)
    if config.workers > 1 and len(config.corpus) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            parts = list(pool.map(_run_domain, config.corpus, [config] * len(config.corpus)))
    else:
        parts = [_run_domain(spec, config) for spec in config.corpus]
    cases = sorted((c for part in parts for c in part["cases"]), key=_sort_key)
    wos = [w for part in parts for w in part["wos"]]
    p_ratio = [r for part in parts for r in part["p_ratio"]]
    report = Report(config.to_dict(), cases, wos, p_ratio, _radial_checks(config), [], {})
    report.summary = _summarize(report)
    if timestamp:
        report.timestamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    return report


def exit_code(report: Report) -> int:
    if report.summary["case_errors"]:
        return 2
    return 1 if report.summary["failures"] else 0


# convergence -------------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    domain: str
    quantity: str
    levels: list[int]
    n_nodes: list[int]
    h_max: list[float]
    values: list[float]
    reference: float | None
    errors: list[float] | None
    difference_orders: list[float]
    error_orders: list[float] | None
    estimated_order: float
    monotone: bool | None

    def to_dict(self) -> dict:
        return asdict(self)


QUANTITIES = ("lambda1", "sup_norm", "rigidity")


def convergence_study(config: RunConfig, quantity: str, spec: DomainSpec | None = None) -> ConvergenceTable:
    """Dirichlet convergence table of ``quantity`` over the configured refinement levels.

    Orders come from successive differences q_(k+1) - q_k, which do not need
    the continuum value; when a closed form exists (disk, unit square) the
    errors and their orders are reported as well. For lambda1 the table also
    records whether the values decrease under refinement (nested spaces).
    """
    if quantity not in QUANTITIES:
        raise ConfigError("quantity", f"must be one of {QUANTITIES}")
    if config.refinement_levels < 3:
        raise ConfigError("refinement_levels", "a convergence study needs at least 3 levels")
    spec = spec or config.corpus[0]
    _, meshes = _meshes(spec, config)
    bc = BoundaryCondition.dirichlet()
    values = []
    for mesh in meshes:
        if quantity == "lambda1":
            values.append(float(spectrum(mesh, bc, 1).eigenvalues[0]))
        else:
            sol = solve_torsion(mesh, bc, with_eigen=False)
            values.append(sol.sup_norm if quantity == "sup_norm" else torsional_rigidity(sol))
    v = np.array(values)
    diffs = np.abs(np.diff(v))
    hs = np.array([m.h_max for m in meshes])
    with np.errstate(divide="ignore", invalid="ignore"):
        d_orders = (np.log(diffs[:-1] / diffs[1:]) / np.log(2.0)).tolist()
    ref = closed_form(spec, quantity)
    errors = e_orders = None
    if ref is not None:
        err = np.abs(v - ref)
        errors = err.tolist()
        with np.errstate(divide="ignore", invalid="ignore"):
            e_orders = (np.log(err[:-1] / err[1:]) / np.log(2.0)).tolist()
    monotone = bool(np.all(np.diff(v) <= 1e-8 * v[:-1])) if quantity == "lambda1" else None
    return ConvergenceTable(spec.label, quantity, list(range(len(meshes))), [m.n_nodes for m in meshes],
                            hs.tolist(), values, ref, errors, d_orders, e_orders, float(d_orders[-1]), monotone)


# output ----------------------------------------------------------------------------------

CSV_COLUMNS = ("name", "anchor", "domain", "b", "p", "level", "lhs", "rhs", "margin", "satisfied")


def report_from_json(text: str) -> Report:
    return Report(**json.loads(text))


def emit_report(report: Report, formats=("json", "csv", "svg"), out_dir=None) -> list[Path]:
    """Write the report as JSON (full), CSV (flat verdict table) and SVG plots; returns the paths."""
    formats = set(formats)
    unknown = formats - {"json", "csv", "svg"}
    if unknown:
        raise ValueError(f"unknown report formats {sorted(unknown)}")
    out = Path(out_dir or report.config.get("output_dir", "torsionlab-out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    paths = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(json.dumps(report.to_dict(), indent=1, allow_nan=False))
        paths.append(p)
    if "csv" in formats:
        p = out / "verdicts.csv"
        with p.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(CSV_COLUMNS)
            for v in report.all_verdicts():
                row = dict(v, b="inf" if v["b"] is None else v["b"])
                wr.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in CSV_COLUMNS])
        paths.append(p)
    if "svg" in formats:
        paths.extend(_plots(report, out))
    return paths


def _plots(report: Report, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    finest = report.config["refinement_levels"] - 1
    verdicts = report.all_verdicts()
    for dom in sorted({c["domain"] for c in report.cases}):
        cases = [c for c in report.cases if c["domain"] == dom and c["level"] == finest and c["case"] == "linear"
                 and "cross_section" in c["quantities"]]
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4))
        for c in cases:
            cs = c["quantities"]["cross_section"]
            lab = "Dirichlet" if c["b"] is None else f"Robin b={c['b']:g}"
            ax1.plot(cs["s"], cs["u"], label=lab)
        ax1.set_xlabel("offset along horizontal diameter")
        ax1.set_ylabel("torsion function")
        ax1.set_title(f"{dom}, level {finest}")
        if cases:
            ax1.legend(fontsize=7)
        worst = {}
        for v in verdicts:
            if v["domain"] == dom and v["level"] == finest and v["rhs"] != 0:
                rel = (v["rhs"] - v["lhs"]) / abs(v["rhs"])
                worst[v["name"]] = min(worst.get(v["name"], math.inf), rel)
        names = sorted(worst)
        ax2.barh(names, [worst[n] for n in names], color=["tab:green" if worst[n] >= 0 else "tab:red" for n in names])
        ax2.axvline(0.0, color="k", lw=0.8)
        ax2.set_xlabel("smallest relative margin (rhs - lhs)/|rhs|")
        ax2.tick_params(axis="y", labelsize=7)
        fig.tight_layout()
        p = out / f"{dom}.svg"
        fig.savefig(p, format="svg")
        plt.close(fig)
        paths.append(p)
    return paths
