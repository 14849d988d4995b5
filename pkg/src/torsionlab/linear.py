"""Linear (p = 2) torsion problem with Dirichlet or Robin boundary conditions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bounds
from .fem import (
    CG_TOL,
    EIG_TOL,
    DiscreteField,
    EigenPair,
    assemble_boundary_mass,
    assemble_mass,
    assemble_stiffness,
    cg_solve,
    extend,
    lumped_weights,
    restrict,
    smallest_eigenpairs,
)
from .geometry import TriangleMesh

__all__ = [
    "BoundaryCondition",
    "TorsionSolution",
    "SpectralSet",
    "MarginReport",
    "solve_torsion",
    "torsional_rigidity",
    "robin_spectrum",
    "dirichlet_spectrum",
    "spectrum",
    "functional_inequality_margins",
    "inequality_margins_for_fields",
    "heat_trace_partial_sum",
]


@dataclass(frozen=True)
class BoundaryCondition:
    kind: str
    b: float = math.inf

    def __post_init__(self):
        if self.kind not in ("dirichlet", "robin"):
            raise ValueError(f"unknown boundary condition {self.kind!r}")
        if self.kind == "robin" and not (0 < self.b < math.inf):
            raise ValueError("Robin boundary condition needs a finite b > 0")

    @classmethod
    def dirichlet(cls) -> "BoundaryCondition":
        return cls("dirichlet")

    @classmethod
    def robin(cls, b: float) -> "BoundaryCondition":
        return cls("robin", float(b))

    @property
    def is_dirichlet(self) -> bool:
        return self.kind == "dirichlet"

    def label(self) -> str:
        return "dirichlet" if self.is_dirichlet else f"robin(b={self.b:g})"


def _as_bc(bc) -> BoundaryCondition:
    if isinstance(bc, BoundaryCondition):
        return bc
    if bc is None or bc == math.inf:
        return BoundaryCondition.dirichlet()
    return BoundaryCondition.robin(bc)


def _operator(mesh: TriangleMesh, bc: BoundaryCondition):
    """(A, M, dofs) with Dirichlet nodes eliminated when needed."""
    k = assemble_stiffness(mesh)
    m = assemble_mass(mesh)
    if bc.is_dirichlet:
        dofs = mesh.interior_nodes
        return restrict(k, dofs), restrict(m, dofs), dofs
    a = (k + bc.b * assemble_boundary_mass(mesh)).tocsr()
    a.sort_indices()
    return a, m, np.arange(mesh.n_nodes)


def _positive_sign(v: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


@dataclass
class SpectralSet:
    bc: BoundaryCondition
    pairs: list[EigenPair]
    mesh: TriangleMesh

    @property
    def k(self) -> int:
        return len(self.pairs)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([pr.eigenvalue for pr in self.pairs])

    def eigenfunction(self, j: int) -> DiscreteField:
        """j-th eigenfunction (0-based) on all mesh nodes."""
        return DiscreteField(self.mesh, self.pairs[j].vector)


def spectrum(mesh: TriangleMesh, bc, k: int, tol: float = EIG_TOL) -> SpectralSet:
    bc = _as_bc(bc)
    a, m, dofs = _operator(mesh, bc)
    pairs = smallest_eigenpairs(a, m, k, tol)
    full = [
        EigenPair(pr.eigenvalue, _positive_sign(extend(pr.vector, dofs, mesh.n_nodes)), pr.residual) for pr in pairs
    ]
    return SpectralSet(bc, full, mesh)


def robin_spectrum(mesh: TriangleMesh, b: float, k: int, tol: float = EIG_TOL) -> SpectralSet:
    if not b > 0:
        raise ValueError("b must be positive")
    return spectrum(mesh, BoundaryCondition.robin(b), k, tol)


def dirichlet_spectrum(mesh: TriangleMesh, k: int, tol: float = EIG_TOL) -> SpectralSet:
    return spectrum(mesh, BoundaryCondition.dirichlet(), k, tol)


@dataclass
class TorsionSolution:
    field: DiscreteField
    sup_norm: float
    l1_norm: float
    lambda1: float
    bc: BoundaryCondition
    first_eigenpair: EigenPair | None = None
    cg_iterations: int = 0
    cg_residual: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def mesh(self) -> TriangleMesh:
        return self.field.mesh


def solve_torsion(
    mesh: TriangleMesh, bc, tol: float = CG_TOL, source: float = 1.0, with_eigen: bool = True
) -> TorsionSolution:
    """Torsion function of -Lap u = source with the given boundary condition.

    Solves (K + bB) u = M 1 (Robin) or the interior block of K u = M 1
    (Dirichlet) by Jacobi-preconditioned CG, and attaches the first
    eigenvalue of the same discrete operator.
    """
    bc = _as_bc(bc)
    a, _, dofs = _operator(mesh, bc)
    # load entries are the integrals of the basis functions, boundary neighbours included
    rhs = source * (assemble_mass(mesh) @ np.ones(mesh.n_nodes))[dofs]
    u, stats = cg_solve(a, rhs, tol=tol)
    values = extend(u, dofs, mesh.n_nodes)
    lam, pair = math.nan, None
    if with_eigen:
        spec = spectrum(mesh, bc, 1)
        pair = spec.pairs[0]
        lam = pair.eigenvalue
    fld = DiscreteField(mesh, values)
    l1 = float(np.ones(mesh.n_nodes) @ (assemble_mass(mesh) @ values))
    return TorsionSolution(fld, float(values.max()), l1, lam, bc, pair, stats.iterations, stats.residual)


def torsional_rigidity(sol: TorsionSolution) -> float:
    """Integral of the torsion function, 1^T M u."""
    mesh = sol.field.mesh
    return float(np.ones(mesh.n_nodes) @ (assemble_mass(mesh) @ sol.field.values))


@dataclass
class MarginReport:
    """Minimum margins (rhs - lhs) over the sampled fields for each inequality.

    ``None`` marks an inequality whose hypothesis (b >= sqrt(lambda1)) fails.
    ``worst`` holds (lhs, rhs) of the minimising sample per inequality.
    """

    n_samples: int
    nash_general: float
    nash_strong: float | None
    boundary_sobolev: float
    sobolev_general: float
    sobolev_strong: float | None
    worst: dict[str, tuple[float, float]]
    constants: dict[str, float]


def inequality_margins_for_fields(mesh: TriangleMesh, b: float, lambda1: float, fields: np.ndarray) -> MarginReport:
    """Evaluate the Nash, boundary-Sobolev and Robin-Sobolev inequalities on given nodal fields.

    ``fields`` has shape (n_nodes, S). Lebesgue norms other than L2 use the
    vertex rule; L2 and the quadratic forms are exact for P1.
    """
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    u = np.asarray(fields, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    m_dim = 2
    k = assemble_stiffness(mesh)
    mass = assemble_mass(mesh)
    bmass = assemble_boundary_mass(mesh)
    w = lumped_weights(mesh)
    c_m = bounds.isoperimetric_constant(m_dim)
    nash = bounds.nash_constant(m_dim, b, lambda1)

    grad_sq = np.sum(u * (k @ u), axis=0)
    bnd_sq = np.sum(u * (bmass @ u), axis=0)
    q_b = grad_sq + b * bnd_sq
    l1 = w @ np.abs(u)
    l2_sq = np.sum(u * (mass @ u), axis=0)
    r = 2 * m_dim / (m_dim - 1)
    lr_sq = (w @ np.abs(u) ** r) ** (2.0 / r)
    gradnorm = np.linalg.norm(mesh.field_gradient(u), axis=1)  # (T, S)
    abs_mean = np.abs(u)[mesh.triangles].mean(axis=1)  # vertex rule on each triangle
    u_gradu = np.sum(mesh.areas[:, None] * abs_mean * gradnorm, axis=0)

    nash_lhs = l2_sq ** (1.0 + 1.0 / m_dim)
    pairs = {
        "nash_general": (nash_lhs, nash.general * q_b * l1 ** (2.0 / m_dim)),
        "boundary_sobolev": (lr_sq, c_m * (2.0 * u_gradu + bnd_sq)),
        "sobolev_general": (lr_sq, c_m * (1.0 / b + b / lambda1) * q_b),
    }
    if nash.strong is not None:
        pairs["nash_strong"] = (nash_lhs, nash.strong * q_b * l1 ** (2.0 / m_dim))
        pairs["sobolev_strong"] = (lr_sq, 2.0 * c_m / math.sqrt(lambda1) * q_b)

    mins, worst = {}, {}
    for name, (lhs, rhs) in pairs.items():
        margin = rhs - lhs
        i = int(np.argmin(margin))
        mins[name] = float(margin[i])
        worst[name] = (float(lhs[i]), float(rhs[i]))
    return MarginReport(
        n_samples=u.shape[1],
        nash_general=mins["nash_general"],
        nash_strong=mins.get("nash_strong"),
        boundary_sobolev=mins["boundary_sobolev"],
        sobolev_general=mins["sobolev_general"],
        sobolev_strong=mins.get("sobolev_strong"),
        worst=worst,
        constants={"C_m": c_m, "N_general": nash.general, "N_strong": nash.strong or math.nan},
    )


def functional_inequality_margins(
    mesh: TriangleMesh, b: float, lambda1: float, n_samples: int, seed: int, batch: int = 250
) -> MarginReport:
    """Minimum margins over ``n_samples`` standard-normal nodal fields drawn from ``seed``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    reports = []
    left = n_samples
    while left > 0:
        s = min(batch, left)
        # sample-major draw so the fields do not depend on the batch size
        u = rng.standard_normal((s, mesh.n_nodes)).T
        zero = ~np.any(u, axis=0)
        while np.any(zero):
            u[:, zero] = rng.standard_normal((int(zero.sum()), mesh.n_nodes)).T
            zero = ~np.any(u, axis=0)
        reports.append(inequality_margins_for_fields(mesh, b, lambda1, u))
        left -= s
    return _merge_reports(reports)


def _merge_reports(reports: list[MarginReport]) -> MarginReport:
    names = ["nash_general", "nash_strong", "boundary_sobolev", "sobolev_general", "sobolev_strong"]
    mins, worst = {}, {}
    for name in names:
        vals = [(getattr(r, name), r.worst.get(name)) for r in reports if getattr(r, name) is not None]
        if not vals:
            mins[name] = None
            continue
        best = min(vals, key=lambda v: v[0])
        mins[name] = best[0]
        worst[name] = best[1]
    return MarginReport(
        n_samples=sum(r.n_samples for r in reports), worst=worst, constants=reports[0].constants, **mins
    )


def heat_trace_partial_sum(spec, t_grid) -> list[float]:
    """Sum over the available eigenvalues of exp(-t lambda_j), per t."""
    lams = spec.eigenvalues if isinstance(spec, SpectralSet) else np.asarray(spec, dtype=float)
    if len(lams) < 1:
        raise ValueError("need at least one eigenvalue")
    t = np.asarray(t_grid, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    return [float(v) for v in np.exp(-np.outer(t, lams)).sum(axis=1)]
