"""P1 finite elements: assembly, conjugate gradients and a deflated inverse-iteration eigensolver.

Sparse matrices are ``scipy.sparse.csr_matrix`` with sorted, duplicate-free
column indices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import TriangleMesh

__all__ = [
    "ConvergenceError",
    "ClusterWarning",
    "DiscreteField",
    "EigenPair",
    "CGStats",
    "assemble_stiffness",
    "assemble_mass",
    "assemble_boundary_mass",
    "lumped_weights",
    "cg_solve",
    "smallest_eigenpairs",
    "restrict",
    "extend",
]

CG_TOL = 1e-10
EIG_TOL = 1e-8


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap; ``stats`` describes the last state."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class ClusterWarning(UserWarning):
    """Two computed eigenvalues agree to within the solver tolerance."""


def _csr(rows, cols, vals, n, m=None) -> sp.csr_matrix:
    a = sp.coo_matrix((vals, (rows, cols)), shape=(n, m or n)).tocsr()
    a.sum_duplicates()
    a.sort_indices()
    return a


def assemble_stiffness(mesh: TriangleMesh) -> sp.csr_matrix:
    """Matrix of the Dirichlet form: entry (i, j) is the integral of grad(phi_i).grad(phi_j)."""
    g = mesh.gradients
    local = mesh.areas[:, None, None] * np.einsum("tid,tjd->tij", g, g)
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return _csr(rows, cols, local.ravel(), mesh.n_nodes)


_MASS_REF = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])


def assemble_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    local = (mesh.areas / 12.0)[:, None, None] * _MASS_REF[None]
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    return _csr(rows, cols, local.ravel(), mesh.n_nodes)


def assemble_boundary_mass(mesh: TriangleMesh) -> sp.csr_matrix:
    """L2 pairing on the boundary edges; each edge of length L adds (L/6)[[2,1],[1,2]]."""
    e = mesh.boundary_edges
    ref = np.array([[2.0, 1.0], [1.0, 2.0]])
    local = (mesh.boundary_lengths / 6.0)[:, None, None] * ref[None]
    rows = np.repeat(e, 2, axis=1).ravel()
    cols = np.tile(e, (1, 2)).ravel()
    return _csr(rows, cols, local.ravel(), mesh.n_nodes)


def lumped_weights(mesh: TriangleMesh) -> np.ndarray:
    """Vertex quadrature weights (row sums of the mass matrix)."""
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return w


def restrict(a: sp.spmatrix, dofs: np.ndarray) -> sp.csr_matrix:
    a = sp.csr_matrix(a)
    return a[dofs][:, dofs].tocsr()


def extend(values: np.ndarray, dofs: np.ndarray, n: int) -> np.ndarray:
    full = np.zeros((n,) + np.shape(values)[1:])
    full[dofs] = values
    return full


@dataclass(frozen=True, eq=False)
class DiscreteField:
    """Nodal values of a P1 function on ``mesh``."""

    mesh: TriangleMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError(f"field has {v.shape} values for {self.mesh.n_nodes} nodes")
        object.__setattr__(self, "values", v)

    def integral(self) -> float:
        return float(lumped_weights(self.mesh) @ self.values)

    def lp_norm(self, p: float) -> float:
        """Vertex-quadrature L^p norm."""
        w = lumped_weights(self.mesh)
        return float(np.sum(w * np.abs(self.values) ** p) ** (1.0 / p))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.values @ (assemble_mass(self.mesh) @ self.values)))

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def at(self, points) -> np.ndarray:
        """Point values by barycentric interpolation; NaN outside the mesh."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        mesh = self.mesh
        v = mesh.nodes[mesh.triangles]  # (T, 3, 2)
        e1, e2 = v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        out = np.full(len(pts), np.nan)
        for i, x in enumerate(pts):
            d = x - v[:, 0]
            l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
            l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
            l0 = 1.0 - l1 - l2
            lam = np.stack([l0, l1, l2], axis=1)
            t = int(np.argmax(lam.min(axis=1)))
            if lam[t].min() >= -1e-12:
                out[i] = float(lam[t] @ self.values[mesh.triangles[t]])
        return out


@dataclass
class CGStats:
    iterations: int
    residual: float
    converged: bool


def cg_solve(a, rhs, tol: float = CG_TOL, max_iter: int | None = None, x0=None, jacobi: bool = True):
    """Preconditioned conjugate gradients for a symmetric positive definite system.

    Returns ``(x, stats)`` with ``stats.residual = ||a x - rhs|| / ||rhs||``.
    Raises :class:`ConvergenceError` when ``max_iter`` is exhausted.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    rhs = np.asarray(rhs, dtype=float)
    n = rhs.shape[0]
    max_iter = 10 * n if max_iter is None else max_iter
    bnorm = np.linalg.norm(rhs)
    if bnorm == 0.0:
        return np.zeros(n), CGStats(0, 0.0, True)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    dinv = 1.0 / a.diagonal() if jacobi else np.ones(n)
    r = rhs - a @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    res = np.linalg.norm(r) / bnorm
    it = 0
    while res > tol:
        if it >= max_iter:
            stats = CGStats(it, float(res), False)
            raise ConvergenceError(f"CG stalled at relative residual {res:.3e} after {it} iterations", stats)
        q = a @ p
        alpha = rz / (p @ q)
        x += alpha * p
        r -= alpha * q
        it += 1
        res = np.linalg.norm(r) / bnorm
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    # guard against drift of the recursive residual
    true_res = np.linalg.norm(rhs - a @ x) / bnorm
    return x, CGStats(it, float(true_res), bool(true_res <= tol * 10))


@dataclass
class EigenPair:
    """Generalized eigenpair of A x = lambda M x with x^T M x = 1."""

    eigenvalue: float
    vector: np.ndarray
    residual: float


def _factor(a, m, shift):
    mat = (a - shift * m).tocsc() if shift != 0.0 else sp.csc_matrix(a)
    try:
        return spla.splu(mat)
    except RuntimeError:
        # exactly singular at this shift: nudge it
        eps = 1e-10 * max(1.0, abs(shift))
        return spla.splu((a - (shift - eps) * m).tocsc())


def _residual(a, m, lam, x):
    mx = m @ x
    return float(np.linalg.norm(a @ x - lam * mx) / np.linalg.norm(mx))


def _m_orthonormal(y, m):
    """M-orthonormal basis of the columns of ``y`` (two passes of Cholesky QR)."""
    for _ in range(2):
        g = y.T @ (m @ y)
        g = 0.5 * (g + g.T)
        try:
            c = np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(g)
            keep = w > w.max() * 1e-14
            y = y @ (v[:, keep] / np.sqrt(w[keep]))
            continue
        y = scipy.linalg.solve_triangular(c, y.T, lower=True).T
    return y


def smallest_eigenpairs(a, m, k: int, tol: float = EIG_TOL, max_iter: int = 500, seed: int = 0):
    """The ``k`` smallest eigenpairs of A x = lambda M x by deflated inverse iteration.

    A block of inverse iterations at shift 0 with Rayleigh-Ritz first brings
    every wanted residual below 1e-3 (relative to the eigenvalue scale); each
    pair is then polished by inverse iteration whose shift tracks the current
    Rayleigh quotient, M-orthogonalised against the pairs already accepted.
    Residuals are ``||(A - lambda M) x|| / ||M x||``.
    """
    a = sp.csr_matrix(a)
    m = sp.csr_matrix(m)
    n = a.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must lie in [1, {n}]")
    block = min(n, max(2 * k, k + 4))
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, block))
    lu = _factor(a, m, 0.0)

    if block == n:
        # tiny problems: dense solve is exact
        lam, vec = scipy.linalg.eigh(a.toarray(), m.toarray())
        return [EigenPair(float(lam[i]), vec[:, i], _residual(a, m, lam[i], vec[:, i])) for i in range(k)]

    theta = None
    for _ in range(max_iter):
        y = lu.solve(m @ x)
        q = _m_orthonormal(y, m)
        h = q.T @ (a @ q)
        theta, w = np.linalg.eigh(0.5 * (h + h.T))
        x = q @ w
        res = np.array([_residual(a, m, theta[i], x[:, i]) for i in range(k)])
        if np.all(res <= tol) or np.all(res < 1e-3 * np.maximum(1.0, np.abs(theta[:k]))):
            break
    else:
        raise ConvergenceError(f"block inverse iteration did not converge in {max_iter} steps")

    pairs: list[EigenPair] = []
    basis = np.zeros((n, 0))
    for i in range(k):
        v = x[:, i].copy()
        lam = float(theta[i])
        r = _residual(a, m, lam, v)
        steps = 0
        while r > tol:
            if steps >= 50:
                raise ConvergenceError(f"eigenpair {i} stalled at residual {r:.3e}")
            shifted = _factor(a, m, lam)
            v = shifted.solve(m @ v)
            if basis.shape[1]:
                v -= basis @ (basis.T @ (m @ v))
            v /= np.sqrt(v @ (m @ v))
            lam = float(v @ (a @ v))
            r = _residual(a, m, lam, v)
            steps += 1
        if basis.shape[1]:
            v -= basis @ (basis.T @ (m @ v))
        v /= np.sqrt(v @ (m @ v))
        lam = float(v @ (a @ v))
        pairs.append(EigenPair(lam, v, _residual(a, m, lam, v)))
        basis = np.column_stack([basis, v])

    pairs.sort(key=lambda pr: pr.eigenvalue)
    lams = [pr.eigenvalue for pr in pairs]
    for j in range(1, k):
        if lams[j] - lams[j - 1] < tol:
            warnings.warn(
                f"eigenvalues {j} and {j + 1} agree to {lams[j] - lams[j - 1]:.2e}; order within the cluster is arbitrary",
                ClusterWarning,
                stacklevel=2,
            )
    return pairs
