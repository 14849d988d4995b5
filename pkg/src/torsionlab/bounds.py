"""Closed-form constants and bound formulas, and the verdict record that compares them with computed data.

Everything here is a pure function of its arguments. ``log`` is the natural
logarithm throughout and every verdict records that convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "ANCHORS",
    "BoundVerdict",
    "CatalogConstants",
    "NashConstant",
    "EigenBounds",
    "isoperimetric_constant",
    "heat_kernel_constant",
    "nash_constant",
    "catalog_constants",
    "robin_sup_bound",
    "dirichlet_sup_bound",
    "rigidity_bounds",
    "eigen_bounds",
    "make_verdict",
]

LOG_CONVENTION = "natural"

# Verdict anchors: short labels naming the result a check instantiates.
ANCHORS = {
    "dirichlet_sup_lower": "Dirichlet torsion sup-norm bound (lower, 1/lambda)",
    "dirichlet_sup_upper": "Dirichlet torsion sup-norm bound (upper, (4+3m log2)/lambda)",
    "robin_sup_lower": "Robin torsion sup-norm bound (lower, 1/lambda)",
    "robin_sup_upper": "Robin torsion sup-norm bound (upper, 6m log(...)/lambda)",
    "small_b_limit": "small-b limit lambda/b -> perimeter/area",
    "ball_small_b_limit": "ball small-b limit lambda(B, b alpha)/alpha -> m b",
    "nash_general": "Nash inequality, general constant C(m)(1/b + b/lambda)",
    "nash_strong": "Nash inequality, strong constant 2C(m)/sqrt(lambda), b >= sqrt(lambda)",
    "boundary_sobolev": "Sobolev-trace inequality with isoperimetric constant",
    "sobolev_general": "Robin Sobolev inequality, constant C(m)(1/b + b/lambda)",
    "sobolev_strong": "Robin Sobolev inequality, constant 2C(m)/sqrt(lambda), b >= sqrt(lambda)",
    "heat_trace": "Robin heat-trace bound C_2m N_b^m |Omega| t^-m",
    "eigenfunction_sup": "Robin eigenfunction sup-norm bound",
    "torsion_eigenfunction_comparison": "torsion/first-eigenfunction comparison",
    "rigidity_lower": "p-torsional rigidity lower bound (constant test function)",
    "rigidity_upper": "p-torsional rigidity upper bound |Omega| lambda^(-1/(p-1))",
    "level_set_integral": "level-set integral bound for the Robin p-torsion function",
    "caccioppoli": "Caccioppoli inequality for the Dirichlet p-torsion function",
    "dirichlet_p_ratio": "Dirichlet p-torsion ratio ||w|| lambda_p^(1/(p-1))",
    "wos_agreement": "Dirichlet torsion function equals the mean Brownian exit time",
}


def isoperimetric_constant(m: int) -> float:
    """C(m) = pi^(-1/2) Gamma(1 + m/2)^(1/m) / m."""
    if m < 2:
        raise ValueError("dimension must be at least 2")
    return math.gamma((2 + m) / 2) ** (1.0 / m) / (m * math.sqrt(math.pi))


def heat_kernel_constant(m: int) -> float:
    """C_2m = (192 m)^m."""
    return float((192 * m) ** m)


def heat_kernel_omega(m: int) -> float:
    return 1.0 + math.sqrt(m) + 4.0 * m


@dataclass(frozen=True)
class NashConstant:
    general: float
    strong: float | None

    @property
    def best(self) -> float:
        return self.general if self.strong is None else min(self.general, self.strong)


def nash_constant(m: int, b: float, lambda1: float) -> NashConstant:
    """Both branches of the Nash constant; ``strong`` only exists when b >= sqrt(lambda1)."""
    if not (b > 0 and lambda1 > 0):
        raise ValueError("need b > 0 and lambda1 > 0")
    c = isoperimetric_constant(m)
    general = c * (1.0 / b + b / lambda1)
    strong = 2.0 * c / math.sqrt(lambda1) if b >= math.sqrt(lambda1) else None
    return NashConstant(general, strong)


@dataclass(frozen=True)
class CatalogConstants:
    m: int
    b: float
    lambda1: float
    C_m: float
    C_2m: float
    omega: float
    N_b: float
    nash: NashConstant
    K: float
    dirichlet_upper: float


def catalog_constants(m: int, b: float, lambda1: float) -> CatalogConstants:
    nash = nash_constant(m, b, lambda1)
    c2m = heat_kernel_constant(m)
    return CatalogConstants(
        m=m,
        b=b,
        lambda1=lambda1,
        C_m=isoperimetric_constant(m),
        C_2m=c2m,
        omega=heat_kernel_omega(m),
        N_b=nash.best,
        nash=nash,
        K=c2m * nash.best**m,
        dirichlet_upper=4.0 + 3.0 * m * math.log(2.0),
    )


def _check_lambda(lambda1):
    if not lambda1 > 0:
        raise ValueError("lambda <= 0: the torsion function is unbounded in this regime")


def robin_sup_bound(m: int, b: float, lambda1: float) -> tuple[float, float]:
    """(1/lambda, 6m/lambda * log(2^11 3 sqrt(3) m (1 + sqrt(lambda)/b)))."""
    _check_lambda(lambda1)
    if not b > 0:
        raise ValueError("b must be positive")
    arg = 2.0**11 * 3.0 * math.sqrt(3.0) * m * (1.0 + math.sqrt(lambda1) / b)
    return 1.0 / lambda1, 6.0 * m * math.log(arg) / lambda1


def dirichlet_sup_bound(m: int, lambda1: float) -> tuple[float, float]:
    _check_lambda(lambda1)
    return 1.0 / lambda1, (4.0 + 3.0 * m * math.log(2.0)) / lambda1


def rigidity_bounds(m: int, p: float, b: float, area: float, perimeter: float, lambda1: float) -> tuple[float, float]:
    """Lower and upper bound for the Robin p-torsional rigidity.

    ``m`` is accepted for a uniform signature; neither bound depends on it.
    """
    if not (p > 1 and b > 0 and area > 0 and perimeter > 0 and lambda1 > 0):
        raise ValueError("all inputs must be positive and p > 1")
    q = 1.0 / (p - 1.0)
    lower = b ** (-q) * area ** (p * q) * perimeter ** (-q)
    upper = lambda1 ** (-q) * area
    return lower, upper


@dataclass(frozen=True)
class EigenBounds:
    trace_rhs: float
    eigfun_rhs: list[float]
    comparison_scale: float


def eigen_bounds(constants: CatalogConstants, area: float, lambdas, t: float) -> EigenBounds:
    if not t > 0:
        raise ValueError("t must be positive")
    m = constants.m
    k = constants.C_2m * constants.N_b**m
    scale = k * math.e**m * float(m) ** (-m)
    lambdas = [float(v) for v in lambdas]
    return EigenBounds(
        trace_rhs=k * area * t ** (-m),
        eigfun_rhs=[math.sqrt(scale) * lam ** (m / 2) for lam in lambdas],
        comparison_scale=scale ** (-0.5) * constants.lambda1 ** (-1.0 - m / 2),
    )


@dataclass
class BoundVerdict:
    """One inequality instance ``lhs <= rhs``; satisfied iff lhs <= rhs (1 + tolerance)."""

    name: str
    anchor: str
    lhs: float
    rhs: float
    tolerance: float
    inputs: dict[str, Any] = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def satisfied(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + self.tolerance)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "anchor": self.anchor,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "satisfied": self.satisfied,
            "tolerance": self.tolerance,
            "inputs": self.inputs,
        }


def _finite(v) -> bool:
    return isinstance(v, (int, float, np.floating, np.integer)) and math.isfinite(float(v))


def make_verdict(name: str, anchor: str, lhs: float, rhs: float, tolerance: float = 0.0, inputs=None) -> BoundVerdict:
    """Build a verdict; violations are data, only non-finite numbers raise."""
    if not (_finite(lhs) and _finite(rhs) and _finite(tolerance)):
        raise ValueError(f"{name}: non-finite verdict input lhs={lhs} rhs={rhs} tol={tolerance}")
    rec = {"log": LOG_CONVENTION}
    for key, val in (inputs or {}).items():
        if _finite(val) and not isinstance(val, (bool, int, np.integer)):
            val = float(val)
        elif isinstance(val, (int, np.integer)) and not isinstance(val, bool):
            val = int(val)
        elif isinstance(val, (float, np.floating)):
            raise ValueError(f"{name}: input {key} is not finite")
        rec[key] = val
    return BoundVerdict(name, anchor, float(lhs), float(rhs), float(tolerance), rec)
