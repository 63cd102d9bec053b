"""Energy functional, its gradient, and the reduced functional on mean-zero pairs.

All quantities are the exact discrete counterparts of the continuum
expressions: integrals are node sums times the quadrature weight and the
Dirichlet terms use the spectral Laplacian, so ``gradient_I`` is the exact L2
representative of the derivative of ``I_lambda`` as computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import CouplingMatrix, VortexNumbers
from .constraints import CPair, R1, R2, solve_c_plus
from .torus import Background, MomentSet, guarded_exp, integrals


class NonVariational(ValueError):
    """The coupled functional needs b > 0 and c > 0."""


@dataclass(frozen=True)
class FunctionalValue:
    total: float
    dirichlet_part: float
    potential_part: float
    linear_part: float


def _require_variational(K: CouplingMatrix) -> None:
    if not K.variational:
        raise NonVariational(f"coupled functional undefined for b={K.b}, c={K.c}")


def alphas(K: CouplingMatrix, N: VortexNumbers) -> tuple[float, float]:
    a, b, c, d = K.as_tuple()
    return (4.0 * math.pi * (d / b * N.N1 + N.N2), 4.0 * math.pi * (N.N1 + a / c * N.N2))


def q_terms(K: CouplingMatrix, bg: Background, v1: np.ndarray, v2: np.ndarray):
    """Pointwise ``(Q1, Q2, Q)``; ``Q`` is a non-negative sum of squares."""
    _require_variational(K)
    a, b, c, d = K.as_tuple()
    e1 = bg.E1 * guarded_exp(v1)
    e2 = bg.E2 * guarded_exp(v2)
    Q1 = a * (b + d) * e1 - b * (a + c) * e2 - K.det
    Q2 = e2 - 1.0
    Q = Q1**2 / (2.0 * a * b * K.det) + (a + c) ** 2 / (2.0 * a * c) * Q2**2
    return Q1, Q2, Q


def dirichlet_block(K: CouplingMatrix, grid, v1, v2) -> float:
    a, b, c, d = K.as_tuple()
    return d / (2 * b) * grid.dirichlet(v1) + a / (2 * c) * grid.dirichlet(v2) + grid.dirichlet(v1, v2)


def I_lambda(K: CouplingMatrix, lam: float, N: VortexNumbers, bg: Background, v1, v2) -> FunctionalValue:
    _require_variational(K)
    g = bg.grid
    al1, al2 = alphas(K, N)
    dir_part = dirichlet_block(K, g, v1, v2)
    pot = lam * g.integrate(q_terms(K, bg, v1, v2)[2])
    lin = al1 * g.mean(v1) + al2 * g.mean(v2)
    return FunctionalValue(dir_part + pot + lin, dir_part, pot, lin)


def gradient_I(K: CouplingMatrix, lam: float, N: VortexNumbers, bg: Background, v1, v2):
    """L2 representatives ``(G1, G2)`` of the derivative of ``I_lambda``."""
    _require_variational(K)
    a, b, c, d = K.as_tuple()
    g = bg.grid
    al1, al2 = alphas(K, N)
    e1 = bg.E1 * guarded_exp(v1)
    e2 = bg.E2 * guarded_exp(v2)
    Q1 = a * (b + d) * e1 - b * (a + c) * e2 - K.det
    Q2 = e2 - 1.0
    L1, L2 = g.laplacian(v1), g.laplacian(v2)
    G1 = -(d / b) * L1 - L2 + lam * (b + d) / (b * K.det) * Q1 * e1 + al1 / g.area
    G2 = -L1 - (a / c) * L2 + lam * e2 * ((a + c) ** 2 / (a * c) * Q2 - (a + c) / (a * K.det) * Q1) + al2 / g.area
    return G1, G2


def I_decoupled(lam: float, N: VortexNumbers, bg: Background, v1, v2) -> FunctionalValue:
    """Sum of the two scalar Chern-Simons functionals (the ``b = c = 0`` system)."""
    g = bg.grid
    dir_part = 0.5 * (g.dirichlet(v1) + g.dirichlet(v2))
    e1 = bg.E1 * guarded_exp(v1)
    e2 = bg.E2 * guarded_exp(v2)
    pot = 0.5 * lam * (g.integrate((e1 - 1.0) ** 2) + g.integrate((e2 - 1.0) ** 2))
    lin = 4.0 * math.pi * (N.N1 * g.mean(v1) + N.N2 * g.mean(v2))
    return FunctionalValue(dir_part + pot + lin, dir_part, pot, lin)


def energy(K: CouplingMatrix, lam: float, N: VortexNumbers, bg: Background, v1, v2) -> float | None:
    """Variational energy of a pair, or ``None`` for one-way coupled systems."""
    if K.variational:
        return I_lambda(K, lam, N, bg, v1, v2).total
    if K.decoupled:
        return I_decoupled(lam, N, bg, v1, v2).total
    return None


@dataclass(frozen=True)
class ReducedPoint:
    """``J+`` at a mean-zero pair together with its constrained averages and gradient."""

    value: FunctionalValue
    cpair: CPair
    moments: MomentSet
    grad1: np.ndarray | None = None
    grad2: np.ndarray | None = None


def J_plus_closed_form(K: CouplingMatrix, lam: float, N: VortexNumbers, grid, w1, w2, m: MomentSet, cp: CPair) -> FunctionalValue:
    a, b, c, d = K.as_tuple()
    al1, al2 = alphas(K, N)
    dir_part = dirichlet_block(K, grid, w1, w2)
    pot = 0.5 * lam * ((1 + d / b) * (m.area - cp.X * m.I1) + (1 + a / c) * (m.area - cp.Y * m.I2))
    pot -= 0.5 * (al1 + al2)
    lin = al1 * cp.c1 + al2 * cp.c2
    return FunctionalValue(dir_part + pot + lin, dir_part, pot, lin)


def reduced_point(K, lam, N, bg: Background, w1, w2, *, with_gradient: bool = True) -> ReducedPoint:
    """Evaluate ``J+`` (closed form) and, optionally, its mean-zero gradient.

    The gradient is the mean-zero projection of ``gradient_I`` at ``w + c+``;
    the averages are stationary there, so no derivative of ``c+`` is needed.
    """
    _require_variational(K)
    m = integrals(bg, w1, w2)
    cp = solve_c_plus(K, lam, N, m)
    val = J_plus_closed_form(K, lam, N, bg.grid, w1, w2, m, cp)
    if not with_gradient:
        return ReducedPoint(val, cp, m)
    G1, G2 = gradient_I(K, lam, N, bg, w1 + cp.c1, w2 + cp.c2)
    return ReducedPoint(val, cp, m, G1 - G1.mean(), G2 - G2.mean())


def J_plus(K, lam, N, bg: Background, w1, w2) -> FunctionalValue:
    return reduced_point(K, lam, N, bg, w1, w2, with_gradient=False).value


def hessian_c(K: CouplingMatrix, lam: float, N: VortexNumbers, m: MomentSet, cp: CPair) -> np.ndarray:
    """Hessian of ``c -> I_lambda(w + c)``; ``m`` are the moments of ``w`` (without ``c``).

    Obtained by differentiating ``dI/dc1 = K1 (J1 X^2 - R1(Y) X + beta1)`` and its
    mirror, with ``K1 = lam a (b+d)^2 / (b (ad-bc))``.
    """
    _require_variational(K)
    a, b, c, d = K.as_tuple()
    X, Y = cp.X, cp.Y
    k1 = lam * a * (b + d) ** 2 / (b * K.det)
    k2 = lam * d * (a + c) ** 2 / (c * K.det)
    h11 = k1 * (2 * X * X * m.J1 - X * R1(K, m, Y))
    h22 = k2 * (2 * Y * Y * m.J2 - Y * R2(K, m, X))
    h12 = -lam * (a + c) * (b + d) / K.det * X * Y * m.X
    return np.array([[h11, h12], [h12, h22]])
