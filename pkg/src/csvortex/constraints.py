"""Reduction of the averages ``(c1, c2)`` to a scalar root-finding problem.

Writing ``v_i = w_i + c_i`` with mean-zero ``w_i``, the integrated equations
become two quadratics in ``X = e^{c1}`` and ``Y = e^{c2}``::

    J1 X^2 - R1(Y) X + beta1 = 0,     J2 Y^2 - R2(X) Y + beta2 = 0,

whose roots give the branch maps ``X = g1(Y)``, ``Y = g2(X)``.  The solver
only ever uses the ``++`` composition; the other three are kept for tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .algebra import CouplingMatrix, VortexNumbers
from .torus import MomentSet

BOUNDARY_TOL = 1e-10


class NotAdmissible(ValueError):
    """The mean-zero pair lies outside the admissible set."""


class NegativeDiscriminant(ValueError):
    """A branch map was evaluated where its quadratic has no real root."""


class BracketFailure(RuntimeError):
    pass


class DegenerateBranch(ValueError):
    """A branch through ``g^-`` with ``beta = 0`` collapses to ``e^c = 0``."""


@dataclass(frozen=True)
class AdmissibilityReport:
    margin1: float
    margin2: float
    scale1: float
    scale2: float

    @property
    def interior(self) -> bool:
        return self.margin1 > BOUNDARY_TOL * self.scale1 and self.margin2 > BOUNDARY_TOL * self.scale2

    @property
    def member(self) -> bool:
        return self.margin1 >= -BOUNDARY_TOL * self.scale1 and self.margin2 >= -BOUNDARY_TOL * self.scale2

    @property
    def on_boundary(self) -> bool:
        return self.member and not self.interior


@dataclass(frozen=True)
class CPair:
    c1: float
    c2: float
    branch: str
    residual1: float
    residual2: float

    @property
    def X(self) -> float:
        return math.exp(self.c1)

    @property
    def Y(self) -> float:
        return math.exp(self.c2)


def betas(K: CouplingMatrix, lam: float, N: VortexNumbers) -> tuple[float, float]:
    """Constant terms of the two quadratics."""
    a, b, c, d = K.as_tuple()
    b1 = 4.0 * math.pi * K.det * (d * N.N1 + b * N.N2) / (lam * a * (b + d) ** 2)
    b2 = 4.0 * math.pi * K.det * (c * N.N1 + a * N.N2) / (lam * d * (a + c) ** 2)
    return b1, b2


def admissibility(K: CouplingMatrix, lam: float, N: VortexNumbers, m: MomentSet) -> AdmissibilityReport:
    a, b, c, d = K.as_tuple()
    k1 = 16.0 * math.pi * a * (d * N.N1 + b * N.N2) / (lam * K.det)
    k2 = 16.0 * math.pi * d * (c * N.N1 + a * N.N2) / (lam * K.det)
    return AdmissibilityReport(
        margin1=m.I1**2 - k1 * m.J1,
        margin2=m.I2**2 - k2 * m.J2,
        scale1=m.I1**2,
        scale2=m.I2**2,
    )


def R1(K: CouplingMatrix, m: MomentSet, Y: float) -> float:
    a, b, c, d = K.as_tuple()
    return K.det / (a * (b + d)) * m.I1 + b * (a + c) / (a * (b + d)) * Y * m.X


def R2(K: CouplingMatrix, m: MomentSet, X: float) -> float:
    a, b, c, d = K.as_tuple()
    return K.det / (d * (a + c)) * m.I2 + c * (b + d) / (d * (a + c)) * X * m.X


def _discriminant_root(R: float, beta: float, J: float) -> float:
    """``sqrt(R^2 - 4 beta J)``, factored to limit cancellation near zero."""
    t = 2.0 * math.sqrt(beta * J)
    disc = (R - t) * (R + t)
    if disc < 0:
        if disc > -4e-15 * R * R:
            return 0.0
        raise NegativeDiscriminant(f"R^2 - 4 beta J = {disc:.3e} < 0")
    return math.sqrt(disc)


def _branch_terms(which: int, K, lam, N, m: MomentSet, arg: float):
    b1, b2 = betas(K, lam, N)
    if which == 1:
        return R1(K, m, arg), b1, m.J1
    if which == 2:
        return R2(K, m, arg), b2, m.J2
    raise ValueError("which must be 1 or 2")


def g_branch(which: int, sign: str, K: CouplingMatrix, lam: float, N: VortexNumbers, m: MomentSet, arg: float) -> float:
    """Root of ``J t^2 - R(arg) t + beta = 0`` on the requested branch."""
    R, beta, J = _branch_terms(which, K, lam, N, m, arg)
    s = _discriminant_root(R, beta, J)
    if sign == "+":
        return (R + s) / (2.0 * J)
    if sign == "-":
        # conjugate form: no cancellation when beta J << R^2
        return 2.0 * beta / (R + s) if R + s > 0 else 0.0
    raise ValueError("sign must be '+' or '-'")


def g_branch_slope(which: int, sign: str, K, lam, N, m: MomentSet, arg: float) -> float:
    """Closed-form ``dg/d(arg) = +- g * k X / sqrt(disc)``."""
    a, b, c, d = K.as_tuple()
    R, beta, J = _branch_terms(which, K, lam, N, m, arg)
    s = _discriminant_root(R, beta, J)
    k = b * (a + c) / (a * (b + d)) if which == 1 else c * (b + d) / (d * (a + c))
    g = g_branch(which, sign, K, lam, N, m, arg)
    return (1.0 if sign == "+" else -1.0) * g * k * m.X / s


def constraint_residuals(K, lam, N, m: MomentSet, X: float, Y: float) -> tuple[float, float]:
    """Relative residuals of the two quadratics at ``(X, Y) = (e^{c1}, e^{c2})``."""
    b1, b2 = betas(K, lam, N)
    r1a, r1b = m.J1 * X * X, X * R1(K, m, Y)
    r2a, r2b = m.J2 * Y * Y, Y * R2(K, m, X)
    res1 = (r1a - r1b + b1) / (r1a + r1b + b1)
    res2 = (r2a - r2b + b2) / (r2a + r2b + b2)
    return res1, res2


def _signs(branch: str) -> tuple[str, str]:
    table = {"++": ("+", "+"), "--": ("-", "-"), "+-": ("+", "-"), "-+": ("-", "+")}
    if branch not in table:
        raise ValueError(f"unknown branch {branch!r}")
    return table[branch]


def F_branch(branch: str, K, lam, N, m: MomentSet, X: float) -> float:
    """``F(X) = X - g1(g2(X))`` for the chosen sign pair (g1 sign first)."""
    s1, s2 = _signs(branch)
    return X - g_branch(1, s1, K, lam, N, m, g_branch(2, s2, K, lam, N, m, X))


def solve_c_branch(branch: str, K: CouplingMatrix, lam: float, N: VortexNumbers, m: MomentSet) -> CPair:
    """Unique positive root of ``F`` for the given branch, returned as ``(c1, c2)``."""
    if not admissibility(K, lam, N, m).member:
        raise NotAdmissible("moments violate the admissibility inequalities")
    s1, s2 = _signs(branch)
    b1, b2 = betas(K, lam, N)
    if (s1 == "-" and b1 == 0) or (s2 == "-" and b2 == 0):
        raise DegenerateBranch(f"branch {branch} collapses when the matching beta vanishes")

    def g1(Y: float) -> float:
        return g_branch(1, s1, K, lam, N, m, Y)

    def g2(X: float) -> float:
        return g_branch(2, s2, K, lam, N, m, X)

    # F(X)/X = 1 - g1(g2(X))/X is strictly increasing for the ++ and -- branches and
    # shares its zero with F; for the mixed ones F itself is increasing.
    def h(t: float) -> float:
        X = math.exp(t)
        return 1.0 - g1(g2(X)) / X

    guess = max(g1(g2(1.0)), 1e-300)
    t0 = math.log(guess)
    lo, hi = t0 - 1.0, t0 + 1.0
    for _ in range(200):
        if h(lo) < 0:
            break
        lo -= 2.0 * (hi - lo)
    else:
        raise BracketFailure("could not find a lower bracket")
    for _ in range(200):
        if h(hi) > 0:
            break
        hi += 2.0 * (hi - lo)
    else:
        raise BracketFailure("could not find an upper bracket")
    t = brentq(h, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    X = math.exp(t)
    Y = g2(X)
    X = g1(Y)
    res1, res2 = constraint_residuals(K, lam, N, m, X, Y)
    return CPair(c1=math.log(X), c2=math.log(Y), branch=branch, residual1=res1, residual2=res2)


def solve_c_plus(K: CouplingMatrix, lam: float, N: VortexNumbers, m: MomentSet) -> CPair:
    return solve_c_branch("++", K, lam, N, m)


def remark_bound_holds(cp: CPair, m: MomentSet) -> dict:
    """Upper bounds ``e^{c_i} I_i <= |Omega|`` and ``e^{c_i} <= 1`` (telemetry)."""
    return {
        "lemma1": cp.X * m.I1 <= m.area * (1 + 1e-12),
        "lemma2": cp.Y * m.I2 <= m.area * (1 + 1e-12),
        "remark1": cp.X <= 1 + 1e-12,
        "remark2": cp.Y <= 1 + 1e-12,
    }
