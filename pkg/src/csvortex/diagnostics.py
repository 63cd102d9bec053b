"""Physical observables and checks on computed states."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
import yaml

from .algebra import (
    CouplingMatrix,
    PhysicalParams,
    ThresholdUndefined,
    VortexNumbers,
    kappa_from_lambda,
    nonexistence_threshold,
    predicted_flux,
)
from .constraints import admissibility
from .solver import SolutionState, residual_norm, system_residual, system_terms
from .torus import Background, ExponentOverflow, integrals

MAX_EU_MARGIN = 1e-8


@dataclass(frozen=True)
class VerifyTolerances:
    residual: float = 1e-8  # times lambda, L2
    constraint: float = 1e-10
    flux_rel: float = 1e-2
    max_eu_margin: float = MAX_EU_MARGIN


def _brace_integrals(K: CouplingMatrix, lam: float, bg: Background, state: SolutionState) -> tuple[float, float]:
    """``lam * int S_a`` by quadrature of the field values."""
    g = bg.grid
    e1, e2 = state.eu(bg)
    S1, S2, _ = system_terms(K, e1, e2)
    return lam * g.integrate(S1), lam * g.integrate(S2)


def _fluxes_from_braces(K: CouplingMatrix, s1: float, s2: float) -> tuple[float, float]:
    # F^b = -(lam/2) sum_a (K^-1)_{ab} S_a, integrated
    phi = -0.5 * (K.inverse().T @ np.array([s1, s2]))
    return float(phi[0]), float(phi[1])


def flux(K: CouplingMatrix, lam: float, bg: Background, state: SolutionState) -> tuple[float, float]:
    """Magnetic fluxes from the smooth curvature combination, by quadrature."""
    return _fluxes_from_braces(K, *_brace_integrals(K, lam, bg, state))


def flux_from_constraints(K: CouplingMatrix, lam: float, bg: Background, state: SolutionState) -> tuple[float, float]:
    """Fluxes from the five moments of ``w`` and the constants ``c``."""
    a, b, c, d = K.as_tuple()
    D = K.det
    m = integrals(bg, state.w1, state.w2).scaled(state.c1, state.c2)
    s1 = (-a * (b + d) * m.I1 + b * (a + c) * m.I2) / D + (
        a * a * (b + d) ** 2 * m.J1 - b * (b + d) * (a * a - c * c) * m.X - b * d * (a + c) ** 2 * m.J2
    ) / D**2
    s2 = (c * (b + d) * m.I1 - d * (a + c) * m.I2) / D + (
        -a * c * (b + d) ** 2 * m.J1 - c * (a + c) * (d * d - b * b) * m.X + d * d * (a + c) ** 2 * m.J2
    ) / D**2
    return _fluxes_from_braces(K, lam * s1, lam * s2)


def energy_and_charge(fluxes: Sequence[float], params: PhysicalParams) -> tuple[float, float, float]:
    """``E = v^2 (Phi1 + Phi2)`` and ``Q_a = kappa Phi_a``."""
    p1, p2 = fluxes
    return params.v**2 * (p1 + p2), params.kappa * p1, params.kappa * p2


def constraint_residuals(K, lam, N: VortexNumbers, bg: Background, state: SolutionState) -> tuple[float, float]:
    """Relative defect of ``lam int S_a + 4 pi N_a = 0``.

    Normalised by the sizes of the linear and quadratic parts of ``S_a``
    separately, which stay of order ``lam |Omega|`` even when they cancel.
    """
    a, b, c, d = K.as_tuple()
    g = bg.grid
    e1, e2 = state.eu(bg)
    S1, S2, _ = system_terms(K, e1, e2)
    L1 = (-a * (b + d) * e1 + b * (a + c) * e2) / K.det
    L2 = (c * (b + d) * e1 - d * (a + c) * e2) / K.det
    out = []
    for S, L, Na in ((S1, L1, N.N1), (S2, L2, N.N2)):
        scale = lam * (g.integrate(np.abs(L)) + g.integrate(np.abs(S - L))) + 4.0 * math.pi * abs(Na)
        val = lam * g.integrate(S) + 4.0 * math.pi * Na
        out.append(val / scale if scale > 0 else 0.0)
    return out[0], out[1]


@dataclass
class MaxPrincipleReport:
    max_eu: tuple[float, float]
    argmax: tuple[tuple[int, int], tuple[int, int]]
    strict: tuple[bool, bool]
    passed: bool
    violations: list[dict] = field(default_factory=list)


def _source_free(K: CouplingMatrix, N: VortexNumbers) -> tuple[bool, bool]:
    # a component without vortices that does not feel the other one stays at 1
    if N.total == 0:
        return True, True
    return N.N1 == 0 and K.b == 0, N.N2 == 0 and K.c == 0


def max_principle_check(
    K: CouplingMatrix, N: VortexNumbers, bg: Background, state: SolutionState, margin: float = MAX_EU_MARGIN
) -> MaxPrincipleReport:
    g = bg.grid
    free = _source_free(K, N)
    maxima, locs, viol = [], [], []
    for i, eu in enumerate(state.eu(bg)):
        idx = np.unravel_index(int(np.argmax(eu)), eu.shape)
        top = float(eu[idx])
        maxima.append(top)
        locs.append((int(idx[0]), int(idx[1])))
        ok = abs(top - 1.0) <= 1e-10 if free[i] else top <= 1.0 - margin
        if not ok:
            viol.append({
                "component": i + 1, "node": [int(idx[0]), int(idx[1])],
                "s": [float(g.s[0][idx]), float(g.s[1][idx])], "value": top,
            })
    strict = (not free[0], not free[1])
    return MaxPrincipleReport(tuple(maxima), tuple(locs), strict, not viol, viol)


def lp_gaps(bg: Background, state: SolutionState) -> dict:
    g = bg.grid
    out = {}
    for i, eu in enumerate(state.eu(bg), start=1):
        out[f"L1_{i}"] = g.integrate(np.abs(eu - 1.0))
        out[f"L2_{i}"] = g.norm(eu - 1.0)
    return out


@dataclass
class GapTable:
    lams: list[float]
    gaps: list[dict]
    monotone: bool


def asymptotic_gaps(bg: Background, states: Sequence[SolutionState]) -> GapTable:
    """``||e^{u_i} - 1||_p`` for p = 1, 2 along a list of states, with a strict-decrease flag."""
    pairs = sorted(((s.lam, lp_gaps(bg, s)) for s in states), key=lambda t: t[0])
    lams = [p[0] for p in pairs]
    gaps = [p[1] for p in pairs]
    monotone = True
    for prev, cur in zip(gaps, gaps[1:]):
        for key in ("L2_1", "L2_2"):
            if not cur[key] < prev[key] and not (prev[key] == 0.0 and cur[key] == 0.0):
                monotone = False
    return GapTable(lams, gaps, monotone)


@dataclass
class SolutionReport:
    lam: float
    kappa: float
    v: float
    lambda_star: float | None
    kappa_star: float | None
    fluxes: tuple[float, float]
    fluxes_constraint: tuple[float, float]
    predicted_fluxes: tuple[float, float]
    flux_errors: tuple[float, float]
    charges: tuple[float, float]
    energy: float
    max_eu: tuple[float, float]
    residual_norm: float
    constraint_residuals: tuple[float, float]
    lp_gaps: dict
    admissibility_margins: tuple[float, float] | None
    branch_tag: str
    converged: bool
    passed: bool
    failures: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolutionReport":
        kw = dict(d)
        for f in fields(cls):
            if f.name not in kw:
                raise KeyError(f"missing report key {f.name!r}")
            if isinstance(kw[f.name], list) and f.name != "failures":
                kw[f.name] = tuple(kw[f.name])
        return cls(**kw)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "SolutionReport":
        return cls.from_dict(yaml.safe_load(text))


def verify(
    K: CouplingMatrix,
    lam: float,
    N: VortexNumbers,
    bg: Background,
    state: SolutionState,
    params: PhysicalParams | None = None,
    tol: VerifyTolerances = VerifyTolerances(),
) -> SolutionReport:
    """Run every check on ``state``; failures are listed in the report, never raised."""
    g = bg.grid
    if params is None:
        params = PhysicalParams.from_lambda(lam, 1.0)
    failures = []
    try:
        F = system_residual(K, lam, N, bg, state.v1, state.v2)
        res = residual_norm(g, F)
    except ExponentOverflow:
        res = math.inf
    if not res <= tol.residual * lam:
        failures.append(f"residual {res:.3e} > {tol.residual * lam:.3e}")
    phi = flux(K, lam, bg, state)
    phi_c = flux_from_constraints(K, lam, bg, state)
    pred = predicted_flux(K, N)
    errs = tuple(
        abs(p - q) / abs(q) if q != 0 else abs(p) for p, q in zip(phi, pred)
    )
    if not all(e <= tol.flux_rel for e in errs):
        failures.append(f"flux errors {errs[0]:.3e}, {errs[1]:.3e} exceed {tol.flux_rel}")
    en, q1, q2 = energy_and_charge(phi, params)
    cres = constraint_residuals(K, lam, N, bg, state)
    if not all(abs(r) <= tol.constraint for r in cres):
        failures.append(f"constraint residuals {cres[0]:.3e}, {cres[1]:.3e} exceed {tol.constraint}")
    mp = max_principle_check(K, N, bg, state, tol.max_eu_margin)
    if not mp.passed:
        failures.append(f"maximum principle violated: {mp.violations}")
    try:
        lam_star = nonexistence_threshold(K, N, g.area)
        kap_star = kappa_from_lambda(params.v, lam_star)
    except ThresholdUndefined:
        lam_star = kap_star = None
    margins = None
    if K.variational and N.total > 0:
        try:
            rep = admissibility(K, lam, N, integrals(bg, state.w1, state.w2))
            margins = (rep.margin1, rep.margin2)
        except ExponentOverflow:
            pass
    return SolutionReport(
        lam=float(lam), kappa=float(params.kappa), v=float(params.v),
        lambda_star=lam_star, kappa_star=kap_star,
        fluxes=phi, fluxes_constraint=phi_c, predicted_fluxes=pred, flux_errors=errs,
        charges=(q1, q2), energy=en, max_eu=mp.max_eu, residual_norm=res,
        constraint_residuals=cres, lp_gaps=lp_gaps(bg, state), admissibility_margins=margins,
        branch_tag=state.branch_tag, converged=bool(state.converged),
        passed=not failures, failures=failures,
    )
