"""Solution procedures for the doubly periodic vortex system.

The regular parts ``v_i = u_i - u0^i`` satisfy

    Delta v_i = lam * S_i(E1 e^{v1}, E2 e^{v2}) + 4 pi N_i / |Omega|,

with ``S_i`` the quadratic polynomials of the coupled system.  Three routes
are provided: constrained minimisation of the reduced functional (coupled,
variational case), damped Newton on the full system (any coupling, including
``b = 0`` or ``c = 0``) and, for a second critical point, deflated Newton.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .algebra import CouplingMatrix, ThresholdUndefined, VortexNumbers, nonexistence_threshold, threshold_branches
from .constraints import NegativeDiscriminant, NotAdmissible, admissibility
from .functional import energy, gradient_I, reduced_point
from .torus import Background, ExponentOverflow, TorusGrid, integrals

logger = logging.getLogger(__name__)

ProgressSink = Callable[[dict], None]

# far from the cores e^u = 1 - O(exp(-sqrt(lam) r)), which rounds to 1 at large lam
EU_ROUNDOFF = 1e-12


class SolverError(RuntimeError):
    pass


class BelowThreshold(SolverError):
    pass


class Diverged(SolverError):
    pass


class SingularLinearization(SolverError):
    pass


class StalledOnBoundary(SolverError):
    def __init__(self, msg: str, margins: tuple[float, float] | None = None):
        super().__init__(msg)
        self.margins = margins


class MaxIterations(SolverError):
    pass


@dataclass(frozen=True)
class SolveOptions:
    grad_tol: float | None = None  # default 1e-8 * lam
    max_iter: int = 2000
    lbfgs_memory: int = 10
    armijo: float = 1e-4
    max_halvings: int = 10
    backoff: float = 0.5
    newton_switch_tol: float = 1e-3
    newton_tol: float = 1e-10  # times lam, L2 residual
    newton_max_iter: int = 60
    init: str = "scalar"  # or "topological"

    def __post_init__(self) -> None:
        if not 0.0 < self.backoff < 1.0:
            raise ValueError("backoff must lie in (0, 1)")
        if self.max_iter <= 0 or self.lbfgs_memory <= 0 or self.max_halvings <= 0:
            raise ValueError("iteration limits must be positive")
        if self.init not in ("scalar", "topological"):
            raise ValueError(f"unknown init {self.init!r}")

    def gtol(self, lam: float) -> float:
        return self.grad_tol if self.grad_tol is not None else 1e-8 * lam


@dataclass
class SolutionState:
    w1: np.ndarray
    w2: np.ndarray
    c1: float
    c2: float
    lam: float
    converged: bool = False
    grad_norm: float = math.inf
    residual_norm: float = math.inf
    iterations: int = 0
    branch_tag: str = "minimizer"
    history: list[float] = field(default_factory=list)

    @property
    def v1(self) -> np.ndarray:
        return self.w1 + self.c1

    @property
    def v2(self) -> np.ndarray:
        return self.w2 + self.c2

    @classmethod
    def from_v(cls, v1: np.ndarray, v2: np.ndarray, lam: float, **kw) -> "SolutionState":
        c1, c2 = float(np.mean(v1)), float(np.mean(v2))
        return cls(v1 - c1, v2 - c2, c1, c2, lam, **kw)

    def eu(self, bg: Background) -> tuple[np.ndarray, np.ndarray]:
        """``e^{u_i} = E_i e^{v_i}``."""
        return bg.E1 * np.exp(self.v1), bg.E2 * np.exp(self.v2)


# -- the full system ----------------------------------------------------------


def system_terms(K: CouplingMatrix, e1: np.ndarray, e2: np.ndarray):
    """``S1, S2`` and their partial derivatives in ``e1, e2``."""
    a, b, c, d = K.as_tuple()
    D = K.det
    D2 = D * D
    p11, p12 = a * a * (b + d) ** 2, b * (b + d) * (a * a - c * c)
    p13 = b * d * (a + c) ** 2
    q11, q12 = a * c * (b + d) ** 2, c * (a + c) * (d * d - b * b)
    q13 = d * d * (a + c) ** 2
    S1 = (-a * (b + d) * e1 + b * (a + c) * e2) / D + (p11 * e1 * e1 - p12 * e1 * e2 - p13 * e2 * e2) / D2
    S2 = (c * (b + d) * e1 - d * (a + c) * e2) / D + (-q11 * e1 * e1 - q12 * e1 * e2 + q13 * e2 * e2) / D2
    dS1_de1 = -a * (b + d) / D + (2 * p11 * e1 - p12 * e2) / D2
    dS1_de2 = b * (a + c) / D + (-p12 * e1 - 2 * p13 * e2) / D2
    dS2_de1 = c * (b + d) / D + (-2 * q11 * e1 - q12 * e2) / D2
    dS2_de2 = -d * (a + c) / D + (-q12 * e1 + 2 * q13 * e2) / D2
    return S1, S2, ((dS1_de1, dS1_de2), (dS2_de1, dS2_de2))


def _system_nonlinear(K, lam, N, bg: Background):
    g = bg.grid
    s1 = 4.0 * math.pi * N.N1 / g.area
    s2 = 4.0 * math.pi * N.N2 / g.area

    def nl(V: np.ndarray):
        e1 = bg.E1 * _exp(V[0])
        e2 = bg.E2 * _exp(V[1])
        # huge trial steps may overflow; the line search rejects the resulting inf
        with np.errstate(over="ignore", invalid="ignore"):
            return _assemble(e1, e2)

    def _assemble(e1, e2):
        S1, S2, dS = system_terms(K, e1, e2)
        J = np.empty((2, 2) + g.shape)
        J[0, 0] = lam * dS[0][0] * e1
        J[0, 1] = lam * dS[0][1] * e2
        J[1, 0] = lam * dS[1][0] * e1
        J[1, 1] = lam * dS[1][1] * e2
        return np.array([lam * S1 + s1, lam * S2 + s2]), J

    return nl


def _exp(v: np.ndarray) -> np.ndarray:
    top = float(np.max(v))
    if not np.isfinite(top) or top > 700.0:
        raise ExponentOverflow(f"max(v) = {top}")
    return np.exp(v)


def system_residual(K, lam, N, bg: Background, v1, v2) -> tuple[np.ndarray, np.ndarray]:
    """``Delta v_i - lam S_i - 4 pi N_i/|Omega|`` at the nodes."""
    F, _ = _system_nonlinear(K, lam, N, bg)(np.array([v1, v2]))
    g = bg.grid
    return g.laplacian(v1) - F[0], g.laplacian(v2) - F[1]


def residual_norm(grid: TorusGrid, F: Sequence[np.ndarray]) -> float:
    return math.sqrt(sum(grid.inner(f, f) for f in F))


# -- inexact Newton -------------------------------------------------------------


class Deflation:
    """Multiplicative deflation ``M(v) = prod_k (||v - v_k||^-p + shift)``."""

    def __init__(self, grid: TorusGrid, power: float = 2.0, shift: float = 1.0):
        self.grid = grid
        self.power = power
        self.shift = shift
        self.solutions: list[np.ndarray] = []

    def add(self, V: np.ndarray) -> None:
        self.solutions.append(np.array(V, copy=True))

    def factor(self, V: np.ndarray) -> float:
        out = 1.0
        for S in self.solutions:
            dist = math.sqrt(sum(self.grid.inner(x, x) for x in (V - S)))
            out *= dist ** (-self.power) + self.shift
        return out

    def log_gradient(self, V: np.ndarray) -> np.ndarray:
        """L2 representative of ``grad M / M``."""
        out = np.zeros_like(V)
        for S in self.solutions:
            diff = V - S
            dist2 = sum(self.grid.inner(x, x) for x in diff)
            m = dist2 ** (-self.power / 2) + self.shift
            out += -self.power * dist2 ** (-self.power / 2 - 1) * diff / m
        return out


def _preconditioner(grid: TorusGrid, Jbar: np.ndarray):
    """Inverse of ``Delta - Jbar`` per Fourier mode, shifted to stay non-singular."""
    m = Jbar.shape[0]
    eig = np.linalg.eigvals(Jbar)
    if np.all(eig.real > 1e-12 * max(1.0, np.max(np.abs(eig)))) and np.all(np.abs(eig.imag) < 1e-9 * np.abs(eig.real)):
        shift = Jbar
    else:
        shift = max(float(np.max(np.abs(eig))), 1.0) * np.eye(m)
    q2 = grid.symbol
    if m == 1:
        den = -(q2 + shift[0, 0])

        def apply(R: np.ndarray) -> np.ndarray:
            return np.fft.ifft2(np.fft.fft2(R[0]) / den).real[None]

        return apply
    A = -(q2 + shift[0, 0])
    B = -shift[0, 1] * np.ones_like(q2)
    C = -shift[1, 0] * np.ones_like(q2)
    Dm = -(q2 + shift[1, 1])
    det = A * Dm - B * C
    if np.min(np.abs(det)) < 1e-300:
        raise SingularLinearization("preconditioner is singular")

    def apply(R: np.ndarray) -> np.ndarray:
        r1, r2 = np.fft.fft2(R[0]), np.fft.fft2(R[1])
        x1 = (Dm * r1 - B * r2) / det
        x2 = (-C * r1 + A * r2) / det
        return np.array([np.fft.ifft2(x1).real, np.fft.ifft2(x2).real])

    return apply


@dataclass
class NewtonResult:
    V: np.ndarray
    residual: float
    iterations: int
    converged: bool
    history: list[float]


def newton(
    grid: TorusGrid,
    nonlinear: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]],
    V0: np.ndarray,
    tol: float,
    max_iter: int = 60,
    deflation: Deflation | None = None,
    progress: ProgressSink | None = None,
) -> NewtonResult:
    """Damped inexact Newton for ``Delta V - nonlinear(V) = 0``.

    ``nonlinear`` returns the pointwise right-hand side and its Jacobian
    (shape ``(m, m, n1, n2)``).  Linear systems are solved with GMRES
    preconditioned by the constant-coefficient operator at the mean Jacobian.
    """
    V = np.array(V0, dtype=float, copy=True)
    m = V.shape[0]
    size = V.size

    def resid(V):
        Nl, J = nonlinear(V)
        F = np.array([grid.laplacian(V[i]) for i in range(m)]) - Nl
        return F, J

    def norm(F):
        return residual_norm(grid, F)

    try:
        F, J = resid(V)
    except ExponentOverflow as exc:
        raise Diverged(str(exc)) from exc
    r = norm(F)
    history = [r]
    it = 0
    while r > tol and it < max_iter:
        it += 1
        Jbar = J.reshape(m, m, -1).mean(axis=2)
        precond = _preconditioner(grid, Jbar)

        def matvec(x, J=J):
            X = x.reshape(V.shape)
            out = np.empty_like(X)
            for i in range(m):
                out[i] = grid.laplacian(X[i]) - sum(J[i, j] * X[j] for j in range(m))
            return out.ravel()

        A = LinearOperator((size, size), matvec=matvec, dtype=float)
        M = LinearOperator((size, size), matvec=lambda x: precond(x.reshape(V.shape)).ravel(), dtype=float)
        rtol = min(1e-3, max(1e-12, 0.1 * r / max(history[0], 1e-300)))
        delta, info = gmres(A, -F.ravel(), M=M, rtol=rtol, atol=0.0, restart=60, maxiter=20)
        if not np.all(np.isfinite(delta)):
            raise SingularLinearization("linear solve produced non-finite values")
        delta = delta.reshape(V.shape)
        if deflation is not None and deflation.solutions:
            mfac = deflation.factor(V)
            dot = sum(grid.inner(x, y) for x, y in zip(deflation.log_gradient(V), delta))
            denom = 1.0 - dot
            if abs(denom) < 1e-14:
                raise SingularLinearization("deflated step is undefined")
            delta = delta / denom
            merit = lambda F_, V_: norm(F_) * deflation.factor(V_)
            cur = r * mfac
        else:
            merit = lambda F_, V_: norm(F_)
            cur = r
        t = 1.0
        for _ in range(40):
            trial = V + t * delta
            try:
                Ft, Jt = resid(trial)
                mt = merit(Ft, trial)
            except ExponentOverflow:
                mt = math.inf
            if np.isfinite(mt) and mt <= (1.0 - 1e-4 * t) * cur:
                break
            t *= 0.5
        else:
            raise Diverged(f"line search failed at iteration {it} (residual {r:.3e})")
        V, F, J = trial, Ft, Jt
        r = norm(F)
        history.append(r)
        if progress is not None:
            progress({"stage": "newton", "iteration": it, "residual": r, "step": t})
    return NewtonResult(V, r, it, r <= tol, history)


# -- scalar problem ---------------------------------------------------------------


def scalar_threshold(N: int, area: float) -> float:
    return 16.0 * math.pi * N / area


def solve_scalar_mu(
    grid: TorusGrid,
    E: np.ndarray,
    mu: float,
    N: int,
    *,
    tol: float | None = None,
    monotone_iter: int = 2000,
    strict_threshold: bool = True,
) -> tuple[np.ndarray, bool]:
    """Maximal solution of ``Delta v = mu E e^v (E e^v - 1) + 4 pi N/|Omega|``.

    Monotone iteration from the supersolution ``-log(E + delta)`` followed by a
    Newton polish; returns ``(v, converged)``.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if N == 0:
        return np.zeros(grid.shape), True
    thr = scalar_threshold(N, grid.area)
    if mu < thr:
        if strict_threshold:
            raise BelowThreshold(f"mu = {mu:.6g} below the scalar threshold {thr:.6g}")
        logger.warning("mu = %.4g is below the scalar threshold %.4g", mu, thr)
    tol = 1e-8 * mu * 1e-2 if tol is None else tol
    src = 4.0 * math.pi * N / grid.area

    def rhs(v):
        ev = E * np.exp(v)
        return mu * ev * (ev - 1.0) + src

    v = -np.log(E + 1e-2)
    shift = mu
    den = -(grid.symbol + shift)
    prev = math.inf
    for k in range(monotone_iter):
        f = rhs(v) - shift * v
        v_new = np.fft.ifft2(np.fft.fft2(f) / den).real
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        if not np.all(np.isfinite(v)):
            raise Diverged("monotone iteration produced non-finite values")
        if change < 1e-6:
            break
        prev = change

    def nl(V):
        ev = E * _exp(V[0])
        return (mu * ev * (ev - 1.0) + src)[None], (mu * ev * (2.0 * ev - 1.0))[None, None]

    res = newton(grid, nl, v[None], tol=tol, max_iter=50)
    v = res.V[0]
    ok = res.converged and bool(np.max(E * np.exp(v)) <= 1.0 + EU_ROUNDOFF)
    return v, ok


# -- gate ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GateResult:
    proceed: bool
    lam: float
    lam_star: float | None
    inputs: dict

    @property
    def certificate(self) -> str:
        if self.proceed:
            return "proceed"
        return (
            f"no solution: lambda = {self.lam:.12g} < lambda* = {self.lam_star:.12g} "
            "(necessary condition lambda >= 16 pi (ad-bc)/|Omega| max{(dN1+bN2)/(a(b+d)^2), (cN1+aN2)/(d(a+c)^2)})"
        )


def nonexistence_gate(K: CouplingMatrix, lam: float, N: VortexNumbers, area: float) -> GateResult:
    inputs = {"a": K.a, "b": K.b, "c": K.c, "d": K.d, "N1": N.N1, "N2": N.N2, "area": area}
    try:
        lam_star = nonexistence_threshold(K, N, area)
    except ThresholdUndefined:
        return GateResult(True, lam, None, inputs)
    inputs["branches"] = list(threshold_branches(K, N))
    return GateResult(lam >= lam_star, lam, lam_star, inputs)


# -- initialisation -----------------------------------------------------------------


def scalar_mus(K: CouplingMatrix, lam: float) -> tuple[float, float]:
    """Scalar couplings matching the diagonal self-interaction of each component."""
    a, b, c, d = K.as_tuple()
    return lam * a * (b + d) / K.det, lam * d * (a + c) / K.det


def initial_guess(K, lam, N, bg: Background, kind: str = "scalar") -> tuple[np.ndarray, np.ndarray]:
    g = bg.grid
    if kind == "topological":
        v1, v2 = -np.log(bg.E1 + 0.1), -np.log(bg.E2 + 0.1)
    else:
        mu1, mu2 = scalar_mus(K, lam)
        v1, _ = solve_scalar_mu(g, bg.E1, mu1, N.N1, strict_threshold=False)
        v2, _ = solve_scalar_mu(g, bg.E2, mu2, N.N2, strict_threshold=False)
    return v1 - v1.mean(), v2 - v2.mean()


def _admissible_start(K, lam, N, bg, w1, w2):
    for t in (1.0, 0.75, 0.5, 0.25, 0.0):
        try:
            m = integrals(bg, t * w1, t * w2)
        except ExponentOverflow:
            continue
        if admissibility(K, lam, N, m).interior:
            return t * w1, t * w2
    raise NotAdmissible("no admissible starting point along the scalar initialiser ray")


# -- reduced minimisation -------------------------------------------------------------


def _vacuum_hessian(K: CouplingMatrix, lam: float) -> np.ndarray:
    a, b, c, d = K.as_tuple()
    g1 = np.array([a * (b + d), -b * (a + c)])
    H = np.outer(g1, g1) / (a * b * K.det)
    H[1, 1] += (a + c) ** 2 / (a * c)
    return lam * H


def _lbfgs_preconditioner(K: CouplingMatrix, lam: float, grid: TorusGrid):
    a, b, c, d = K.as_tuple()
    Dm = np.array([[d / b, 1.0], [1.0, a / c]])
    H = _vacuum_hessian(K, lam)
    q2 = grid.symbol
    A = q2 * Dm[0, 0] + H[0, 0]
    B = q2 * Dm[0, 1] + H[0, 1]
    C = q2 * Dm[1, 0] + H[1, 0]
    Dd = q2 * Dm[1, 1] + H[1, 1]
    det = A * Dd - B * C

    def apply(G: np.ndarray) -> np.ndarray:
        g1, g2 = np.fft.fft2(G[0]), np.fft.fft2(G[1])
        x1 = (Dd * g1 - B * g2) / det
        x2 = (-C * g1 + A * g2) / det
        x1[0, 0] = 0.0
        x2[0, 0] = 0.0
        return np.array([np.fft.ifft2(x1).real, np.fft.ifft2(x2).real])

    return apply


def minimize_Jplus(
    K: CouplingMatrix,
    lam: float,
    N: VortexNumbers,
    bg: Background,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    opts: SolveOptions = SolveOptions(),
    progress: ProgressSink | None = None,
    refine: bool = True,
) -> SolutionState:
    """Preconditioned L-BFGS on ``J+`` over admissible mean-zero pairs, then Newton."""
    if not K.variational:
        raise ValueError("minimize_Jplus requires b > 0 and c > 0")
    g = bg.grid
    gtol = opts.gtol(lam)
    if init is None:
        init = initial_guess(K, lam, N, bg, opts.init)
    w1, w2 = _admissible_start(K, lam, N, bg, init[0] - init[0].mean(), init[1] - init[1].mean())
    W = np.array([w1, w2])
    precond = _lbfgs_preconditioner(K, lam, g)

    def evaluate(W):
        return reduced_point(K, lam, N, bg, W[0], W[1])

    pt = evaluate(W)
    G = np.array([pt.grad1, pt.grad2])
    gnorm = residual_norm(g, G)
    history = [pt.value.total]
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    it = 0

    def dot(x, y):
        return g.inner(x[0], y[0]) + g.inner(x[1], y[1])

    stalled = False
    flat = 0
    while gnorm > gtol and it < opts.max_iter:
        it += 1
        # two-loop recursion with the vacuum-Hessian preconditioner as H0
        q = G.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Y)):
            rho = 1.0 / dot(y, s)
            al = rho * dot(s, q)
            alphas.append((rho, al))
            q -= al * y
        r = precond(q)
        for (s, y), (rho, al) in zip(zip(S, Y), reversed(alphas)):
            be = rho * dot(y, r)
            r += (al - be) * s
        P = -r
        slope = dot(G, P)
        if not slope < 0:
            S.clear()
            Y.clear()
            P = -precond(G)
            slope = dot(G, P)
        t = 1.0
        boundary_hits = 0
        accepted = None
        for _ in range(60):
            trial = W + t * P
            try:
                tp = evaluate(trial)
            except (NotAdmissible, NegativeDiscriminant, ExponentOverflow):
                boundary_hits += 1
                if boundary_hits >= opts.max_halvings:
                    break
                t *= opts.backoff
                continue
            if tp.value.total <= pt.value.total + opts.armijo * t * slope:
                accepted = tp
                break
            t *= 0.5
        if accepted is None:
            if boundary_hits >= opts.max_halvings:
                m = admissibility(K, lam, N, pt.moments)
                if gnorm <= opts.newton_switch_tol * lam:
                    stalled = True
                    break
                raise StalledOnBoundary(
                    f"descent pressed against the admissible boundary at iteration {it}",
                    (m.margin1, m.margin2),
                )
            # no decrease possible at double precision: hand over to Newton
            stalled = True
            break
        Wn = trial
        Gn = np.array([accepted.grad1, accepted.grad2])
        s, y = Wn - W, Gn - G
        if dot(s, y) > 1e-16 * math.sqrt(dot(s, s) * dot(y, y)):
            S.append(s)
            Y.append(y)
            if len(S) > opts.lbfgs_memory:
                S.pop(0)
                Y.pop(0)
        decrease = pt.value.total - accepted.value.total
        flat = flat + 1 if decrease <= 1e-13 * max(1.0, abs(pt.value.total)) else 0
        W, G, pt = Wn, Gn, accepted
        if flat >= 3:
            # roundoff floor of J+: hand over to Newton
            stalled = True
        gnorm = residual_norm(g, G)
        history.append(pt.value.total)
        if progress is not None:
            progress({"stage": "lbfgs", "iteration": it, "J": pt.value.total, "grad": gnorm, "step": t})
        if stalled:
            break
    if gnorm > gtol and not stalled and it >= opts.max_iter and not refine:
        raise MaxIterations(f"gradient {gnorm:.3e} above {gtol:.3e} after {it} iterations")
    state = SolutionState(
        W[0], W[1], pt.cpair.c1, pt.cpair.c2, lam, converged=gnorm <= gtol,
        grad_norm=gnorm, iterations=it, branch_tag="minimizer", history=history,
    )
    if refine:
        if gnorm > opts.newton_switch_tol * lam and not state.converged:
            raise MaxIterations(f"gradient {gnorm:.3e} not small enough to start Newton after {it} iterations")
        state = refine_newton(K, lam, N, bg, state, opts, progress)
        state.branch_tag = "minimizer"
        state.history = history
    return state


# -- Newton refinement ---------------------------------------------------------------


def _finalize(K, lam, N, bg, V: np.ndarray, res: NewtonResult, opts: SolveOptions, tag: str, iterations: int) -> SolutionState:
    state = SolutionState.from_v(V[0], V[1], lam, branch_tag=tag, iterations=iterations)
    state.residual_norm = res.residual
    if K.variational:
        G = gradient_I(K, lam, N, bg, state.v1, state.v2)
        state.grad_norm = residual_norm(bg.grid, G)
    else:
        state.grad_norm = res.residual
    eu1, eu2 = state.eu(bg)
    below_one = bool(np.max(eu1) <= 1.0 + EU_ROUNDOFF) and bool(np.max(eu2) <= 1.0 + EU_ROUNDOFF)
    state.converged = res.converged and below_one and state.grad_norm <= max(opts.gtol(lam), 10 * res.residual)
    return state


def refine_newton(
    K: CouplingMatrix,
    lam: float,
    N: VortexNumbers,
    bg: Background,
    state: SolutionState,
    opts: SolveOptions = SolveOptions(),
    progress: ProgressSink | None = None,
    deflation: Deflation | None = None,
) -> SolutionState:
    """Damped Newton on the full system; valid for any admissible coupling."""
    nl = _system_nonlinear(K, lam, N, bg)
    V0 = np.array([state.v1, state.v2])
    res = newton(bg.grid, nl, V0, tol=opts.newton_tol * lam, max_iter=opts.newton_max_iter,
                 deflation=deflation, progress=progress)
    tag = state.branch_tag if state.branch_tag else "newton-only"
    return _finalize(K, lam, N, bg, res.V, res, opts, tag, state.iterations + res.iterations)


def solve(
    K: CouplingMatrix,
    lam: float,
    N: VortexNumbers,
    bg: Background,
    opts: SolveOptions = SolveOptions(),
    init: tuple[np.ndarray, np.ndarray] | None = None,
    progress: ProgressSink | None = None,
) -> SolutionState:
    """Minimiser route when the functional exists, Newton-only route otherwise."""
    if K.variational:
        try:
            return minimize_Jplus(K, lam, N, bg, init, opts, progress)
        except NotAdmissible as exc:
            # below the admissibility level the reduction is unavailable;
            # the full system can still be solved directly
            logger.info("falling back to Newton-only: %s", exc)
    if init is None:
        init = initial_guess(K, lam, N, bg, opts.init)
    start = SolutionState(init[0], init[1], 0.0, 0.0, lam, branch_tag="newton-only")
    if opts.init == "scalar" and N.total == 0:
        start = SolutionState(np.zeros(bg.grid.shape), np.zeros(bg.grid.shape), 0.0, 0.0, lam, branch_tag="newton-only")
    try:
        return refine_newton(K, lam, N, bg, start, opts, progress)
    except (Diverged, SingularLinearization) as exc:
        logger.info("direct Newton failed at lambda=%.4g (%s); trying a homotopy from above", lam, exc)
        return _newton_homotopy(K, lam, N, bg, opts, progress)


def _newton_homotopy(K, lam, N, bg, opts, progress, max_doublings: int = 6, max_steps: int = 40) -> SolutionState:
    """Solve at ``2^k lam`` (where the topological branch is easy) and walk back down to ``lam``."""
    top, state = lam, None
    for _ in range(max_doublings):
        top *= 2.0
        w1, w2 = initial_guess(K, top, N, bg, opts.init)
        try:
            state = refine_newton(K, top, N, bg, SolutionState(w1, w2, 0.0, 0.0, top, branch_tag="newton-only"), opts)
            break
        except (Diverged, SingularLinearization):
            continue
    if state is None:
        raise Diverged(f"no Newton start found up to lambda = {top:.4g}")
    cur, ratio = top, 0.5
    for _ in range(max_steps):
        nxt = max(lam, cur * ratio)
        try:
            trial = refine_newton(K, nxt, N, bg, replace(state, lam=nxt), opts,
                                  progress if nxt == lam else None)
        except (Diverged, SingularLinearization):
            ratio = math.sqrt(ratio)
            if ratio > 0.999:
                raise Diverged(f"homotopy stalled at lambda = {cur:.6g} on the way to {lam:.6g}")
            continue
        state, cur = trial, nxt
        if cur == lam:
            return state
    raise Diverged(f"homotopy did not reach lambda = {lam:.6g}")


# -- continuation ----------------------------------------------------------------------


@dataclass
class ContinuationEntry:
    lam: float
    state: SolutionState | None
    error: str | None = None


def continuation(
    K: CouplingMatrix,
    lams: Sequence[float],
    N: VortexNumbers,
    bg: Background,
    opts: SolveOptions = SolveOptions(),
    progress: ProgressSink | None = None,
) -> list[ContinuationEntry]:
    """Solve along a sorted list of lambdas, warm-starting each from its predecessor."""
    lams = list(lams)
    if not lams:
        raise ValueError("empty lambda list")
    if lams != sorted(lams) and lams != sorted(lams, reverse=True):
        raise ValueError("lambda list must be sorted")
    out: list[ContinuationEntry] = []
    prev: SolutionState | None = None
    for lam in lams:
        gate = nonexistence_gate(K, lam, N, bg.grid.area)
        if not gate.proceed:
            out.append(ContinuationEntry(lam, None, gate.certificate))
            continue
        try:
            init = None if prev is None else (prev.w1, prev.w2)
            if init is not None and K.variational:
                try:
                    _admissible_start(K, lam, N, bg, *init)
                except NotAdmissible:
                    init = None
            if init is not None and not K.variational:
                init = (prev.v1, prev.v2)
            state = solve(K, lam, N, bg, opts, init, progress)
            out.append(ContinuationEntry(lam, state, None if state.converged else "not converged"))
            if state.converged:
                prev = state
        except (SolverError, NotAdmissible, ExponentOverflow) as exc:
            out.append(ContinuationEntry(lam, None, f"{type(exc).__name__}: {exc}"))
    return out


# -- second critical point ---------------------------------------------------------------


@dataclass
class SecondSolutionSearch:
    found: bool
    state: SolutionState | None
    attempts: list[dict]
    energy_first: float | None
    energy_second: float | None = None
    reason: str = ""


def find_second_solution(
    K: CouplingMatrix,
    lam: float,
    N: VortexNumbers,
    bg: Background,
    first: SolutionState,
    opts: SolveOptions = SolveOptions(),
    xis: Sequence[float] = (2.0, 4.0, 8.0),
    n_random: int = 2,
    seed: int = 0,
) -> SecondSolutionSearch:
    """Deflated Newton from shifted and perturbed copies of ``first``.

    A candidate counts as a second solution when it converges, differs from
    ``first`` by at least 1e-3 in L2, obeys ``e^{u_i} < 1`` and has strictly
    higher energy (when the energy is defined for ``K``).
    """
    g = bg.grid
    e_first = energy(K, lam, N, bg, first.v1, first.v2)
    if N.total == 0:
        return SecondSolutionSearch(
            False, None, [], e_first,
            reason="vacuum: Q >= 0 with equality only at v = 0, so no other critical point at this level",
        )
    if not first.converged:
        raise ValueError("the first solution must be converged")
    defl = Deflation(g)
    V1 = np.array([first.v1, first.v2])
    defl.add(V1)
    rng = np.random.default_rng(seed)
    starts: list[tuple[str, np.ndarray]] = [(f"shift xi={xi:g}", V1 - xi) for xi in xis]
    for k in range(n_random):
        bump = np.zeros(g.shape)
        for Z in (bg.Z1, bg.Z2):
            for s1, s2, mult in Z.points:
                r = g.lattice.min_image_distance(g.s, (s1, s2))
                bump += mult * np.exp(-(r / (0.15 * g.lattice.shortest_vector)) ** 2)
        noise = rng.normal(size=(2,) + g.shape)
        noise = np.array([np.fft.ifft2(np.fft.fft2(x) * np.exp(-0.02 * g.symbol)).real for x in noise])
        starts.append((f"core-perturbed #{k}", V1 - 4.0 - 2.0 * bump + 0.5 * noise / np.std(noise)))
    attempts = []
    nl = _system_nonlinear(K, lam, N, bg)
    for label, V0 in starts:
        rec: dict = {"start": label}
        try:
            res = newton(g, nl, V0, tol=opts.newton_tol * lam, max_iter=200, deflation=defl)
        except (SolverError, ExponentOverflow) as exc:
            rec["outcome"] = f"{type(exc).__name__}: {exc}"
            attempts.append(rec)
            continue
        rec["residual"] = res.residual
        rec["iterations"] = res.iterations
        if not res.converged:
            rec["outcome"] = "not converged"
            attempts.append(rec)
            continue
        dist = math.sqrt(sum(g.inner(x, x) for x in (res.V - V1)))
        rec["distance"] = dist
        st = _finalize(K, lam, N, bg, res.V, res, opts, "secondary", res.iterations)
        e2 = energy(K, lam, N, bg, st.v1, st.v2)
        rec["energy"] = e2
        if dist < 1e-3:
            rec["outcome"] = "returned to the first solution"
        elif not st.converged:
            rec["outcome"] = "converged but fails the maximum principle"
        elif e_first is not None and e2 is not None and not e2 > e_first:
            rec["outcome"] = "distinct but not higher in energy"
        else:
            rec["outcome"] = "found"
            attempts.append(rec)
            return SecondSolutionSearch(True, st, attempts, e_first, e2)
        attempts.append(rec)
    return SecondSolutionSearch(False, None, attempts, e_first, reason="no start converged to a distinct higher-energy solution")
