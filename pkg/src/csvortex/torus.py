"""Flat-torus geometry, spectral calculus and the singular vortex backgrounds.

Fields are plain ``(n1, n2)`` float arrays sampled at the nodes
``x_ij = (i/n1) e1 + (j/n2) e2``; the :class:`TorusGrid` they live on carries
the spectral operators.  The background ``u0`` (with ``Delta u0 = 4 pi sum delta_p
- 4 pi N/|Omega|`` and zero mean) is never stored directly: only ``E = exp(u0)``,
which is a bounded smooth function vanishing like ``|x - p|^{2m}`` at a vortex of
multiplicity ``m``.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import exp1

logger = logging.getLogger(__name__)

EXP_GUARD = 700.0
FIELD_MAGIC = b"CSVX1"


class NonZeroMean(ValueError):
    """Poisson right-hand side is not mean-zero."""


class ExponentOverflow(OverflowError):
    """A field is too large to exponentiate safely."""


@dataclass(frozen=True)
class TorusLattice:
    e1: tuple[float, float]
    e2: tuple[float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "e1", (float(self.e1[0]), float(self.e1[1])))
        object.__setattr__(self, "e2", (float(self.e2[0]), float(self.e2[1])))
        if not self.area > 1e-14:
            raise ValueError("lattice vectors must be linearly independent")

    @classmethod
    def rectangle(cls, L1: float = 1.0, L2: float = 1.0) -> "TorusLattice":
        return cls((L1, 0.0), (0.0, L2))

    @property
    def basis(self) -> np.ndarray:
        """Columns are ``e1`` and ``e2``."""
        return np.array([self.e1, self.e2]).T

    @property
    def area(self) -> float:
        return abs(self.e1[0] * self.e2[1] - self.e1[1] * self.e2[0])

    @property
    def dual(self) -> np.ndarray:
        """Columns ``b1, b2`` with ``b_i . e_j = delta_ij``."""
        return np.linalg.inv(self.basis).T

    @property
    def shortest_vector(self) -> float:
        B = self.basis
        best = math.inf
        for i in range(-3, 4):
            for j in range(-3, 4):
                if i or j:
                    best = min(best, float(np.hypot(*(B @ (i, j)))))
        return best

    def to_cartesian(self, s: np.ndarray) -> np.ndarray:
        return np.tensordot(self.basis, np.asarray(s, dtype=float), axes=(1, 0))

    def min_image_distance(self, s: np.ndarray, p: Sequence[float]) -> np.ndarray:
        """Distance on the torus between lattice-coordinate points ``s`` (shape (2, ...)) and ``p``."""
        ds = np.asarray(s, dtype=float) - np.asarray(p, dtype=float).reshape((2,) + (1,) * (np.ndim(s) - 1))
        ds -= np.round(ds)
        best = None
        B = self.basis
        for i in (-1, 0, 1):
            for j in (-1, 0, 1):
                x = B[0, 0] * (ds[0] + i) + B[0, 1] * (ds[1] + j)
                y = B[1, 0] * (ds[0] + i) + B[1, 1] * (ds[1] + j)
                r = np.hypot(x, y)
                best = r if best is None else np.minimum(best, r)
        return best

    def image_distances(self, s: np.ndarray, p: Sequence[float], reach: int = 2):
        """Distances from ``s`` to the lattice images ``p + i e1 + j e2``, ``|i|, |j| <= reach``."""
        ds = np.asarray(s, dtype=float) - np.asarray(p, dtype=float).reshape((2,) + (1,) * (np.ndim(s) - 1))
        ds -= np.round(ds)
        B = self.basis
        for i in range(-reach, reach + 1):
            for j in range(-reach, reach + 1):
                x = B[0, 0] * (ds[0] + i) + B[0, 1] * (ds[1] + j)
                y = B[1, 0] * (ds[0] + i) + B[1, 1] * (ds[1] + j)
                yield np.hypot(x, y)


@dataclass(frozen=True, eq=False)
class TorusGrid:
    """Uniform periodic sampling of a torus with spectral operators."""

    lattice: TorusLattice
    n1: int
    n2: int

    def __post_init__(self) -> None:
        for n in (self.n1, self.n2):
            if n < 16 or n % 2:
                raise ValueError(f"grid sizes must be even and >= 16, got {self.n1}x{self.n2}")

    @classmethod
    def square(cls, n: int, L: float = 1.0) -> "TorusGrid":
        return cls(TorusLattice.rectangle(L, L), n, n)

    def compatible(self, other: "TorusGrid") -> bool:
        return (
            self.n1 == other.n1
            and self.n2 == other.n2
            and self.lattice == other.lattice
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def area(self) -> float:
        return self.lattice.area

    @property
    def weight(self) -> float:
        """Quadrature weight of one node."""
        return self.area / (self.n1 * self.n2)

    @property
    def spacing(self) -> float:
        return min(
            math.hypot(*self.lattice.e1) / self.n1,
            math.hypot(*self.lattice.e2) / self.n2,
        )

    @cached_property
    def s(self) -> np.ndarray:
        """Lattice coordinates of the nodes, shape ``(2, n1, n2)``."""
        s1 = np.arange(self.n1) / self.n1
        s2 = np.arange(self.n2) / self.n2
        return np.array(np.meshgrid(s1, s2, indexing="ij"))

    @cached_property
    def x(self) -> np.ndarray:
        """Cartesian node coordinates, shape ``(2, n1, n2)``."""
        return self.lattice.to_cartesian(self.s)

    @cached_property
    def wavevectors(self) -> np.ndarray:
        """Physical wavevectors ``q = 2 pi (k1 b1 + k2 b2)``, shape ``(2, n1, n2)``."""
        k1 = np.fft.fftfreq(self.n1, 1.0 / self.n1)
        k2 = np.fft.fftfreq(self.n2, 1.0 / self.n2)
        K1, K2 = np.meshgrid(k1, k2, indexing="ij")
        b = self.lattice.dual
        return 2.0 * np.pi * np.array([K1 * b[0, 0] + K2 * b[0, 1], K1 * b[1, 0] + K2 * b[1, 1]])

    @cached_property
    def symbol(self) -> np.ndarray:
        """``|q|^2``; the Laplacian multiplies Fourier modes by ``-symbol``."""
        q = self.wavevectors
        out = q[0] ** 2 + q[1] ** 2
        out.flags.writeable = False
        return out

    @cached_property
    def inverse_symbol(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.symbol > 0] = 1.0 / self.symbol[self.symbol > 0]
        out.flags.writeable = False
        return out

    # -- quadrature ---------------------------------------------------------

    def integrate(self, f: np.ndarray) -> float:
        return float(np.sum(f) * self.weight)

    def mean(self, f: np.ndarray) -> float:
        return float(np.mean(f))

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.vdot(f, g).real * self.weight)

    def norm(self, f: np.ndarray) -> float:
        """L2 norm over the cell."""
        return math.sqrt(self.inner(f, f))

    def remove_mean(self, f: np.ndarray) -> np.ndarray:
        return f - np.mean(f)

    # -- spectral operators -------------------------------------------------

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        return np.fft.ifft2(-self.symbol * np.fft.fft2(f)).real

    def poisson_solve(self, f: np.ndarray, *, check: bool = True) -> np.ndarray:
        """Mean-zero ``u`` with ``Delta u = f``."""
        if check:
            scale = float(np.max(np.abs(f))) if f.size else 0.0
            if abs(np.mean(f)) > 1e-8 * scale:
                raise NonZeroMean(f"mean {np.mean(f):.3e} exceeds 1e-8 x max|f| = {scale:.3e}")
        return np.fft.ifft2(-self.inverse_symbol * np.fft.fft2(f)).real

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Spectral gradient, shape ``(2, n1, n2)``; the Nyquist modes are dropped."""
        fh = np.fft.fft2(f)
        q = self.wavevectors.copy()
        q[:, self.n1 // 2, :] = 0.0
        q[:, :, self.n2 // 2] = 0.0
        return np.array([np.fft.ifft2(1j * q[0] * fh).real, np.fft.ifft2(1j * q[1] * fh).real])

    def dirichlet(self, f: np.ndarray, g: np.ndarray | None = None) -> float:
        """``int grad f . grad g`` computed as ``-int f Delta g``."""
        g = f if g is None else g
        return -self.inner(f, self.laplacian(g))

    def sample_field(self, fn) -> np.ndarray:
        """Evaluate ``fn(x, y)`` at the nodes."""
        return np.asarray(fn(self.x[0], self.x[1]), dtype=float)


# -- vortices and backgrounds -----------------------------------------------


@dataclass(frozen=True)
class VortexSet:
    """Vortex positions in lattice coordinates with integer multiplicities."""

    points: tuple[tuple[float, float, int], ...] = ()

    def __post_init__(self) -> None:
        pts = []
        for p in self.points:
            s1, s2 = float(p[0]) % 1.0, float(p[1]) % 1.0
            m = int(p[2]) if len(p) > 2 else 1
            if m < 1 or (len(p) > 2 and m != p[2]):
                raise ValueError(f"multiplicity must be a positive integer, got {p[2]!r}")
            pts.append((s1, s2, m))
        object.__setattr__(self, "points", tuple(pts))

    @classmethod
    def of(cls, *points: Iterable) -> "VortexSet":
        return cls(tuple(tuple(p) for p in points))

    @property
    def N(self) -> int:
        return sum(m for _, _, m in self.points)

    def __len__(self) -> int:
        return len(self.points)

    def translated(self, ds: Sequence[float]) -> "VortexSet":
        return VortexSet(tuple((s1 + ds[0], s2 + ds[1], m) for s1, s2, m in self.points))

    def to_list(self) -> list[list[float]]:
        return [[s1, s2, m] for s1, s2, m in self.points]


def split_width(lattice: TorusLattice) -> float:
    """Gaussian width of the singular/regular split.

    Wide enough that the regular part is resolved on coarse grids, narrow
    enough that images beyond the nearest few contribute below 1e-20.
    """
    return 0.1 * lattice.shortest_vector


def singular_image_sum(grid: TorusGrid, p: Sequence[float]) -> np.ndarray:
    """``sum_images E1(r^2 / 2 sigma^2)``; ``+inf`` at a node coinciding with ``p``."""
    sigma = split_width(grid.lattice)
    out = np.zeros(grid.shape)
    with np.errstate(divide="ignore"):
        for r in grid.lattice.image_distances(grid.s, p):
            out += exp1(r**2 / (2.0 * sigma**2))
    return out


def green_singular_part(r: np.ndarray, sigma: float) -> np.ndarray:
    """``-(1/4 pi) E1(r^2 / 2 sigma^2)``: equals ``(1/2 pi) ln r`` plus a smooth term near 0."""
    with np.errstate(divide="ignore"):
        return -exp1(r**2 / (2.0 * sigma**2)) / (4.0 * np.pi)


def green_regular_part(grid: TorusGrid, p: Sequence[float]) -> np.ndarray:
    """Regular part ``R`` of the zero-mean torus Green's function centred at ``p``.

    ``G = -(1/4 pi) E1(r^2/2 sigma^2) + R`` with ``Delta G = delta_p - 1/|Omega|``
    and ``int G = 0``.  The singular term has Laplacian ``delta_p`` minus a unit
    Gaussian, so ``Delta R = gaussian - 1/|Omega|``; that Poisson problem is
    solved exactly in Fourier space, including the sub-grid position of ``p``.
    """
    sigma = split_width(grid.lattice)
    q = grid.wavevectors
    xp = grid.lattice.to_cartesian(np.asarray(p, dtype=float))
    phase = np.exp(-1j * (q[0] * xp[0] + q[1] * xp[1]))
    coeff = -np.exp(-0.5 * sigma**2 * grid.symbol) * grid.inverse_symbol / grid.area
    # Fourier-series coefficients -> FFT normalisation
    fh = coeff * phase * grid.n1 * grid.n2
    R = np.fft.ifft2(fh).real
    # integral of the singular term over the plane is -sigma^2/2
    return R + sigma**2 / (2.0 * grid.area)


def green_function(grid: TorusGrid, p: Sequence[float]) -> np.ndarray:
    """Nodal samples of ``G(x - p)``; ``-inf`` at a node coinciding with ``p``."""
    return -singular_image_sum(grid, p) / (4.0 * np.pi) + green_regular_part(grid, p)


@dataclass(frozen=True, eq=False)
class Background:
    """``E_i = exp(u0^i)`` sampled at the nodes, with cached products."""

    grid: TorusGrid
    E1: np.ndarray
    E2: np.ndarray
    Z1: VortexSet = field(default_factory=VortexSet)
    Z2: VortexSet = field(default_factory=VortexSet)

    @property
    def N1(self) -> int:
        return self.Z1.N

    @property
    def N2(self) -> int:
        return self.Z2.N

    @cached_property
    def E1sq(self) -> np.ndarray:
        return self.E1**2

    @cached_property
    def E2sq(self) -> np.ndarray:
        return self.E2**2

    @cached_property
    def E12(self) -> np.ndarray:
        return self.E1 * self.E2

    def swapped(self) -> "Background":
        return Background(self.grid, self.E2, self.E1, self.Z2, self.Z1)

    def log_E(self, i: int) -> np.ndarray:
        """``u0^i`` with ``-inf`` at exact zeros."""
        with np.errstate(divide="ignore"):
            return np.log(self.E1 if i == 1 else self.E2)


def _background_component(grid: TorusGrid, Z: VortexSet) -> np.ndarray:
    if not len(Z):
        return np.ones(grid.shape)
    log_smooth = np.zeros(grid.shape)
    sing = np.zeros(grid.shape)
    for s1, s2, m in Z.points:
        sing += m * singular_image_sum(grid, (s1, s2))
        log_smooth += 4.0 * np.pi * m * green_regular_part(grid, (s1, s2))
    # exp(4 pi m G) = exp(-m E1(r^2/2 sigma^2)) exp(4 pi m R); exp(-inf) = 0 at core nodes
    return np.exp(log_smooth - sing)


def _check_separation(grid: TorusGrid, Z: VortexSet, label: str) -> None:
    h = grid.spacing
    pts = Z.points
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            dist = float(grid.lattice.min_image_distance(np.array(pts[i][:2]), pts[j][:2]))
            if 0.0 < dist < 2.0 * h:
                logger.warning(
                    "vortices %d and %d of %s are %.3g apart (< 2 grid spacings)", i, j, label, dist
                )


def build_background(grid: TorusGrid, Z1: VortexSet, Z2: VortexSet) -> Background:
    """Exponentiated backgrounds ``E_i = exp(4 pi sum_p m_p G(x - p))``."""
    _check_separation(grid, Z1, "Z1")
    _check_separation(grid, Z2, "Z2")
    return Background(grid, _background_component(grid, Z1), _background_component(grid, Z2), Z1, Z2)


# -- moment integrals -------------------------------------------------------


@dataclass(frozen=True)
class MomentSet:
    """The five integrals feeding the constraint equations.

    ``I_i = int E_i e^{w_i}``, ``J_i = int E_i^2 e^{2 w_i}``, ``X = int E1 E2 e^{w1 + w2}``.
    """

    I1: float
    I2: float
    J1: float
    J2: float
    X: float
    area: float

    def scaled(self, c1: float, c2: float) -> "MomentSet":
        """Moments of ``w + c`` instead of ``w``."""
        x1, x2 = math.exp(c1), math.exp(c2)
        return MomentSet(
            self.I1 * x1, self.I2 * x2, self.J1 * x1 * x1, self.J2 * x2 * x2, self.X * x1 * x2, self.area
        )

    def swapped(self) -> "MomentSet":
        return MomentSet(self.I2, self.I1, self.J2, self.J1, self.X, self.area)


def guarded_exp(w: np.ndarray) -> np.ndarray:
    top = float(np.max(w))
    if top > EXP_GUARD:
        raise ExponentOverflow(f"max(w) = {top:.1f} exceeds the exponent guard {EXP_GUARD}")
    return np.exp(w)


def integrals(bg: Background, w1: np.ndarray, w2: np.ndarray) -> MomentSet:
    g = bg.grid
    f1 = bg.E1 * guarded_exp(w1)
    f2 = bg.E2 * guarded_exp(w2)
    return MomentSet(
        I1=g.integrate(f1),
        I2=g.integrate(f2),
        J1=g.integrate(f1 * f1),
        J2=g.integrate(f2 * f2),
        X=g.integrate(f1 * f2),
        area=g.area,
    )


# -- field dump format ------------------------------------------------------


def write_field(path: str | Path, grid: TorusGrid, values: np.ndarray) -> None:
    """Write ``CSVX1`` | n1, n2 (int64) | e1, e2 (4 float64) | row-major float64, little-endian."""
    values = np.asarray(values, dtype="<f8")
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<qq", grid.n1, grid.n2))
        fh.write(struct.pack("<4d", *grid.lattice.e1, *grid.lattice.e2))
        fh.write(np.ascontiguousarray(values).tobytes(order="C"))


def read_field(path: str | Path) -> tuple[TorusGrid, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:5] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a CSVX1 field file")
    n1, n2 = struct.unpack_from("<qq", raw, 5)
    e = struct.unpack_from("<4d", raw, 21)
    body = raw[53:]
    if len(body) != 8 * n1 * n2:
        raise ValueError(f"{path}: expected {n1 * n2} values, found {len(body) // 8}")
    grid = TorusGrid(TorusLattice((e[0], e[1]), (e[2], e[3])), int(n1), int(n2))
    values = np.frombuffer(body, dtype="<f8").reshape(n1, n2).astype(float)
    return grid, values
