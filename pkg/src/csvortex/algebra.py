"""Coupling-matrix algebra and closed-form predictions.

The coupling matrix of the rank-2 system is ``K = ((a, -b), (-c, d))``.
Everything here is a pure function of ``K``, the vortex numbers and a few
physical scalars, so it doubles as the source of the exact values that the
numerical solutions are checked against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np


class ThresholdUndefined(ValueError):
    """Raised when a non-existence threshold is requested for N = (0, 0)."""


class GaugePreset(str, Enum):
    A2 = "A2"
    B2 = "B2"
    G2 = "G2"
    A1xA1 = "A1xA1"


# B2 = C2; the off-diagonal pair (a12, a21) = (1, 2) is kept as printed.
_PRESETS = {
    GaugePreset.A2: (2.0, 1.0, 1.0, 2.0),
    GaugePreset.B2: (2.0, 1.0, 2.0, 2.0),
    GaugePreset.G2: (2.0, 1.0, 3.0, 2.0),
    GaugePreset.A1xA1: (2.0, 0.0, 0.0, 2.0),
}


@dataclass(frozen=True)
class CouplingMatrix:
    """The matrix ``((a, -b), (-c, d))`` with ``a, d > 0``, ``b, c >= 0``, ``ad - bc > 0``."""

    a: float
    b: float
    c: float
    d: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.d > 0):
            raise ValueError(f"diagonal entries must be positive, got a={self.a}, d={self.d}")
        if self.b < 0 or self.c < 0:
            raise ValueError(f"off-diagonal magnitudes must be >= 0, got b={self.b}, c={self.c}")
        if not self.det > 0:
            raise ValueError(f"ad - bc must be positive, got {self.det}")

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def variational(self) -> bool:
        """True when the coupled energy functional exists (b > 0 and c > 0)."""
        return self.b > 0 and self.c > 0

    @property
    def decoupled(self) -> bool:
        return self.b == 0 and self.c == 0

    def matrix(self) -> np.ndarray:
        return np.array([[self.a, -self.b], [-self.c, self.d]])

    def inverse(self) -> np.ndarray:
        """Closed-form inverse ``((d, b), (c, a)) / (ad - bc)``."""
        return np.array([[self.d, self.b], [self.c, self.a]]) / self.det

    def swapped(self) -> "CouplingMatrix":
        """Matrix obtained by relabelling the two components."""
        return CouplingMatrix(self.d, self.c, self.b, self.a)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.a, self.b, self.c, self.d)


@dataclass(frozen=True)
class VortexNumbers:
    N1: int
    N2: int

    def __post_init__(self) -> None:
        if self.N1 < 0 or self.N2 < 0:
            raise ValueError("vortex numbers must be non-negative")

    @property
    def total(self) -> int:
        return self.N1 + self.N2

    def as_array(self) -> np.ndarray:
        return np.array([self.N1, self.N2], dtype=float)


@dataclass(frozen=True)
class PhysicalParams:
    """Chern-Simons coupling ``kappa`` and symmetry-breaking scale ``v``."""

    kappa: float
    v: float

    def __post_init__(self) -> None:
        if not (self.kappa > 0 and self.v > 0):
            raise ValueError("kappa and v must be positive")

    @property
    def lam(self) -> float:
        return lambda_from_kappa(self.v, self.kappa)

    @classmethod
    def from_lambda(cls, lam: float, v: float = 1.0) -> "PhysicalParams":
        return cls(kappa=kappa_from_lambda(v, lam), v=v)


def from_preset(preset: GaugePreset | str) -> CouplingMatrix:
    return CouplingMatrix(*_PRESETS[GaugePreset(preset)])


def lambda_from_kappa(v: float, kappa: float) -> float:
    """``lambda = 4 v^4 / kappa^2``."""
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    return 4.0 * v**4 / kappa**2


def kappa_from_lambda(v: float, lam: float) -> float:
    if lam <= 0:
        raise ValueError("lambda must be positive")
    return 2.0 * v**2 / math.sqrt(lam)


def vacuum_moduli(K: CouplingMatrix, v: float) -> tuple[float, float]:
    """Squared amplitudes ``v^2 * rowsum(K^-1)`` of the principal embedding vacuum."""
    m = v**2 * K.inverse().sum(axis=1)
    return float(m[0]), float(m[1])


def predicted_flux(K: CouplingMatrix, N: VortexNumbers) -> tuple[float, float]:
    """``Phi_a = 2 pi sum_b (K^-1)_{ba} N_b``."""
    phi = 2.0 * math.pi * (K.inverse().T @ N.as_array())
    return float(phi[0]), float(phi[1])


def predicted_charge(K: CouplingMatrix, N: VortexNumbers, kappa: float) -> tuple[float, float]:
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    p1, p2 = predicted_flux(K, N)
    return kappa * p1, kappa * p2


def predicted_energy(K: CouplingMatrix, N: VortexNumbers, v: float) -> float:
    """``E = 2 pi sum_b |phi_0^b|^2 N_b = v^2 (Phi_1 + Phi_2)``.

    The vacuum moduli are row sums of ``K^-1``, so the weight of ``N_b`` is
    ``sum_a (K^-1)_{ba}``; for symmetric ``K`` rows and columns coincide.
    """
    if v <= 0:
        raise ValueError("v must be positive")
    return float(2.0 * math.pi * v**2 * (K.inverse().sum(axis=1) @ N.as_array()))


def threshold_branches(K: CouplingMatrix, N: VortexNumbers) -> tuple[float, float]:
    """The two quantities maximised in the threshold: ``(dN1+bN2)/(a(b+d)^2)`` and its mirror."""
    a, b, c, d = K.as_tuple()
    t1 = (d * N.N1 + b * N.N2) / (a * (b + d) ** 2)
    t2 = (c * N.N1 + a * N.N2) / (d * (a + c) ** 2)
    return t1, t2


def nonexistence_threshold(K: CouplingMatrix, N: VortexNumbers, area: float) -> float:
    """Smallest lambda for which a solution can exist.

    Solutions require ``lambda >= 16 pi (ad-bc)/|Omega| * max(t1, t2)``.
    """
    if area <= 0:
        raise ValueError("area must be positive")
    if N.total < 1:
        raise ThresholdUndefined("no threshold for N = (0, 0): the vacuum exists for all lambda")
    return 16.0 * math.pi * K.det / area * max(threshold_branches(K, N))


def kappa_threshold(K: CouplingMatrix, N: VortexNumbers, area: float, v: float) -> float:
    """Coupling above which no solution exists, ``kappa* = 2 v^2 / sqrt(lambda*)``."""
    if v <= 0:
        raise ValueError("v must be positive")
    return kappa_from_lambda(v, nonexistence_threshold(K, N, area))


def phi_squared_from_u(K: CouplingMatrix, v: float, eu1, eu2):
    """Higgs amplitudes ``|phi^1|^2, |phi^2|^2`` from ``e^{u_1}, e^{u_2}`` (scalars or arrays)."""
    a, b, c, d = K.as_tuple()
    return v**2 * (b + d) / K.det * eu1, v**2 * (a + c) / K.det * eu2
