"""Diffusion laws: pressure P, internal energy density Psi = int_0^rho P."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class AdmissibilityError(ValueError):
    """A diffusion law outside the admissible exponent range."""


@dataclass(frozen=True)
class DiffusionLaw:
    kind: str = "linear"  # "linear" | "power"
    m: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "power"):
            raise ValueError(f"unknown diffusion law {self.kind!r}")
        if self.kind == "power" and self.m == 1.0:
            raise ValueError("power law with m=1 is the linear law; use kind='linear'")
        if self.kind == "power" and self.m <= 0:
            raise ValueError("power exponent must be positive")

    @classmethod
    def linear(cls) -> DiffusionLaw:
        return cls("linear", 1.0)

    @classmethod
    def power(cls, m: float) -> DiffusionLaw:
        return cls("power", float(m))

    @property
    def label(self) -> str:
        return "linear" if self.kind == "linear" else f"power(m={self.m:g})"

    def check_admissible(self, d: int) -> None:
        """Displacement-convexity range m >= (d-1)/d."""
        if self.kind == "power" and self.m < (d - 1) / d:
            raise AdmissibilityError(
                f"m={self.m:g} is not admissible in d={d}: need m >= (d-1)/d = {(d - 1) / d:g}"
            )

    def check_growth(self, d: int) -> None:
        """Lower growth: Psi(r)/r^q bounded below near 0 for some q > d/(d+2)."""
        if self.kind == "power" and self.m < 1 and self.m <= d / (d + 2):
            raise AdmissibilityError(
                f"Psi = rho^m/(m-1) with m={self.m:g} violates the growth condition "
                f"(need m > d/(d+2) = {d / (d + 2):g})"
            )

    # pointwise functions; all accept arrays with rho >= 0
    def P(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            with np.errstate(divide="ignore"):
                return np.log(rho)
        m = self.m
        with np.errstate(divide="ignore"):
            return m * rho ** (m - 1.0) / (m - 1.0)

    def Psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return _xlogx(rho) - rho
        return rho**self.m / (self.m - 1.0)

    def dPsi(self, rho):
        return self.P(rho)

    def d2Psi(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return 1.0 / rho
        return self.m * rho ** (self.m - 2.0)

    def pressure(self, rho):
        """rho P(rho) - Psi(rho): rho grad P(rho) = grad pressure(rho)."""
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return rho.copy()
        return rho**self.m

    def diffusivity(self, rho):
        """d pressure / d rho."""
        rho = np.asarray(rho, dtype=float)
        if self.kind == "linear":
            return np.ones_like(rho)
        with np.errstate(divide="ignore"):
            return self.m * rho ** (self.m - 1.0)


def _xlogx(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out
