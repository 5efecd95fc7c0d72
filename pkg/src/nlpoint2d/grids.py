"""Square periodic grids and the unitary 2D Fourier convention.

Nodes sit at cell centres, x_j = -L/2 + (j + 1/2) L/N along each axis, so a
point interaction at the origin is never a node. Transforms follow

    psi_hat(k) = (1/2pi) int e^{-i k.x} psi(x) dx,

which makes the Green's function of -Delta + lam equal to
(1/2pi) / (|k|^2 + lam) in Fourier space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class AccuracyWarning(UserWarning):
    """A discretisation check failed; the result may be inaccurate."""


@dataclass(frozen=True)
class SpatialGrid:
    extent: float = 32.0
    size: int = 256

    def __post_init__(self):
        if not self.extent > 0:
            raise ValueError("extent must be positive")
        if self.size < 8:
            raise ValueError("size must be at least 8")

    @property
    def dx(self) -> float:
        return self.extent / self.size

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.extent

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.dx

    @cached_property
    def axis(self) -> np.ndarray:
        return -0.5 * self.extent + (np.arange(self.size) + 0.5) * self.dx

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    @cached_property
    def k_axis(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.size, d=self.dx)

    @cached_property
    def k_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.k_axis, self.k_axis, indexing="ij")

    @cached_property
    def k2(self) -> np.ndarray:
        kx, ky = self.k_mesh
        return kx * kx + ky * ky

    @cached_property
    def _shift(self) -> np.ndarray:
        kx, ky = self.k_mesh
        x0 = self.axis[0]
        return np.exp(-1j * (kx + ky) * x0)

    def is_power_of_two(self) -> bool:
        return self.size & (self.size - 1) == 0

    def distance(self, y=(0.0, 0.0)) -> np.ndarray:
        X, Y = self.mesh
        return np.hypot(X - y[0], Y - y[1])

    def off_grid(self, y=(0.0, 0.0)) -> bool:
        """True when y is not (numerically) a grid node."""
        return float(self.distance(y).min()) > 1e-9 * self.dx

    def forward(self, field: np.ndarray) -> np.ndarray:
        return (self.dx**2 / (2 * np.pi)) * self._shift * np.fft.fft2(field)

    def inverse(self, coeffs: np.ndarray) -> np.ndarray:
        return (2 * np.pi / self.dx**2) * np.fft.ifft2(coeffs / self._shift)

    def l2_norm(self, field: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(field) ** 2)) * self.dx)

    def l2_norm_hat(self, coeffs: np.ndarray) -> float:
        return float(np.sqrt(np.sum(np.abs(coeffs) ** 2)) * self.dk)

    def plane_wave_at(self, y) -> np.ndarray:
        """e^{i k.y} on the k-grid."""
        kx, ky = self.k_mesh
        return np.exp(1j * (kx * y[0] + ky * y[1]))

    def edge_fraction(self, field: np.ndarray) -> float:
        """Peak magnitude on the outermost ring of nodes relative to the peak."""
        a = np.abs(field)
        peak = a.max()
        if peak == 0:
            return 0.0
        edge = max(a[0].max(), a[-1].max(), a[:, 0].max(), a[:, -1].max())
        return float(edge / peak)

    def spectral_tail_fraction(self, coeffs: np.ndarray, frac: float = 0.8) -> float:
        """Share of |coeffs|^2 beyond ``frac`` of the Nyquist wavenumber."""
        p = np.abs(coeffs) ** 2
        tot = p.sum()
        if tot == 0:
            return 0.0
        kx, ky = self.k_mesh
        outer = np.maximum(np.abs(kx), np.abs(ky)) > frac * self.k_nyquist
        return float(p[outer].sum() / tot)
