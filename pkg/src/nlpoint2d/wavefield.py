"""Wavefunction reconstruction from the charge via the Duhamel formula.

In the unitary Fourier convention of :mod:`nlpoint2d.grids`,

    psi_t^(k) = e^{-i k^2 t} psi_0^(k) + (i / 2pi) e^{-i k.y} D(k^2, t),
    D(w, t)   = int_0^t e^{-i w (t - s)} q(s) ds.

D is accumulated cell by cell with the exact integral of the exponential
against the piecewise-linear interpolant of q, so no singular real-space
kernel is ever sampled. The regular part phi_lam = psi - q G^lam(. - y) is
formed in Fourier space, where it decays fast, and the grid field is
psi = phi_lam + q G^lam evaluated exactly at the nodes.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .charge_solver import ChargeTrajectory
from .grids import AccuracyWarning, SpatialGrid
from .propagator import InitialDatum, green_function, green_hat

EXCLUSION_CELLS = 2.0

__all__ = [
    "EXCLUSION_CELLS",
    "FieldSnapshot",
    "SpatialGrid",
    "decompose",
    "duhamel_kernel_sum",
    "h1_norm",
    "reconstruct",
    "reconstruct_series",
    "read_field",
    "write_field",
    "write_slice",
]


@dataclass(frozen=True)
class FieldSnapshot:
    t: float
    psi: np.ndarray = field(repr=False)
    phi_lambda: np.ndarray | None = field(repr=False)
    q_at_t: complex
    lambda_ref: float
    grid: SpatialGrid
    y: tuple[float, float] = (0.0, 0.0)
    phi_hat: np.ndarray | None = field(default=None, repr=False)

    def exclusion_mask(self, cells: float = EXCLUSION_CELLS) -> np.ndarray:
        """True at nodes closer to y than ``cells`` grid spacings."""
        return self.grid.distance(self.y) < cells * self.grid.dx


def _cell_weights(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """int_0^1 e^{z(1-v)} (1-v) dv and int_0^1 e^{z(1-v)} v dv."""
    small = np.abs(z) < 0.5
    w_old = np.empty_like(z)
    w_new = np.empty_like(z)
    zs = z[small]
    # e^{z w} w and e^{z w}(1 - w) integrated over [0, 1], term by term
    a = np.zeros_like(zs)
    b = np.zeros_like(zs)
    term = np.ones_like(zs)
    for n in range(24):
        a += term / (n + 2)
        b += term / ((n + 1) * (n + 2))
        term = term * zs / (n + 1)
    w_old[small], w_new[small] = a, b
    zl = z[~small]
    ez = np.exp(zl)
    phi1 = (ez - 1) / zl
    w_old[~small] = (ez * (zl - 1) + 1) / zl**2
    w_new[~small] = phi1 - w_old[~small]
    return w_old, w_new


def duhamel_kernel_sum(omega: np.ndarray, times: np.ndarray, q: np.ndarray,
                       stops: np.ndarray) -> np.ndarray:
    """D(omega, t) for each t in ``stops`` and q piecewise linear on ``times``.

    Returns an array of shape (len(stops), len(omega)).
    """
    omega = np.asarray(omega, dtype=float)
    D = np.zeros(omega.shape, dtype=complex)
    out = np.zeros((len(stops),) + omega.shape, dtype=complex)
    order = np.argsort(stops)
    k = 0
    t_now = 0.0
    for idx in order:
        t_stop = float(stops[idx])
        while k < len(times) - 1 and times[k + 1] <= t_stop + 1e-12 * max(1.0, t_stop):
            h = times[k + 1] - times[k]
            wo, wn = _cell_weights(-1j * omega * h)
            D = np.exp(-1j * omega * h) * D + h * (q[k] * wo + q[k + 1] * wn)
            k += 1
            t_now = times[k]
        rem = t_stop - t_now
        if rem > 1e-12 * max(1.0, t_stop):
            # partial cell up to a stop between nodes
            q_end = np.interp(t_stop, times, q.real) + 1j * np.interp(t_stop, times, q.imag)
            wo, wn = _cell_weights(-1j * omega * rem)
            out[idx] = np.exp(-1j * omega * rem) * D + rem * (q[k] * wo + q_end * wn)
        else:
            out[idx] = D
    return out


def _snapshot_from_hat(psi_hat: np.ndarray, q_t: complex, t: float, lam: float,
                       grid: SpatialGrid, y) -> FieldSnapshot:
    phi_hat = psi_hat - q_t * green_hat(lam, grid, y)
    phi = grid.inverse(phi_hat)
    sing = q_t * green_function(lam, grid.distance(y)) if q_t != 0 else 0.0
    psi = phi + sing
    tail = grid.spectral_tail_fraction(phi_hat)
    if tail > 1e-8:
        warnings.warn(f"regular part under-resolved at t={t:g}: spectral tail {tail:.1e}",
                      AccuracyWarning, stacklevel=3)
    return FieldSnapshot(float(t), psi, phi, complex(q_t), lam, grid, tuple(y), phi_hat)


def reconstruct_series(trajectory: ChargeTrajectory, datum: InitialDatum, y, times,
                       grid: SpatialGrid, lambda_ref: float = 1.0) -> list[FieldSnapshot]:
    """Snapshots at every requested time within the resolved range."""
    if not lambda_ref > 0:
        raise ValueError("lambda_ref must be positive")
    if not grid.off_grid(y):
        raise ValueError("the interaction point coincides with a grid node")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(times > trajectory.t_max + 1e-12):
        raise ValueError("snapshot times must lie in the resolved range of the trajectory")
    k2 = grid.k2.ravel()
    uniq, inverse = np.unique(k2, return_inverse=True)
    D = duhamel_kernel_sum(uniq, trajectory.grid, trajectory.q, times)
    psi0_hat = datum.hat(grid, y)
    shift = np.conj(grid.plane_wave_at(y))
    snaps = []
    for t, Dt in zip(times, D):
        psi_hat = np.exp(-1j * grid.k2 * t) * psi0_hat
        psi_hat = psi_hat + (1j / (2 * np.pi)) * shift * Dt[inverse].reshape(grid.k2.shape)
        snaps.append(_snapshot_from_hat(psi_hat, trajectory.value_at(t), t, lambda_ref, grid, y))
    return snaps


def reconstruct(trajectory: ChargeTrajectory, datum: InitialDatum, y, t: float,
                grid: SpatialGrid, lambda_ref: float = 1.0) -> FieldSnapshot:
    return reconstruct_series(trajectory, datum, y, [t], grid, lambda_ref)[0]


def decompose(snapshot: FieldSnapshot, lam: float) -> FieldSnapshot:
    """Re-split psi as phi_lam + q G^lam(. - y) for a new lam.

    With a Fourier representation available the change is exact:
    phi_lam' = phi_lam + q (G^lam - G^lam'). Otherwise phi is formed nodewise
    and nodes inside the exclusion radius are replaced by the mean of the
    ring just outside it.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive; lambda = 0 is not allowed")
    grid, q, y = snapshot.grid, snapshot.q_at_t, snapshot.y
    r = grid.distance(y)
    if snapshot.phi_hat is not None and snapshot.phi_lambda is not None:
        if q == 0:
            return replace(snapshot, lambda_ref=lam)
        old = snapshot.lambda_ref
        phi_hat = snapshot.phi_hat + q * (green_hat(old, grid, y) - green_hat(lam, grid, y))
        phi = snapshot.phi_lambda + q * (green_function(old, r) - green_function(lam, r))
        return replace(snapshot, phi_lambda=phi, phi_hat=phi_hat, lambda_ref=lam)
    phi = snapshot.psi - (q * green_function(lam, r) if q != 0 else 0.0)
    phi = np.array(phi, dtype=complex)
    inner = r < EXCLUSION_CELLS * grid.dx
    ring = (~inner) & (r < (EXCLUSION_CELLS + 1) * grid.dx)
    if inner.any() and ring.any():
        phi[inner] = phi[ring].mean()
    return replace(snapshot, phi_lambda=phi, phi_hat=None, lambda_ref=lam)


def h1_norm(field_or_snapshot, grid: SpatialGrid | None = None) -> float:
    """Squared discrete H^1 norm sum (1 + k^2) |f^(k)|^2 dk^2.

    Accepts a raw field (with its grid) or a snapshot, in which case the
    regular part is used.
    """
    if isinstance(field_or_snapshot, FieldSnapshot):
        snap = field_or_snapshot
        grid = snap.grid
        hat = snap.phi_hat if snap.phi_hat is not None else grid.forward(snap.phi_lambda)
        field_vals = snap.phi_lambda
    else:
        if grid is None:
            raise ValueError("a grid is needed for a raw field")
        field_vals = np.asarray(field_or_snapshot)
        hat = grid.forward(field_vals)
    edge = grid.edge_fraction(field_vals)
    if edge > 1e-3:
        warnings.warn(f"field does not decay inside the box (edge ratio {edge:.1e})",
                      AccuracyWarning, stacklevel=2)
    return float(np.sum((1 + grid.k2) * np.abs(hat) ** 2) * grid.dk**2)


# --------------------------------------------------------------------------
# export


def write_field(path, snapshot: FieldSnapshot) -> Path:
    """Binary container (.npz) holding psi and phi plus a JSON header.

    Header keys: extent, size, t, lambda_ref, y, q_re, q_im.
    """
    path = Path(path)
    header = {
        "extent": snapshot.grid.extent,
        "size": snapshot.grid.size,
        "t": snapshot.t,
        "lambda_ref": snapshot.lambda_ref,
        "y": list(snapshot.y),
        "q_re": snapshot.q_at_t.real,
        "q_im": snapshot.q_at_t.imag,
    }
    phi = snapshot.phi_lambda if snapshot.phi_lambda is not None else np.zeros_like(snapshot.psi)
    with path.open("wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header, sort_keys=True)),
                 psi=snapshot.psi, phi=phi)
    return path


def read_field(path) -> FieldSnapshot:
    with np.load(path) as data:
        header = json.loads(str(data["header"]))
        grid = SpatialGrid(header["extent"], header["size"])
        return FieldSnapshot(header["t"], data["psi"], data["phi"],
                             complex(header["q_re"], header["q_im"]), header["lambda_ref"],
                             grid, tuple(header["y"]))


def write_slice(path, snapshot: FieldSnapshot, axis: int = 0) -> Path:
    """CSV slice through the node row closest to y along ``axis`` (0 = x1)."""
    if axis not in (0, 1):
        raise ValueError("axis must be 0 or 1")
    path = Path(path)
    grid = snapshot.grid
    j = int(np.argmin(np.abs(grid.axis - snapshot.y[1 - axis])))
    psi = snapshot.psi[:, j] if axis == 0 else snapshot.psi[j, :]
    phi = snapshot.phi_lambda
    phi = (phi[:, j] if axis == 0 else phi[j, :]) if phi is not None else np.zeros_like(psi)
    lines = ["x,re_psi,im_psi,re_phi,im_phi"]
    for x, a, b in zip(grid.axis, psi, phi):
        lines.append(f"{x:.17g},{a.real:.17g},{a.imag:.17g},{b.real:.17g},{b.imag:.17g}")
    path.write_text("\n".join(lines) + "\n")
    return path
