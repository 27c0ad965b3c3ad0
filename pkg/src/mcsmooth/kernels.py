"""Gaussian kernels, rule-of-thumb bandwidth, and precomputed pairwise tables.

The time kernel operates on kick-adjusted distances: the plain distance
|t_i - t_j| is inflated by alpha_kick times the total intensity of kicks
strictly between the two times, and the per-gap decay factors use the gap
inflated by the kicks inside it. All tables are immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .timeseries import KickSeries, ObservationSeries

__all__ = ["KernelTables", "bandwidth_rule_of_thumb", "gaussian_kernel", "build_tables"]


def bandwidth_rule_of_thumb(values) -> float:
    """Rule-of-thumb bandwidth h = sigma / n^(1/5), population sigma."""
    y = np.asarray(values, dtype=float)
    if y.size < 2:
        raise ValueError("bandwidth_rule_of_thumb: need at least 2 values")
    sigma = float(y.std())
    if sigma == 0.0:
        raise ValueError("bandwidth_rule_of_thumb: zero variance, kernel degenerates")
    return sigma / y.size ** 0.2


def gaussian_kernel(u, v, h):
    """Gaussian kernel (1 / (sqrt(2 pi) h)) exp(-(v-u)^2 / (2 h^2)).

    Broadcasts over array arguments and preserves floating dtypes.
    """
    if h <= 0:
        raise ValueError("gaussian_kernel: bandwidth must be positive")
    d = np.asarray(v) - np.asarray(u)
    return np.exp(-(d * d) / (2.0 * h * h)) / (np.sqrt(2.0 * np.pi) * h)


@dataclass(frozen=True)
class KernelTables:
    """Precomputed pairwise kernels, reference densities, and decay factors.

    Ky[i, j] = K^y(y^i, y^j) with bandwidth h; Kt[i, j] = K^t over the
    kick-adjusted distance with bandwidth T_l. rho0 and mu are the row means
    of Ky and Kt. ds and dl are exp(-gap/T_s) and exp(-gap/T_l) of the
    kick-inflated gaps, with ds[0] = dl[0] = 1 (no leading gap).
    """

    h: float
    T_s: float
    T_l: float
    Ky: np.ndarray
    Kt: np.ndarray
    rho0: np.ndarray
    mu: np.ndarray
    ds: np.ndarray
    dl: np.ndarray

    @property
    def n(self) -> int:
        return self.rho0.size

    def kt_row_sums(self) -> np.ndarray:
        """Unnormalized time-kernel row sums, sum_l Kt[i, l] = n * mu[i]."""
        return self.n * self.mu


def build_tables(obs: ObservationSeries, kicks: KickSeries, T_s: float, T_l: float) -> KernelTables:
    """Precompute all pairwise kernel tables for an observation series."""
    if T_s <= 0 or T_l <= 0:
        raise ValueError("build_tables: time scales must be positive")
    t, y = obs.times, obs.values
    h = bandwidth_rule_of_thumb(y)

    Ky = gaussian_kernel(y[:, None], y[None, :], h)

    dist = np.abs(t[:, None] - t[None, :])
    dist = dist + kicks.alpha_kick * kicks.pairwise_intensity(t)
    Kt = np.exp(-(dist * dist) / (2.0 * T_l * T_l)) / (np.sqrt(2.0 * np.pi) * T_l)

    inflated = obs.gaps() + kicks.alpha_kick * kicks.gap_intensity(t)
    ds = np.exp(-inflated / T_s)
    dl = np.exp(-inflated / T_l)

    return KernelTables(
        h=h,
        T_s=float(T_s),
        T_l=float(T_l),
        Ky=Ky,
        Kt=Kt,
        rho0=Ky.mean(axis=1),
        mu=Kt.mean(axis=1),
        ds=ds,
        dl=dl,
    )
