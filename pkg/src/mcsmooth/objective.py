"""The multicomponent objective: point-wise, distributional, model, and flex terms.

L1 rewards point-wise kernel agreement of the surrogate x with the data y
(mollified by epsilon), L2 rewards agreement of their time-modulated kernel
densities, L3/L4 reward coherence with the oscillatory model's transition
densities, and the three parameter components reward slow parameter drift.
The total is the lambda-weighted sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import KernelTables, gaussian_kernel
from .oscillator import (
    LOG_2PI,
    EffectiveGaps,
    ModelNoise,
    ParamPriors,
    ParamTrajectory,
    transition_quantities,
)
from .timeseries import ObservationSeries

__all__ = [
    "EstimationState",
    "WeightSchedule",
    "Components",
    "eval_L1",
    "eval_L2",
    "eval_L3_L4",
    "eval_Lparams",
    "eval_total",
    "eval_components",
]


@dataclass(frozen=True)
class EstimationState:
    """Everything gradient ascent moves: surrogates, latents, and parameters."""

    x: np.ndarray
    z: np.ndarray
    params: ParamTrajectory
    priors: ParamPriors
    noise: ModelNoise

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        if x.ndim != 1 or x.shape != z.shape or x.size != self.params.n:
            raise ValueError("EstimationState: x, z and parameter trajectories must share one length")

    @property
    def n(self) -> int:
        return self.x.size


@dataclass(frozen=True)
class WeightSchedule:
    """Component weights lambda_k and the mollification weight epsilon."""

    lam1: float = 0.0
    lam2: float = 0.0
    lam3: float = 0.0
    lam4: float = 0.0
    lam_b: float = 0.0
    lam_a: float = 0.0
    lam_omega: float = 0.0
    epsilon: float = 0.1

    def __post_init__(self):
        lams = (self.lam1, self.lam2, self.lam3, self.lam4, self.lam_b, self.lam_a, self.lam_omega)
        if min(lams) < 0:
            raise ValueError("WeightSchedule: weights must be nonnegative")
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError("WeightSchedule: epsilon must lie in [0, 1)")

    @classmethod
    def from_lambdas(cls, lambdas, epsilon: float = 0.1) -> "WeightSchedule":
        l1, l2, l3, l4, lb, la, lo = (float(v) for v in lambdas)
        return cls(l1, l2, l3, l4, lb, la, lo, epsilon)

    @property
    def any_param(self) -> bool:
        return bool(self.lam_b or self.lam_a or self.lam_omega)


class Components(NamedTuple):
    L1: float
    L2: float
    L3: float
    L4: float
    L_b: float
    L_a: float
    L_omega: float


def eval_L1(state: EstimationState, obs: ObservationSeries, tables: KernelTables, epsilon: float) -> float:
    """Mollified point-wise log-likelihood of the data under the surrogates."""
    ky = gaussian_kernel(obs.values, state.x, tables.h)
    return np.mean(np.log((1.0 - epsilon) * ky + epsilon * tables.rho0))


def _l2_weights(tables: KernelTables) -> np.ndarray:
    rs = tables.kt_row_sums()
    return tables.Kt / rs[None, :] + tables.Kt / rs[:, None]


def eval_L2(state: EstimationState, obs: ObservationSeries, tables: KernelTables) -> float:
    """Symmetrized time-weighted discrepancy between the x and y measures.

    Vanishes exactly at x = y and, in the uniform-weight limit, is the
    negative of a squared kernel mean discrepancy, hence nonpositive.
    """
    x, y, h = state.x, obs.values, tables.h
    Kxx = gaussian_kernel(x[:, None], x[None, :], h)
    Kyx = gaussian_kernel(y[:, None], x[None, :], h)
    bracket = Kxx - 2.0 * Kyx + tables.Ky
    W = _l2_weights(tables)
    return -(W * bracket).sum() / (2.0 * state.n)


def eval_L3_L4(
    state: EstimationState,
    obs: ObservationSeries,
    tables: KernelTables,
    gaps: EffectiveGaps,
) -> tuple[float, float]:
    """Model-coherence log-likelihoods of x and z transitions, 1/n normalized."""
    if state.n < 2:
        raise ValueError("eval_L3_L4: need at least 2 samples")
    q = transition_quantities(state.x, state.z, state.params, gaps, tables.T_s)
    var = state.noise.sigma ** 2
    base = -0.5 * (LOG_2PI + np.log(var))
    rx = state.x[1:] - q.mean_x
    rz = state.z[1:] - q.mean_z
    n = state.n
    L3 = np.sum(base - rx * rx / (2.0 * var)) / n
    L4 = np.sum(base - rz * rz / (2.0 * var)) / n
    return L3, L4


def _param_flex(alpha: np.ndarray, alpha_tilde: float, sigma_l: float, d_l: np.ndarray, n: int) -> float:
    mean = d_l * alpha[:-1] + (1.0 - d_l) * alpha_tilde
    var = (1.0 - d_l) * sigma_l * sigma_l
    resid = alpha[1:] - mean
    return np.sum(-0.5 * (LOG_2PI + np.log(var)) - resid * resid / (2.0 * var)) / n


def eval_Lparams(
    state: EstimationState,
    tables: KernelTables,
    gaps: EffectiveGaps,
) -> tuple[float, float, float]:
    """Flex log-likelihoods for the b, a and omega trajectories."""
    if np.any(gaps.dt_relax[1:] <= 0):
        raise ValueError("eval_Lparams: degenerate variance at zero gap")
    d_l = np.exp(-gaps.dt_relax[1:] / tables.T_l)
    p, pr, n = state.params, state.priors, state.n
    return (
        _param_flex(p.b, pr.b_tilde, pr.sigma_b, d_l, n),
        _param_flex(p.a, pr.a_tilde, pr.sigma_a, d_l, n),
        _param_flex(p.omega, pr.omega_tilde, pr.sigma_omega, d_l, n),
    )


def eval_total(
    state: EstimationState,
    obs: ObservationSeries,
    tables: KernelTables,
    gaps: EffectiveGaps,
    schedule: WeightSchedule,
) -> float:
    """Weighted total objective; components with zero weight are skipped."""
    total = 0.0
    if schedule.lam1:
        total += schedule.lam1 * eval_L1(state, obs, tables, schedule.epsilon)
    if schedule.lam2:
        total += schedule.lam2 * eval_L2(state, obs, tables)
    if schedule.lam3 or schedule.lam4:
        L3, L4 = eval_L3_L4(state, obs, tables, gaps)
        total += schedule.lam3 * L3 + schedule.lam4 * L4
    if schedule.any_param:
        L_b, L_a, L_om = eval_Lparams(state, tables, gaps)
        total += schedule.lam_b * L_b + schedule.lam_a * L_a + schedule.lam_omega * L_om
    return total


def eval_components(
    state: EstimationState,
    obs: ObservationSeries,
    tables: KernelTables,
    gaps: EffectiveGaps,
    epsilon: float,
) -> Components:
    """All seven components, unweighted (for traces and diagnostics)."""
    L3, L4 = eval_L3_L4(state, obs, tables, gaps)
    L_b, L_a, L_om = eval_Lparams(state, tables, gaps)
    return Components(
        eval_L1(state, obs, tables, epsilon),
        eval_L2(state, obs, tables),
        L3,
        L4,
        L_b,
        L_a,
        L_om,
    )
