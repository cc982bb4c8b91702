"""
Sliding mode learning control.

Total control u = u_c + u_n: an adaptive conventional term k * sgn(s) plus the
type-2 neuro-fuzzy output. The network parameters, the gain k and the learning
rate alpha are adapted online by sliding-mode laws integrated with forward Euler
at the control sampling time. Control is emitted from the pre-update parameters,
then every parameter is updated from that same pre-update state.
"""
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Optional, Tuple

import numpy as np

from modules.fuzzy_core import (
    ConsequentSet,
    FiringStrengths,
    InvalidParameterError,
    MFBank,
    MFSet,
    firing_strengths,
    t2_output,
)

logger = logging.getLogger(__name__)

# clamp_flags bits recorded per step
CLAMP_PREMISE = 1
CLAMP_NORM = 2
CLAMP_Q = 4
SIGMA_LIMIT = 8
ZERO_PAD = 16

FLAG_NAMES = {
    CLAMP_PREMISE: 'premise_denominator',
    CLAMP_NORM: 'consequent_norm',
    CLAMP_Q: 'q_denominator',
    SIGMA_LIMIT: 'sigma_limit',
    ZERO_PAD: 'derivative_zero_pad',
}


@dataclass
class SMLCConfig:
    """Gains and numerical guards of the learning controller."""
    lam: float
    n: int
    gamma_k: float
    gamma_alpha: float
    chi: float = 0.05
    epsilon: float = 0.001
    denom_clamp: float = 0.001
    sigma_floor: float = 1e-6
    sigma_ceiling: float = 1e3

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidParameterError(f'System order n must be an integer >= 2, got {self.n}')
        self.n = int(self.n)
        for name in ('lam', 'gamma_k', 'gamma_alpha', 'chi', 'epsilon', 'denom_clamp', 'sigma_floor'):
            value = getattr(self, name)
            if not value > 0:
                raise InvalidParameterError(f'{name} must be > 0, got {value}')
        if not self.sigma_ceiling > self.sigma_floor:
            raise InvalidParameterError(f'sigma_ceiling ({self.sigma_ceiling}) must exceed sigma_floor ({self.sigma_floor})')


@dataclass
class ErrorSignals:
    """
    Tracking error and its derivatives [e, e_dot, ..., e^(n-1)].

    The premise laws of the second input need e_ddot even for n = 2, so it is
    carried separately; for n >= 3 it is read from derivs.
    """
    derivs: np.ndarray
    extra_eddot: float = 0.0

    def __post_init__(self):
        self.derivs = np.asarray(self.derivs, dtype=float)
        if self.derivs.ndim != 1 or self.derivs.size < 2:
            raise InvalidParameterError(f'Error signals need at least e and e_dot, got {self.derivs}')

    @property
    def order(self) -> int:
        return int(self.derivs.size)

    @property
    def e(self) -> float:
        return float(self.derivs[0])

    @property
    def e_dot(self) -> float:
        return float(self.derivs[1])

    @property
    def e_ddot(self) -> float:
        if self.derivs.size >= 3:
            return float(self.derivs[2])
        return float(self.extra_eddot)


@dataclass
class ControllerState:
    """Everything the controller adapts: MF bank, consequents, gain, learning rate."""
    bank: MFBank
    cons: ConsequentSet
    k: float
    alpha: float

    def copy(self) -> 'ControllerState':
        return ControllerState(self.bank.copy(), self.cons.copy(), float(self.k), float(self.alpha))


@dataclass
class StepResult:
    """Output of one control step plus per-step diagnostics."""
    u: float
    u_c: float
    u_n: float
    s: float
    state: ControllerState
    firing: FiringStrengths
    flags: int = 0
    deadzone: bool = False
    premise_n: np.ndarray = field(default_factory=lambda: np.zeros(0))


def sliding_surface(err: ErrorSignals, lam: float) -> float:
    """s = sum_m C(n-1, m) * lam^(n-1-m) * e^(m), i.e. (d/dt + lam)^(n-1) e."""
    n = err.order
    return float(sum(comb(n - 1, m) * lam ** (n - 1 - m) * err.derivs[m] for m in range(n)))


def smoothed_sign(s: float, chi: float) -> float:
    return s / (abs(s) + chi)


def conventional_control(k: float, s: float, chi: float) -> float:
    return k * smoothed_sign(s, chi)


def update_gain(k: float, s: float, gamma_k: float, epsilon: float, dt: float) -> float:
    """Euler step of k_dot = gamma_k * |s| / 2, frozen inside the dead-zone."""
    if abs(s) < epsilon:
        return k
    return k + dt * gamma_k * abs(s) / 2.0


def update_learning_rate(alpha: float, s: float, gamma_alpha: float, epsilon: float, dt: float) -> float:
    """Euler step of alpha_dot = gamma_alpha * |s|, frozen inside the dead-zone."""
    if abs(s) < epsilon:
        return alpha
    return alpha + dt * gamma_alpha * abs(s)


def clamp_denominator(value, clamp: float) -> Tuple[np.ndarray, bool]:
    """
    Push magnitudes below clamp out to +/-clamp keeping their sign (0 goes to +clamp).

    Returns:
        Tuple of (clamped values, whether any entry was clamped)
    """
    value = np.asarray(value, dtype=float)
    small = np.abs(value) < clamp
    if not np.any(small):
        return value, False
    signed = np.where(np.signbit(value) & (value != 0), -clamp, clamp)
    return np.where(small, signed, value), True


def premise_distances(bank: MFBank, e: float, e_dot: float) -> np.ndarray:
    """
    Normalized distances N = (input - c) / sigma for the four MF families.

    Layout: lower input-1, upper input-1, lower input-2, upper input-2.
    """
    return np.concatenate([
        (e - bank.input1.lower_centers) / bank.input1.lower_sigmas,
        (e - bank.input1.upper_centers) / bank.input1.upper_sigmas,
        (e_dot - bank.input2.lower_centers) / bank.input2.lower_sigmas,
        (e_dot - bank.input2.upper_centers) / bank.input2.upper_sigmas,
    ])


def _set_rates(mf_set: MFSet, x: float, x_dot: float, alpha_sgn: float, denom_clamp: float) -> Tuple[MFSet, bool]:
    fired = False
    rates = []
    for centers, sigmas in ((mf_set.lower_centers, mf_set.lower_sigmas), (mf_set.upper_centers, mf_set.upper_sigmas)):
        offset = x - centers
        center_rate = x_dot + offset * alpha_sgn
        denominator, clamped = clamp_denominator(offset, denom_clamp)
        fired = fired or clamped
        sigma_rate = -sigmas * (1.0 + np.square(sigmas / denominator)) * alpha_sgn
        rates.append((center_rate, sigma_rate))
    (lc, ls), (uc, us) = rates
    return MFSet(lc, uc, ls, us), fired


def premise_rates(bank: MFBank, e: float, e_dot: float, e_ddot: float, alpha_sgn: float, denom_clamp: float) -> Tuple[MFBank, bool]:
    """
    Time derivatives of every center and width.

    c_dot = x_dot + (x - c) * alpha * sgn(s)
    sigma_dot = -sigma * (1 + (sigma / (x - c))^2) * alpha * sgn(s)

    with x = e for the first input and x = e_dot for the second.

    Returns:
        Tuple of (bank holding the rates, whether a denominator clamp fired)
    """
    rates1, fired1 = _set_rates(bank.input1, e, e_dot, alpha_sgn, denom_clamp)
    rates2, fired2 = _set_rates(bank.input2, e_dot, e_ddot, alpha_sgn, denom_clamp)
    return MFBank(rates1, rates2), fired1 or fired2


def update_premise(state: ControllerState, err: ErrorSignals, s: float, cfg: SMLCConfig, dt: float) -> Tuple[MFBank, int]:
    """
    Forward-Euler step of all center and width laws.

    Widths are clipped into [sigma_floor, sigma_ceiling] afterwards.

    Returns:
        Tuple of (updated bank, clamp flag bits)
    """
    alpha_sgn = state.alpha * smoothed_sign(s, cfg.chi)
    rates, fired = premise_rates(state.bank, err.e, err.e_dot, err.e_ddot, alpha_sgn, cfg.denom_clamp)
    flags = CLAMP_PREMISE if fired else 0
    updated = []
    for current, rate in ((state.bank.input1, rates.input1), (state.bank.input2, rates.input2)):
        raw_lower = current.lower_sigmas + dt * rate.lower_sigmas
        raw_upper = current.upper_sigmas + dt * rate.upper_sigmas
        lower_sigmas = np.clip(raw_lower, cfg.sigma_floor, cfg.sigma_ceiling)
        upper_sigmas = np.clip(raw_upper, cfg.sigma_floor, cfg.sigma_ceiling)
        if np.any(lower_sigmas != raw_lower) or np.any(upper_sigmas != raw_upper):
            flags |= SIGMA_LIMIT
        updated.append(MFSet(
            current.lower_centers + dt * rate.lower_centers,
            current.upper_centers + dt * rate.upper_centers,
            lower_sigmas,
            upper_sigmas,
        ))
    return MFBank(updated[0], updated[1]), flags


def consequent_rates(fs: FiringStrengths, q: float, alpha_sgn: float, denom_clamp: float) -> Tuple[np.ndarray, bool]:
    """f_dot = v / ||v||^2 * alpha * sgn(s) with v = q * W_lower + (1 - q) * W_upper."""
    v = q * fs.lower_normalized + (1.0 - q) * fs.upper_normalized
    norm_sq = float(np.dot(v, v))
    fired = norm_sq < denom_clamp
    if fired:
        norm_sq = denom_clamp
    return v / norm_sq * alpha_sgn, fired


def q_rate(fs: FiringStrengths, f: np.ndarray, alpha_sgn: float, denom_clamp: float) -> Tuple[float, bool]:
    """q_dot = alpha * sgn(s) / (F . (W_lower - W_upper)), denominator clamped with sign kept."""
    denominator = float(np.dot(f, fs.lower_normalized - fs.upper_normalized))
    clamped, fired = clamp_denominator(denominator, denom_clamp)
    return alpha_sgn / float(clamped), fired


def update_consequents(state: ControllerState, fs: FiringStrengths, s: float, cfg: SMLCConfig, dt: float) -> Tuple[np.ndarray, bool]:
    """
    Euler step of the consequent law.

    Returns:
        Tuple of (updated f vector, whether the norm clamp fired)
    """
    alpha_sgn = state.alpha * smoothed_sign(s, cfg.chi)
    rate, fired = consequent_rates(fs, state.cons.q, alpha_sgn, cfg.denom_clamp)
    return state.cons.f + dt * rate, fired


def update_q(state: ControllerState, fs: FiringStrengths, s: float, cfg: SMLCConfig, dt: float) -> Tuple[float, bool]:
    """
    Euler step of the mixing-weight law. q is left unbounded.

    Returns:
        Tuple of (updated q, whether the denominator clamp fired)
    """
    alpha_sgn = state.alpha * smoothed_sign(s, cfg.chi)
    rate, fired = q_rate(fs, state.cons.f, alpha_sgn, cfg.denom_clamp)
    return state.cons.q + dt * rate, fired


def control_step(state: ControllerState, err: ErrorSignals, cfg: SMLCConfig, dt: float, fs: Optional[FiringStrengths] = None) -> StepResult:
    """
    Emit u = u_c + u_n from the current parameters, then adapt.

    Args:
        state: Controller parameters before this step (not mutated)
        err: Error signals at this sample
        cfg: Controller configuration
        dt: Sampling time in seconds
        fs: Precomputed firing strengths for (e, e_dot), if the caller has them

    Returns:
        StepResult with the emitted control and the updated state

    Raises:
        DegenerateFiringError: If firing strengths underflow
    """
    s = sliding_surface(err, cfg.lam)
    if fs is None:
        fs = firing_strengths(err.e, err.e_dot, state.bank)
    u_n = t2_output(fs, state.cons)
    u_c = conventional_control(state.k, s, cfg.chi)
    premise_n = premise_distances(state.bank, err.e, err.e_dot)

    bank, flags = update_premise(state, err, s, cfg, dt)
    f, norm_fired = update_consequents(state, fs, s, cfg, dt)
    q, q_fired = update_q(state, fs, s, cfg, dt)
    if norm_fired:
        flags |= CLAMP_NORM
    if q_fired:
        flags |= CLAMP_Q
    alpha = update_learning_rate(state.alpha, s, cfg.gamma_alpha, cfg.epsilon, dt)
    k = update_gain(state.k, s, cfg.gamma_k, cfg.epsilon, dt)

    new_state = ControllerState(bank=bank, cons=ConsequentSet(f, q), k=k, alpha=alpha)
    return StepResult(
        u=u_c + u_n,
        u_c=u_c,
        u_n=u_n,
        s=s,
        state=new_state,
        firing=fs,
        flags=flags,
        deadzone=abs(s) < cfg.epsilon,
        premise_n=premise_n,
    )
