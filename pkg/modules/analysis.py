"""
Post-hoc diagnostics over a simulation trace.

Lyapunov series, soft decrease checks under the stability conditions,
finite-difference checks of the two learning-law identities (network output
rate and premise distances), empirical bounds and tracking metrics. Every
function here is pure over the trace.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from modules.plants import PlantModel
from modules.smlc import CLAMP_PREMISE, SIGMA_LIMIT, ZERO_PAD, SMLCConfig

logger = logging.getLogger(__name__)

MIN_SAMPLES = 10
PREMISE_FAMILIES = ('lower_e', 'upper_e', 'lower_edot', 'upper_edot')


class InsufficientDataError(ValueError):
    """Raised when a check has fewer usable samples than it needs."""
    pass


@dataclass
class StabilityBounds:
    """Empirical bounds observed over a trace."""
    B_u: float
    B_udot: float
    B: float
    E_series: np.ndarray
    k_star: float
    alpha_star: float


@dataclass
class IdentityStats:
    """Relative-error distribution of one finite-difference identity check."""
    median: float
    p90: float
    max: float
    pass_fraction: float
    samples: int
    tol: float

    def as_dict(self) -> Dict[str, float]:
        return {'median': self.median, 'p90': self.p90, 'max': self.max, 'pass_fraction': self.pass_fraction, 'samples': self.samples, 'tol': self.tol}


@dataclass
class DiagnosticsReport:
    """Everything `verify` and `run` write to diagnostics.txt."""
    theorem1_condition_rates: Dict[str, Any]
    theorem2_condition_rates: Dict[str, Any]
    identity_errors: Dict[str, Any]
    lyapunov_series: Dict[str, np.ndarray]
    metrics: Dict[str, float]
    bounds: Optional[StabilityBounds] = None
    checks: Dict[str, Any] = field(default_factory=dict)

    def to_items(self) -> List[Tuple[str, Any]]:
        """Flatten into (key, value) pairs for the key: value text format."""
        items: List[Tuple[str, Any]] = []
        for key, value in self.metrics.items():
            items.append((key, value))
        if self.bounds is not None:
            for name in ('B_u', 'B_udot', 'B', 'k_star', 'alpha_star'):
                items.append((name, getattr(self.bounds, name)))
            items.append(('E_max', float(np.max(np.abs(self.bounds.E_series))) if self.bounds.E_series.size else 0.0))
        for prefix, rates in (('theorem1', self.theorem1_condition_rates), ('theorem2', self.theorem2_condition_rates)):
            for key, value in rates.items():
                items.append((f'{prefix}_{key}', value))
        for name, stats in self.identity_errors.items():
            if isinstance(stats, IdentityStats):
                for key, value in stats.as_dict().items():
                    items.append((f'identity_{name}_{key}', value))
            else:
                items.append((f'identity_{name}', stats))
        for name, series in self.lyapunov_series.items():
            if series.size:
                items.append((f'lyapunov_{name}_initial', float(series[0])))
                items.append((f'lyapunov_{name}_final', float(series[-1])))
                items.append((f'lyapunov_{name}_max', float(np.max(series))))
                items.append((f'lyapunov_{name}_min', float(np.min(series))))
        for key, value in self.checks.items():
            items.append((key, value))
        return items


def lyapunov_learning(trace, k_star: float, alpha_star: float, gamma_alpha: float) -> np.ndarray:
    """V = u_c^2 / (2 k*) + k*^2 / (2 gamma_alpha) * (alpha / k*^2 - alpha*)^2"""
    u_c = np.asarray(trace.u_c, dtype=float)
    alpha = np.asarray(trace.alpha, dtype=float)
    return u_c ** 2 / (2.0 * k_star) + k_star ** 2 / (2.0 * gamma_alpha) * (alpha / k_star ** 2 - alpha_star) ** 2


def lyapunov_overall(trace, k_star: float, g: float, gamma_k: float) -> np.ndarray:
    """V = s^2 / 2 + g / (2 gamma_k) * (k - k*)^2"""
    s = np.asarray(trace.s, dtype=float)
    k = np.asarray(trace.k, dtype=float)
    return s ** 2 / 2.0 + g / (2.0 * gamma_k) * (k - k_star) ** 2


def _sgn(s: np.ndarray, chi: float) -> np.ndarray:
    return s / (np.abs(s) + chi)


def _stats(errors: np.ndarray, passed: np.ndarray, tol: float) -> IdentityStats:
    if errors.size:
        median, p90, worst = float(np.median(errors)), float(np.percentile(errors, 90)), float(np.max(errors))
    else:
        median = p90 = worst = 0.0
    return IdentityStats(median=median, p90=p90, max=worst, pass_fraction=float(np.mean(passed)), samples=int(passed.size), tol=tol)


def check_output_rate_identity(trace, dt: float, tol: float = 0.05, chi: float = 0.05, floor: float = 1e-9) -> IdentityStats:
    """
    Compare the finite-difference network output rate with 2 * alpha * sgn(s).

    Steps where any clamp, sigma limit, zero-padding or the dead-zone fired are skipped.

    Raises:
        InsufficientDataError: If fewer than 10 steps are usable
    """
    u_n = np.asarray(trace.u_n, dtype=float)
    if u_n.size < 2:
        raise InsufficientDataError(f'Output-rate check needs at least {MIN_SAMPLES} usable steps, trace has {u_n.size} records')
    expected = 2.0 * np.asarray(trace.alpha, dtype=float)[:-1] * _sgn(np.asarray(trace.s, dtype=float)[:-1], chi)
    observed = np.diff(u_n) / dt
    eligible = (np.asarray(trace.clamp_flags)[:-1] == 0) & (np.asarray(trace.deadzone)[:-1] == 0) & np.isfinite(observed)
    if np.count_nonzero(eligible) < MIN_SAMPLES:
        raise InsufficientDataError(f'Output-rate check needs at least {MIN_SAMPLES} usable steps, found {np.count_nonzero(eligible)}')
    errors = np.abs(observed[eligible] - expected[eligible]) / np.maximum(np.abs(expected[eligible]), floor)
    return _stats(errors, errors < tol, tol)


def check_premise_identity(trace, dt: float, tol: float = 0.01, chi: float = 0.05, floor: float = 1e-9) -> Dict[str, IdentityStats]:
    """
    Compare N * dN/dt with alpha * sgn(s) for every recorded premise distance.

    Samples where alpha * sgn(s) is zero count as passing when the absolute
    value of N * dN/dt is below tol * floor and are left out of the error
    distribution.

    Returns:
        Stats per MF family (lower/upper of each input) and 'all'

    Raises:
        InsufficientDataError: If the trace has no premise distances or fewer than 10 usable steps
    """
    premise_n = getattr(trace, 'premise_n', None)
    if premise_n is None or np.size(premise_n) == 0:
        raise InsufficientDataError('Trace carries no premise distances')
    premise_n = np.asarray(premise_n, dtype=float)
    if premise_n.shape[0] < 2:
        raise InsufficientDataError(f'Premise check needs at least {MIN_SAMPLES} usable steps, trace has {premise_n.shape[0]} records')
    expected = np.asarray(trace.alpha, dtype=float)[:-1] * _sgn(np.asarray(trace.s, dtype=float)[:-1], chi)
    observed = premise_n[:-1] * np.diff(premise_n, axis=0) / dt
    flags = np.asarray(trace.clamp_flags)[:-1]
    eligible = (flags & (CLAMP_PREMISE | SIGMA_LIMIT | ZERO_PAD)) == 0
    eligible &= np.all(np.isfinite(observed), axis=1)
    if np.count_nonzero(eligible) < MIN_SAMPLES:
        raise InsufficientDataError(f'Premise check needs at least {MIN_SAMPLES} usable steps, found {np.count_nonzero(eligible)}')

    sizes = trace.metadata.get('mf_sizes') if hasattr(trace, 'metadata') else None
    width = premise_n.shape[1]
    i_size, j_size = sizes if sizes else (width // 4, width // 4)
    bounds = np.cumsum([0, i_size, i_size, j_size, j_size])

    obs = observed[eligible]
    exp = expected[eligible][:, None]
    nonzero = np.abs(exp[:, 0]) > 0
    results: Dict[str, IdentityStats] = {}
    all_errors, all_passed = [], []
    for idx, family in enumerate(PREMISE_FAMILIES):
        block = obs[:, bounds[idx]:bounds[idx + 1]]
        errors = (np.abs(block[nonzero] - exp[nonzero]) / np.abs(exp[nonzero])).ravel()
        passed = np.concatenate([errors < tol, (np.abs(block[~nonzero]) < tol * floor).ravel()])
        results[family] = _stats(errors, passed, tol)
        all_errors.append(errors)
        all_passed.append(passed)
    results['all'] = _stats(np.concatenate(all_errors), np.concatenate(all_passed), tol)
    return results


def _derivative(series: np.ndarray, dt: float) -> np.ndarray:
    if series.size < 2:
        return np.zeros_like(series)
    return np.gradient(series, dt)


def estimate_bounds(trace, plant: PlantModel) -> StabilityBounds:
    """
    Running maxima of the bounded quantities.

    E = s_dot - e^(n) uses central differences in the interior. The bound B
    evaluates the plant drift f(x) at the recorded true states.
    """
    n = plant.order_n
    dt = trace.dt
    u = np.asarray(trace.u, dtype=float)
    if u.size == 0:
        return StabilityBounds(0.0, 0.0, 0.0, np.zeros(0), 0.0, 0.0)
    chain = [np.asarray(trace.e, dtype=float), np.asarray(trace.edot, dtype=float), np.asarray(trace.eddot, dtype=float)]
    e_n = chain[min(n, 3) - 1]
    for _ in range(n - min(n, 3) + 1):
        e_n = _derivative(e_n, dt)
    E = _derivative(np.asarray(trace.s, dtype=float), dt) - e_n

    ref = np.asarray(trace.ref, dtype=float)
    ref_n = np.abs(ref[:, n]) if n < ref.shape[1] else np.zeros(u.size)
    drift = np.abs(np.array([plant.drift(x) for x in np.asarray(trace.x_true, dtype=float)]))
    dist = np.abs(np.asarray(trace.disturbance, dtype=float))
    B_series = ref_n + drift + dist + plant.g * np.abs(np.asarray(trace.u_n, dtype=float)) + np.abs(E)

    u_rate = np.abs(np.diff(u)) / dt if u.size > 1 else np.zeros(1)
    return StabilityBounds(
        B_u=float(np.max(np.abs(u))),
        B_udot=float(np.max(u_rate)),
        B=float(np.max(B_series)),
        E_series=E,
        k_star=float(trace.k[-1]),
        alpha_star=float(trace.alpha[-1]),
    )


def decrease_rate(values: np.ndarray, dt: float, mask: np.ndarray, limit=0.0) -> Optional[float]:
    """Fraction of masked samples whose central-difference rate is below limit, or None if none are masked."""
    if not np.any(mask):
        return None
    rate = _derivative(np.asarray(values, dtype=float), dt)
    return float(np.mean(rate[mask] < np.broadcast_to(limit, rate.shape)[mask]))


def performance_metrics(trace, window_fraction: float = 0.2, decay_window_s: float = 0.1, decay_ratio: float = 0.05) -> Dict[str, float]:
    """
    Tracking metrics.

    Args:
        trace: Simulation trace
        window_fraction: Trailing share of the trace used for steady-state values
        decay_window_s: Length of the rolling mean applied to |u_c|
        decay_ratio: u_c counts as decayed below this share of mean |u|

    Returns:
        Dict with steady_state_error, max_error, uc_decay_time and trailing ratios
    """
    if not 0 < window_fraction < 1:
        raise ValueError(f'window_fraction must be in (0, 1), got {window_fraction}')
    t = np.asarray(trace.t, dtype=float)
    abs_e = np.abs(np.asarray(trace.e, dtype=float))
    abs_uc = np.abs(np.asarray(trace.u_c, dtype=float))
    abs_u = np.abs(np.asarray(trace.u, dtype=float))
    if t.size == 0:
        return {'steady_state_error': 0.0, 'max_error': 0.0, 'uc_decay_time': 0.0}
    tail = max(1, int(round(window_fraction * t.size)))
    dt = trace.dt

    threshold = decay_ratio * float(np.mean(abs_u))
    window = max(1, int(round(decay_window_s / dt)))
    rolling = pd.Series(abs_uc).rolling(window, min_periods=1).mean().to_numpy()
    below = (rolling < threshold) | (rolling == 0)
    not_below = np.flatnonzero(~below)
    if not_below.size == 0:
        decay_time = float(t[0])
    elif not_below[-1] == t.size - 1:
        decay_time = math.inf
    else:
        decay_time = float(t[not_below[-1] + 1])

    ref_scale = float(np.mean(np.abs(trace.xd[-tail:]))) if hasattr(trace, 'xd') else 0.0
    steady = float(np.mean(abs_e[-tail:]))
    tail_u = float(np.mean(abs_u[-tail:]))
    return {
        'steady_state_error': steady,
        'relative_steady_state_error': steady / ref_scale if ref_scale > 0 else math.nan,
        'max_error': float(np.max(abs_e)),
        'uc_decay_time': decay_time,
        'uc_trailing_ratio': float(np.mean(abs_uc[-tail:])) / tail_u if tail_u > 0 else 0.0,
    }


def reaching_metrics(trace, epsilon: float) -> Dict[str, Any]:
    """Share of samples outside the band satisfying s * s_dot < 0, and the first time |s| < 10 eps."""
    s = np.asarray(trace.s, dtype=float)
    t = np.asarray(trace.t, dtype=float)
    outside = np.abs(s) > 10 * epsilon
    rate = None
    if np.any(outside) and s.size > 1:
        rate = float(np.mean((s * _derivative(s, trace.dt))[outside] < 0))
    inside = np.flatnonzero(~outside)
    return {'reaching_condition_rate': rate, 'reaching_time': float(t[inside[0]]) if inside.size else math.inf}


def consistency_checks(trace) -> Dict[str, Any]:
    """Monotonicity of k and alpha, dead-zone freezing and normalization of the firing strengths."""
    k = np.asarray(trace.k, dtype=float)
    alpha = np.asarray(trace.alpha, dtype=float)
    dead = np.asarray(trace.deadzone)[:-1] == 1
    dk, dalpha = np.diff(k), np.diff(alpha)
    checks = {
        'k_decreases': int(np.count_nonzero(dk < 0)),
        'alpha_decreases': int(np.count_nonzero(dalpha < 0)),
        'deadzone_steps': int(np.count_nonzero(np.asarray(trace.deadzone))),
        'deadzone_adaptation_violations': int(np.count_nonzero(dead & ((dk != 0) | (dalpha != 0)))),
        'clamp_steps': int(np.count_nonzero(np.asarray(trace.clamp_flags))),
    }
    sums = getattr(trace, 'firing_sums', None)
    if sums is not None and np.size(sums):
        checks['normalization_max_deviation'] = float(np.max(np.abs(np.asarray(sums) - 1.0)))
    return checks


def diagnose(trace, plant: PlantModel, smlc: SMLCConfig, window_fraction: float = 0.2) -> DiagnosticsReport:
    """
    Run every diagnostic on a trace.

    Identity checks that lack data are reported as 'unavailable: <reason>'
    instead of failing the whole report.
    """
    if len(trace.t) < MIN_SAMPLES:
        raise InsufficientDataError(f'Diagnostics need at least {MIN_SAMPLES} records, trace has {len(trace.t)}')
    dt = trace.dt
    bounds = estimate_bounds(trace, plant)
    k_star, alpha_star = bounds.k_star, bounds.alpha_star
    s = np.asarray(trace.s, dtype=float)
    k = np.asarray(trace.k, dtype=float)
    t = np.asarray(trace.t, dtype=float)

    v_learning = lyapunov_learning(trace, k_star, alpha_star, smlc.gamma_alpha)
    v_overall = lyapunov_overall(trace, k_star, plant.g, smlc.gamma_k)
    gain_ok = k * k_star > np.abs(s)

    startup = t >= t[0] + 0.1 * (t[-1] - t[0])
    theorem1 = {
        'alpha_star_exceeds_B_udot': bool(alpha_star > bounds.B_udot),
        'gain_product_rate': float(np.mean(gain_ok)),
        'lyapunov_decrease_rate': decrease_rate(v_learning, dt, startup & gain_ok),
    }
    k_condition = k_star > 2.0 * bounds.B
    mask2 = (np.abs(s) > 10 * smlc.epsilon) & gain_ok & k_condition
    theorem2 = {
        'k_star_exceeds_2B': bool(k_condition),
        'gain_product_rate': float(np.mean(gain_ok)),
        'lyapunov_decrease_rate': decrease_rate(v_overall, dt, mask2),
        'sharp_decrease_rate': decrease_rate(v_overall, dt, mask2, limit=-plant.g * k * np.abs(s) / 2.0),
        'k_below_k_star_rate': float(np.mean(k <= k_star)),
    }

    identities: Dict[str, Any] = {}
    try:
        identities['output_rate'] = check_output_rate_identity(trace, dt, chi=smlc.chi)
    except InsufficientDataError as e:
        identities['output_rate'] = f'unavailable: {e}'
    try:
        for family, stats in check_premise_identity(trace, dt, chi=smlc.chi).items():
            identities[f'premise_{family}'] = stats
    except InsufficientDataError as e:
        identities['premise'] = f'unavailable: {e}'

    metrics = performance_metrics(trace, window_fraction)
    metrics.update(reaching_metrics(trace, smlc.epsilon))
    checks = consistency_checks(trace)
    if checks['k_decreases'] or checks['alpha_decreases'] or checks['deadzone_adaptation_violations']:
        logger.warning(f'Adaptation monotonicity violated: {checks}')
    return DiagnosticsReport(
        theorem1_condition_rates=theorem1,
        theorem2_condition_rates=theorem2,
        identity_errors=identities,
        lyapunov_series={'learning': v_learning, 'overall': v_overall},
        metrics=metrics,
        bounds=bounds,
        checks=checks,
    )
