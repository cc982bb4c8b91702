"""
Simulation plants: the three-state adaptive cruise control model with its
time-headway spacing policy, ramp reference and disturbance, and the
second-order numerical regulation plant.

Plants are registered by name for the scenario selector.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

Reference = Tuple[float, float, float, float]


class ReferenceDomainError(ValueError):
    """Raised when the reference is evaluated before t = 0."""
    pass


class UnknownPlantError(KeyError):
    """Raised for a plant name that is not registered."""
    pass


@dataclass(frozen=True)
class AccParams:
    """Longitudinal vehicle parameters and the spacing-policy headway."""
    m: float = 9.0
    k_a: float = 0.26
    tau: float = 0.1
    h: float = 0.5

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError(f'Vehicle mass must be > 0, got {self.m}')
        if not self.tau > 0:
            raise ValueError(f'Engine time lag must be > 0, got {self.tau}')
        if not self.h >= 0:
            raise ValueError(f'Time headway must be >= 0, got {self.h}')

    @property
    def g(self) -> float:
        return 1.0 / (self.m * self.tau)


def _zero_reference(t: float) -> Reference:
    return 0.0, 0.0, 0.0, 0.0


def _no_disturbance(t: float) -> float:
    return 0.0


@dataclass
class PlantModel:
    """
    A plant in canonical form x_n' = f(x) + g * u + d.

    derivative(t, x, u, d) returns the full state derivative, drift(x) returns
    f(x), and error_signals(ref, x) returns (e, e_dot) from a measured state.
    """
    name: str
    state_dim: int
    order_n: int
    g: float
    derivative: Callable[[float, np.ndarray, float, float], np.ndarray]
    drift: Callable[[np.ndarray], float] = lambda x: 0.0
    reference: Callable[[float], Reference] = _zero_reference
    disturbance: Callable[[float], float] = _no_disturbance
    error_signals: Optional[Callable[[Reference, np.ndarray], Tuple[float, float]]] = None
    params: Dict[str, float] = field(default_factory=dict)


def acc_drift(x, p: AccParams) -> float:
    """f(x) of the ACC third state, without the control and disturbance terms."""
    ratio = p.k_a / p.m
    return -2.0 * ratio * x[1] * x[2] - (1.0 / p.tau) * (x[2] + ratio * x[1] ** 2)


def acc_dynamics(x, u: float, d: float, p: AccParams) -> np.ndarray:
    """
    Longitudinal vehicle dynamics.

    Args:
        x: [position m, speed m/s, acceleration m/s^2]
        u: Throttle command
        d: Additive disturbance on the acceleration rate
        p: Vehicle parameters

    Returns:
        State derivative
    """
    return np.array([x[1], x[2], acc_drift(x, p) + u / (p.m * p.tau) + d], dtype=float)


def spacing_error(x_d: float, x, h: float) -> float:
    """e = x_d - x1 - h * x2"""
    return x_d - x[0] - h * x[1]


def reference(t: float) -> Reference:
    """
    Position reference of the ACC scenario and its first three derivatives.

    A unit ramp until 20 s, a constant 0.05 m/s^2 acceleration phase until
    40 s, then a ramp at 2 m/s. The third derivative is zero except at the
    two breakpoints, where it is reported as zero.

    Raises:
        ReferenceDomainError: If t < 0
    """
    if t < 0:
        raise ReferenceDomainError(f'Reference is defined for t >= 0, got {t}')
    if t < 20.0:
        return t, 1.0, 0.0, 0.0
    if t < 40.0:
        return t + 0.025 * (t - 20.0) ** 2, 1.0 + 0.05 * (t - 20.0), 0.05, 0.0
    x_d = t + 0.025 * (t - 20.0) ** 2 - 0.025 * (t - 40.0) ** 2
    return x_d, 1.0 + 0.05 * (t - 20.0) - 0.05 * (t - 40.0), 0.0, 0.0


def disturbance(t: float) -> float:
    return 1.0 + 0.25 * math.sin(t)


def numeric_drift(x) -> float:
    return -2.0 * x[0] - x[1] + math.exp(x[0])


def numeric_plant(x, u: float) -> np.ndarray:
    """x1' = x2, x2' = -2 x1 - x2 + exp(x1) + u"""
    return np.array([x[1], numeric_drift(x) + u], dtype=float)


def build_acc_plant(params: Optional[AccParams] = None, disturbance_on: bool = True) -> PlantModel:
    """ACC plant with spacing error e = x_d - x1 - h x2 and e_dot from measured states."""
    p = params or AccParams()

    def derivative(t, x, u, d):
        return acc_dynamics(x, u, d, p)

    def error_signals(ref: Reference, x) -> Tuple[float, float]:
        x_d, x_d_dot = ref[0], ref[1]
        return spacing_error(x_d, x, p.h), x_d_dot - x[1] - p.h * x[2]

    return PlantModel(
        name='acc',
        state_dim=3,
        order_n=3,
        g=p.g,
        derivative=derivative,
        drift=lambda x: acc_drift(x, p),
        reference=reference,
        disturbance=disturbance if disturbance_on else _no_disturbance,
        error_signals=error_signals,
        params={'m': p.m, 'k_a': p.k_a, 'tau': p.tau, 'h': p.h},
    )


def build_numeric_plant(disturbance_on: bool = False) -> PlantModel:
    """Second-order plant regulated to the origin; e = -x1, e_dot = -x2."""
    if disturbance_on:
        logger.info('numeric2 plant has no disturbance model; disturbance flag ignored')

    def derivative(t, x, u, d):
        return numeric_plant(x, u + d)

    def error_signals(ref: Reference, x) -> Tuple[float, float]:
        return ref[0] - x[0], ref[1] - x[1]

    return PlantModel(
        name='numeric2',
        state_dim=2,
        order_n=2,
        g=1.0,
        derivative=derivative,
        drift=numeric_drift,
        error_signals=error_signals,
    )


PLANTS: Dict[str, Callable[..., PlantModel]] = {
    'acc': build_acc_plant,
    'numeric2': build_numeric_plant,
}


def get_plant(name: str, params: Optional[AccParams] = None, disturbance_on: bool = True) -> PlantModel:
    """
    Build a registered plant by name.

    Raises:
        UnknownPlantError: If the name is not registered
    """
    if name not in PLANTS:
        raise UnknownPlantError(f"Unknown plant '{name}'; registered plants: {', '.join(sorted(PLANTS))}")
    if name == 'acc':
        return build_acc_plant(params, disturbance_on)
    return PLANTS[name](disturbance_on)
