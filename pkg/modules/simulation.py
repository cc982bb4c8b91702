"""
Fixed-step closed-loop simulation.

Each step measures the plant (optionally with seeded Gaussian noise), forms the
error signals, runs one control step and advances the plant by RK4 with the
control held over the step. Every sample is recorded in a SimulationTrace.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from modules.fuzzy_core import DegenerateFiringError, initial_bank, seeded_consequents
from modules.plants import AccParams, PlantModel, get_plant
from modules.smlc import (
    FLAG_NAMES,
    ZERO_PAD,
    ControllerState,
    ErrorSignals,
    SMLCConfig,
    control_step,
)

logger = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """
    Raised when the plant state or control stops being finite.

    Attributes:
        step: Index of the step that produced the non-finite value
        trace: Records collected before the failure (may be None)
    """

    def __init__(self, message: str, step: int, trace: Optional['SimulationTrace'] = None):
        super().__init__(message)
        self.step = step
        self.trace = trace

    def __reduce__(self):
        return self.__class__, (str(self), self.step, self.trace)


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one closed-loop run."""
    plant_name: str
    smlc: SMLCConfig
    x0: Tuple[float, ...]
    dt: float = 0.01
    horizon: float = 20.0
    k0: float = 1.0
    alpha0: float = 0.03
    q0: float = 0.5
    un0: float = 0.0
    qden0: float = 1.0
    input_range: float = 1.0
    snr_db: Optional[float] = None
    seed: int = 1
    disturbance_on: bool = False
    headway_h: float = 0.5
    n_mfs: int = 3
    mass: float = 9.0
    drag: float = 0.26
    tau: float = 0.1
    name: str = 'custom'

    def __post_init__(self):
        self.x0 = tuple(float(v) for v in self.x0)
        if not self.dt > 0:
            raise ValueError(f'dt must be > 0, got {self.dt}')
        if not self.horizon >= 0:
            raise ValueError(f'horizon must be >= 0, got {self.horizon}')
        if not self.k0 > 0 or not self.alpha0 > 0:
            raise ValueError(f'k0 and alpha0 must be > 0, got k0={self.k0}, alpha0={self.alpha0}')
        if self.snr_db is not None and math.isinf(self.snr_db) and self.snr_db > 0:
            self.snr_db = None
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            raise ValueError(f'snr_db must be finite, +inf or None, got {self.snr_db}')

    @property
    def noise_on(self) -> bool:
        return self.snr_db is not None

    @property
    def step_count(self) -> int:
        return int(math.floor(self.horizon / self.dt + 1e-9))

    def noise_free(self) -> 'ScenarioConfig':
        return replace(self, snr_db=None)


def build_plant(cfg: ScenarioConfig) -> PlantModel:
    """Instantiate the plant named in the config and check the initial state size."""
    params = AccParams(m=cfg.mass, k_a=cfg.drag, tau=cfg.tau, h=cfg.headway_h) if cfg.plant_name == 'acc' else None
    plant = get_plant(cfg.plant_name, params=params, disturbance_on=cfg.disturbance_on)
    if len(cfg.x0) != plant.state_dim:
        raise ValueError(f'x0 has {len(cfg.x0)} entries but plant {plant.name} has {plant.state_dim} states')
    if cfg.smlc.n != plant.order_n:
        raise ValueError(f'Controller order n={cfg.smlc.n} does not match plant {plant.name} order {plant.order_n}')
    return plant


def initial_controller(cfg: ScenarioConfig, plant: PlantModel) -> ControllerState:
    """
    Starting controller. Consequents are seeded at the noise-free first sample so
    the network output starts at un0 and the q-law denominator at qden0; with
    qden0 = 0 that denominator stays on the clamp for the whole run.
    """
    bank = initial_bank(cfg.n_mfs, cfg.input_range)
    e, e_dot = plant.error_signals(plant.reference(0.0), np.array(cfg.x0, dtype=float))
    cons = seeded_consequents(bank, e, e_dot, cfg.q0, output0=cfg.un0, q_denominator0=cfg.qden0)
    return ControllerState(bank=bank, cons=cons, k=cfg.k0, alpha=cfg.alpha0)


def trace_columns(state_dim: int) -> List[str]:
    """Fixed CSV column order."""
    return (
        ['t']
        + [f'x{i + 1}' for i in range(state_dim)]
        + [f'm{i + 1}' for i in range(state_dim)]
        + ['xd', 'e', 'edot', 'eddot', 's', 'u_c', 'u_n', 'u', 'k', 'alpha', 'q', 'clamp_flags', 'deadzone']
    )


@dataclass
class SimulationTrace:
    """
    Per-sample record of a run.

    Row i holds the sample at t_i = i * dt and the control applied over
    [t_i, t_i + dt). premise_n and firing_sums are kept in memory only.
    """
    t: np.ndarray
    x_true: np.ndarray
    x_meas: np.ndarray
    ref: np.ndarray
    e: np.ndarray
    edot: np.ndarray
    eddot: np.ndarray
    s: np.ndarray
    u_c: np.ndarray
    u_n: np.ndarray
    u: np.ndarray
    k: np.ndarray
    alpha: np.ndarray
    q: np.ndarray
    clamp_flags: np.ndarray
    deadzone: np.ndarray
    disturbance: np.ndarray
    premise_n: Optional[np.ndarray] = None
    firing_sums: Optional[np.ndarray] = None
    dt: float = 0.01
    plant_name: str = ''
    metadata: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def allocate(cls, records: int, state_dim: int, premise_width: int, dt: float, plant_name: str) -> 'SimulationTrace':
        def vec():
            return np.zeros(records)

        return cls(
            t=vec(), x_true=np.zeros((records, state_dim)), x_meas=np.zeros((records, state_dim)),
            ref=np.zeros((records, 4)), e=vec(), edot=vec(), eddot=vec(), s=vec(),
            u_c=vec(), u_n=vec(), u=vec(), k=vec(), alpha=vec(), q=vec(),
            clamp_flags=np.zeros(records, dtype=np.int64), deadzone=np.zeros(records, dtype=np.int64),
            disturbance=vec(), premise_n=np.zeros((records, premise_width)), firing_sums=np.zeros((records, 2)),
            dt=dt, plant_name=plant_name,
        )

    def __len__(self) -> int:
        return int(self.t.size)

    @property
    def state_dim(self) -> int:
        return int(self.x_true.shape[1])

    @property
    def xd(self) -> np.ndarray:
        return self.ref[:, 0]

    def truncated(self, records: int) -> 'SimulationTrace':
        """Copy holding only the first `records` samples."""
        values = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            values[name] = value[:records].copy() if isinstance(value, np.ndarray) else value
        values['metadata'] = dict(self.metadata)
        return SimulationTrace(**values)

    def to_frame(self) -> pd.DataFrame:
        """Trace as a DataFrame in the fixed CSV column order."""
        n = self.state_dim
        data = {'t': self.t}
        for i in range(n):
            data[f'x{i + 1}'] = self.x_true[:, i]
        for i in range(n):
            data[f'm{i + 1}'] = self.x_meas[:, i]
        data.update({
            'xd': self.xd, 'e': self.e, 'edot': self.edot, 'eddot': self.eddot, 's': self.s,
            'u_c': self.u_c, 'u_n': self.u_n, 'u': self.u, 'k': self.k, 'alpha': self.alpha, 'q': self.q,
            'clamp_flags': self.clamp_flags, 'deadzone': self.deadzone,
        })
        return pd.DataFrame(data, columns=trace_columns(n))

    def flag_counts(self) -> Dict[str, int]:
        return {name: int(np.count_nonzero(self.clamp_flags & bit)) for bit, name in FLAG_NAMES.items()}


def integrate_step(plant: PlantModel, x: np.ndarray, u: float, t: float, dt: float, step: Optional[int] = None) -> np.ndarray:
    """
    Classical RK4 step with u held constant and the disturbance sampled at the stage times.

    Raises:
        DivergenceError: If the new state is not finite
    """
    x = np.asarray(x, dtype=float)
    half = dt / 2.0
    k1 = plant.derivative(t, x, u, plant.disturbance(t))
    k2 = plant.derivative(t + half, x + half * k1, u, plant.disturbance(t + half))
    k3 = plant.derivative(t + half, x + half * k2, u, plant.disturbance(t + half))
    k4 = plant.derivative(t + dt, x + dt * k3, u, plant.disturbance(t + dt))
    x_next = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(x_next)):
        where = f' at step {step}' if step is not None else ''
        raise DivergenceError(f'Plant state became non-finite{where} (t={t:.6g}): {x_next}', step=step if step is not None else -1)
    return x_next


def noise_std(signal_rms, snr_db: float) -> np.ndarray:
    """Per-component noise standard deviation for a given SNR in dB."""
    return np.asarray(signal_rms, dtype=float) / 10.0 ** (snr_db / 20.0)


def add_noise(x: np.ndarray, snr_db: Optional[float], signal_rms, rng: np.random.Generator) -> np.ndarray:
    """
    Measured state: x plus zero-mean Gaussian noise at the requested SNR.

    snr_db of None or +inf returns the state unchanged and draws nothing from rng.
    """
    x = np.asarray(x, dtype=float)
    if snr_db is None or math.isinf(snr_db):
        return x.copy()
    return x + rng.normal(0.0, 1.0, size=x.shape) * noise_std(signal_rms, snr_db)


class ErrorDerivativeEstimator:
    """
    Builds ErrorSignals for each sample.

    e and e_dot come from the plant's measured states; higher derivatives are
    backward differences of the previous order. Samples without enough history
    get zeros and are reported as padded.
    """

    def __init__(self, order_n: int, dt: float):
        self.order_n = order_n
        self.dt = dt
        self.width = max(order_n, 3)
        self.previous: Optional[np.ndarray] = None
        self.samples = 0

    def estimate(self, e: float, e_dot: float) -> Tuple[ErrorSignals, bool]:
        """
        Returns:
            Tuple of (error signals, whether any derivative was zero-padded)
        """
        derivs = np.zeros(self.width)
        derivs[0] = e
        derivs[1] = e_dot
        padded = False
        for m in range(2, self.width):
            if self.samples >= m - 1:
                derivs[m] = (derivs[m - 1] - self.previous[m - 1]) / self.dt
            else:
                padded = True
        self.previous = derivs
        self.samples += 1
        return ErrorSignals(derivs[:self.order_n].copy(), extra_eddot=float(derivs[2])), padded


def signal_rms(trace: SimulationTrace) -> np.ndarray:
    """Per-component RMS of the true states over the whole trace."""
    return np.sqrt(np.mean(np.square(trace.x_true), axis=0))


def pilot_signal_rms(cfg: ScenarioConfig) -> np.ndarray:
    """RMS of a noise-free pilot run of the same scenario, cached by scenario fields."""
    from modules.cache import get_pilot_cache

    cache = get_pilot_cache()
    key = cache.scenario_key(cfg)
    cached = cache.get(key)
    if cached is not None:
        logger.debug(f'Pilot RMS cache hit for {cfg.name} ({key[:8]})')
        return np.asarray(cached, dtype=float)
    logger.debug(f'Pilot RMS cache miss for {cfg.name} ({key[:8]}); running noise-free pilot, cache {cache.get_stats()}')
    rms = signal_rms(run_scenario(cfg.noise_free()))
    cache.set(key, rms.tolist())
    return rms


def run_scenario(cfg: ScenarioConfig, rms: Optional[Sequence[float]] = None) -> SimulationTrace:
    """
    Run one closed-loop simulation.

    Args:
        cfg: Scenario configuration
        rms: Per-component signal RMS for noise scaling; a pilot run supplies it when omitted

    Returns:
        SimulationTrace with step_count + 1 records

    Raises:
        DivergenceError: If the plant, the control or the firing strengths break down;
            the partial trace is attached
    """
    plant = build_plant(cfg)
    steps = cfg.step_count
    if abs(steps * cfg.dt - cfg.horizon) > 1e-9 * max(1.0, cfg.horizon):
        logger.warning(f'Horizon {cfg.horizon} is not a multiple of dt {cfg.dt}; running {steps} steps to t={steps * cfg.dt:.6g}')

    signal = None
    if cfg.noise_on:
        signal = np.asarray(rms, dtype=float) if rms is not None else pilot_signal_rms(cfg)
        logger.debug(f'Noise std per component: {noise_std(signal, cfg.snr_db)}')
    rng = np.random.default_rng(cfg.seed)

    state = initial_controller(cfg, plant)
    premise_width = 2 * (state.bank.input1.size + state.bank.input2.size)
    trace = SimulationTrace.allocate(steps + 1, plant.state_dim, premise_width, cfg.dt, plant.name)
    trace.metadata['scenario'] = cfg.name
    trace.metadata['mf_sizes'] = (state.bank.input1.size, state.bank.input2.size)
    estimator = ErrorDerivativeEstimator(plant.order_n, cfg.dt)
    x = np.array(cfg.x0, dtype=float)
    logger.info(f'Running {cfg.name} on plant {plant.name}: {steps} steps of {cfg.dt} s, noise {"on (" + str(cfg.snr_db) + " dB)" if cfg.noise_on else "off"}')

    for i in range(steps + 1):
        t = i * cfg.dt
        ref = plant.reference(t)
        x_meas = add_noise(x, cfg.snr_db, signal, rng)
        e, e_dot = plant.error_signals(ref, x_meas)
        err, padded = estimator.estimate(e, e_dot)
        try:
            result = control_step(state, err, cfg.smlc, cfg.dt)
        except DegenerateFiringError as exc:
            raise DivergenceError(f'Degenerate firing at step {i} (t={t:.6g}): {exc}', step=i, trace=trace.truncated(i)) from exc

        trace.t[i] = t
        trace.x_true[i] = x
        trace.x_meas[i] = x_meas
        trace.ref[i] = ref
        trace.e[i] = err.e
        trace.edot[i] = err.e_dot
        trace.eddot[i] = err.e_ddot
        trace.s[i] = result.s
        trace.u_c[i] = result.u_c
        trace.u_n[i] = result.u_n
        trace.u[i] = result.u
        trace.k[i] = state.k
        trace.alpha[i] = state.alpha
        trace.q[i] = state.cons.q
        trace.clamp_flags[i] = result.flags | (ZERO_PAD if padded else 0)
        trace.deadzone[i] = int(result.deadzone)
        trace.disturbance[i] = plant.disturbance(t)
        trace.premise_n[i] = result.premise_n
        trace.firing_sums[i] = (np.sum(result.firing.lower_normalized), np.sum(result.firing.upper_normalized))

        if not math.isfinite(result.u):
            raise DivergenceError(f'Control became non-finite at step {i} (t={t:.6g})', step=i, trace=trace.truncated(i + 1))
        state = result.state
        if i < steps:
            try:
                x = integrate_step(plant, x, result.u, t, cfg.dt, step=i)
            except DivergenceError as exc:
                exc.trace = trace.truncated(i + 1)
                raise

    counts = trace.flag_counts()
    for name, count in counts.items():
        if name != 'derivative_zero_pad' and count > len(trace) / 2:
            logger.warning(f'{name} guard fired on {count} of {len(trace)} steps')
    logger.info(f'Finished {cfg.name}: final k={trace.k[-1]:.4g}, alpha={trace.alpha[-1]:.4g}, q={trace.q[-1]:.4g}')
    logger.debug(f'Final membership functions: input 1 {state.bank.input1.functions()}, input 2 {state.bank.input2.functions()}')
    return trace
