import logging
import math

import numpy as np
import pytest

from modules.plants import (
    AccParams,
    ReferenceDomainError,
    UnknownPlantError,
    acc_dynamics,
    build_acc_plant,
    build_numeric_plant,
    disturbance,
    get_plant,
    numeric_plant,
    reference,
    spacing_error,
)

logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)


def test_acc_rest_equilibrium():
    assert acc_dynamics([0.0, 0.0, 0.0], 0.0, 0.0, AccParams()) == pytest.approx([0.0, 0.0, 0.0])


def test_acc_throttle_and_disturbance():
    p = AccParams()
    assert acc_dynamics([0.0, 0.0, 0.0], 0.9, 0.0, p)[2] == pytest.approx(1.0)
    x = [3.0, 1.5, -0.2]
    base = acc_dynamics(x, 0.4, 0.0, p)
    assert acc_dynamics(x, 0.4, 0.7, p)[2] - base[2] == pytest.approx(0.7)
    assert base[0] == 1.5
    assert base[1] == -0.2


def test_acc_control_coefficient_matches_finite_difference():
    p = AccParams()
    x = np.array([1.0, 2.0, 0.3])
    h = 1e-3
    fd = (acc_dynamics(x, 1.0 + h, 0.0, p)[2] - acc_dynamics(x, 1.0 - h, 0.0, p)[2]) / (2 * h)
    assert fd == pytest.approx(p.g, abs=1e-10)
    assert build_acc_plant(p).g == pytest.approx(1.0 / 0.9)


def test_acc_params_validation():
    with pytest.raises(ValueError):
        AccParams(m=0.0)
    with pytest.raises(ValueError):
        AccParams(tau=-1.0)
    with pytest.raises(ValueError):
        AccParams(h=-0.5)


def test_spacing_error_examples():
    assert spacing_error(10.0, [8.0, 2.0, 0.0], 0.5) == pytest.approx(1.0)
    assert spacing_error(5.0, [4.0, 3.0, 0.0], 0.0) == pytest.approx(1.0)
    assert spacing_error(9.0, [8.0, 2.0, 0.0], 0.5) == pytest.approx(0.0)


def test_reference_branches():
    assert reference(10.0) == pytest.approx((10.0, 1.0, 0.0, 0.0))
    assert reference(30.0) == pytest.approx((32.5, 1.5, 0.05, 0.0))
    assert reference(50.0)[1] == pytest.approx(2.0)
    assert reference(50.0)[2] == 0.0


def test_reference_continuity_at_breakpoints():
    for t in (20.0, 40.0):
        before, after = reference(t - 1e-9), reference(t)
        assert before[0] == pytest.approx(after[0], abs=1e-6)
        assert before[1] == pytest.approx(after[1], abs=1e-6)
    assert reference(20.0)[0] == pytest.approx(20.0)
    assert reference(40.0)[1] == pytest.approx(2.0)


def test_reference_rejects_negative_time():
    with pytest.raises(ReferenceDomainError):
        reference(-0.1)


def test_disturbance_values():
    assert disturbance(0.0) == pytest.approx(1.0)
    assert disturbance(math.pi / 2) == pytest.approx(1.25)
    samples = [disturbance(t) for t in np.linspace(0, 20, 401)]
    assert min(samples) >= 0.75 and max(samples) <= 1.25


def test_numeric_plant_examples():
    assert numeric_plant([0.0, 0.0], -1.0) == pytest.approx([0.0, 0.0])
    assert numeric_plant([1.0, -1.0], 0.0) == pytest.approx([-1.0, math.e - 1.0])
    x = [0.3, -0.2]
    assert numeric_plant(x, 0.6)[1] - numeric_plant(x, 0.0)[1] == pytest.approx(0.6)


def test_numeric_plant_model():
    plant = build_numeric_plant()
    assert plant.state_dim == 2 and plant.order_n == 2 and plant.g == 1.0
    assert plant.disturbance(3.0) == 0.0
    assert plant.error_signals(plant.reference(0.0), np.array([1.0, -1.0])) == pytest.approx((-1.0, 1.0))
    assert plant.drift([1.0, -1.0]) == pytest.approx(math.e - 1.0)


def test_acc_plant_error_signals():
    plant = build_acc_plant(AccParams(h=0.5))
    e, e_dot = plant.error_signals(reference(10.0), np.array([8.0, 1.0, 0.2]))
    assert e == pytest.approx(10.0 - 8.0 - 0.5)
    assert e_dot == pytest.approx(1.0 - 1.0 - 0.5 * 0.2)
    assert build_acc_plant(disturbance_on=False).disturbance(1.0) == 0.0
    assert plant.disturbance(0.0) == pytest.approx(1.0)


def test_plant_registry():
    assert get_plant('acc').state_dim == 3
    assert get_plant('numeric2').state_dim == 2
    with pytest.raises(UnknownPlantError):
        get_plant('pendulum')


if __name__ == '__main__':
    pytest.main([__file__])
