import pytest

from src.bounds.relax import (
    alpha_range,
    check_sound,
    default_alpha,
    is_unfixed,
    phase_interval,
    phases,
    relax_neuron,
)
from src.network.model import Activation


INTERVALS = [(-1.0, 7.0), (-5.0, 7.0), (-3.0, 0.5), (-0.2, 0.1), (0.0, 4.0), (-4.0, 0.0), (1.0, 2.0), (-2.0, -1.0)]


def test_relu_chord():
    r = relax_neuron(Activation.RELU, -1.0, 7.0)
    assert r.upper_slope == pytest.approx(7 / 8)
    assert r.upper_offset == pytest.approx(7 / 8)
    assert r.lower_slope == 1.0
    assert r.lower_offset == 0.0
    assert relax_neuron(Activation.RELU, -5.0, 7.0).upper_slope == pytest.approx(7 / 12)


def test_abs_constant_upper():
    r = relax_neuron(Activation.ABS, -5.0, 3.0)
    assert (r.upper_slope, r.upper_offset) == (0.0, 5.0)
    assert r.lower_slope == 0.0


@pytest.mark.parametrize("kind", [Activation.RELU, Activation.LEAKY_RELU, Activation.ABS])
@pytest.mark.parametrize("interval", INTERVALS)
def test_relaxation_sound_across_alphas(kind, interval):
    l, u = interval
    slope = 0.1 if kind == Activation.LEAKY_RELU else 0.0
    lo, hi = alpha_range(kind, slope)
    for k in range(5):
        alpha = lo + (hi - lo) * k / 4
        r = relax_neuron(kind, l, u, alpha, slope)
        assert check_sound(kind, r, l, u, slope) <= 1e-9


def test_fixed_neurons_are_exact():
    assert relax_neuron(Activation.RELU, 1.0, 2.0).is_exact()
    dead = relax_neuron(Activation.RELU, -2.0, -1.0)
    assert dead.is_exact() and dead.upper_slope == 0.0
    flipped = relax_neuron(Activation.ABS, -2.0, -1.0)
    assert flipped.lower_slope == -1.0 and flipped.is_exact()
    assert relax_neuron(Activation.IDENTITY, -3.0, 3.0).is_exact()


def test_alpha_out_of_range():
    with pytest.raises(ValueError):
        relax_neuron(Activation.RELU, -1.0, 1.0, alpha=1.5)
    with pytest.raises(ValueError):
        relax_neuron(Activation.ABS, -1.0, 1.0, alpha=-1.5)


def test_default_alpha():
    assert default_alpha(Activation.RELU, -1.0, 7.0) == 1.0
    assert default_alpha(Activation.RELU, -7.0, 1.0) == 0.0
    assert default_alpha(Activation.LEAKY_RELU, -7.0, 1.0, 0.1) == 0.1
    assert default_alpha(Activation.ABS, -5.0, 5.0) == 0.0


def test_unfixed():
    assert is_unfixed(Activation.RELU, -1.0, 1.0)
    assert not is_unfixed(Activation.RELU, 0.0, 1.0)
    assert not is_unfixed(Activation.ABS, -1.0, 0.0)
    assert not is_unfixed(Activation.IDENTITY, -1.0, 1.0)
    with pytest.raises(ValueError):
        is_unfixed(Activation.RELU, 1.0, 0.0)


def test_phases():
    split = phases(Activation.RELU, -1.0, 7.0)
    assert [p.id for p in split] == [0, 1]
    assert [p.name for p in split] == ["inactive", "active"]
    assert split[0].exact_relax.upper_slope == 0.0
    assert split[1].exact_relax.lower_slope == 1.0
    abs_split = phases(Activation.ABS, -5.0, 5.0)
    assert abs_split[0].exact_relax.lower_slope == -1.0
    only = phases(Activation.RELU, 0.5, 2.0)
    assert len(only) == 1 and only[0].id == 1
    assert phase_interval(0, -1.0, 7.0) == (-1.0, 0.0)
    assert phase_interval(1, -1.0, 7.0) == (0.0, 7.0)
