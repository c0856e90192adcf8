import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dalebp.errors import ContractError
from dalebp.neuron import (
    PV,
    PYR,
    NeuronParams,
    PopulationState,
    apical_error,
    backward_psc,
    step_membrane,
    step_psc,
    surrogate_slope,
)

finite = st.floats(-20, 20, allow_nan=False)


def one(u=0.0, params=None):
    s = PopulationState.zeros((1,), params)
    s.u[:] = u
    return s


def test_step_tau1_spike_and_reset():
    state, s = step_membrane(one(), [1.5], NeuronParams(tau_m=1, threshold=1))
    assert state.u_half[0] == 1.5 and s[0] == 1 and state.u[0] == 0


def test_step_leak_no_spike():
    state, s = step_membrane(one(0.4), [0.3], NeuronParams(tau_m=2, threshold=1))
    assert state.u_half[0] == pytest.approx(0.5) and s[0] == 0 and state.u[0] == pytest.approx(0.5)


def test_three_steps_fire_every_step():
    p = NeuronParams(tau_m=2, threshold=0.5)
    state = one(params=p)
    pattern = []
    for _ in range(3):
        state, s = step_membrane(state, [1.0])
        pattern.append(int(s[0]))
        assert state.u_half[0] == 1.0
    assert pattern == [1, 1, 1]


def test_step_membrane_is_functional():
    state = one(0.3)
    step_membrane(state, [5.0])
    assert state.u[0] == 0.3 and state.spikes[0] == 0


def test_step_membrane_dimension_mismatch():
    with pytest.raises(ContractError):
        step_membrane(PopulationState.zeros((3,)), np.ones(2))


@pytest.mark.parametrize("kw", [dict(tau_m=0.5), dict(tau_s=0.9), dict(threshold=0.0), dict(threshold=-1)])
def test_params_invariants(kw):
    with pytest.raises(ContractError):
        NeuronParams(**kw)


def test_psc_single_pulse_and_sign():
    assert step_psc([0.0], [1.0], 1.0)[0] == 1.0
    assert step_psc([0.0], [1.0], 1.0, cell_sign=-1)[0] == -1.0


def test_psc_decay():
    assert step_psc([1.0], [0.0], 2.0)[0] == 0.5


def test_psc_trace_by_hand():
    a, out = np.zeros(1), []
    for s in (1, 0, 0):
        a = step_psc(a, [s], 2.0)
        out.append(a[0])
    assert out == [0.5, 0.25, 0.125]


def test_psc_bad_sign():
    with pytest.raises(ContractError):
        step_psc([0.0], [1.0], 2.0, cell_sign=0)


def test_psc_dimension_mismatch():
    with pytest.raises(ContractError):
        step_psc(np.zeros(2), np.zeros(3), 2.0)


@pytest.mark.parametrize("u,expected", [(1.0, 1.0), (0.0, 0.25), (3.0, 1 / 9)])
def test_surrogate_values(u, expected):
    assert surrogate_slope(u) == pytest.approx(expected, rel=1e-12)


def test_backward_psc_examples():
    assert backward_psc([0.2], [1.0], [0.3], PYR)[0] == pytest.approx(0.5)
    assert backward_psc([-0.2], [1.0], [0.3], PV)[0] == pytest.approx(-0.5)


def test_apical_error_bad_type():
    with pytest.raises(ContractError):
        apical_error([1.0], [1.0], "SOM")


@settings(max_examples=200, deadline=None)
@given(arrays(float, 30, elements=st.floats(-3, 3)), st.floats(1, 10), st.booleans())
def test_reset_after_spike(drive, tau_m, use_if):
    p = NeuronParams(tau_m=tau_m, threshold=1.0, is_integrate_and_fire=use_if)
    pop = PopulationState.zeros((1,), p)
    for i in drive:
        s = pop.step([i])
        if s[0]:
            assert pop.u[0] == 0.0
        else:
            assert pop.u[0] == pop.u_half[0] < 1.0


@given(finite.filter(lambda x: abs(x) < 0.99), st.floats(1.0, 10.0))
def test_leak_contraction(u0, tau_m):
    p = NeuronParams(tau_m=tau_m)
    pop = one(u0, p)
    prev = abs(u0)
    for _ in range(5):
        pop.step([0.0])
        assert abs(pop.u[0]) <= prev
        prev = abs(pop.u[0])
    pif = one(u0, NeuronParams(tau_m=tau_m, is_integrate_and_fire=True))
    for _ in range(5):
        pif.step([0.0])
    assert pif.u[0] == u0


@given(finite.filter(lambda x: abs(x) < 0.99), st.floats(1.0, 10.0))
def test_leak_factor_exact(u0, tau_m):
    pop = one(u0, NeuronParams(tau_m=tau_m))
    pop.step([0.0])
    assert pop.u[0] == (1 - 1 / tau_m) * u0


@given(arrays(float, (10, 4), elements=st.sampled_from([0.0, 1.0])),
       arrays(float, (10, 4), elements=st.sampled_from([0.0, 1.0])), st.floats(1, 8))
def test_psc_linearity(s1, s2, tau):
    a1 = a2 = a12 = np.zeros(4)
    for x, y in zip(s1, s2):
        a1, a2, a12 = step_psc(a1, x, tau), step_psc(a2, y, tau), step_psc(a12, x + y, tau)
        np.testing.assert_allclose(a12, a1 + a2, atol=1e-12)


@given(st.floats(-1e3, 1e3))
def test_surrogate_symmetry_and_range(x):
    a, b = surrogate_slope(1 + x), surrogate_slope(1 - x)
    assert a == pytest.approx(b, rel=1e-12)
    assert 0 < a <= 1


@given(arrays(float, 5, elements=finite), arrays(float, 5, elements=finite), st.sampled_from([PYR, PV]))
def test_backward_psc_zero_error_identity(a_b, u, cell):
    np.testing.assert_array_equal(backward_psc(a_b, u, np.zeros(5), cell), a_b)
