import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import network_weights, reference_trial

from dalebp.errors import ConfigurationError, ContractError, NumericFault
from dalebp.microcircuits import MC1, MC2, MC3
from dalebp.network import (
    IDEALIZED,
    MICROCIRCUIT,
    Network,
    NetworkConfig,
    alignment_angle,
    backward_step,
    fa_quadratic_form,
    forward_step,
    output_error,
    run_trial,
)
from dalebp.weights import DaleMatrix

GOLDEN = Path(__file__).parent / "golden" / "trial_222.json"


def toy(variant=MC2, sizes=(6, 16, 3), seed=0, T=5, gain=4.0, **kw):
    net = Network.build(NetworkConfig(sizes, timesteps=T, inh_variant=variant, seed=seed, **kw))
    for layer in net.layers[1:]:
        layer.w_pyr.values *= gain
    return net


def inputs(n, n_in, seed=0, scale=3.0):
    rng = np.random.default_rng(seed)
    return np.abs(rng.normal(size=(n, n_in))) * scale, rng.integers(0, 3, n)


# -- config / build ------------------------------------------------------------


@pytest.mark.parametrize("kw", [
    dict(layer_sizes=(5,)), dict(layer_sizes=(4, 3, 2)), dict(timesteps=0), dict(backward_mode="exact"),
    dict(inh_variant="MC9"), dict(live_alignment=True),
])
def test_config_rejects(kw):
    with pytest.raises(ConfigurationError):
        NetworkConfig(**kw)


@pytest.mark.parametrize("variant", [MC1, MC2, MC3])
def test_build_shapes_and_dale(variant):
    net = Network.build(NetworkConfig((10, 8, 6, 4), inh_variant=variant))
    hidden, out = net.layers[1], net.layers[-1]
    assert (hidden.n_pyr, hidden.n_pv) == (3, 3) and (out.n_pyr, out.n_pv) == (4, 0)
    assert net.layers[0].w_pyr.pre_sign == 0
    for m in list(net.parameters().values()):
        if m.is_dale:
            assert (m.values >= 0).all()
    assert all(l.n_pyr == l.n_pv for l in net.layers[:-1])


def test_build_deterministic():
    a = Network.build(NetworkConfig((10, 8, 4), seed=5)).parameters()
    b = Network.build(NetworkConfig((10, 8, 4), seed=5)).parameters()
    assert all(np.array_equal(a[k].values, b[k].values) for k in a)


# -- forward_step ---------------------------------------------------------------


def _layer():
    net = Network.build(NetworkConfig((4, 6, 3)))
    return net.layers[1]


def test_forward_zero_input():
    layer = _layer()
    np.testing.assert_array_equal(forward_step(layer, np.zeros(3), np.zeros(3)), np.zeros(3))


def test_forward_one_hot_column():
    layer = _layer()
    layer.w_pv.values[...] = 0
    np.testing.assert_array_equal(forward_step(layer, np.eye(3)[1], np.zeros(3)), layer.w_pyr.values[:, 1])


def test_forward_balanced_cancels():
    layer = _layer()
    layer.w_pv.values[...] = layer.w_pyr.values
    a = np.array([0.3, 0.5, 0.0])
    np.testing.assert_allclose(forward_step(layer, a, -a), 0.0, atol=1e-15)


def test_forward_contracts():
    layer = _layer()
    with pytest.raises(ContractError):
        forward_step(layer, np.zeros(3), np.array([0.1, 0, 0]))
    with pytest.raises(ContractError):
        forward_step(layer, np.zeros(4), np.zeros(3))
    with pytest.raises(ContractError):
        forward_step(layer, np.zeros(3))


# -- output_error -----------------------------------------------------------------


def test_output_error_perfect():
    loss, ia = output_error(np.tile(np.eye(4)[2], (5, 1)), 2)
    assert (ia == 0).all() and loss.sum() == 0


def test_output_error_silent():
    loss, ia = output_error(np.zeros((5, 4)), 3)
    np.testing.assert_array_equal(ia, np.tile(np.eye(4)[3], (5, 1)))
    assert loss.sum() == 2.5


def test_output_error_bad_target():
    with pytest.raises(ContractError):
        output_error(np.zeros(4), 4)
    with pytest.raises(ContractError):
        output_error(np.zeros(4), -1)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 9))
def test_output_error_finite_differences(seed, target):
    a = np.random.default_rng(seed).uniform(0, 1, (5, 10))
    _, ia = output_error(a, target)
    h = 1e-5
    for t, j in [(0, 0), (2, target), (4, 9), (1, 5)]:
        up, dn = a.copy(), a.copy()
        up[t, j] += h
        dn[t, j] -= h
        fd = (output_error(up, target)[0].sum() - output_error(dn, target)[0].sum()) / (2 * h)
        assert fd == pytest.approx(-ia[t, j], rel=1e-6, abs=1e-9)


# -- alignment angle -----------------------------------------------------------------


def test_angle_aligned_and_orthogonal():
    w = np.random.default_rng(0).uniform(0, 1, (4, 6))
    assert alignment_angle(w, w.T) == pytest.approx(0.0, abs=1e-6)
    a = np.zeros((2, 2))
    a[0, 0] = 1
    b = np.zeros((2, 2))
    b[1, 1] = 1
    assert alignment_angle(DaleMatrix(a), DaleMatrix(b)) == pytest.approx(90.0)


def test_angle_errors():
    with pytest.raises(ContractError):
        alignment_angle(np.zeros((2, 3)), np.ones((3, 2)))
    with pytest.raises(ContractError):
        alignment_angle(np.ones((2, 3)), np.ones((2, 3)))


def test_angle_independent_uniform_monte_carlo():
    rng = np.random.default_rng(0)
    angles = [alignment_angle(rng.uniform(0, 1, (100, 100)), rng.uniform(0, 1, (100, 100))) for _ in range(1000)]
    assert 40 <= min(angles) and max(angles) <= 48
    assert np.mean(angles) == pytest.approx(np.degrees(np.arccos(0.75)), abs=0.2)


def test_align_backward_gives_zero_angle_for_exc():
    net = Network.build(NetworkConfig((6, 8, 4)))
    layer = net.layers[1]
    layer.exc_circuit.w_back_pyr.values[...] = layer.forward_matrix().T
    assert net.angles()[0] == pytest.approx(0.0, abs=1e-6)


# -- simulation ---------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_matches_scalar_reference(seed):
    net = toy(sizes=(6, 8, 6, 3), seed=seed)
    x, y = inputs(1, 6, seed)
    recs, loss, hebb = reference_trial(network_weights(net), x[0], int(y[0]), 5)
    res = net.simulate(x, y, learn=True, record=True)
    assert res.loss[0] == pytest.approx(loss, abs=1e-12)
    for l in range(3):
        for key in ("spikes", "psc", "apical", "u"):
            got = getattr(res.trace, key)[l][:, 0]
            np.testing.assert_allclose(got, [r[key][l] for r in recs], atol=1e-12)
        for h, b in zip(hebb[l], res.basal[l]):
            np.testing.assert_allclose(b, h, atol=1e-12)


def test_golden_toy_trial():
    gold = json.loads(GOLDEN.read_text())
    s = gold["setup"]
    net = Network.build(NetworkConfig(tuple(s["layer_sizes"]), timesteps=s["timesteps"], seed=s["seed"]))
    for layer, w in zip(net.layers, gold["weights"]):
        layer.w_pyr.values[...] = w["w_pyr"]
        if w["w_pv"] is not None:
            layer.w_pv.values[...] = w["w_pv"]
        if w["b"] is not None:
            layer.b_plus.values[...] = w["b"]
    trace = run_trial(net, np.array(s["x"]), s["target"])
    for t, rec in enumerate(gold["records"]):
        for l in range(2):
            for key in ("spikes", "psc", "apical", "u"):
                np.testing.assert_allclose(getattr(trace, key)[l][t], rec[key][l], atol=1e-12, err_msg=f"{key} {t} {l}")
        assert trace.loss[t] == pytest.approx(rec["loss"], abs=1e-12)
    assert trace.spikes[1].any(), "golden trial should exercise the output layer"


@pytest.mark.parametrize("variant", [MC1, MC2, MC3])
def test_microcircuit_equals_idealized(variant):
    net = toy(variant, seed=1)
    x, y = inputs(20, 6, 1)
    a = net.simulate(x, y, learn=True, record=True, mode=IDEALIZED)
    b = net.simulate(x, y, learn=True, record=True, mode=MICROCIRCUIT)
    for l in range(2):
        np.testing.assert_allclose(b.trace.apical[l], a.trace.apical[l], atol=1e-12, rtol=0)
        for p, q in zip(a.basal[l], b.basal[l]):
            np.testing.assert_allclose(q, p, atol=1e-12, rtol=0)
    assert np.abs(a.trace.apical[0]).max() > 0


def test_misaligned_microcircuit_differs():
    net = toy(MC2, seed=1)
    x, y = inputs(10, 6, 1)
    a = net.simulate(x, y, record=True, mode=IDEALIZED)
    net.layers[1].exc_circuit.w_back_som.values *= 1.5
    b = net.simulate(x, y, record=True, mode=MICROCIRCUIT)
    assert np.abs(a.trace.apical[0] - b.trace.apical[0]).max() > 1e-3


def test_no_target_means_no_apical_current():
    net = toy(MC1, seed=0)
    x, _ = inputs(4, 6)
    for mode in (IDEALIZED, MICROCIRCUIT):
        res = net.simulate(x, record=True, mode=mode)
        assert all((a == 0).all() for a in res.trace.apical)


def test_error_reaches_first_layer_in_the_same_step():
    net = toy(MC2, sizes=(6, 8, 8, 3), seed=3)
    x, y = inputs(1, 6, 3)
    res = net.simulate(x, y, record=True)
    for l in range(3):
        assert np.abs(res.trace.apical[l][0]).max() > 0, f"layer {l} has no apical current at step 0"


def test_zero_input_no_spikes():
    net = Network.build(NetworkConfig((5, 4, 3)))
    trace = run_trial(net, np.zeros((5, 5)), 1)
    assert all((s == 0).all() for s in trace.spikes)
    assert trace.loss[-1] == pytest.approx(2.5)


def test_non_finite_raises_with_step():
    net = Network.build(NetworkConfig((3, 4, 2), timesteps=4))
    x = np.zeros((1, 4, 3))
    x[0, 2, 0] = np.inf
    net.layers[0].w_pyr.values[...] = -1.0
    with pytest.raises(NumericFault) as exc:
        net.simulate(x, np.array([0]))
    assert exc.value.step == 2


def test_simulate_contracts():
    net = Network.build(NetworkConfig((3, 4, 2)))
    with pytest.raises(ContractError):
        net.simulate(np.zeros((2, 4)))
    with pytest.raises(ContractError):
        net.simulate(np.zeros((2, 3)), learn=True)
    with pytest.raises(ContractError):
        run_trial(net, np.zeros((2, 2, 3)), 0)


def test_backward_step_first_layer_rejected():
    net = Network.build(NetworkConfig((3, 4, 2)))
    with pytest.raises(ContractError):
        backward_step(net, 0)


def test_live_alignment_accumulates_apical_terms():
    net = toy(MC2, seed=2, backward_mode=MICROCIRCUIT, live_alignment=True)
    x, y = inputs(8, 6, 2)
    res = net.simulate(x, y, learn=True)
    assert set(res.apical) == set(net.backward_parameters())
    assert any(np.abs(v).max() > 0 for v in res.apical.values())


def test_fa_quadratic_form_sign():
    net = toy(MC2, seed=0)
    layer = net.layers[1]
    rng = np.random.default_rng(0)
    pos = rng.uniform(0, 1, (200, 3))
    assert (fa_quadratic_form(layer, pos) > 0).all()
    # mixed-sign errors can give a negative value even though W and B are non-negative
    q = fa_quadratic_form(layer, rng.normal(size=(2000, 3)))
    assert (q < 0).any() and q.mean() > 0


def test_prediction_readout():
    net = Network.build(NetworkConfig((4, 2)))
    net.layers[0].w_pyr.values[...] = np.array([[5.0, 0, 0, 0], [0, 0, 0, 0]])
    assert net.predict(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))[0] == 0
