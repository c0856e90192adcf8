import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dalebp.errors import ContractError, ParseError
from dalebp.weights import EXCITATORY, INHIBITORY, MIXED, DaleMatrix, doubly_normalize, init_kaiming, project_dale


def test_init_single_entry_nonnegative():
    m = init_kaiming((1, 1), seed=3)
    assert m.values.shape == (1, 1) and m.values[0, 0] >= 0


def test_init_mean_abs_is_half_bound():
    m = init_kaiming((100, 784), "uniform", seed=0)
    bound = np.sqrt(6 / 784)
    assert abs(m.values.mean() - bound / 2) <= 0.05 * bound / 2


def test_init_deterministic():
    a = init_kaiming((20, 30), seed=7, pre_sign=INHIBITORY)
    b = init_kaiming((20, 30), seed=7, pre_sign=INHIBITORY)
    np.testing.assert_array_equal(a.values, b.values)


def test_init_mixed_keeps_signs():
    m = init_kaiming((50, 50), seed=1, pre_sign=MIXED)
    assert (m.values < 0).any() and (m.values > 0).any()


def test_init_normal_variant_scale():
    m = init_kaiming((200, 400), "normal", seed=0)
    # E|N(0, s)| = s sqrt(2/pi)
    assert m.values.mean() == pytest.approx(np.sqrt(2 / 400) * np.sqrt(2 / np.pi), rel=0.03)


def test_init_zero_fan_in():
    with pytest.raises(ContractError):
        init_kaiming((3, 0))


def test_init_unknown_variant():
    with pytest.raises(ContractError):
        init_kaiming((3, 3), "orthogonal")


def test_project_identity_on_feasible():
    m = DaleMatrix(np.array([[0.1, 2.0]]))
    np.testing.assert_array_equal(project_dale(m).values, m.values)


def test_project_clamps():
    m = DaleMatrix(np.array([[0.5, 1.0]]))
    m.values[0, 0] = -0.3
    assert project_dale(m).values[0, 0] == 0.0


def test_project_mixed_untouched():
    v = np.array([[-0.3, 0.2]])
    np.testing.assert_array_equal(project_dale(DaleMatrix(v, MIXED)).values, v)


def test_negative_dale_rejected():
    with pytest.raises(ContractError):
        DaleMatrix(np.array([[-1.0]]), EXCITATORY)


def test_add_projects():
    m = DaleMatrix(np.ones((2, 2)))
    m.add_(np.array([[-2.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_array_equal(m.values, [[0.0, 1.0], [1.0, 2.0]])


def test_signed_view():
    m = DaleMatrix(np.ones((1, 2)), INHIBITORY)
    np.testing.assert_array_equal(m.signed, -np.ones((1, 2)))


def test_normalize_scaled_permutation():
    p = np.eye(4)[[2, 0, 3, 1]]
    np.testing.assert_allclose(doubly_normalize(DaleMatrix(3.7 * p)).values, p, atol=1e-15)


def test_normalize_balanced_unchanged():
    v = np.full((5, 5), 2.0 / 5)
    np.testing.assert_allclose(doubly_normalize(DaleMatrix(v), 2.0).values, v, rtol=1e-15)


def test_normalize_random_50():
    rng = np.random.default_rng(0)
    w = doubly_normalize(DaleMatrix(rng.uniform(0.01, 1, (50, 50))), 1.0, iters=1000, tol=1e-6).values
    assert np.abs(w.sum(0) - 1).max() <= 1e-6 and np.abs(w.sum(1) - 1).max() <= 1e-6


@pytest.mark.parametrize("v", [np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[1.0, 0.0], [1.0, 0.0]])])
def test_normalize_zero_line(v):
    with pytest.raises(ContractError):
        doubly_normalize(DaleMatrix(v))


def test_normalize_non_square():
    with pytest.raises(ContractError):
        doubly_normalize(DaleMatrix(np.ones((2, 3))))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (6, 6), elements=st.one_of(st.just(0.0), st.floats(1e-3, 5))).filter(
    lambda v: (v.sum(0) > 0.1).all() and (v.sum(1) > 0.1).all()))
def test_normalize_preserves_zero_pattern_and_cross_ratios(v):
    w = doubly_normalize(DaleMatrix(v), 1.0, iters=20).values
    assert ((w == 0) == (v == 0)).all()
    # w = diag(r) v diag(c), so w_ij w_kl == v_ij v_kl * (r_i r_k c_j c_l) == w_il w_kj * v_ij v_kl / (v_il v_kj)
    lhs = np.einsum("ij,kl->ijkl", w, w) * np.einsum("il,kj->ijkl", v, v)
    rhs = np.einsum("il,kj->ijkl", w, w) * np.einsum("ij,kl->ijkl", v, v)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-12)


def test_normalize_can_reorder_within_a_row():
    # column rescaling changes within-row order; only cross-ratios are invariant
    v = np.array([[1.0, 1.1], [0.1, 10.0]])
    w = doubly_normalize(DaleMatrix(v), 1.0, iters=500, tol=1e-12).values
    assert (v[0, 0] < v[0, 1]) and (w[0, 0] > w[0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(arrays(float, (4, 3), elements=st.floats(-2, 2)), min_size=1, max_size=6), st.integers(0, 2**16))
def test_dale_invariant_under_update_sequences(deltas, seed):
    m = init_kaiming((4, 3), seed=seed, pre_sign=INHIBITORY)
    for d in deltas:
        m.add_(d)
        assert (m.values >= 0).all()
    m = project_dale(m)
    assert (m.values >= 0).all()


@given(st.integers(0, 1000))
def test_sign_concordance_structural(seed):
    w = init_kaiming((5, 7), seed=seed, pre_sign=EXCITATORY)
    b = init_kaiming((7, 5), seed=seed + 1, pre_sign=EXCITATORY)
    both = (w.values.T != 0) & (b.values != 0)
    assert (np.sign(w.signed.T)[both] == np.sign(b.signed)[both]).all()


@settings(max_examples=50)
@given(arrays(float, (3, 4), elements=st.floats(0, 1e6)), st.sampled_from([EXCITATORY, INHIBITORY]), st.text(max_size=8))
def test_bytes_roundtrip(v, sign, name):
    m = DaleMatrix(v, sign, name)
    blob = m.to_bytes()
    back, end = DaleMatrix.from_buffer(blob)
    assert end == len(blob) and back.name == name and back.pre_sign == sign
    np.testing.assert_array_equal(back.values, v)


def test_bytes_truncated():
    blob = DaleMatrix(np.ones((3, 3)), name="w").to_bytes()
    with pytest.raises(ParseError) as exc:
        DaleMatrix.from_buffer(blob[:-5])
    assert exc.value.offset is not None
