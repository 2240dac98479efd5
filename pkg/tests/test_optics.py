import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flatcam_accel import oracle
from flatcam_accel.optics import (
    MaskPair, ParameterError, ShapeError, encode_first_layer, generate_mask, mls_autocorrelation,
    objective_value, recon_as_layers, reconstruct, run_recon_layers, simulate_capture,
)
from flatcam_accel.workload import layer_macs


def _random_case(rng, n, m=None):
    m = m or n
    masks = MaskPair(rng.normal(size=(m, n)), rng.normal(size=(m, n)))
    x = rng.random((n, n))
    return masks, x


def test_identity_capture():
    masks = MaskPair(np.eye(2), np.eye(2))
    y = simulate_capture(np.eye(2), masks).y
    assert np.array_equal(y, np.eye(2))


def test_scaled_identity_capture():
    masks = MaskPair(2 * np.eye(2), 2 * np.eye(2))
    assert np.array_equal(simulate_capture(np.eye(2), masks).y, 4 * np.eye(2))


def test_capture_is_linear():
    rng = np.random.default_rng(3)
    masks, x1 = _random_case(rng, 3)
    x2 = rng.random((3, 3))
    a, b = 0.7, -1.3
    lhs = simulate_capture(a * x1 + b * x2, masks).y
    rhs = a * simulate_capture(x1, masks).y + b * simulate_capture(x2, masks).y
    assert np.max(np.abs(lhs - rhs)) <= 1e-12


def test_capture_noise_is_seeded():
    masks = MaskPair(np.eye(4), np.eye(4))
    a = simulate_capture(np.zeros((4, 4)), masks, 0.1, seed=5).y
    b = simulate_capture(np.zeros((4, 4)), masks, 0.1, seed=5).y
    c = simulate_capture(np.zeros((4, 4)), masks, 0.1, seed=6).y
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_capture_shape_and_sigma_errors():
    masks = MaskPair(np.eye(3), np.eye(3))
    with pytest.raises(ShapeError):
        simulate_capture(np.zeros((2, 3)), masks)
    with pytest.raises(ParameterError):
        simulate_capture(np.zeros((3, 3)), masks, noise_sigma=-1)


def test_binary_mask_rejects_fractions():
    with pytest.raises(ParameterError):
        MaskPair(np.full((2, 2), 0.5), np.eye(2), "binary")


def test_reconstruct_identity_exact():
    masks = MaskPair(np.eye(3), np.eye(3))
    x = np.arange(9.0).reshape(3, 3) / 9
    assert np.max(np.abs(reconstruct(x, masks, 1e-14) - x)) <= 1e-10


def test_reconstruct_closed_form_value():
    masks = MaskPair(2 * np.eye(2), 2 * np.eye(2))
    assert np.allclose(reconstruct(4 * np.eye(2), masks, 16.0), 0.5 * np.eye(2), atol=1e-15)


def test_reconstruct_rejects_nonpositive_epsilon():
    masks = MaskPair(np.eye(2), np.eye(2))
    with pytest.raises(ParameterError):
        reconstruct(np.eye(2), masks, 0.0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), extra=st.integers(0, 2), seed=st.integers(0, 10_000),
       log_eps=st.floats(-6, 1))
def test_reconstruct_matches_kronecker_solve(n, extra, seed, log_eps):
    rng = np.random.default_rng(seed)
    masks, x = _random_case(rng, n, n + extra)
    y = simulate_capture(x, masks, 0.01, seed).y
    eps = 10.0**log_eps
    ref = oracle.tikhonov_bruteforce(y, masks.phi_left, masks.phi_right, eps)
    assert np.max(np.abs(reconstruct(y, masks, eps) - ref)) <= 1e-8


def test_objective_zero_at_truth_and_norm_at_zero():
    rng = np.random.default_rng(1)
    masks, x = _random_case(rng, 3)
    y = simulate_capture(x, masks).y
    assert objective_value(x, y, masks, 0.0) == pytest.approx(0.0, abs=1e-20)
    assert objective_value(np.zeros((3, 3)), y, masks, 0.5) == float(np.sum(y * y))


def test_objective_matches_vectorized_oracle():
    rng = np.random.default_rng(2)
    masks, x = _random_case(rng, 3)
    y = rng.normal(size=(3, 3))
    got = objective_value(x, y, masks, 0.3)
    assert got == pytest.approx(oracle.objective_bruteforce(x, y, masks.phi_left, masks.phi_right, 0.3), rel=1e-12)


def test_minimizer_has_vanishing_gradient():
    rng = np.random.default_rng(4)
    for _ in range(5):
        masks, x = _random_case(rng, 4)
        y = simulate_capture(x, masks, 0.05, 1).y
        xh = reconstruct(y, masks, 0.1)
        g = oracle.finite_diff_grad(lambda z: objective_value(z, y, masks, 0.1), xh, 1e-5)
        scale = max(1.0, objective_value(xh, y, masks, 0.1))
        assert np.max(np.abs(g)) / scale <= 1e-4


def test_regularization_shrinks_solution():
    rng = np.random.default_rng(5)
    masks, x = _random_case(rng, 5)
    y = simulate_capture(x, masks).y
    norms = [np.linalg.norm(reconstruct(y, masks, e)) for e in (1e-4, 1e-2, 1, 100)]
    assert all(a >= b for a, b in zip(norms, norms[1:]))


def test_bernoulli_mask_is_binary_and_seeded():
    a = generate_mask("bernoulli", (8, 6), seed=9)
    b = generate_mask("bernoulli", (8, 6), seed=9)
    assert set(np.unique(a.phi_left)) <= {0.0, 1.0}
    assert np.array_equal(a.phi_left, b.phi_left) and a.phi_left.shape == (8, 6)
    assert all(np.isfinite(a.condition_numbers()))


def test_mls_rows_have_two_valued_autocorrelation():
    masks = generate_mask("mls", (7, 7), seed=0)
    # with m + n = 14 the sequence has length 15; a length-7 sequence check:
    from scipy.signal import max_len_seq
    seq = max_len_seq(3)[0]
    ac = mls_autocorrelation(seq)
    assert ac[0] == 7 and np.all(ac[1:] == -1)
    row = masks.phi_left[0]
    assert set(np.unique(row)) <= {0.0, 1.0}
    # circulant structure: each row is the previous one shifted right
    assert np.array_equal(masks.phi_left[1, 1:], masks.phi_left[0, :-1])


def test_mls_full_period_mask_round_trip():
    masks = generate_mask("mls", (15, 15), seed=2)
    assert max(masks.condition_numbers()) < 1e3
    x = np.random.default_rng(0).random((15, 15))
    xh = reconstruct(simulate_capture(x, masks).y, masks, 1e-12)
    assert np.max(np.abs(xh - x)) < 1e-6


def test_square_nonsingular_round_trip():
    rng = np.random.default_rng(7)
    masks = MaskPair(np.eye(6) + 0.3 * rng.random((6, 6)), np.eye(6) + 0.3 * rng.random((6, 6)))
    x = rng.random((6, 6))
    xh = reconstruct(simulate_capture(x, masks).y, masks, 1e-12)
    assert np.max(np.abs(xh - x)) < 1e-6


def test_encode_separable_filter_exact():
    base = generate_mask("bernoulli", (10, 8), seed=1)
    f = np.outer([1, 2, 1], [1, 0, -1])
    (enc,) = encode_first_layer(base, f, 1)
    assert enc.residual_energy == pytest.approx(0.0, abs=1e-20)


def test_encode_delta_kernel_is_identity():
    base = generate_mask("bernoulli", (10, 8), seed=1)
    delta = np.zeros((3, 3))
    delta[1, 1] = 1
    (enc,) = encode_first_layer(base, delta)
    assert np.allclose(enc.masks.phi_left, base.phi_left, atol=1e-12)
    assert np.allclose(enc.masks.phi_right, base.phi_right, atol=1e-12)


def test_encode_residual_is_discarded_energy():
    f = np.random.default_rng(8).normal(size=(3, 3))
    s = np.linalg.svd(f, compute_uv=False)
    (enc,) = encode_first_layer(generate_mask("bernoulli", (6, 6)), f)
    assert enc.residual_energy == pytest.approx(s[1] ** 2 + s[2] ** 2, rel=1e-12)


def test_encoded_capture_equals_capture_of_filtered_scene():
    rng = np.random.default_rng(11)
    base = MaskPair(rng.normal(size=(9, 7)), rng.normal(size=(9, 7)))
    f = np.outer(rng.normal(size=3), rng.normal(size=3))
    (enc,) = encode_first_layer(base, f)
    x = rng.random((7, 7))
    # "same" correlation of the scene with f, written out directly
    xp = np.pad(x, 1)
    filt = np.array([[np.sum(f * xp[i:i + 3, j:j + 3]) for j in range(7)] for i in range(7)])
    assert np.allclose(simulate_capture(x, enc.masks).y, simulate_capture(filt, base).y, atol=1e-10)


def test_encode_rejects_empty_bank():
    with pytest.raises(ParameterError):
        encode_first_layer(generate_mask("bernoulli", (4, 4)), np.zeros((0, 3, 3)))


def test_recon_layer_mac_counts():
    assert sum(layer_macs(l) for l in recon_as_layers(((2, 2), (2, 2)))) == 36
    layers = recon_as_layers(((512, 512), (512, 512)))
    assert sum(layer_macs(l) for l in layers if l.kind == "matmul") == 4 * 512**3


def test_recon_layers_execute_like_reconstruct():
    rng = np.random.default_rng(12)
    masks = MaskPair(rng.normal(size=(7, 5)), rng.normal(size=(8, 6)))
    y = rng.normal(size=(7, 8))
    assert np.max(np.abs(run_recon_layers(y, masks, 0.01) - reconstruct(y, masks, 0.01))) <= 1e-8
