import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavenet import core_math as cm
from wavenet.core_math import Tensor, parameter
from wavenet.errors import ShapeError
from wavenet.wave_repr import (
    ComplexRepr,
    combine,
    global_semantics,
    interfere,
    interference_intensity,
    modulate,
    phase_matrix,
    polar_oracle_combine,
    to_complex,
)

# Column L2 norms of default_rng(2024).standard_normal((8, 16)), summed in
# 50-digit arithmetic by mpmath and rounded to float64.
COLUMN_NORMS_2024 = [
    2.222879721894696, 3.875677996081629, 2.2157513514078597, 1.98520563867457,
    1.9633286835333303, 2.572586785147343, 3.3713780478964126, 1.2060832933305605,
    3.094568072445462, 1.688284079038537, 3.7692203397704978, 2.98497442523029,
    2.0923254270073524, 2.1320100861681177, 2.609805891602677, 2.0899371989560738,
]
ATAN2_4_3 = 0.9272952180016122  # mpmath atan2(4, 3) at 50 digits


def crepr(z):
    return ComplexRepr.from_numpy(np.asarray(z, dtype=complex))


def rand_pair(seed, n_max=16, d_max=32):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(1, n_max + 1)), int(rng.integers(1, d_max + 1))
    return rng.standard_normal((n, d)), rng.standard_normal((n, d))


# -- global semantics ----------------------------------------------------------


def test_global_semantics_pythagorean_column():
    G = global_semantics([[3.0, 0.0], [4.0, 0.0]], mask=[1, 1])
    np.testing.assert_array_equal(G.data, [5.0, 0.0])


def test_global_semantics_single_token():
    np.testing.assert_array_equal(global_semantics([[-2.0, 7.0]]).data, [2.0, 7.0])


def test_global_semantics_matches_high_precision_norms():
    E = np.random.default_rng(2024).standard_normal((8, 16))
    np.testing.assert_allclose(global_semantics(E).data, COLUMN_NORMS_2024, rtol=1e-14)


def test_global_semantics_dominates_entries():
    E = np.random.default_rng(3).standard_normal((6, 10))
    assert (global_semantics(E).data[None, :] >= np.abs(E)).all()


def test_global_semantics_ignores_padding():
    E = np.array([[3.0, 1.0], [4.0, 2.0], [100.0, -50.0]])
    G = global_semantics(E, mask=[1, 1, 0])
    np.testing.assert_allclose(G.data, [5.0, math.sqrt(5.0)], rtol=1e-15)


def test_global_semantics_batched():
    E = np.random.default_rng(5).standard_normal((3, 4, 6))
    G = global_semantics(E)
    assert G.shape == (3, 6)
    np.testing.assert_allclose(G.data[1], np.linalg.norm(E[1], axis=0), rtol=1e-14)


def test_all_padded_sequence_rejected():
    with pytest.raises(ValueError, match="non-padded"):
        global_semantics(np.ones((2, 3, 4)), mask=[[1, 1, 1], [0, 0, 0]])


def test_mask_shape_checked():
    with pytest.raises(ShapeError):
        global_semantics(np.ones((3, 4)), mask=[1, 1])


def test_vector_input_rejected():
    with pytest.raises(ShapeError):
        global_semantics(np.ones(4))


# -- phases --------------------------------------------------------------------


def test_phase_single_positive_token_is_zero():
    assert phase_matrix([[5.0]])[0, 0] == 0.0


def test_phase_single_negative_token_is_pi():
    assert phase_matrix([[-5.0]])[0, 0] == math.pi


def test_phase_pythagorean_column():
    alpha = phase_matrix([[3.0], [4.0]])
    assert alpha[0, 0] == pytest.approx(ATAN2_4_3, abs=1e-15)
    assert alpha[1, 0] == pytest.approx(math.pi / 2 - ATAN2_4_3, abs=1e-15)


def test_phase_zero_column_is_zero():
    np.testing.assert_array_equal(phase_matrix(np.zeros((3, 2))), np.zeros((3, 2)))


def test_phase_padding_is_zero():
    alpha = phase_matrix([[-1.0, 2.0], [9.0, -9.0]], mask=[1, 0])
    np.testing.assert_array_equal(alpha[1], [0.0, 0.0])
    np.testing.assert_array_equal(alpha[0], [math.pi, 0.0])


def test_phase_cosine_recovers_embedding():
    E = np.random.default_rng(11).standard_normal((7, 12))
    G = global_semantics(E).data
    np.testing.assert_allclose(np.cos(phase_matrix(E, G)) * G, E, atol=1e-9)


def test_negative_entries_land_in_upper_half():
    E = np.random.default_rng(12).standard_normal((5, 9))
    alpha = phase_matrix(E)
    assert (alpha[E < 0] > math.pi / 2).all()
    assert (alpha[E > 0] < math.pi / 2).all()


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(-1e3, 1e3, allow_nan=False)))
def test_phase_bound_property(E):
    alpha = phase_matrix(E)
    assert (alpha >= 0).all() and (alpha <= math.pi).all()


# -- complex representation ----------------------------------------------------


def test_to_complex_pythagorean_column():
    z = to_complex([[3.0], [4.0]]).to_numpy()
    np.testing.assert_array_equal(z[:, 0], [3 + 4j, 4 + 3j])


def test_to_complex_zero_column():
    z = to_complex(np.zeros((4, 3))).to_numpy()
    np.testing.assert_array_equal(z, np.zeros((4, 3)))


def test_to_complex_single_token_is_real():
    z = to_complex([[-2.0, 7.0, 0.5]]).to_numpy()
    np.testing.assert_array_equal(z, [[-2.0, 7.0, 0.5]])


def test_magnitude_is_shared_global_vector():
    for seed in range(20):
        E = np.random.default_rng(seed).standard_normal((int(seed % 9) + 1, 13))
        Z = to_complex(E)
        G = global_semantics(E).data
        assert np.abs(Z.magnitude() - G[None, :]).max() <= 1e-9


def test_real_part_is_embedding_exactly():
    E = np.random.default_rng(21).standard_normal((6, 8))
    np.testing.assert_array_equal(to_complex(E).re.data, E)


def test_imaginary_part_nonnegative():
    E = np.random.default_rng(22).standard_normal((2, 5, 8))
    assert (to_complex(E).im.data >= 0).all()


def test_explicit_global_vector_matches_default():
    E = np.random.default_rng(23).standard_normal((5, 7))
    a = to_complex(E).to_numpy()
    b = to_complex(E, global_semantics(E)).to_numpy()
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_explicit_global_vector_shape_checked():
    with pytest.raises(ShapeError):
        to_complex(np.ones((3, 4)), np.ones(5))


def test_padded_rows_are_zero():
    E = np.random.default_rng(24).standard_normal((2, 4, 3))
    mask = np.array([[1, 1, 0, 0], [1, 1, 1, 1]])
    Z = to_complex(E, mask=mask)
    assert not Z.to_numpy()[0, 2:].any()
    np.testing.assert_allclose(Z.to_numpy()[0, :2], to_complex(E[0, :2]).to_numpy(), atol=1e-15)


def test_complex_repr_shape_mismatch():
    with pytest.raises(ShapeError):
        ComplexRepr(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


# -- combinators ---------------------------------------------------------------


def test_interfere_adds():
    assert interfere(crepr([3 + 4j]), crepr([1 + 2j])).to_numpy()[0] == 4 + 6j


def test_interfere_zero_identity():
    z = np.array([[1.5 - 2j, 0.25 + 1j]])
    np.testing.assert_array_equal(interfere(crepr(z), crepr(np.zeros_like(z))).to_numpy(), z)


def test_modulate_one_identity():
    assert modulate(crepr([3 + 4j]), crepr([1 + 0j])).to_numpy()[0] == 3 + 4j


def test_modulate_i_squared():
    assert modulate(crepr([1j]), crepr([1j])).to_numpy()[0] == -1 + 0j


@pytest.mark.parametrize("fn", [interfere, modulate, interference_intensity])
def test_combinator_shape_mismatch(fn):
    with pytest.raises(ShapeError):
        fn(crepr(np.zeros((2, 3))), crepr(np.zeros((3, 3))))


def test_combine_dispatch():
    a, b = crepr([2 + 1j]), crepr([1 - 1j])
    assert combine(a, b, "interference").to_numpy()[0] == 3 + 0j
    assert combine(a, b, "modulation").to_numpy()[0] == 3 - 1j
    with pytest.raises(ValueError, match="combine mode"):
        combine(a, b, "superposition")


def test_modulation_magnitudes_multiply_and_phases_add():
    E, E2 = rand_pair(31)
    M = modulate(to_complex(E), to_complex(E2))
    G, G2 = global_semantics(E).data, global_semantics(E2).data
    np.testing.assert_allclose(M.magnitude(), np.broadcast_to(G * G2, E.shape), atol=1e-9)
    z = M.to_numpy()
    expected = np.exp(1j * (phase_matrix(E) + phase_matrix(E2)))
    np.testing.assert_allclose(z, G * G2 * expected, atol=1e-9)


@pytest.mark.parametrize("mode", ["interference", "modulation"])
def test_closed_form_matches_polar_oracle(mode):
    worst = 0.0
    for seed in range(200):
        E, E2 = rand_pair(seed)
        closed = combine(to_complex(E), to_complex(E2), mode).to_numpy()
        worst = max(worst, np.abs(closed - polar_oracle_combine(E, E2, mode).to_numpy()).max())
    assert worst <= 1e-9


@pytest.mark.parametrize("mode", ["interference", "modulation"])
def test_closed_form_matches_polar_oracle_with_padding(mode):
    rng = np.random.default_rng(40)
    E, E2 = rng.standard_normal((2, 3, 6, 5))
    mask = (rng.random((3, 6)) < 0.6).astype(float)
    mask[:, 0] = 1.0
    closed = combine(to_complex(E, mask=mask), to_complex(E2, mask=mask), mode).to_numpy()
    oracle = polar_oracle_combine(E, E2, mode, mask=mask).to_numpy()
    assert np.abs(closed - oracle).max() <= 1e-9
    assert not oracle[mask == 0].any()


def test_polar_oracle_against_scalar_complex_arithmetic():
    E = np.array([[3.0, -1.0, 0.5], [4.0, 2.0, -2.0], [0.0, -2.0, 1.0]])
    E2 = np.array([[1.0, 1.0, -1.0], [-2.0, 0.5, 3.0], [2.0, 1.0, 0.0]])
    inter = polar_oracle_combine(E, E2, "interference").to_numpy()
    mod = polar_oracle_combine(E, E2, "modulation").to_numpy()
    for j, k in [(0, 0), (1, 1), (2, 2)]:
        g = math.sqrt(sum(E[i, k] ** 2 for i in range(3)))
        g2 = math.sqrt(sum(E2[i, k] ** 2 for i in range(3)))
        z = cmath.rect(g, math.acos(E[j, k] / g))
        z2 = cmath.rect(g2, math.acos(E2[j, k] / g2))
        assert abs(inter[j, k] - (z + z2)) < 1e-12
        assert abs(mod[j, k] - z * z2) < 1e-12


def test_polar_oracle_doubling():
    E = np.random.default_rng(41).standard_normal((5, 6))
    np.testing.assert_allclose(
        polar_oracle_combine(E, E, "interference").to_numpy(), 2 * to_complex(E).to_numpy(), atol=1e-12
    )


def test_polar_oracle_single_token_modulation_is_product():
    E, E2 = np.array([[2.0, -3.0, 0.5]]), np.array([[-1.5, -2.0, 4.0]])
    z = polar_oracle_combine(E, E2, "modulation").to_numpy()
    np.testing.assert_allclose(z.real, E * E2, atol=1e-12)
    np.testing.assert_allclose(z.imag, 0.0, atol=1e-12)


def test_polar_oracle_rejects_unknown_mode():
    with pytest.raises(ValueError):
        polar_oracle_combine(np.ones((2, 2)), np.ones((2, 2)), "beat")


# -- intensity -----------------------------------------------------------------


def test_intensity_equal_phases():
    z = np.array([[3 + 4j, -1 + 0.5j]])
    mine, other, cross = interference_intensity(crepr(z), crepr(2.5 * z))
    np.testing.assert_allclose(cross, 2 * np.abs(z) * np.abs(2.5 * z), rtol=1e-15)
    assert mine.shape == other.shape == z.shape


def test_intensity_opposite_phases():
    z = np.array([[3 + 4j, -1 + 0.5j]])
    _, _, cross = interference_intensity(crepr(z), crepr(-0.5 * z))
    np.testing.assert_allclose(cross, -2 * np.abs(z) * np.abs(0.5 * z), rtol=1e-15)


def test_intensity_cross_term_is_phase_difference_cosine():
    E, E2 = rand_pair(50)
    Z, Z2 = to_complex(E), to_complex(E2)
    _, _, cross = interference_intensity(Z, Z2)
    G, G2 = global_semantics(E).data, global_semantics(E2).data
    expected = 2 * G * G2 * np.cos(phase_matrix(E) - phase_matrix(E2))
    assert np.abs(cross - expected).max() <= 1e-9


def test_intensity_decomposition_on_random_pair():
    E, E2 = rand_pair(51)
    Z, Z2 = to_complex(E), to_complex(E2)
    mine, other, cross = interference_intensity(Z, Z2)
    direct = np.abs(Z.to_numpy() + Z2.to_numpy()) ** 2
    assert np.abs(direct - (mine + other + cross)).max() <= 1e-9


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite, finite, finite), min_size=1, max_size=8))
def test_intensity_identity_holds_for_any_pair(entries):
    a = np.array([complex(x, y) for x, y, _, _ in entries])
    b = np.array([complex(u, v) for _, _, u, v in entries])
    mine, other, cross = interference_intensity(crepr(a), crepr(b))
    direct = np.abs(a + b) ** 2
    scale = max(1.0, float(np.max(mine + other)))
    assert np.abs(direct - (mine + other + cross)).max() <= 1e-12 * scale


# -- differentiability ---------------------------------------------------------


def _away_from_kink(E, margin=1e-3):
    G = np.linalg.norm(E, axis=0)
    return (G[None, :] - np.abs(E)).min() >= margin


@pytest.mark.parametrize("mode", ["interference", "modulation"])
def test_combinator_gradients_match_finite_differences(mode):
    checked, seed = 0, 0
    while checked < 10:
        rng = np.random.default_rng([mode == "modulation", seed])
        seed += 1
        # n=2 makes the excluded root |other token|, whose plain sum can
        # cancel to an exactly zero derivative; see the weighted test below
        n, d = int(rng.integers(3, 7)), int(rng.integers(1, 6))
        A, B = rng.standard_normal((n, d)), rng.standard_normal((n, d))
        if not (_away_from_kink(A) and _away_from_kink(B)):
            continue
        E, E2 = parameter(A), parameter(B)

        def loss():
            Z = combine(to_complex(E), to_complex(E2), mode)
            return cm.sum(Z.re) + cm.sum(Z.im)

        report = cm.grad_check(loss, {"E": E, "E2": E2})
        assert report.worst < 1e-4, (seed - 1, report.max_rel_err)
        checked += 1


@pytest.mark.parametrize("mode", ["interference", "modulation"])
def test_two_token_gradients_with_weighted_readout(mode):
    rng = np.random.default_rng(61)
    E, E2 = parameter(rng.standard_normal((2, 4))), parameter(rng.standard_normal((2, 4)))
    c1, c2 = rng.standard_normal((2, 2, 4))

    def loss():
        Z = combine(to_complex(E), to_complex(E2), mode)
        return cm.sum(Z.re * c1) + cm.sum(Z.im * c2)

    assert cm.grad_check(loss, {"E": E, "E2": E2}).worst < 1e-4


def test_global_semantics_gradient():
    E = parameter(np.random.default_rng(60).standard_normal((4, 5)))
    report = cm.grad_check(lambda: cm.sum(global_semantics(E)), {"E": E})
    assert report.worst < 1e-6


def test_single_token_gradient_is_finite():
    # every entry sits on the kink; the derivative guard keeps it finite
    E = parameter([[1.0, -2.0, 0.0]])
    Z = to_complex(E)
    (cm.sum(Z.re) + cm.sum(Z.im)).backward()
    assert np.isfinite(E.grad).all()
