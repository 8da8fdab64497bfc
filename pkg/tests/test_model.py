import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtms.errors import DimensionMismatch, LengthMismatch, OpenBoundaryViolation, ShapeMismatch
from gtms.model import (Boundary, GtmsWeights, NetworkShape, ParamLayout, TiedWeights,
                        add_rbm_couplings, deep_table, tie, untie, validate, weights_from_json,
                        weights_to_json)


def test_correctly_sized_weights_validate():
    shape = NetworkShape(3, deep_per_block=1, hidden_per_block=2, n_blocks=3)
    validate(shape, GtmsWeights.zeros(shape))


def test_wrong_block_count_in_w_is_rejected():
    shape = NetworkShape(3, 1, 2, n_blocks=3)
    bad = GtmsWeights.zeros(shape).replace(w=np.zeros((3, 4, 2)))
    with pytest.raises(DimensionMismatch) as err:
        validate(shape, bad)
    assert err.value.field == "w"


def test_open_boundary_rejects_wrapping_w_hat():
    shape = NetworkShape(3, 1, 2, boundary=Boundary.OPEN)
    w_hat = np.zeros((3, 2, 1), complex)
    w_hat[-1, 0, 0] = 0.3
    with pytest.raises(OpenBoundaryViolation):
        validate(shape, GtmsWeights.zeros(shape).replace(w_hat=w_hat))


def test_open_random_weights_have_no_wrapping_coupling(rng):
    shape = NetworkShape(4, 2, 3, boundary="open")
    weights = GtmsWeights.random(shape, rng)
    validate(shape, weights)
    assert not np.any(weights.w_hat[-1])


def test_n_blocks_defaults_to_n_sites():
    assert NetworkShape(5).n_blocks == 5
    assert NetworkShape(5, n_blocks=2).n_blocks == 2


def test_deep_table_bit_order():
    np.testing.assert_array_equal(deep_table(2), [[1, 1], [-1, 1], [1, -1], [-1, -1]])


def test_tying_with_only_on_site_coupling_is_an_mps(rng):
    shape = NetworkShape(5, 1, 2)
    tied = TiedWeights.random(shape, rng, rbm_range=0)
    weights = tie(tied, shape)
    assert weights.is_mps_only()
    for i in range(5):
        np.testing.assert_array_equal(weights.w[i, i], tied.w_by_distance[0])
        np.testing.assert_array_equal(weights.w_tilde[i], tied.w_tilde)


def test_tying_wraps_distance_around_the_ring():
    shape = NetworkShape(4, 1, 2)
    w = np.zeros((4, 2), complex)
    w[1] = [0.5 + 0.1j, -0.2j]
    weights = tie(TiedWeights.zeros(shape).replace(w_by_distance=w), shape)
    # last site couples to the first block at distance one
    np.testing.assert_array_equal(weights.w[3, 0], w[1])
    np.testing.assert_array_equal(weights.w[0, 1], w[1])
    assert not np.any(weights.w[1, 0])


def test_tie_untie_round_trip(rng):
    shape = NetworkShape(6, 2, 3)
    tied = TiedWeights.random(shape, rng, rbm_range=2)
    assert untie(tie(tied, shape), shape, rbm_range=2) == tied


def test_untie_rejects_non_invariant_weights(rng):
    shape = NetworkShape(4, 1, 2)
    with pytest.raises(ValueError):
        untie(GtmsWeights.random(shape, rng), shape)


@pytest.mark.parametrize("shape", [NetworkShape(4, 1, 2, n_blocks=2),
                                   NetworkShape(4, 1, 2, boundary="open")])
def test_tying_needs_one_periodic_block_per_site(shape):
    with pytest.raises(ShapeMismatch):
        tie(TiedWeights.zeros(NetworkShape(4, 1, 2)), shape)


def test_add_rbm_couplings_keeps_existing_weights(rng):
    shape = NetworkShape(8, 1, 2)
    mps = TiedWeights.random(shape, rng, rbm_range=0)
    full = add_rbm_couplings(mps, rng)
    assert full.rbm_range == 7
    np.testing.assert_array_equal(full.w_by_distance[0], mps.w_by_distance[0])
    np.testing.assert_array_equal(full.w_tilde, mps.w_tilde)
    assert np.all(full.w_by_distance[1:] != 0)


def test_tied_weights_beyond_range_are_rejected():
    w = np.zeros((4, 1), complex)
    w[3] = 1
    with pytest.raises(ValueError):
        TiedWeights(0, np.zeros(1), np.zeros(1), w, np.zeros((1, 1)), np.zeros((1, 1)), 2)


def test_tied_parameter_counts():
    shape = NetworkShape(60, 2, 4)
    assert ParamLayout(shape, tied=True).n_complex == 263
    assert ParamLayout(shape, tied=True, rbm_range=0).n_complex == 1 + 4 + 2 + 4 + 8 + 8


def test_untied_layout_counts_every_weight():
    shape = NetworkShape(5, 2, 3, n_blocks=4)
    assert ParamLayout(shape).n_complex == 5 + 4 * 3 + 4 * 2 + 5 * 4 * 3 + 2 * 4 * 3 * 2


def test_open_layout_drops_the_wrapping_block():
    periodic = ParamLayout(NetworkShape(5, 2, 3))
    open_ = ParamLayout(NetworkShape(5, 2, 3, boundary="open"))
    assert periodic.n_complex - open_.n_complex == 3 * 2


def test_zero_weights_flatten_to_zero(rng):
    shape = NetworkShape(4, 1, 2)
    layout = ParamLayout(shape)
    x = layout.flatten(GtmsWeights.zeros(shape))
    assert x.shape == (layout.size,)
    assert not np.any(x)


def test_flatten_interleaves_real_and_imaginary_parts():
    shape = NetworkShape(2, 1, 1)
    weights = GtmsWeights.zeros(shape).replace(c=[1 + 2j, 3 - 4j])
    np.testing.assert_array_equal(ParamLayout(shape).flatten(weights)[:4], [1, 2, 3, -4])


def test_unflatten_length_is_checked():
    layout = ParamLayout(NetworkShape(4, 1, 2))
    with pytest.raises(LengthMismatch):
        layout.unflatten(np.zeros(layout.size + 1))


def test_rbm_range_needs_a_tied_layout():
    with pytest.raises(ValueError):
        ParamLayout(NetworkShape(4, 1, 2), tied=False, rbm_range=1)


@settings(max_examples=30, deadline=None)
@given(n_sites=st.integers(2, 6), n=st.integers(1, 2), m=st.integers(1, 3),
       tied=st.booleans(), open_=st.booleans(), seed=st.integers(0, 2**32 - 1))
def test_flatten_unflatten_round_trip(n_sites, n, m, tied, open_, seed):
    rng = np.random.default_rng(seed)
    if tied:
        shape = NetworkShape(n_sites, n, m)
        weights = TiedWeights.random(shape, rng)
    else:
        shape = NetworkShape(n_sites, n, m, boundary="open" if open_ else "periodic")
        weights = GtmsWeights.random(shape, rng)
    layout = ParamLayout(shape, tied=tied)
    x = layout.flatten(weights)
    assert layout.unflatten(x) == weights
    np.testing.assert_array_equal(layout.flatten(layout.unflatten(x)), x)


def test_json_round_trip(rng):
    shape = NetworkShape(4, 2, 3, n_blocks=3, boundary="open")
    weights = GtmsWeights.random(shape, rng)
    doc = json.loads(json.dumps(weights_to_json(shape, weights)))
    shape2, weights2 = weights_from_json(doc)
    assert shape2 == shape
    assert weights2 == weights


def test_json_rejects_unknown_fields(rng):
    shape = NetworkShape(2, 1, 1)
    doc = weights_to_json(shape, GtmsWeights.zeros(shape))
    doc["weights"]["extra"] = [[0, 0]]
    with pytest.raises(ValueError):
        weights_from_json(doc)


def test_mps_and_rbm_limits(rng):
    shape = NetworkShape(4, 1, 2)
    weights = GtmsWeights.random(shape, rng)
    assert not weights.is_mps_only()
    assert weights.mps_only().is_mps_only()
    assert weights.rbm_only().is_rbm_only()
    np.testing.assert_array_equal(np.diagonal(weights.mps_only().w, axis1=0, axis2=1),
                                  np.diagonal(weights.w, axis1=0, axis2=1))
