import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_loglik, random_stochastic
from rpmhmm.errors import AlphabetMismatchError, InvalidInputError, ModelFormatError
from rpmhmm.hmm import (HmmModel, TrainConfig, deserialize_model, floored_normalize, forward_log_likelihood,
                        sequence_log_likelihoods, serialize_model, train_baum_welch)


def make_model(rng, n, m):
    return HmmModel(random_stochastic(rng, n, n), random_stochastic(rng, n, m), random_stochastic(rng, 1, n)[0])


@st.composite
def model_and_sequence(draw):
    n = draw(st.integers(1, 4))
    m = draw(st.integers(1, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    seq = draw(st.lists(st.integers(0, m - 1), min_size=1, max_size=6))
    return make_model(np.random.default_rng(seed), n, m), seq


def test_single_state_likelihood_is_product_of_emissions():
    model = HmmModel([[1.0]], [[0.5, 0.5]], [1.0])
    assert forward_log_likelihood(model, [0, 0, 0]) == pytest.approx(math.log(0.125), abs=1e-12)


def test_two_state_matches_path_enumeration():
    rng = np.random.default_rng(3)
    model = make_model(rng, 2, 3)
    seq = [0, 2, 1, 1]
    expected = brute_force_loglik(model.transition, model.emission, model.initial, seq)
    assert forward_log_likelihood(model, seq) == pytest.approx(expected, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(model_and_sequence())
def test_forward_equals_brute_force(case):
    model, seq = case
    expected = brute_force_loglik(model.transition, model.emission, model.initial, seq)
    got = forward_log_likelihood(model, seq)
    assert got <= 1e-12
    assert abs(got - expected) <= 1e-9


def test_long_sequence_does_not_underflow():
    rng = np.random.default_rng(0)
    model = make_model(rng, 3, 4)
    seq = rng.integers(0, 4, size=2000).tolist()
    ll = forward_log_likelihood(model, seq)
    assert np.isfinite(ll) and ll < -1000


def test_batch_scoring_matches_single():
    rng = np.random.default_rng(1)
    model = make_model(rng, 3, 5)
    batch = rng.integers(0, 5, size=(7, 6))
    single = [forward_log_likelihood(model, row.tolist()) for row in batch]
    assert np.allclose(sequence_log_likelihoods(model, batch), single, atol=1e-12)


def test_out_of_range_symbol_is_alphabet_mismatch():
    model = make_model(np.random.default_rng(0), 2, 3)
    with pytest.raises(AlphabetMismatchError):
        forward_log_likelihood(model, [0, 3])
    with pytest.raises(AlphabetMismatchError):
        forward_log_likelihood(model, [-1])


def test_empty_sequence_rejected():
    model = make_model(np.random.default_rng(0), 2, 3)
    with pytest.raises(InvalidInputError):
        forward_log_likelihood(model, [])


@pytest.mark.parametrize("A,B,pi", [
    ([[0.5, 0.6], [0.5, 0.5]], [[1.0], [1.0]], [0.5, 0.5]),
    ([[1.0, 0.0], [0.0, 1.0]], [[0.7, 0.2], [0.5, 0.5]], [0.5, 0.5]),
    ([[1.0, 0.0], [0.0, 1.0]], [[1.0], [1.0]], [0.6, 0.5]),
    ([[1.2, -0.2], [0.0, 1.0]], [[1.0], [1.0]], [0.5, 0.5]),
])
def test_model_invariants_enforced(A, B, pi):
    with pytest.raises(InvalidInputError):
        HmmModel(A, B, pi)


def test_model_is_immutable():
    model = HmmModel([[1.0]], [[1.0]], [1.0])
    with pytest.raises(AttributeError):
        model.initial = np.array([1.0])
    with pytest.raises(ValueError):
        model.transition[0, 0] = 0.5


def test_alternating_structure_is_learned():
    seqs = [[0, 1] * 5] * 50
    result = train_baum_welch(seqs, 2, 2, TrainConfig(rng_seed=4))
    assert forward_log_likelihood(result.model, [0, 1, 0, 1]) > forward_log_likelihood(result.model, [0, 0, 0, 0])


def _random_training_set(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 7))
    count = int(rng.integers(5, 40))
    return [rng.integers(0, m, size=int(rng.integers(1, 9))).tolist() for _ in range(count)], m


@pytest.mark.parametrize("seed", range(10))
def test_em_trace_monotone_and_models_stochastic(seed):
    seqs, m = _random_training_set(seed)
    seen = []
    cfg = TrainConfig(max_iterations=60, convergence_tol=1e-10, rng_seed=seed)
    result = train_baum_welch(seqs, 3, m, cfg, callback=lambda i, model, ll: seen.append(model))
    assert np.all(np.diff(result.loglik_trace) >= -1e-8)
    for model in seen:
        assert np.abs(model.transition.sum(axis=1) - 1).max() <= 1e-9
        assert np.abs(model.emission.sum(axis=1) - 1).max() <= 1e-9
        assert abs(model.initial.sum() - 1) <= 1e-9


def test_trace_last_entry_belongs_to_returned_model():
    seqs, m = _random_training_set(99)
    result = train_baum_welch(seqs, 3, m, TrainConfig(max_iterations=7, rng_seed=1))
    total = sum(forward_log_likelihood(result.model, s) for s in seqs)
    assert result.loglik_trace[-1] == pytest.approx(total, abs=1e-8)
    assert not result.converged and result.n_iterations == 7


def test_convergence_reported():
    seqs, m = _random_training_set(5)
    result = train_baum_welch(seqs, 2, m, TrainConfig(max_iterations=500, convergence_tol=1e-3))
    assert result.converged
    assert result.loglik_trace[-1] - result.loglik_trace[-2] < 1e-3


def test_smoothing_floor_holds_after_training():
    seqs = [[0, 1, 2]] * 20  # symbols 3..5 never seen
    floor = 1e-4
    result = train_baum_welch(seqs, 3, 6, TrainConfig(smoothing_floor=floor, rng_seed=2))
    model = result.model
    for arr in (model.transition, model.emission, model.initial):
        assert arr.min() >= floor - 1e-15
    assert np.isfinite(forward_log_likelihood(model, [5, 5, 5]))


def test_training_is_deterministic():
    seqs, m = _random_training_set(8)
    a = train_baum_welch(seqs, 4, m, TrainConfig(rng_seed=17)).model
    b = train_baum_welch(seqs, 4, m, TrainConfig(rng_seed=17)).model
    assert np.array_equal(a.transition, b.transition)
    assert np.array_equal(a.emission, b.emission)
    assert np.array_equal(a.initial, b.initial)


def test_duplicate_collapsing_matches_explicit_weights():
    # ten copies of one sequence must train exactly like ten separate (equal) entries
    base = [[0, 1, 1, 2], [2, 2, 0, 1]]
    once = train_baum_welch(base * 10, 2, 3, TrainConfig(rng_seed=3, max_iterations=20))
    interleaved = train_baum_welch([s for pair in zip(base * 5, base * 5) for s in pair], 2, 3,
                                   TrainConfig(rng_seed=3, max_iterations=20))
    assert np.allclose(once.model.emission, interleaved.model.emission, atol=1e-12)


@pytest.mark.parametrize("kwargs", [dict(max_iterations=0), dict(convergence_tol=0.0), dict(smoothing_floor=-1.0)])
def test_train_config_validation(kwargs):
    with pytest.raises(InvalidInputError):
        TrainConfig(**kwargs)


def test_train_rejects_bad_inputs():
    with pytest.raises(InvalidInputError):
        train_baum_welch([], 2, 3)
    with pytest.raises(InvalidInputError):
        train_baum_welch([[0, 1]], 0, 3)
    with pytest.raises(AlphabetMismatchError):
        train_baum_welch([[0, 3]], 2, 3)
    with pytest.raises(InvalidInputError):
        train_baum_welch([[0, 1]], 2, 3, TrainConfig(smoothing_floor=0.5))


def test_floored_normalize_is_constrained_maximizer():
    counts = np.array([10.0, 0.0, 3.0, 1e-9])
    floor = 0.01
    p = floored_normalize(counts, floor)[0]
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert p.min() >= floor
    obj = lambda q: float(np.sum(counts * np.log(q)))
    rng = np.random.default_rng(0)
    for _ in range(500):
        q = floored_normalize(rng.random(4) * counts + rng.random(4), floor)[0]
        assert obj(q) <= obj(p) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6))
def test_serialization_round_trip(seed, n, m):
    model = make_model(np.random.default_rng(seed), n, m)
    assert deserialize_model(serialize_model(model)) == model


def _doc(model):
    return json.loads(serialize_model(model))


def test_document_fields():
    model = make_model(np.random.default_rng(0), 2, 16)
    doc = _doc(model)
    assert doc["n_states"] == 2 and doc["n_symbols"] == 16
    assert doc["alphabet_tag"] == "rpm16-v1"
    assert {"pi", "A", "B"} <= doc.keys()


def test_negative_probability_rejected():
    doc = _doc(make_model(np.random.default_rng(0), 2, 3))
    doc["B"][0][0] = -doc["B"][0][0]
    with pytest.raises(ModelFormatError):
        deserialize_model(json.dumps(doc), None)


def test_alphabet_tag_mismatch_rejected():
    model = make_model(np.random.default_rng(0), 2, 16)
    text = serialize_model(model, alphabet_tag="other-v9")
    with pytest.raises(AlphabetMismatchError):
        deserialize_model(text)


def test_row_sum_tolerance():
    doc = _doc(make_model(np.random.default_rng(0), 2, 3))
    doc["A"][0][0] += 5e-7  # within 1e-6: renormalised
    model = deserialize_model(json.dumps(doc), None)
    assert abs(model.transition[0].sum() - 1) <= 1e-12
    doc["A"][0][0] += 1e-5
    with pytest.raises(ModelFormatError):
        deserialize_model(json.dumps(doc), None)


@pytest.mark.parametrize("text", ["", "not json", "[]", '{"format": "rpmhmm-model"}'])
def test_malformed_documents_rejected(text):
    with pytest.raises(ModelFormatError):
        deserialize_model(text)
