import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from vta.errors import DimensionError, EmptySequenceError, ParamError, ParseError
from vta.seqcore import (
    EmbeddingSequence,
    Hyperparams,
    augment_marginals,
    cost_matrix,
    read_embedding,
    read_labels,
    uniform_marginals,
    write_embedding,
    write_labels,
)

finite = st.floats(-50, 50, allow_nan=False)


def test_cost_matrix_examples():
    assert cost_matrix([[0, 0]], [[0, 0]]).tolist() == [[0.0]]
    assert cost_matrix([[0, 0]], [[3, 4]]).tolist() == [[5.0]]
    np.testing.assert_allclose(cost_matrix([[1, 0], [0, 1]], [[1, 0]]), [[0.0], [1.41421356]], atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 4), st.data())
def test_cost_matrix_matches_loops(n, m, d, data):
    x = data.draw(arrays(float, (n, d), elements=finite))
    y = data.draw(arrays(float, (m, d), elements=finite))
    np.testing.assert_allclose(cost_matrix(x, y), oracles.pairwise(x.tolist(), y.tolist()), rtol=1e-12, atol=1e-12)


def test_cost_matrix_errors():
    with pytest.raises(DimensionError):
        cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)))
    with pytest.raises(EmptySequenceError):
        cost_matrix(np.zeros((0, 3)), np.zeros((2, 3)))


def test_uniform_marginals():
    assert uniform_marginals(1).tolist() == [1.0]
    assert uniform_marginals(4).tolist() == [0.25] * 4
    w = uniform_marginals(3)
    np.testing.assert_allclose(w, [1 / 3] * 3)
    assert abs(w.sum() - 1) <= 1e-9
    with pytest.raises(EmptySequenceError):
        uniform_marginals(0)


def test_augment_marginals_examples():
    assert augment_marginals([0.5, 0.5], 0).tolist() == [0.5, 0.5, 0.0]
    np.testing.assert_allclose(augment_marginals([0.5, 0.5], 0.2), [0.4, 0.4, 0.2])
    np.testing.assert_allclose(augment_marginals([1.0], 0.5), [0.5, 0.5])


@given(st.integers(1, 30), st.floats(0, 0.99))
def test_augmented_marginals_sum_to_one(n, rho):
    w = augment_marginals(uniform_marginals(n), rho)
    assert w.shape == (n + 1,)
    assert abs(w.sum() - 1) < 1e-12
    assert w[-1] == rho


@pytest.mark.parametrize("w, rho", [([0.5, 0.5], 1.0), ([0.5, 0.5], -0.1), ([0.6, 0.6], 0.2), ([1.5, -0.5], 0.1)])
def test_augment_marginals_rejects(w, rho):
    with pytest.raises(ParamError):
        augment_marginals(w, rho)


def test_embedding_sequence_validation():
    with pytest.raises(EmptySequenceError):
        EmbeddingSequence(np.zeros((0, 2)))
    with pytest.raises(ParseError):
        EmbeddingSequence([[0.0, np.nan]])
    seq = EmbeddingSequence([1.0, 2.0, 3.0])
    assert seq.frames.shape == (3, 1) and len(seq) == 3 and seq.dim == 1
    with pytest.raises(ValueError):
        seq.frames[0, 0] = 5.0


def test_hyperparams_defaults_and_validation():
    hp = Hyperparams()
    assert hp.gamma == 0.5
    assert hp.psi_start == 1.0
    with pytest.raises(ParamError):
        hp.replace(zeta=1.0)
    with pytest.raises(ParamError):
        hp.replace(upsilon=float("inf"))
    with pytest.raises(ParamError):
        hp.replace(psi_end=0.9, psi_start=0.5)


@pytest.mark.parametrize("suffix", [".csv", ".json"])
def test_embedding_round_trip(tmp_path, suffix):
    seq = EmbeddingSequence(np.random.default_rng(3).standard_normal((7, 3)), "clip")
    path = tmp_path / f"clip{suffix}"
    write_embedding(seq, path)
    back = read_embedding(path)
    assert np.array_equal(back.frames, seq.frames)


def test_read_embedding_errors(tmp_path):
    with pytest.raises(ParseError, match="missing.csv"):
        read_embedding(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    with pytest.raises(ParseError, match="ragged"):
        read_embedding(bad)
    bad.write_text("1,abc\n")
    with pytest.raises(ParseError, match="bad.csv:1"):
        read_embedding(bad)
    bad.write_text("1,nan\n")
    with pytest.raises(ParseError):
        read_embedding(bad)


def test_labels_round_trip(tmp_path):
    labels = [0, 0, 1, -1, 2]
    write_labels(labels, tmp_path / "l.csv")
    assert read_labels(tmp_path / "l.csv").tolist() == labels
    # frames without a row default to background
    (tmp_path / "s.csv").write_text("frame_index,phase_label\n1,4\n")
    assert read_labels(tmp_path / "s.csv", 3).tolist() == [-1, 4, -1]
    with pytest.raises(ParseError):
        read_labels(tmp_path / "s.csv", 1)
