from collections import Counter

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfdna.cgan import (CganConfig, UntrainedModelError, build_classifier, build_discriminator, build_generator,
                        cgan_equalize, classify_confidence, confidence_matrix, decide_confidence, embed_label,
                        equalize_all_labels, grid_search_train_snr, labeled_preamble, toy_discriminator,
                        toy_generator, train_cgan)

BASE = np.stack([np.sin(np.arange(8) * 0.7), np.cos(np.arange(8) * 0.4)])


def toy_data(n, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    return (BASE[y] + 0.1 * rng.normal(size=(n, 8))).astype(np.float32), y


@pytest.fixture(scope="module")
def G4():
    g = build_generator(4, seed=3)
    g.meta["trained"] = True
    return g


@pytest.fixture(scope="module")
def toy_result():
    X, y = toy_data(512, 0)
    # null channel: the multipath set equals the clean set
    return train_cgan((X, y), (X, y), CganConfig(epochs=400, batch_size=64, patience=0, seed=0),
                      G=toy_generator(2), D=toy_discriminator(2))


def test_embed_label_contract():
    g = build_generator(4, seed=0)
    a, b = embed_label(g, 1), embed_label(g, 1)
    assert a.shape == (4, 320)
    np.testing.assert_array_equal(a, b)
    planes = [embed_label(g, y) for y in range(4)]
    for i in range(4):
        for j in range(i + 1, 4):
            assert np.any(planes[i] != planes[j])
    for bad in (-1, 4):
        with pytest.raises(ValueError):
            embed_label(g, bad)


def test_labeled_preamble_channels(G4):
    r = np.random.default_rng(0).uniform(size=(4, 320)).astype(np.float32)
    lp = labeled_preamble(G4, r, 2)
    assert lp.shape == (2, 4, 320)
    np.testing.assert_array_equal(lp[0], r)
    np.testing.assert_allclose(lp[1], embed_label(G4, 2), rtol=1e-6)


def test_generator_shape_contract(G4):
    x = torch.rand(3, 1, 4, 320)
    out = G4({"x": x, "label": torch.tensor([0, 1, 3])})
    assert tuple(out.shape) == (3, 2, 4, 320)


def test_toy_equilibrium(toy_result):
    Xh, yh = toy_data(256, 99)
    p = toy_result.D.predict({"x": Xh, "label": yh})
    assert 0.4 <= float(p.mean()) <= 0.6


def test_toy_d_loss_decreases_early(toy_result):
    d = [h["d_loss"] for h in toy_result.history[:50]]
    assert np.mean(d[-5:]) < np.mean(d[:5])


def test_curves_csv(toy_result, tmp_path):
    p = tmp_path / "c.csv"
    toy_result.write_curves(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "epoch,d_loss,g_loss,d_out_real_mean,d_out_fake_mean"
    assert len(lines) == 401


@settings(max_examples=10, deadline=None)
@given(arrays(np.float32, (2, 1, 4, 320), elements=st.floats(-50, 50, width=32)), st.integers(0, 3))
def test_discriminator_output_open_interval(x, y):
    D = build_discriminator(4, seed=1)
    p = D.predict({"x": x, "label": np.array([y, 3 - y])})
    assert np.all(p > 0) and np.all(p < 1)


def test_training_deterministic():
    X, y = toy_data(64, 1)
    runs = []
    for _ in range(2):
        res = train_cgan((X, y), (X, y), CganConfig(epochs=3, batch_size=16, d_steps=2, seed=4),
                         G=toy_generator(2), D=toy_discriminator(2))
        runs.append([p.detach().clone() for p in res.G.parameters()])
    for a, b in zip(*runs):
        assert torch.equal(a, b)


def test_training_input_errors():
    X, y = toy_data(8, 0)
    with pytest.raises(ValueError):
        train_cgan((X[:0], y[:0]), (X, y), G=toy_generator(2), D=toy_discriminator(2))
    with pytest.raises(ValueError):
        CganConfig(d_steps=0)
    with pytest.raises(ValueError):
        train_cgan((X, y), (X, y), CganConfig(epochs=1, recon_weight=1.0), G=toy_generator(2), D=toy_discriminator(2))


def test_equalize_contract(G4):
    r = np.random.default_rng(1).uniform(size=(4, 320)).astype(np.float32)
    a, b = cgan_equalize(G4, r, 1), cgan_equalize(G4, r, 1)
    assert a.shape == (4, 320)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        cgan_equalize(G4, r, 4)
    with pytest.raises(UntrainedModelError):
        cgan_equalize(build_generator(4), r, 0)


def test_label_sweep_invocation_count(G4):
    R = np.random.default_rng(2).uniform(size=(3, 4, 320)).astype(np.float32)
    c = Counter()
    eq = equalize_all_labels(G4, R, counter=c)
    assert eq.shape == (3, 4, 4, 320)
    assert c["equalizations"] == 3 * 4
    np.testing.assert_allclose(eq[1, 2], cgan_equalize(G4, R[1], 2), atol=1e-6)
    cnn = build_classifier(4)
    classify_confidence(cnn, eq[0], c)
    assert c["classifications"] == 4


def test_decide_confidence_examples():
    Q = np.full((4, 4), 0.1)
    Q[2, 2] = 0.9
    assert decide_confidence(Q) == 2
    assert decide_confidence(np.full((3, 3), 0.25)) == 0
    assert decide_confidence(np.array([[0.1, 0.2], [0.05, 0.6]])) == 1


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(st.permutations(range(n)),
                                                      st.lists(st.floats(0, 1), min_size=n * n, max_size=n * n,
                                                               unique=True))))
def test_decide_confidence_row_permutation(args):
    perm, vals = args
    n = len(perm)
    Q = np.array(vals).reshape(n, n)
    assert decide_confidence(Q[list(perm)]) == decide_confidence(Q)


def test_classify_confidence_permutation_invariant():
    cnn = build_classifier(3, seed=5)
    eq = np.random.default_rng(3).uniform(size=(3, 4, 320)).astype(np.float32)
    Q = confidence_matrix(cnn, eq)
    assert Q.shape == (3, 3)
    np.testing.assert_allclose(Q.sum(axis=1), 1, atol=1e-5)
    assert classify_confidence(cnn, eq[[2, 0, 1]]) == classify_confidence(cnn, eq)


def test_grid_search_trivial_cases():
    r = grid_search_train_snr([12.0], [6.0], lambda s: (lambda t: 0.5))
    assert r.best_train_for_test == {6.0: 12.0} and r.best_overall == 12.0
    r = grid_search_train_snr([0, 5, 10], [1, 2], lambda s: (lambda t: s + t))
    assert r.accuracy.shape == (3, 2)
    with pytest.raises(ValueError):
        grid_search_train_snr([], [1], lambda s: None)


MU = np.array([[1.0, 0.1], [-1.0, -0.1]])


def _sample(n, snr, seed):
    # only the strong feature is noise-sensitive, so noisy training must learn the weak one
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    x = MU[y] + rng.normal(size=(n, 2)) * np.array([3 * 10 ** (-snr / 20), 0.02])
    return x, y


def _lda_builder(snr_r):
    x, y = _sample(4000, snr_r, 1)
    m = np.stack([x[y == c].mean(0) for c in (0, 1)])
    w = np.linalg.solve(np.cov((x - m[y]).T) + 1e-6 * np.eye(2), m[0] - m[1])
    b = -w @ (m[0] + m[1]) / 2

    def evaluate(snr_t):
        xt, yt = _sample(4000, snr_t, 2)
        return float(np.mean(np.where(xt @ w + b > 0, 0, 1) == yt))
    return evaluate


def test_grid_search_prefers_noisy_training():
    snrs = [0, 10, 20, 30]
    r = grid_search_train_snr(snrs, snrs, _lda_builder)
    assert all(r.best_train_for_test[t] <= max(snrs) for t in snrs)
    assert r.best_train_for_test[0] == 0
    assert r.accuracy[0, 0] > r.accuracy[-1, 0] + 0.2
    assert r.best_overall == 0
