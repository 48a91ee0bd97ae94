import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate

from oracles import levenshtein
from tsrdiff.autograd import gradcheck
from tsrdiff.losses import (
    PSNR_CAP,
    LossWeights,
    PerceptualFeatures,
    edit_similarity,
    loss_terms,
    loss_total,
    psnr,
    text_metrics,
)
from tsrdiff.text_diffusion import CharState


def _features_by_scipy(phi: PerceptualFeatures, x: np.ndarray) -> np.ndarray:
    """Same stack through direct 2-D cross-correlation, one output map at a time."""
    for w, s in zip(phi.weights, phi.strides):
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        out = np.stack([
            np.stack([sum(correlate(xp[n, ci], w[co, ci], mode="valid") for ci in range(w.shape[1]))
                      for co in range(w.shape[0])])
            for n in range(x.shape[0])
        ])[:, :, ::s, ::s]
        x = out / (1 + np.exp(-out))
    return x


def _state(idx, K):
    return CharState.from_indices(np.asarray(idx), K)


def test_perfect_prediction_gives_zero_loss():
    x = np.random.default_rng(0).random((2, 1, 8, 16))
    c0 = _state([[1, 0, 2]] * 2, 3)
    logits = 200.0 * (c0.probs - 0.5)
    terms = loss_terms(x, x, c0, logits, PerceptualFeatures(1, 0))
    assert terms["l1"].value == 0 and terms["perceptual"].value == 0
    assert terms["ce"].value < 1e-40
    assert loss_total(x, x, c0, logits, LossWeights(), PerceptualFeatures(1, 0)).value < 1e-40


def test_pure_l1_on_constant_offset():
    x = np.random.default_rng(1).random((1, 1, 8, 8)) * 0.5
    c0 = _state([[0]], 2)
    loss = loss_total(x, x + 0.25, c0, np.zeros((1, 1, 2)), LossWeights(1, 0, 0))
    assert abs(loss.value - 0.25) < 1e-15


def test_total_matches_term_by_term_recomputation():
    rng = np.random.default_rng(2)
    x0, xh = rng.random((2, 2, 1, 8, 16))
    idx = rng.integers(0, 5, size=(2, 4))
    c0 = _state(idx, 5)
    logits = rng.standard_normal((2, 4, 5))
    phi = PerceptualFeatures(1, 11)
    w = LossWeights(0.7, 1.3, 0.02)
    l1 = np.abs(x0 - xh).mean()
    perc = ((_features_by_scipy(phi, xh) - _features_by_scipy(phi, x0)) ** 2).mean()
    lse = np.log(np.exp(logits).sum(-1))
    ce = np.mean(lse - np.take_along_axis(logits, idx[..., None], -1)[..., 0])
    ref = w.l1 * l1 + w.perceptual * perc + w.ce * ce
    assert abs(loss_total(x0, xh, c0, logits, w, phi).value - ref) < 1e-10


def test_loss_gradients_pass_gradcheck():
    rng = np.random.default_rng(3)
    x0 = rng.random((1, 1, 8, 8))
    c0 = _state([[1, 2]], 4)
    phi = PerceptualFeatures(1, 5)
    rep = gradcheck(lambda xh, lg: loss_total(x0, xh, c0, lg, LossWeights(1, 1, 0.5), phi),
                    [rng.random((1, 1, 8, 8)) + 0.01, rng.standard_normal((1, 2, 4))])
    assert rep.passed, rep.to_dict()


def test_loss_errors():
    c0 = _state([[0]], 2)
    with pytest.raises(ValueError):
        loss_total(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 8)), c0, np.zeros((1, 1, 2)), LossWeights())
    with pytest.raises(ValueError):
        loss_total(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 4)), c0, np.zeros((1, 1, 3)), LossWeights())
    for bad in (-1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            LossWeights(1, bad, 0)


def test_perceptual_features_are_seed_stable_across_processes():
    code = ("import numpy as np; from tsrdiff.losses import PerceptualFeatures;"
            "x=np.linspace(0,1,64).reshape(1,1,8,8); print(PerceptualFeatures(1, 9)(x).value.sum().hex())")
    runs = {subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)}
    assert len(runs) == 1


def test_psnr_examples():
    a = np.random.default_rng(4).random((1, 8, 8))
    assert psnr(a, a) == PSNR_CAP
    b = np.zeros((100,))
    c = np.concatenate([np.ones(1), np.zeros(99)])  # MSE = 0.01
    assert abs(psnr(b, c) - 20.0) < 1e-12
    x, y = np.random.default_rng(5).random((2, 3, 5, 5))
    assert abs(psnr(x, y) - 10 * np.log10(1 / np.mean((x - y) ** 2))) < 1e-10
    with pytest.raises(ValueError):
        psnr(x, y[:, :4])
    with pytest.raises(ValueError):
        psnr(x, y, max_val=0)


def test_psnr_falls_as_noise_grows():
    rng = np.random.default_rng(6)
    x = rng.random((1, 32, 32))
    vals = [psnr(x, x + s * rng.standard_normal(x.shape)) for s in (0.01, 0.05, 0.2)]
    assert vals[0] > vals[1] > vals[2]


def test_text_metric_examples():
    assert text_metrics(["abc", "de"], ["abc", "de"]) == {"acc": 1.0, "ned": 1.0}
    assert abs(edit_similarity("abc", "abd") - (1 - levenshtein("abc", "abd") / 3)) < 1e-15
    assert abs(edit_similarity("abc", "abd") - 2 / 3) < 1e-15
    assert edit_similarity("abcd", "wxyz") == 0.0
    assert edit_similarity("", "") == 1.0
    m = text_metrics([[1, 2, 3], [4]], [[1, 2, 3], [5, 4]])
    assert m["acc"] == 0.5 and abs(m["ned"] - 0.75) < 1e-15
    with pytest.raises(ValueError):
        text_metrics([], [])
    with pytest.raises(ValueError):
        text_metrics(["a"], ["a", "b"])


@settings(max_examples=200, deadline=None)
@given(a=st.lists(st.integers(0, 4), max_size=8), b=st.lists(st.integers(0, 4), max_size=8))
def test_edit_similarity_against_dynamic_programme(a, b):
    sim = edit_similarity(a, b)
    longest = max(len(a), len(b))
    ref = 1.0 if longest == 0 else 1 - levenshtein(a, b) / longest
    assert abs(sim - ref) < 1e-15
    assert 0.0 <= sim <= 1.0
    assert sim == edit_similarity(b, a)
    assert (sim == 1.0) == (a == b)
