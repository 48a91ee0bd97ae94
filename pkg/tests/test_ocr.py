import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrdiff.autograd import gradcheck, ops
from tsrdiff.data import DegradeParams, apply_degradation, render_text
from tsrdiff.glyphs import make_alphabet
from tsrdiff.ocr import OcrHead, ocr_template, template_scores

ALPHA = make_alphabet(16)


def _renders(n, seed=0, length=8):
    rng = np.random.default_rng(seed)
    texts = [rng.integers(0, 15, size=length).tolist() for _ in range(n)]
    return texts, np.stack([render_text(t, ALPHA, 1000 * seed + i) for i, t in enumerate(texts)])


def test_clean_renders_read_correctly_and_confidently():
    texts, imgs = _renders(30)
    res = ocr_template(imgs, ALPHA)
    assert res.pred.tolist() == texts
    assert res.conf.min() >= 0.9


def test_noise_cells_get_low_confidence():
    noise = np.random.default_rng(1).random((20, 1, 32, 128))
    res = ocr_template(noise, ALPHA)
    assert res.conf.mean() < 0.2
    assert res.conf.max() < 0.5


def test_empty_cells_are_blank():
    img = render_text([4, 5], ALPHA, 3)
    res = ocr_template(img, ALPHA)
    assert res.pred[:2].tolist() == [4, 5]
    assert (res.pred[2:] == ALPHA.blank).all()
    scores = template_scores(img, ALPHA, 8)
    assert (scores[2:].argmax(-1) == ALPHA.blank).all()
    assert (ocr_template(np.zeros((1, 32, 128)), ALPHA).pred == ALPHA.blank).all()


def test_output_contract():
    _, imgs = _renders(4, seed=2)
    res = ocr_template(imgs, ALPHA)
    assert res.pred.shape == res.conf.shape == (4, 8)
    assert res.probs.shape == (4, 8, 16)
    assert ((res.conf >= 0) & (res.conf <= 1)).all()
    assert ((res.pred >= 0) & (res.pred < 16)).all()
    np.testing.assert_allclose(res.probs.sum(-1), 1.0, atol=1e-12)
    again = ocr_template(imgs, ALPHA)
    assert np.array_equal(res.probs, again.probs)


def test_maximal_degradation_lowers_mean_confidence():
    _, imgs = _renders(20, seed=3)
    rng = np.random.default_rng(4)
    worst = np.stack([apply_degradation(x, DegradeParams(1.5, 1.5, 4, 0.04), rng) for x in imgs])
    assert ocr_template(worst, ALPHA).conf.mean() < ocr_template(imgs, ALPHA).conf.mean()


def test_temperature_sharpens():
    _, imgs = _renders(5, seed=5)
    assert ocr_template(imgs, ALPHA, temperature=20).conf.mean() > ocr_template(imgs, ALPHA, temperature=2).conf.mean()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), gain=st.floats(0.3, 1.0), offset=st.floats(0.0, 0.5))
def test_confidence_ignores_affine_brightness(seed, gain, offset):
    _, img = _renders(1, seed=seed % 1000)
    scaled = offset * (1 - gain) + gain * img  # stays inside [0, 1]
    a, b = ocr_template(img, ALPHA), ocr_template(scaled, ALPHA)
    assert np.array_equal(a.pred, b.pred)
    np.testing.assert_allclose(a.conf, b.conf, rtol=0, atol=1e-9)


def test_head_shapes_and_errors():
    head = OcrHead(np.random.default_rng(0), K=6, max_len=4, height=16, width=32, hidden=8)
    assert head(np.zeros((3, 1, 16, 32))).shape == (3, 4, 6)
    with pytest.raises(ValueError):
        head(np.zeros((1, 1, 16, 64)))
    with pytest.raises(ValueError):
        OcrHead(np.random.default_rng(0), K=6, max_len=3, height=16, width=32)


def test_head_cross_entropy_gradient_wrt_image():
    rng = np.random.default_rng(6)
    head = OcrHead(rng, K=6, max_len=4, height=16, width=32, hidden=8).bind_names("ocr")
    target = np.eye(6)[rng.integers(0, 6, size=(2, 4))]

    def ce(img):
        return ops.scale(ops.sum_(ops.mul(ops.log_softmax(head(img), axis=-1), ops.constant(target))), -1 / 8)

    rep = gradcheck(ce, [rng.random((2, 1, 16, 32))], [], tol=1e-4)
    assert rep.passed, rep.to_dict()
