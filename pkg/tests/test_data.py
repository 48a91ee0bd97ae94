import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsrdiff.data import (
    FAMILIES,
    DegradeParams,
    StagePlan,
    apply_degradation,
    degrade,
    draw_degradation,
    generate_corpus,
    load_corpus,
    read_pgm,
    render_text,
    sample_pair,
    split_of,
    write_pgm,
)
from tsrdiff.glyphs import make_alphabet
from tsrdiff.losses import psnr
from tsrdiff.ocr import ocr_template

ALPHA = make_alphabet(16)


def test_alphabet_contract():
    for K in (2, 16, 40):
        a = make_alphabet(K)
        assert a.K == K and a.blank == K - 1
        assert not a.bitmaps[a.blank].any()
        assert len({m.tobytes() for m in a.bitmaps}) == K
    assert ALPHA.decode(ALPHA.encode("A7")) == "A7"
    assert ALPHA.decode([0, ALPHA.blank, 1]) == "01"
    with pytest.raises(ValueError):
        ALPHA.encode("@")
    with pytest.raises(ValueError):
        make_alphabet(1)


def test_single_glyph_sits_in_its_cell():
    img = render_text([3], ALPHA, style_seed=1)
    assert img.shape == (1, 32, 128)
    cols = np.nonzero(img[0].sum(axis=0))[0]
    assert cols.min() >= 0 and cols.max() < 16
    centre = (cols.min() + cols.max()) / 2
    assert abs(centre - 7.5) < 2.5


def test_render_is_deterministic_and_in_range():
    a = render_text([1, 2, 3, 4], ALPHA, 42)
    assert np.array_equal(a, render_text([1, 2, 3, 4], ALPHA, 42))
    assert not np.array_equal(a, render_text([1, 2, 3, 4], ALPHA, 43))
    assert a.min() >= 0 and a.max() <= 1


def test_render_errors():
    with pytest.raises(ValueError):
        render_text([], ALPHA, 0)
    with pytest.raises(ValueError):
        render_text([16], ALPHA, 0)
    with pytest.raises(ValueError):
        render_text(list(range(9)), ALPHA, 0)


def test_template_reader_recovers_clean_renders():
    rng = np.random.default_rng(0)
    for i in range(50):
        text = rng.integers(0, 15, size=int(rng.integers(1, 9))).tolist()
        res = ocr_template(render_text(text, ALPHA, i), ALPHA)
        assert ALPHA.decode(res.pred) == ALPHA.decode(text)


def test_degradation_is_monotone_in_strength():
    x = render_text([5, 6, 7, 8, 9], ALPHA, 3)
    rng = np.random.default_rng(0)
    mild = apply_degradation(x, DegradeParams(0.5, 0.5, 2, 0.0), rng)
    harsh = apply_degradation(x, DegradeParams(2.5, 2.5, 4, 0.08), rng)
    assert np.isfinite(psnr(x, mild)) and psnr(x, mild) > psnr(x, harsh)


def test_degrade_determinism_range_and_errors():
    x = render_text([1, 2], ALPHA, 0)
    for fam in FAMILIES:
        out = degrade(x, fam, 9)
        assert np.array_equal(out, degrade(x, fam, 9))
        assert out.shape == x.shape and out.min() >= 0 and out.max() <= 1
    with pytest.raises(ValueError):
        degrade(x + 0.5, "in_domain", 0)
    with pytest.raises(ValueError):
        degrade(x, "jpeg", 0)


def test_families_draw_from_disjoint_ranges():
    rng = np.random.default_rng(1)
    ind = [draw_degradation("in_domain", rng) for _ in range(500)]
    real = [draw_degradation("real_proxy", rng) for _ in range(500)]
    assert max(p.sigma_x for p in ind) <= min(min(p.sigma_x, p.sigma_y) for p in real)
    assert max(p.noise for p in ind) <= min(p.noise for p in real)
    assert all(p.sigma_x == p.sigma_y for p in ind)
    assert any(p.sigma_x != p.sigma_y for p in real)
    assert {p.scale for p in ind + real} == {2, 4}


def _tags(r, plan, n=10_000):
    x0 = np.zeros((1, 8, 8))
    y = np.full((1, 8, 8), 0.5)
    return [sample_pair(x0, y, r, plan, seed).source_tag for seed in range(n)]


def test_stage_a_is_always_degraded_hr():
    plan = StagePlan(100, 200)
    assert set(_tags(0, plan, 300)) == {"degraded_hr"}
    assert set(_tags(99, plan, 300)) == {"degraded_hr"}


@pytest.mark.parametrize("r,expected", [(100, {"degraded_hr": 0.5, "real_lr": 0.5}),
                                        (200, {"degraded_hr": 1 / 3, "real_lr": 1 / 3, "degraded_lr": 1 / 3})])
def test_source_frequencies(r, expected):
    n = 10_000
    tags = _tags(r, StagePlan(100, 200), n)
    assert set(tags) == set(expected)
    for tag, p in expected.items():
        assert abs(tags.count(tag) / n - p) < 3 * np.sqrt(p * (1 - p) / n)


def test_stage_boundaries_are_half_open():
    plan = StagePlan(10, 20)
    assert [plan.stage(r) for r in (0, 9, 10, 19, 20, 10**6)] == ["A", "A", "B", "B", "C", "C"]
    assert StagePlan(10, 20, flat=True).stage(0) == "C"
    with pytest.raises(ValueError):
        StagePlan(20, 20)
    with pytest.raises(ValueError):
        StagePlan(0, 20)


def test_real_source_is_passed_through():
    x0 = render_text([1], ALPHA, 0)
    y = degrade(x0, "real_proxy", 1)
    seeds = [s for s in range(50) if sample_pair(x0, y, 10, StagePlan(1, 2), s).source_tag == "real_lr"]
    assert seeds
    assert np.array_equal(sample_pair(x0, y, 10, StagePlan(1, 2), seeds[0]).lr, y)


def test_split_is_stable_and_roughly_eighty_percent():
    rng = np.random.default_rng(2)
    texts = [rng.integers(0, 15, size=6).tolist() for _ in range(5000)]
    splits = [split_of(t, 7) for t in texts]
    assert splits == [split_of(t, 7) for t in texts]
    frac = splits.count("train") / len(splits)
    assert abs(frac - 0.8) < 3 * np.sqrt(0.16 / 5000)
    assert splits != [split_of(t, 8) for t in texts]


def test_pgm_round_trip(tmp_path):
    img = np.round(np.random.default_rng(3).random((1, 4, 6)) * 255) / 255
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_corpus_generation_is_reproducible(tmp_path):
    recs = generate_corpus(tmp_path / "a", ALPHA, 12, seed=5)
    generate_corpus(tmp_path / "b", ALPHA, 12, seed=5)
    for name in ["manifest.jsonl", "corpus.json", "hr/000003.pgm", "lr/000011.pgm"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    corpus = load_corpus(tmp_path / "a")
    assert corpus.hr.shape == corpus.lr.shape == (12, 1, 32, 128)
    assert [r.text for r in corpus.records] == [r.text for r in recs]
    assert all(3 <= len(r.text) <= 8 for r in recs)
    assert sorted(corpus.split("train") + corpus.split("test")) == list(range(12))
    line = json.loads((tmp_path / "a" / "manifest.jsonl").read_text().splitlines()[0])
    assert set(line) == {"id", "text", "style_seed", "real_seed", "split"}


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), r=st.integers(0, 400))
def test_sample_pair_contract(seed, r):
    x0 = render_text([1, 2, 3], ALPHA, seed % 97)
    y = degrade(x0, "real_proxy", seed)
    s = sample_pair(x0, y, r, StagePlan(100, 200), seed)
    assert s.lr.shape == x0.shape
    assert s.lr.min() >= 0 and s.lr.max() <= 1
    assert s.source_tag == sample_pair(x0, y, r, StagePlan(100, 200), seed).source_tag
