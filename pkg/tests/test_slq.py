import json

import numpy as np
import pytest

from shieldlab.core import blockify
from shieldlab.jpeg import jpeg_round_trip
from shieldlab.slq import SlqConfig, block_choices, choice_map_to_json, slq_expected_logit_input, slq_preprocess


def _images(n, seed):
    rng = np.random.default_rng(seed)
    return rng.random((n, 32, 32))


@pytest.mark.parametrize("seed", range(5))
def test_every_block_comes_from_its_chosen_candidate(seed):
    cfg = SlqConfig(seed=seed)
    for img in _images(50, 1000 + seed):
        out, cmap = slq_preprocess(img, cfg)
        blocks = blockify(out)
        cands = [blockify(jpeg_round_trip(img, q)) for q in cfg.qualities]
        for by in range(cmap.shape[0]):
            for bx in range(cmap.shape[1]):
                assert np.array_equal(blocks[by, bx], cands[cmap[by, bx]][by, bx])


def test_provenance_on_non_multiple_of_eight():
    img = _images(1, 3)[0][:19, :27]
    out, cmap = slq_preprocess(img, SlqConfig(seed=9))
    assert out.shape == img.shape and cmap.shape == (3, 4)
    cands = [jpeg_round_trip(img, q) for q in (20, 40, 60, 80)]
    for y in range(19):
        for x in range(27):
            assert out[y, x] == cands[cmap[y // 8, x // 8]][y, x]


def test_choice_frequencies_are_uniform():
    draws = np.concatenate([block_choices(s, 10, 10, 4).ravel() for s in range(100)])
    assert draws.size == 10_000
    counts = np.bincount(draws, minlength=4)
    p = 0.25
    sigma = np.sqrt(draws.size * p * (1 - p))
    assert np.all(np.abs(counts - draws.size * p) <= 3 * sigma), counts


def test_same_seed_same_output_and_seed_matters():
    img = _images(1, 4)[0]
    a, ma = slq_preprocess(img, SlqConfig(seed=5))
    b, mb = slq_preprocess(img, SlqConfig(seed=5))
    assert np.array_equal(a, b) and np.array_equal(ma, mb)
    _, mc = slq_preprocess(img, SlqConfig(seed=6))
    assert not np.array_equal(ma, mc)


def test_single_quality_equals_plain_jpeg():
    img = _images(1, 5)[0]
    out, cmap = slq_preprocess(img, SlqConfig(qualities=(50,), seed=1))
    assert np.array_equal(out, jpeg_round_trip(img, 50))
    assert np.all(cmap == 0)


def test_choice_map_json_round_trip():
    _, cmap = slq_preprocess(_images(1, 6)[0], SlqConfig(seed=2))
    assert np.array_equal(np.array(json.loads(choice_map_to_json(cmap))), cmap)


@pytest.mark.parametrize("qs", [(), (40, 20), (20, 20), (0, 40), (20, 101)])
def test_bad_quality_lists(qs):
    with pytest.raises(ValueError):
        SlqConfig(qualities=qs)


def test_expected_logit_input():
    img = _images(1, 7)[0]
    outs = slq_expected_logit_input(img, (20, 80))
    assert len(outs) == 2 and np.array_equal(outs[1], jpeg_round_trip(img, 80))
    with pytest.raises(ValueError):
        slq_expected_logit_input(img, [])
