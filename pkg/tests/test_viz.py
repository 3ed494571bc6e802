import numpy as np

from dualcorr.correspondence import cosine_scores
from dualcorr.model import DCNet, ModelConfig
from dualcorr.synthgen import generate_sample
from dualcorr.viz import heatmaps, normalize_map, pgm_bytes, read_pgm, write_heatmaps


def test_uniform_map_is_constant_pgm():
    image, lo, hi = normalize_map(np.full((8, 8), 1 / 64))
    assert lo == hi and np.all(image == image[0, 0])


def test_min_max_normalization():
    image, lo, hi = normalize_map(np.array([[1.0, 2.0], [3.0, 5.0]]))
    assert (lo, hi) == (1.0, 5.0)
    assert image.tolist() == [[0, 64], [128, 255]]


def test_pgm_header_and_round_trip(tmp_path):
    image = np.arange(6, dtype=np.uint8).reshape(2, 3)
    raw = pgm_bytes(image)
    assert raw.startswith(b"P5\n3 2\n255\n")
    (tmp_path / "x.pgm").write_bytes(raw)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), image)


def test_heatmaps_have_grid_shape_and_match_cosine_oracle(tmp_path):
    model = DCNet.init(ModelConfig(dim=8, window=8), 0)
    sample = generate_sample(0)
    maps = heatmaps(model, sample)
    out = model.frozen().forward(sample.clip, sample.tokens)
    v, q = out.visual[2].features.data, out.words.features.data
    def cos(a, b):
        n = np.linalg.norm(a) * np.linalg.norm(b)
        return float(np.dot(a, b) / n) if n > 0 else 0.0  # zero vectors: cosine 0 by convention

    oracle = np.array([[cos(a, b) for b in q] for a in v])
    np.testing.assert_allclose(cosine_scores(v, q), oracle, atol=1e-12)
    word = sample.tokens.raw_words[1]
    np.testing.assert_allclose(maps[f"sim_frame002_word01_{word}"], oracle[:, 1].reshape(8, 8), atol=1e-12)
    paths = write_heatmaps(model, sample, tmp_path)
    assert len(paths) == 12 * (1 + 9)
    assert read_pgm(paths[0]).shape == (8, 8)
    ranges = (tmp_path / "ranges.txt").read_text().splitlines()
    assert len(ranges) == len(paths) and ranges[0].startswith("conf_frame000 ")
