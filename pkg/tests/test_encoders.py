import numpy as np
import pytest

from dualcorr import numcore as nc
from dualcorr.encoders import (
    PatchFeatureMap,
    QueryEncoderParams,
    QueryTokens,
    VideoClip,
    VideoEncoderParams,
    Vocabulary,
    encode_query,
    encode_video,
    patchify,
)


def make_clip(t=2, size=8, seed=0):
    frames = np.random.default_rng(seed).uniform(size=(t, size, size, 3))
    return VideoClip(frames, tuple(range(t)))


def test_patchify_non_overlapping_matches_manual_slicing():
    frames = np.arange(1 * 8 * 8 * 3, dtype=float).reshape(1, 8, 8, 3)
    cells = patchify(frames, stride=4, window=4)
    assert cells.shape == (1, 4, 48)
    # cell 1 is row 0, column 1
    np.testing.assert_array_equal(cells[0, 1], frames[0, 0:4, 4:8].reshape(-1))
    np.testing.assert_array_equal(cells[0, 2], frames[0, 4:8, 0:4].reshape(-1))


def test_patchify_window_reads_zero_padded_neighbourhood():
    frames = np.random.default_rng(1).uniform(size=(2, 8, 8, 3))
    cells = patchify(frames, stride=4, window=8)
    padded = np.pad(frames, ((0, 0), (2, 2), (2, 2), (0, 0)))
    for t in range(2):
        for p in range(4):
            r, c = divmod(p, 2)
            expected = padded[t, 4 * r:4 * r + 8, 4 * c:4 * c + 8].reshape(-1)
            np.testing.assert_array_equal(cells[t, p], expected)


@pytest.mark.parametrize("stride,window", [(3, 3), (4, 5), (4, 2)])
def test_patchify_rejects_bad_geometry(stride, window):
    with pytest.raises(ValueError):
        patchify(np.zeros((1, 8, 8, 3)), stride, window)


def test_encode_video_is_one_affine_layer_per_cell():
    clip = make_clip()
    params = VideoEncoderParams.init(np.random.default_rng(2), dim=5, stride=4, window=8)
    maps = encode_video(clip, params)
    assert len(maps) == 2 and maps[0].features.shape == (4, 5)
    cells = patchify(clip.frames, 4, 8)
    for t, fmap in enumerate(maps):
        expected = np.tanh(cells[t] @ params.weight.data + params.bias.data)
        np.testing.assert_allclose(fmap.features.data, expected, atol=1e-14)


def test_encode_video_gradient_check():
    clip = make_clip(seed=3)
    params = VideoEncoderParams.init(np.random.default_rng(3), dim=3, stride=4, window=4)
    err = nc.finite_diff_check(lambda ps: nc.square(encode_video(clip, params)[1].features).sum(), params.parameters())
    assert err < 1e-6


def test_patch_feature_map_geometry():
    fmap = PatchFeatureMap(nc.Tensor(np.zeros((6, 2))), grid_h=2, grid_w=3, stride=4)
    assert fmap.cell(4) == (1, 1)
    np.testing.assert_array_equal(fmap.cell_centers()[4], [6.0, 6.0])
    with pytest.raises(ValueError):
        PatchFeatureMap(nc.Tensor(np.zeros((5, 2))), grid_h=2, grid_w=3)


def test_encode_query_shapes_and_contract_with_video_dim():
    rng = np.random.default_rng(4)
    qp = QueryEncoderParams.init(rng, vocab_size=10, dim=5, max_len=6)
    vp = VideoEncoderParams.init(rng, dim=5)
    words = encode_query(QueryTokens((1, 2, 3), ("a", "b", "c")), qp)
    assert words.features.shape == (3, 5)
    assert words.features.shape[1] == encode_video(make_clip(size=8), vp)[0].dim


def test_encode_query_mixes_word_slots():
    rng = np.random.default_rng(5)
    qp = QueryEncoderParams.init(rng, vocab_size=10, dim=4, max_len=4)
    ids = np.array([1, 7])
    mixed = qp.token_mixing.data[:2, :2] @ qp.embedding.data[ids]
    expected = np.tanh(mixed @ qp.channel.data + qp.bias.data)
    got = encode_query(QueryTokens((1, 7), ("x", "y")), qp).features.data
    np.testing.assert_allclose(got, expected, atol=1e-14)


def test_encode_query_errors():
    qp = QueryEncoderParams.init(np.random.default_rng(6), vocab_size=4, dim=3, max_len=2)
    with pytest.raises(KeyError):
        encode_query(QueryTokens((4,), ("oov",)), qp)
    with pytest.raises(ValueError):
        encode_query(QueryTokens((), ()), qp)
    with pytest.raises(ValueError):
        encode_query(QueryTokens((0, 1, 2), ("a", "b", "c")), qp)


def test_vocabulary_round_trip_and_oov(tmp_path):
    vocab = Vocabulary(["the", "red", "square"])
    assert vocab.encode(["the", "square"]).token_ids == (0, 2)
    with pytest.raises(KeyError, match="blue"):
        vocab.encode(["blue"])
    vocab.save(tmp_path / "vocab.txt")
    assert (tmp_path / "vocab.txt").read_text() == "the\nred\nsquare\n"
    assert Vocabulary.load(tmp_path / "vocab.txt").words == vocab.words
    with pytest.raises(ValueError):
        Vocabulary(["a", "a"])


def test_video_clip_validates_shape():
    with pytest.raises(ValueError):
        VideoClip(np.zeros((2, 8, 8)), (0, 1))
    with pytest.raises(ValueError):
        VideoClip(np.zeros((2, 8, 8, 3)), (0,))
