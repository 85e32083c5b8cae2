import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sha_asr import model
from sha_asr.errors import ChunkError, DimensionError, LanguageError, ModelError, NumericError

from conftest import randomize


def test_split_model_matches_source_on_random_chunks():
    cfg = model.ModelConfig()
    single = randomize(model.init_singlehead(cfg, seed=11), seed=12, scale=0.2)
    sha = model.split_from_single(single, seed=13)
    # the attention output starts at zero; perturb it so the weights are not uniform
    rng = np.random.default_rng(14)
    for name in ("attention.out.W", "attention.out.b"):
        sha.params[name].data = rng.standard_normal(sha.params[name].shape)
    chunks = rng.standard_normal((1000, cfg.lookahead + 1, cfg.feature_dim))
    worst = 0.0
    for chunk in chunks:
        p_single = model.forward_singlehead(single, chunk)
        p_sha = model.forward_sha(sha, chunk)
        worst = max(worst, float(np.abs(p_single - p_sha).max()))
    assert worst <= 1e-9


def test_forced_weights_at_corners_select_a_tower(tiny_cfg):
    sha = randomize(model.init_sha(tiny_cfg, seed=2), seed=3)
    chunk = np.random.default_rng(0).standard_normal((tiny_cfg.lookahead + 1, tiny_cfg.feature_dim))
    np.testing.assert_allclose(model.forward_sha(sha, chunk, weights=(1.0, 0.0)), model.forward_splithead(sha, chunk, "en"), atol=1e-12)
    np.testing.assert_allclose(model.forward_sha(sha, chunk, weights=(0.0, 1.0)), model.forward_splithead(sha, chunk, "hi"), atol=1e-12)


def test_fresh_attention_is_uniform(tiny_cfg):
    sha = model.init_sha(tiny_cfg, seed=0)
    hidden = np.random.default_rng(1).standard_normal((tiny_cfg.lookahead + 1, tiny_cfg.hidden_dim))
    assert model.attention_weights(sha, hidden) == (0.5, 0.5)


@pytest.mark.parametrize("split_depth", [0, 1, 2])
def test_parameter_accounting(split_depth):
    cfg = model.ModelConfig(split_depth=split_depth)
    single = model.init_singlehead(cfg)
    sha = model.split_from_single(single)
    assert model.param_count(single) == model.expected_param_count(cfg, "single")
    assert model.param_count(sha) == model.expected_param_count(cfg, "sha")
    assert model.param_count(sha) - model.param_count(single) == sha.tower_size("hi") + sha.attention_size()
    assert sha.tower_size("en") == sha.tower_size("hi") == single.tower_size("single")


def test_param_groups_partition_parameters(tiny_cfg):
    sha = model.init_sha(tiny_cfg)
    groups = sha.param_groups()
    assert set(groups) == {"shared", "tower-en", "tower-hi", "attention"}
    ids = [id(p) for ps in groups.values() for p in ps]
    assert len(ids) == len(set(ids)) == len(sha.params)


def test_streaming_chunks_mask_past_the_end():
    idx, mask = model.streaming_chunks(4, 2)
    assert idx.tolist() == [[0, 1, 2], [1, 2, 3], [2, 3, 3], [3, 3, 3]]
    assert mask.tolist() == [[True] * 3, [True] * 3, [True, True, False], [True, False, False]]


def test_masked_positions_do_not_affect_posteriors(tiny_cfg):
    sha = randomize(model.init_sha(tiny_cfg, seed=5), seed=6)
    frames = np.random.default_rng(7).standard_normal((5, tiny_cfg.feature_dim))
    lp, _ = model.utterance_log_posteriors(sha, frames)
    # the last frame sees only itself, so a one-frame chunk must agree
    alone, _ = sha.forward(frames[-1:], np.zeros((1, 1), dtype=int))
    np.testing.assert_allclose(lp[-1], alone.data[0], atol=1e-12)


def test_full_context_sees_future_frames(tiny_cfg):
    sha = randomize(model.init_sha(tiny_cfg, seed=5), seed=6)
    frames = np.random.default_rng(8).standard_normal((9, tiny_cfg.feature_dim))
    _, w_stream = model.utterance_log_posteriors(sha, frames)
    _, w_full = model.utterance_log_posteriors(sha, frames, full_context=True)
    assert not np.allclose(w_stream[0], w_full[0])
    np.testing.assert_allclose(w_stream[-1], w_full[-1])


def test_chunk_validation(tiny_cfg):
    sha = model.init_sha(tiny_cfg)
    with pytest.raises(ChunkError):
        model.forward_sha(sha, np.zeros((tiny_cfg.lookahead, tiny_cfg.feature_dim)))
    with pytest.raises(DimensionError):
        model.forward_sha(sha, np.zeros((tiny_cfg.lookahead + 1, tiny_cfg.feature_dim + 1)))
    bad = np.zeros((tiny_cfg.lookahead + 1, tiny_cfg.feature_dim))
    bad[0, 0] = np.nan
    with pytest.raises(NumericError):
        model.forward_sha(sha, bad)
    good = np.zeros_like(bad)
    with pytest.raises(LanguageError):
        model.forward_splithead(sha, good, "fr")
    with pytest.raises(ModelError):
        model.forward_singlehead(sha, good)


def test_checkpoint_round_trip(tmp_path, tiny_cfg):
    sha = randomize(model.init_sha(tiny_cfg, seed=1), seed=2)
    path = tmp_path / "m.ckpt"
    model.save_checkpoint(sha, path)
    back = model.load_checkpoint(path)
    assert back.kind == "sha" and back.config == tiny_cfg
    for name, p in sha.params.items():
        assert np.array_equal(p.data, back.params[name].data)
    raw = path.read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ModelError):
        model.load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "short.ckpt").write_bytes(raw[:-8])
    with pytest.raises(ModelError):
        model.load_checkpoint(tmp_path / "short.ckpt")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), T=st.integers(1, 12))
def test_posteriors_and_weights_are_distributions(seed, T):
    cfg = model.ModelConfig(feature_dim=3, hidden_dim=4, num_chenones=5, num_shared_blocks=1, lookahead=3, attention_dim=2)
    sha = randomize(model.init_sha(cfg, seed=seed % 1000), seed=seed)
    frames = np.random.default_rng(seed).standard_normal((T, 3))
    lp, w = model.utterance_log_posteriors(sha, frames)
    np.testing.assert_allclose(np.exp(lp).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
    assert np.all((w >= 0) & (w <= 1))
