import pytest
from hypothesis import given
from hypothesis import strategies as st

from sha_asr.config import RunConfig, load_config, parse_ini, sub_seed
from sha_asr.errors import ConfigError


def test_ini_round_trip(tmp_path):
    cfg = RunConfig(seed=11, out="x/y")
    path = tmp_path / "run.ini"
    cfg.write(path)
    back = load_config(path)
    assert back == cfg
    assert back.to_ini() == cfg.to_ini()


def test_overrides_and_partial_files():
    cfg = parse_ini("[run]\nseed = 3\n[decode]\nbeam = none\n[stage.full]\nstage = full\nepochs = 2\n")
    assert cfg.seed == 3 and cfg.decode.beam is None and cfg.stages["full"].epochs == 2
    assert cfg.stages["single"] == RunConfig().stages["single"]
    moved = cfg.with_overrides(seed=9, out="elsewhere")
    assert (moved.seed, moved.out) == (9, "elsewhere")
    assert cfg.with_overrides() == cfg


@pytest.mark.parametrize("text", [
    "[run]\ncolour = red\n",
    "[nonsense]\nx = 1\n",
    "[data]\ntrain_en = lots\n",
    "[data]\ntrain_en = 0\n",
    "[lm]\nlambda_en = 1.5\n",
    "[stage.split]\nstage = full\n",
    "[model]\nnum_chenones = 12\n",
    "not an ini file",
])
def test_bad_configs_are_rejected(text):
    with pytest.raises(ConfigError):
        parse_ini(text)


def test_missing_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_sub_seed_known_value():
    import hashlib

    digest = hashlib.sha256(b"7:train.en").digest()
    assert sub_seed(7, "train.en") == int.from_bytes(digest[:8], "little") & (2**63 - 1)


@given(st.integers(0, 2**32), st.text(min_size=1, max_size=20))
def test_sub_seeds_are_stable_and_non_negative(seed, name):
    a = sub_seed(seed, name)
    assert a == sub_seed(seed, name)
    assert 0 <= a < 2**63
