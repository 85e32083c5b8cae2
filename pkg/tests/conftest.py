import numpy as np
import pytest

from sha_asr import corpus, model


@pytest.fixture
def tiny_cfg():
    return model.ModelConfig(feature_dim=4, hidden_dim=5, num_chenones=6, num_shared_blocks=2, lookahead=2, attention_dim=3)


def randomize(m, seed, scale=0.5):
    """Give every parameter (biases and the zero attention output too) random values."""
    rng = np.random.default_rng(seed)
    for p in m.parameters():
        p.data = p.data + scale * rng.standard_normal(p.shape)
    return m


@pytest.fixture(scope="session")
def small_spec():
    cfg = corpus.SynthConfig(vocab_size=12, num_chenones=24, feature_dim=8)
    return corpus.make_spec(cfg, seed=3)


@pytest.fixture(scope="session")
def small_corpora(small_spec):
    return {
        "en": corpus.synthesize_language(small_spec, "en", 6, seed=1),
        "hi": corpus.synthesize_language(small_spec, "hi", 6, seed=2),
        "mix": corpus.synthesize_codemix(small_spec, 0.5, 4, seed=3),
    }


@pytest.fixture
def small_model_cfg(small_spec):
    return model.ModelConfig(feature_dim=8, hidden_dim=6, num_chenones=24, num_shared_blocks=2, lookahead=2, attention_dim=3)


# --------------------------------------------------------------------------
# acceptance summary: tests marked ``criterion(n)`` roll up into one line each

_CRITERIA = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    entry = _CRITERIA.setdefault(mark.args[0], {"ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    if rep.when == "call":
        entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]
    if rep.failed:
        entry["details"].append(f"{item.name} failed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if entry['ok'] else 'FAIL'}"
        if entry["details"]:
            line += "  " + "; ".join(entry["details"])
        terminalreporter.write_line(line)
