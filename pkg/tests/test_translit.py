import json
import threading
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sha_asr import translit as tr
from sha_asr.errors import ConfigError, ParseError, ServiceError

TABLE = tr.TranslitTable(
    {"पे": "pe", "घर": "ghar", "जाना": "jaana"},
    [tr.ContextRule("पे", "pay", "next", "karo")],
)


def test_word_based_substitution_and_pass_through():
    assert tr.transliterate_word_based("घर जाना घर", TABLE) == tr.TranslitResult("ghar jaana ghar", [])
    res = tr.transliterate_word_based("घर bus", TABLE)
    assert res.text == "ghar bus" and res.misses == ["bus"]
    assert tr.transliterate_word_based("a b", tr.TranslitTable()).text == "a b"


def test_homograph_is_context_blind_word_based_but_resolved_contextually():
    word = tr.TranslitProvider("word_table", table=TABLE)
    ctx = tr.TranslitProvider("contextual_rules", table=TABLE)
    assert word.transliterate("पे karo").text == "pe karo"
    assert ctx.transliterate("पे karo").text == "pay karo"
    assert ctx.transliterate("घर पे").text == "ghar pe"


def test_contextual_without_rules_equals_word_based():
    plain = tr.TranslitTable(dict(TABLE.table))
    ctx = tr.TranslitProvider("contextual_rules", table=plain)
    s = "पे karo घर"
    assert ctx.transliterate(s) == tr.transliterate_word_based(s, plain)


def test_contextual_requires_capable_provider():
    with pytest.raises(ConfigError):
        tr.transliterate_contextual("घर", tr.TranslitProvider("word_table", table=TABLE))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["पे", "घर", "जाना", "karo", "bus"]), min_size=1, max_size=8), st.randoms())
def test_word_based_is_position_independent(tokens, rnd):
    perm = list(range(len(tokens)))
    rnd.shuffle(perm)
    out = tr.transliterate_word_based(tokens, TABLE).text.split()
    shuffled = tr.transliterate_word_based([tokens[i] for i in perm], TABLE).text.split()
    assert shuffled == [out[i] for i in perm]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["पे", "घर", "जाना", "karo", "bus"]), min_size=1, max_size=8))
def test_contextual_differs_only_on_ruled_tokens(tokens):
    word = tr.transliterate_word_based(tokens, TABLE).text.split()
    ctx = tr.transliterate_contextual(tokens, tr.TranslitProvider("contextual_rules", table=TABLE)).text.split()
    for src, a, b in zip(tokens, word, ctx):
        if a != b:
            assert TABLE.rules_for(src)


def test_table_validation_and_files(tmp_path):
    with pytest.raises(ConfigError):
        tr.TranslitTable({"x": ""})
    with pytest.raises(ConfigError):
        tr.TranslitTable({"x": "y"}, [tr.ContextRule("z", "w", "default")])
    tr.write_table(TABLE, tmp_path / "t.tsv", tmp_path / "r.tsv")
    back = tr.read_table(tmp_path / "t.tsv", tmp_path / "r.tsv")
    assert back.table == TABLE.table and back.rules == TABLE.rules
    (tmp_path / "bad.tsv").write_text("पे\tpay\tsideways=karo\n")
    with pytest.raises(ParseError) as err:
        tr.read_rules(tmp_path / "bad.tsv")
    assert err.value.line == 1


class Recorder:
    """Scripted transport: uppercases each sentence, counting calls and concurrency."""

    def __init__(self, script=None, delay=0.0):
        self.script = list(script or [])
        self.delay = delay
        self.calls = 0
        self.active = 0
        self.peak = 0
        self.lock = threading.Lock()

    def __call__(self, url, body, timeout):
        with self.lock:
            self.calls += 1
            self.active += 1
            self.peak = max(self.peak, self.active)
            step = self.script.pop(0) if self.script else 200
        try:
            if self.delay:
                time.sleep(self.delay)
            if isinstance(step, Exception):
                raise step
            if step != 200:
                return step, b"oops"
            batch = json.loads(body.decode("utf-8"))
            return 200, json.dumps([s.upper() for s in batch]).encode("utf-8")
        finally:
            with self.lock:
                self.active -= 1


def _cfg(tmp_path, **kw):
    return tr.RemoteConfig("http://stub.invalid/translit", cache_path=str(tmp_path / "cache.tsv"), backoff=0.0, **kw)


def test_remote_retries_then_succeeds(tmp_path):
    rec = Recorder([500, 500, 200])
    out = tr.remote_transliterate(["ab cd"], _cfg(tmp_path), transport=rec, sleep=lambda s: None)
    assert out == ["AB CD"] and rec.calls == 3


def test_remote_cache_hit_issues_no_calls(tmp_path):
    cfg = _cfg(tmp_path)
    tr.remote_transliterate(["x y", "z"], cfg, transport=Recorder())
    rec = Recorder()
    again = tr.remote_transliterate(["z", "x y", "z"], cfg, transport=rec)
    assert again == ["Z", "X Y", "Z"] and rec.calls == 0


def test_remote_is_idempotent_with_one_transport_call(tmp_path):
    cfg = _cfg(tmp_path)
    rec = Recorder()
    first = tr.remote_transliterate(["same"], cfg, transport=rec)
    second = tr.remote_transliterate(["same"], cfg, transport=rec)
    assert first == second == ["SAME"] and rec.calls == 1
    lines = (tmp_path / "cache.tsv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 1 and lines[0].split("\t")[0] == tr.sentence_key("same")


def test_remote_concurrency_cap(tmp_path):
    rec = Recorder(delay=0.01)
    sentences = [f"s{i}" for i in range(100)]
    out = tr.remote_transliterate(sentences, _cfg(tmp_path, max_in_flight=4), transport=rec)
    assert out == [s.upper() for s in sentences]
    assert rec.peak <= 4 and rec.calls == 100


def test_remote_failures_are_per_sentence(tmp_path):
    def transport(url, body, timeout):
        batch = json.loads(body)
        if batch == ["bad"]:
            raise TimeoutError("slow")
        return 200, json.dumps([s.upper() for s in batch]).encode()

    with pytest.raises(tr.BatchServiceError) as err:
        tr.remote_transliterate(["ok", "bad", "fine"], _cfg(tmp_path, retries=2), transport=transport, sleep=lambda s: None)
    assert err.value.results == ["OK", None, "FINE"]
    assert list(err.value.failures) == [1]
    assert isinstance(err.value, ServiceError)


def test_remote_rejects_malformed_responses(tmp_path):
    def transport(url, body, timeout):
        return 200, b'{"not": "a list"}'

    with pytest.raises(ServiceError):
        tr.remote_transliterate(["x"], _cfg(tmp_path, retries=2), transport=transport, sleep=lambda s: None)


def test_remote_backoff_is_exponential(tmp_path):
    waits = []
    with pytest.raises(ServiceError):
        tr.remote_transliterate(["x"], tr.RemoteConfig("http://stub.invalid", cache_path=str(tmp_path / "c.tsv"), retries=4, backoff=0.5), transport=Recorder([503] * 4), sleep=waits.append)
    assert waits == [0.5, 1.0, 2.0]


def test_provider_validation(tmp_path):
    with pytest.raises(ConfigError):
        tr.TranslitProvider("remote")
    with pytest.raises(ConfigError):
        tr.RemoteConfig("")
    with pytest.raises(ConfigError):
        tr.TranslitProvider("word_table")
    with pytest.raises(ConfigError):
        tr.TranslitProvider("neural", table=TABLE)
    remote = tr.TranslitProvider("remote", remote=_cfg(tmp_path), transport=Recorder())
    assert remote.transliterate("a b").text == "A B"


def test_cache_dir_from_environment(monkeypatch, tmp_path):
    monkeypatch.setenv(tr.CACHE_DIR_ENV, str(tmp_path))
    assert tr.default_cache_path() == tmp_path / "translit_cache.tsv"
