"""Source-script to Latin transliteration.

Three provider kinds share one interface:

* ``word_table``: per-token lookup, blind to context;
* ``contextual_rules``: lookup plus neighbour-predicate rules that can pick a
  different Latin spelling for the same source word;
* ``remote``: whole sentences posted to an HTTP service (JSON list in, JSON
  list out) with an on-disk cache, retries and a cap on in-flight requests.

Out-of-table tokens pass through unchanged and are reported in
:attr:`TranslitResult.misses`.
"""
import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

from filelock import FileLock

from .errors import ConfigError, CoverageError, ParseError, ServiceError

CACHE_DIR_ENV = "SHA_ASR_CACHE_DIR"
KINDS = ("word_table", "contextual_rules", "remote")


class TranslitResult(NamedTuple):
    text: str
    misses: list


@dataclass(frozen=True)
class ContextRule:
    source: str
    latin: str
    predicate: str  # "prev", "next" or "default"
    token: str = None

    def matches(self, tokens, i):
        if self.predicate == "default":
            return True
        j = i - 1 if self.predicate == "prev" else i + 1
        return 0 <= j < len(tokens) and tokens[j] == self.token

    def to_field(self):
        return "default" if self.predicate == "default" else f"{self.predicate}={self.token}"


def parse_predicate(text, line=None):
    text = text.strip()
    if text == "default":
        return "default", None
    for kind in ("prev", "next"):
        if text.startswith(kind + "="):
            token = text[len(kind) + 1:]
            if not token:
                raise ParseError(f"empty token in predicate {text!r}", line)
            return kind, token
    raise ParseError(f"bad predicate {text!r} (expected prev=<tok>, next=<tok> or default)", line)


@dataclass
class TranslitTable:
    table: dict = field(default_factory=dict)
    rules: list = field(default_factory=list)

    def __post_init__(self):
        for src, lat in self.table.items():
            if not src or not lat:
                raise ConfigError("transliteration table has an empty key or value")
        by_source = {}
        for r in self.rules:
            if r.source not in self.table:
                raise ConfigError(f"rule references unknown source word {r.source!r}")
            if not r.latin:
                raise ConfigError(f"rule for {r.source!r} has an empty Latin form")
            by_source.setdefault(r.source, []).append(r)
        self._rules_by_source = by_source

    def rules_for(self, source):
        return self._rules_by_source.get(source, ())

    def latin_forms(self, source):
        """All Latin spellings a source word can take (table entry first)."""
        forms = [self.table[source]]
        for r in self.rules_for(source):
            if r.latin not in forms:
                forms.append(r.latin)
        return forms


def _tokens(sentence):
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def transliterate_tokens(tokens, table, contextual=False):
    out, misses = [], []
    for i, tok in enumerate(tokens):
        lat = table.table.get(tok)
        if lat is None:
            out.append(tok)
            misses.append(tok)
            continue
        if contextual:
            for rule in table.rules_for(tok):
                if rule.matches(tokens, i):
                    lat = rule.latin
                    break
        out.append(lat)
    return out, misses


def transliterate_word_based(sentence, table):
    out, misses = transliterate_tokens(_tokens(sentence), table, contextual=False)
    return TranslitResult(" ".join(out), misses)


def transliterate_contextual(sentence, provider):
    if provider.kind == "contextual_rules":
        out, misses = transliterate_tokens(_tokens(sentence), provider.table, contextual=True)
        return TranslitResult(" ".join(out), misses)
    if provider.kind == "remote":
        text = " ".join(_tokens(sentence))
        return TranslitResult(provider.client().transliterate([text])[0], [])
    raise ConfigError(f"contextual transliteration needs a contextual_rules or remote provider, not {provider.kind!r}")


# --------------------------------------------------------------------------
# remote service


def default_cache_path():
    base = os.environ.get(CACHE_DIR_ENV)
    root = Path(base) if base else Path.home() / ".cache" / "sha_asr"
    return root / "translit_cache.tsv"


@dataclass(frozen=True)
class RemoteConfig:
    url: str
    timeout: float = 10.0
    retries: int = 3
    cache_path: str = None
    max_in_flight: int = 4
    request_size: int = 1
    backoff: float = 0.5

    def __post_init__(self):
        if not self.url:
            raise ConfigError("remote transliteration requires an endpoint URL")
        if self.retries < 1 or self.max_in_flight < 1 or self.request_size < 1:
            raise ConfigError("retries, max_in_flight and request_size must be >= 1")


def urllib_transport(url, body, timeout):
    """POST ``body`` (bytes); return ``(status, response_bytes)``."""
    req = urllib.request.Request(url, data=body, method="POST", headers={"Content-Type": "application/json; charset=utf-8"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()


class BatchServiceError(ServiceError):
    """Some sentences failed; ``results`` holds the successes (``None`` elsewhere)."""

    def __init__(self, failures, results):
        first = next(iter(failures.values()))
        super().__init__(f"{len(failures)} of {len(results)} sentences failed; first: {first}")
        self.failures = failures
        self.results = results


def sentence_key(sentence):
    return hashlib.sha256(sentence.encode("utf-8")).hexdigest()


class TranslitCache:
    """Append-only ``hash TAB json-result`` file guarded by an exclusive lock."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = FileLock(str(self.path) + ".lock")
        self._mem = {}
        self._mutex = threading.Lock()
        self.reload()

    def reload(self):
        self._mem = {}
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for n, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                key, sep, payload = line.partition("\t")
                if not sep:
                    raise ParseError("cache record without TAB", n)
                self._mem[key] = json.loads(payload)

    def get(self, sentence):
        return self._mem.get(sentence_key(sentence))

    def put(self, sentence, result):
        key = sentence_key(sentence)
        with self._mutex:
            if key in self._mem:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self._lock:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(f"{key}\t{json.dumps(result, ensure_ascii=False)}\n")
            self._mem[key] = result


class RemoteClient:
    def __init__(self, config, transport=None, sleep=time.sleep):
        self.config = config
        self.transport = transport or urllib_transport
        self.sleep = sleep
        self.cache = TranslitCache(config.cache_path or default_cache_path())

    def _request(self, batch):
        body = json.dumps(batch, ensure_ascii=False).encode("utf-8")
        last = None
        for attempt in range(self.config.retries):
            if attempt:
                self.sleep(self.config.backoff * 2 ** (attempt - 1))
            try:
                status, payload = self.transport(self.config.url, body, self.config.timeout)
            except (TimeoutError, OSError) as exc:
                last = f"transport failure: {exc}"
                continue
            if status != 200:
                last = f"HTTP {status}"
                continue
            try:
                result = json.loads(payload.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                last = f"malformed response: {exc}"
                continue
            if not isinstance(result, list) or len(result) != len(batch) or not all(isinstance(r, str) for r in result):
                last = "response is not a list of strings matching the request"
                continue
            return result
        raise ServiceError(f"{self.config.url}: {last} after {self.config.retries} attempts")

    def transliterate(self, sentences):
        sentences = list(sentences)
        results = [self.cache.get(s) for s in sentences]
        pending = []
        for s, r in zip(sentences, results):
            if r is None and s not in pending:
                pending.append(s)
        size = self.config.request_size
        batches = [pending[i:i + size] for i in range(0, len(pending), size)]
        fetched, failures = {}, {}

        def run(batch):
            try:
                out = self._request(batch)
            except ServiceError as exc:
                return batch, None, exc
            return batch, out, None

        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            for batch, out, exc in pool.map(run, batches):
                if exc is not None:
                    for s in batch:
                        failures[s] = exc
                    continue
                for s, r in zip(batch, out):
                    self.cache.put(s, r)
                    fetched[s] = r
        for i, s in enumerate(sentences):
            if results[i] is None:
                results[i] = fetched.get(s)
        if failures:
            raise BatchServiceError({i: failures[s] for i, s in enumerate(sentences) if s in failures}, results)
        return results


def remote_transliterate(sentences, config, transport=None, sleep=time.sleep):
    return RemoteClient(config, transport=transport, sleep=sleep).transliterate(sentences)


# --------------------------------------------------------------------------
# provider


@dataclass
class TranslitProvider:
    kind: str
    table: TranslitTable = None
    remote: RemoteConfig = None
    transport: object = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown transliteration provider kind {self.kind!r}")
        if self.kind == "remote" and self.remote is None:
            raise ConfigError("remote provider requires an endpoint configuration")
        if self.kind != "remote" and self.table is None:
            raise ConfigError(f"{self.kind} provider requires a table")
        self._client = None

    def client(self):
        if self._client is None:
            self._client = RemoteClient(self.remote, transport=self.transport)
        return self._client

    def transliterate(self, sentence):
        if self.kind == "word_table":
            return transliterate_word_based(sentence, self.table)
        return transliterate_contextual(sentence, self)

    def transliterate_many(self, sentences):
        if self.kind == "remote":
            texts = [" ".join(_tokens(s)) for s in sentences]
            return [TranslitResult(r, []) for r in self.client().transliterate(texts)]
        return [self.transliterate(s) for s in sentences]

    def word(self, source):
        """Context-free Latin form of one source word, or ``None``."""
        if self.kind == "remote":
            return self.client().transliterate([source])[0]
        return self.table.table.get(source)


# --------------------------------------------------------------------------
# files


def read_table(path, rules_path=None):
    table = {}
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'source TAB latin'", n)
            table[parts[0]] = parts[1]
    rules = read_rules(rules_path) if rules_path else []
    return TranslitTable(table, rules)


def read_rules(path):
    rules = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError("expected 'source TAB latin TAB predicate'", n)
            kind, token = parse_predicate(parts[2], n)
            rules.append(ContextRule(parts[0], parts[1], kind, token))
    return rules


def write_table(table, path, rules_path=None):
    with open(path, "w", encoding="utf-8") as fh:
        for src, lat in table.table.items():
            fh.write(f"{src}\t{lat}\n")
    if rules_path is not None:
        with open(rules_path, "w", encoding="utf-8") as fh:
            for r in table.rules:
                fh.write(f"{r.source}\t{r.latin}\t{r.to_field()}\n")
