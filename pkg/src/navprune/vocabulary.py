"""Offline construction of the vocabulary of irrelevance.

Pipeline: tokenize an instruction corpus into a frequency lexicon, label
every word relevant/irrelevant (language-model service, cache, or the
deterministic built-in fallback), and group the irrelevant words into an
immutable vocabulary that instruction pruning consults at lookup time.

Construction is a strictly offline phase: nothing here runs during
navigation or benchmarking.  With a frozen cache (or --offline) builds
are byte-reproducible.
"""

from __future__ import annotations

import os
import re
import string
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

VOCAB_FORMAT = "navprune-vocabulary v1"
CACHE_FORMAT = "navprune-cache v1"
FUNCTION_WORDS_VERSION = "v1"

PROMPT_TEMPLATE = (
    "Given the following set of words: {words}, "
    "can you point out which of them are irrelevant to the following types of information: "
    "1. A direction to go; 2. Describing the environment; "
    "3. Object(s) in the indoor/outdoor environments. "
    "Please don't change the word in the quotation mark and explain why. "
    'Please answer in the following: format: "{{word}} : relevant/irrelevant {{explanation}}"'
)

_PUNCT = set(string.punctuation)
_DELIMITERS = {"<s>", "</s>"}
_NUMERAL_RE = re.compile(r"[0-9]+([.,][0-9]+)*")

# Versioned built-in function-word list (v1).  Deliberately excludes
# direction and spatial words (down, up, left, right, through, ...) which
# stay relevant by the default rule.
FUNCTION_WORDS = frozenset(
    """
    a an the
    and but or nor so yet if then than because although though while whether
    of in on at by for with from to as about during before after until
    without within upon among per via
    i me my mine myself you your yours yourself he him his himself she her
    hers herself it its itself we us our ours ourselves they them their
    theirs themselves this that these those who whom whose which what
    am is are was were be been being do does did doing have has had having
    will would shall should can could may might must
    not no yes too very just also again once only quite rather really
    all any both each few more most other some such own same
    there here now when where why how
    s t d ll m re ve
    one two three four five six seven eight nine ten eleven twelve
    """.split()
)


def normalize_word(word: str) -> str:
    """Shared normalization for lexicon entries and vocabulary lookups.

    Lowercase, strip leading/trailing punctuation; standalone punctuation
    and the sequence delimiters survive as themselves.
    """
    w = word.strip()
    if w in _DELIMITERS:
        return w
    w = w.lower()
    stripped = w.strip(string.punctuation)
    if stripped:
        return stripped
    return w


def tokenize(text: str) -> list[str]:
    """Whitespace split with leading/trailing punctuation peeled into own tokens."""
    tokens: list[str] = []
    for chunk in text.split():
        if chunk in _DELIMITERS:
            tokens.append(chunk)
            continue
        lead: list[str] = []
        trail: list[str] = []
        core = chunk
        while core and core[0] in _PUNCT:
            lead.append(core[0])
            core = core[1:]
        while core and core[-1] in _PUNCT:
            trail.append(core[-1])
            core = core[:-1]
        tokens.extend(lead)
        if core:
            tokens.append(core.lower())
        tokens.extend(reversed(trail))
    return tokens


@dataclass(frozen=True)
class Lexicon:
    """Words with corpus frequencies, sorted by frequency then alphabetically."""

    entries: tuple[tuple[str, int], ...]

    @property
    def words(self) -> tuple[str, ...]:
        return tuple(w for w, _ in self.entries)


def extract_lexicon(corpus: Sequence[str]) -> Lexicon:
    """Tokenize + normalize a corpus into a frequency-sorted lexicon."""
    counts: dict[str, int] = {}
    for line in corpus:
        for tok in tokenize(line):
            word = normalize_word(tok)
            if word:
                counts[word] = counts.get(word, 0) + 1
    if not counts:
        raise ValueError("empty corpus")
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Lexicon(entries=tuple(ordered))


@dataclass(frozen=True)
class ClassificationRecord:
    word: str
    label: str  # "relevant" | "irrelevant"
    explanation: str = ""
    source: str = "fallback"  # "service" | "cache" | "fallback"

    def __post_init__(self) -> None:
        if self.label not in ("relevant", "irrelevant"):
            raise ValueError(f"bad label: {self.label!r}")


def is_numeral(word: str) -> bool:
    return bool(_NUMERAL_RE.fullmatch(word))


def fallback_classify(word: str) -> str:
    """Deterministic offline labeling.

    Irrelevant: standalone punctuation, sequence delimiters, numerals, and
    the built-in function-word list.  Everything else, including unseen
    content-like words, defaults to relevant.
    """
    if not word:
        return "irrelevant"
    if word in _DELIMITERS:
        return "irrelevant"
    if all(c in _PUNCT for c in word):
        return "irrelevant"
    if is_numeral(word):
        return "irrelevant"
    if word in FUNCTION_WORDS:
        return "irrelevant"
    return "relevant"


class ClassificationCache:
    """Line-oriented word/label cache; writes are serialized."""

    def __init__(self, path: str | Path | None = None, builder: str = "unknown") -> None:
        self.path = Path(path) if path is not None else None
        self.builder = builder
        self._lock = threading.Lock()
        self.entries: dict[str, tuple[str, str]] = {}
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) == 3:
                word, label, source = parts
                self.entries[word] = (label, source)

    def get(self, word: str) -> tuple[str, str] | None:
        return self.entries.get(word)

    def put(self, word: str, label: str, source: str) -> None:
        with self._lock:
            self.entries[word] = (label, source)

    def save(self) -> None:
        if self.path is None:
            return
        lines = [f"# {CACHE_FORMAT} builder={self.builder}"]
        for word in sorted(self.entries):
            label, source = self.entries[word]
            lines.append(f"{word}\t{label}\t{source}")
        self.path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class LlmClient:
    """Minimal text-completion client with retry and exponential backoff."""

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str = "",
        timeout: float = 30.0,
        attempts: int = 3,
        sleep=None,
    ) -> None:
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.attempts = attempts
        import time

        self._sleep = sleep if sleep is not None else time.sleep

    @classmethod
    def from_env(cls) -> "LlmClient | None":
        url = os.environ.get("NAVPRUNE_LLM_URL")
        if not url:
            return None
        return cls(
            url=url,
            model=os.environ.get("NAVPRUNE_LLM_MODEL", ""),
            api_key=os.environ.get("NAVPRUNE_LLM_KEY", ""),
        )

    def complete(self, prompt: str) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = {"model": self.model, "prompt": prompt, "max_tokens": 2048, "temperature": 0}
        last_error: Exception | None = None
        for attempt in range(self.attempts):
            try:
                resp = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                data = resp.json()
                if "choices" in data:
                    return data["choices"][0].get("text", "")
                return data.get("text", "")
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                last_error = exc
                self._sleep(0.5 * 2**attempt)
        raise ConnectionError(f"language-model service unreachable: {last_error}")


def build_prompt(words: Sequence[str]) -> str:
    quoted = ", ".join(f'"{w}"' for w in words)
    return PROMPT_TEMPLATE.format(words=quoted)


_RESPONSE_LINE = re.compile(
    r'^\s*"?(?P<word>.+?)"?\s*:\s*(?P<label>relevant|irrelevant)\b\s*(?P<expl>.*)$'
)


def parse_response(words: Sequence[str], text: str) -> dict[str, tuple[str, str]]:
    """Parse '{word} : relevant/irrelevant {explanation}' lines for known words."""
    wanted = {normalize_word(w): w for w in words}
    found: dict[str, tuple[str, str]] = {}
    for line in text.splitlines():
        m = _RESPONSE_LINE.match(line)
        if not m:
            continue
        key = normalize_word(m.group("word"))
        if key in wanted and wanted[key] not in found:
            found[wanted[key]] = (m.group("label"), m.group("expl").strip())
    return found


def classify_words(
    lexicon: Lexicon,
    client: LlmClient | None = None,
    cache: ClassificationCache | None = None,
    *,
    batch_size: int = 40,
    max_workers: int = 4,
    allow_fallback: bool = True,
) -> list[ClassificationRecord]:
    """Label every lexicon word, preferring cache, then service, then fallback."""
    words = list(lexicon.words)
    results: dict[str, ClassificationRecord] = {}
    pending: list[str] = []
    for w in words:
        hit = cache.get(w) if cache is not None else None
        if hit is not None:
            results[w] = ClassificationRecord(w, hit[0], source="cache")
        else:
            pending.append(w)

    service_failed = False
    if pending and client is not None:
        batches = [pending[i : i + batch_size] for i in range(0, len(pending), batch_size)]

        def run_batch(batch: list[str]) -> dict[str, tuple[str, str]]:
            return parse_response(batch, client.complete(build_prompt(batch)))

        try:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                for batch, parsed in zip(batches, pool.map(run_batch, batches)):
                    for w in batch:
                        if w in parsed:
                            label, expl = parsed[w]
                            results[w] = ClassificationRecord(w, label, expl, source="service")
        except ConnectionError:
            service_failed = True

    unresolved = [w for w in pending if w not in results]
    if unresolved:
        if not allow_fallback:
            raise RuntimeError(
                "unresolved words (service "
                + ("unreachable" if service_failed or client is None else "incomplete")
                + ", cache miss, fallback disabled): "
                + ", ".join(unresolved)
            )
        for w in unresolved:
            results[w] = ClassificationRecord(w, fallback_classify(w), source="fallback")

    if cache is not None:
        for w in pending:
            rec = results[w]
            cache.put(w, rec.label, rec.source)
        cache.save()
    return [results[w] for w in words]


@dataclass(frozen=True)
class Vocabulary:
    """Immutable set of navigation-irrelevant words, plus build metadata."""

    words: frozenset[str]
    source: str = ""
    builder: str = ""
    created: str = ""

    def __post_init__(self) -> None:
        for w in self.words:
            if not w:
                raise ValueError("vocabulary words must be nonempty")
            if w not in _DELIMITERS and w != normalize_word(w):
                raise ValueError(f"vocabulary word not normalized: {w!r}")

    def __contains__(self, word: str) -> bool:
        return normalize_word(word) in self.words

    def __len__(self) -> int:
        return len(self.words)


def build_vocabulary(
    records: Iterable[ClassificationRecord],
    source: str = "",
    builder: str = "",
    created: str = "",
) -> Vocabulary:
    """Group the irrelevant-labeled words into a vocabulary."""
    words = frozenset(r.word for r in records if r.label == "irrelevant")
    return Vocabulary(words=words, source=source, builder=builder, created=created)


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    lines = [
        f"# {VOCAB_FORMAT}",
        f"# source: {vocab.source}",
        f"# builder: {vocab.builder}",
        f"# created: {vocab.created}",
    ]
    lines.extend(sorted(vocab.words))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != f"# {VOCAB_FORMAT}":
        raise ValueError(f"vocabulary format header mismatch (want '{VOCAB_FORMAT}')")
    meta = {"source": "", "builder": "", "created": ""}
    words = []
    for line in lines[1:]:
        if line.startswith("#"):
            body = line[1:].strip()
            for key in meta:
                if body.startswith(f"{key}:"):
                    meta[key] = body[len(key) + 1 :].strip()
        elif line:
            words.append(line)
    return Vocabulary(frozenset(words), meta["source"], meta["builder"], meta["created"])


def build_from_corpus(
    corpus: Sequence[str],
    *,
    client: LlmClient | None = None,
    cache: ClassificationCache | None = None,
    offline: bool = False,
    source: str = "",
    created: str = "",
) -> Vocabulary:
    """Corpus-to-vocabulary convenience used by the command line."""
    lexicon = extract_lexicon(corpus)
    use_client = None if offline else client
    records = classify_words(lexicon, use_client, cache)
    builder = "fallback" if use_client is None else (use_client.model or "service")
    return build_vocabulary(records, source=source, builder=builder, created=created)
