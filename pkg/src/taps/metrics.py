"""Diversity metrics over sets of generated texts.

Every metric takes a SampleSet (the generations kept for one prompt) and
shares one tokenizer, so scores are comparable across methods. Reported
scales: intra_distinct, div_bleu, ead and embed_diversity are all x100;
self_bleu stays in [0, 1].
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import urllib.request
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")

_BLEU_MAX_N = 4
_BLEU_FLOOR = 1e-9
_EAD_MAX_N = 5


class EmbeddingUnavailable(RuntimeError):
    """The embedding provider could not produce vectors."""


@dataclass(frozen=True)
class SampleSet:
    """The retained generations for one prompt (at least two)."""

    prompt_id: str
    texts: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.texts) < 2:
            raise ValueError("a sample set needs at least two texts")


def tokenize(text: str) -> list[str]:
    """Lowercase, then split into alphanumeric runs and single other chars."""
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> list[tuple[str, ...]]:
    if n < 1:
        raise ValueError("n-gram order must be positive")
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def distinct_n(tokens: Sequence[str], n: int) -> float:
    """Unique n-grams over total n-grams; 0.0 when the sequence is too short."""
    grams = ngrams(tokens, n)
    if not grams:
        return 0.0
    return len(set(grams)) / len(grams)


def intra_distinct(samples: SampleSet) -> float:
    """Mean over samples of mean distinct-n for n in 1..3, x100.

    Orders a sample is too short to form are left out of that sample's
    average rather than counted as zeros.
    """
    per_sample = []
    for text in samples.texts:
        toks = tokenize(text)
        vals = [distinct_n(toks, n) for n in (1, 2, 3) if len(toks) >= n]
        per_sample.append(sum(vals) / len(vals) if vals else 0.0)
    return 100.0 * sum(per_sample) / len(per_sample)


def _modified_precision(cand: Sequence[str], refs: list[list[str]], n: int) -> tuple[int, int]:
    cand_counts = Counter(ngrams(cand, n))
    total = sum(cand_counts.values())
    if total == 0:
        return 0, 0
    clip: Counter = Counter()
    for ref in refs:
        for gram, c in Counter(ngrams(ref, n)).items():
            if c > clip[gram]:
                clip[gram] = c
    hit = sum(min(c, clip[g]) for g, c in cand_counts.items())
    return hit, total


def bleu(candidate: Sequence[str], references: list[list[str]]) -> float:
    """Corpus-style BLEU of one candidate against multiple references.

    Modified precision up to 4-grams with uniform weights and a geometric
    mean over the orders the candidate actually has n-grams for; zero
    precisions are floored at 1e-9. Brevity penalty uses the reference
    length closest to the candidate's (ties to the shorter reference).
    """
    if not references:
        raise ValueError("need at least one reference")
    c = len(candidate)
    if c == 0:
        return 0.0
    log_sum = 0.0
    used = 0
    for n in range(1, _BLEU_MAX_N + 1):
        hit, total = _modified_precision(candidate, references, n)
        if total == 0:
            continue
        used += 1
        log_sum += np.log(max(hit / total, _BLEU_FLOOR))
    if used == 0:
        return 0.0
    r = min((len(ref) for ref in references), key=lambda rl: (abs(rl - c), rl))
    bp = 1.0 if c > r else float(np.exp(1.0 - r / c))
    return bp * float(np.exp(log_sum / used))


def self_bleu(samples: SampleSet) -> float:
    """Mean BLEU of each sample against the pool of its peers, in [0, 1]."""
    token_lists = [tokenize(t) for t in samples.texts]
    scores = []
    for i, cand in enumerate(token_lists):
        refs = [toks for j, toks in enumerate(token_lists) if j != i]
        scores.append(bleu(cand, refs))
    return sum(scores) / len(scores)


def div_bleu(samples: SampleSet) -> float:
    """(1 - self_bleu) x100: higher means less mutual overlap."""
    return 100.0 * (1.0 - self_bleu(samples))


def global_ngram_vocab(texts: Sequence[str], max_n: int = _EAD_MAX_N) -> dict[int, int]:
    """Distinct n-gram counts pooled over every text, for n = 1..max_n."""
    vocab: dict[int, set] = {n: set() for n in range(1, max_n + 1)}
    for text in texts:
        toks = tokenize(text)
        for n in range(1, max_n + 1):
            vocab[n].update(ngrams(toks, n))
    return {n: len(s) for n, s in vocab.items()}


def ead(samples: SampleSet, vocab_sizes: dict[int, int]) -> float:
    """Expectation-adjusted distinct n-grams, averaged over n = 1..5, x100.

    vocab_sizes gives global distinct n-gram counts over all evaluated
    generations (see global_ngram_vocab), which calibrates the expected
    number of distinct n-grams a uniform sampler would produce. The ratio
    is reported unclamped: values above 100 are meaningful.
    """
    token_lists = [tokenize(t) for t in samples.texts]
    vals = []
    for n in range(1, _EAD_MAX_N + 1):
        grams: list[tuple[str, ...]] = []
        for toks in token_lists:
            grams.extend(ngrams(toks, n))
        c_n = len(grams)
        if c_n == 0:
            continue
        v_n = vocab_sizes.get(n, 0)
        if v_n < 1:
            raise ValueError(f"order-{n} vocabulary is empty but the set has {c_n} n-grams")
        n_distinct = len(set(grams))
        expected = v_n * (1.0 - ((v_n - 1.0) / v_n) ** c_n)
        vals.append(n_distinct / expected)
    if not vals:
        return 0.0
    return 100.0 * sum(vals) / len(vals)


class EmbeddingProvider(Protocol):
    """Maps texts to fixed-dimension vectors; same text, same vector."""

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray: ...


def embed_diversity(samples: SampleSet, provider: EmbeddingProvider) -> float:
    """Mean pairwise cosine distance of the embedded texts, x100.

    Vectors are L2-normalized first; zero vectors are left as-is and score
    distance 1 against everything. Provider failures surface as
    EmbeddingUnavailable for the caller to report.
    """
    try:
        vecs = np.asarray(provider.embed_batch(list(samples.texts)), dtype=np.float64)
    except EmbeddingUnavailable:
        raise
    except Exception as exc:
        raise EmbeddingUnavailable(f"embedding provider failed: {exc}") from exc
    if vecs.ndim != 2 or vecs.shape[0] != len(samples.texts):
        raise EmbeddingUnavailable("embedding provider returned a malformed batch")
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    unit = np.divide(vecs, norms, out=np.zeros_like(vecs), where=norms > 0)
    sims = unit @ unit.T
    n = len(samples.texts)
    iu = np.triu_indices(n, k=1)
    return 100.0 * float(np.mean(1.0 - sims[iu]))


class HashedNgramEmbedder:
    """Character n-gram hashing into a fixed number of buckets.

    A cheap, dependency-free stand-in for a semantic embedder: it measures
    surface overlap only, so scores are comparable within a run but say
    nothing about meaning. Bucketing uses blake2b, not Python's salted
    hash(), so vectors are stable across processes.
    """

    def __init__(self, dim: int = 256, n: int = 3, seed: int = 0):
        if dim < 2 or n < 1:
            raise ValueError("need dim >= 2 and n >= 1")
        self.dim = dim
        self.n = n
        self._salt = seed.to_bytes(8, "little", signed=False)

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, salt=self._salt).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            low = text.lower()
            for j in range(max(len(low) - self.n + 1, 0)):
                out[i, self._bucket(low[j : j + self.n])] += 1.0
        return out


class RemoteEmbedder:
    """Thin client for an external embedding service.

    Reads TAPS_EMBED_ENDPOINT (required) and TAPS_EMBED_TOKEN (optional)
    from the environment, posts {"texts": [...]} as JSON, and expects
    {"vectors": [[...], ...]} back. Any transport or shape problem raises
    EmbeddingUnavailable; a custom transport can be injected for tests.
    """

    def __init__(self, transport: Callable[[str, bytes, dict], bytes] | None = None):
        self.endpoint = os.environ.get("TAPS_EMBED_ENDPOINT", "")
        self.token = os.environ.get("TAPS_EMBED_TOKEN", "")
        self._transport = transport if transport is not None else self._http_post

    @staticmethod
    def _http_post(url: str, payload: bytes, headers: dict) -> bytes:
        req = urllib.request.Request(url, data=payload, headers=headers, method="POST")
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.read()

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if not self.endpoint:
            raise EmbeddingUnavailable("TAPS_EMBED_ENDPOINT is not set")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        payload = json.dumps({"texts": list(texts)}).encode("utf-8")
        try:
            raw = self._transport(self.endpoint, payload, headers)
            parsed = json.loads(raw.decode("utf-8"))
            vecs = np.asarray(parsed["vectors"], dtype=np.float64)
        except Exception as exc:
            raise EmbeddingUnavailable(f"embedding service call failed: {exc}") from exc
        if vecs.ndim != 2 or vecs.shape[0] != len(texts):
            raise EmbeddingUnavailable("embedding service returned a malformed batch")
        return vecs
