"""Next-token log-probability providers.

Every scorer maps a batch of token-id prefixes to a ``(batch, |V|)`` array
of natural-log probabilities and counts how often it was called.
"""

from __future__ import annotations

import json
import logging
import os
import selectors
import shlex
import struct
import subprocess
import threading
import zlib
from collections import Counter

import numpy as np

logger = logging.getLogger(__name__)

BOS, EOS, UNK = "<s>", "</s>", "<unk>"

MODEL_MAGIC = b"NLLM"
MODEL_VERSION = 1


class ScorerError(RuntimeError):
    pass


class ProtocolError(ScorerError):
    pass


class NormalizationError(ScorerError):
    pass


class ScorerTimeout(ScorerError):
    pass


class ModelFileError(ValueError):
    pass


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    pass


class Vocab:
    """Word/id bijection with reserved BOS, EOS and UNK at ids 0, 1, 2."""

    def __init__(self, words=()):
        self._words = []
        self._ids = {}
        for w in (BOS, EOS, UNK, *words):
            self.add(w)

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2

    def add(self, word: str) -> int:
        if word not in self._ids:
            self._ids[word] = len(self._words)
            self._words.append(word)
        return self._ids[word]

    def __contains__(self, word) -> bool:
        return word in self._ids

    def __getitem__(self, word: str) -> int:
        return self._ids[word]

    def __len__(self) -> int:
        return len(self._words)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._words == other._words

    def word(self, idx: int) -> str:
        return self._words[idx]

    @property
    def words(self) -> list:
        return list(self._words)

    def encode(self, text, add: bool = False) -> list:
        words = text.split() if isinstance(text, str) else text
        if add:
            return [self.add(w) for w in words]
        return [self._ids.get(w, self.unk_id) for w in words]

    def decode(self, ids, strip_special: bool = True) -> str:
        special = {self.bos_id, self.eos_id} if strip_special else set()
        return " ".join(self._words[i] for i in ids if i not in special)

    @classmethod
    def from_words(cls, words) -> "Vocab":
        words = list(words)
        if words[:3] != [BOS, EOS, UNK]:
            raise ValueError("vocabulary must start with the reserved words")
        return cls(words[3:])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self._words) + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_words(line.rstrip("\n") for line in fh if line.strip())


class Scorer:
    """Base class; subclasses implement ``_score``.

    ``calls`` and ``rows`` count :meth:`score` invocations and scored
    prefixes; ``max_rows`` is the widest batch seen.
    """

    vocab_size: int
    eos_id: int

    def __init__(self):
        self._lock = threading.Lock()
        self.reset_counters()

    def reset_counters(self):
        with self._lock:
            self.calls = 0
            self.rows = 0
            self.max_rows = 0

    def score(self, prefixes) -> np.ndarray:
        prefixes = [list(p) for p in prefixes]
        out = self._score(prefixes)
        with self._lock:
            self.calls += 1
            self.rows += len(prefixes)
            self.max_rows = max(self.max_rows, len(prefixes))
        return out

    def _score(self, prefixes) -> np.ndarray:
        raise NotImplementedError


class UniformScorer(Scorer):
    def __init__(self, vocab_size: int, eos_id: int = 1):
        super().__init__()
        self.vocab_size = vocab_size
        self.eos_id = eos_id

    def _score(self, prefixes):
        return np.full((len(prefixes), self.vocab_size), -np.log(self.vocab_size))


class BigramScorer(Scorer):
    """Scores with a fixed transition table ``P[prev, next]``.

    Row ``start`` of ``table`` holds the distribution for an empty prefix.
    """

    def __init__(self, logprobs, eos_id: int, start: int | None = None):
        super().__init__()
        self.table = np.asarray(logprobs, dtype=np.float64)
        self.vocab_size = self.table.shape[1]
        self.eos_id = eos_id
        self.start = self.table.shape[0] - 1 if start is None else start

    def _score(self, prefixes):
        last = [p[-1] if p else self.start for p in prefixes]
        return self.table[last]


def random_bigram(vocab_size: int, eos_id: int, seed: int, concentration: float = 0.5):
    """A seeded random bigram scorer; the extra last row is the start state."""
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.full(vocab_size, concentration), size=vocab_size + 1)
    probs = np.maximum(probs, 1e-12)
    probs /= probs.sum(axis=1, keepdims=True)
    return BigramScorer(np.log(probs), eos_id=eos_id)


def logsumexp_rows(rows) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    m = rows.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (m + np.log(np.exp(rows - m).sum(axis=1, keepdims=True)))[:, 0]


class NgramLm(Scorer):
    """Interpolated add-k n-gram language model.

    The probability of ``w`` after history ``h`` mixes orders 1..n::

        P(w | h) = sum_m  weights[m-1] * (c(h_m w) + k) / (c(h_m) + k |S|)

    where ``h_m`` is the last ``m - 1`` tokens of the BOS-padded history and
    ``S`` is the vocabulary without BOS (BOS is never predicted). A history
    never seen with ``k = 0`` borrows the next lower order's distribution.

    Parameters
    ----------
    n : int
        Model order.
    k : float
        Add-k smoothing constant.
    weights : sequence of float, optional
        Interpolation weights for orders 1..n; uniform by default.
    """

    def __init__(self, n: int = 3, k: float = 0.1, weights=None):
        super().__init__()
        self.n = n
        self.k = k
        self.weights = weights
        self.vocab = None
        self._cache = {}

    def get_params(self) -> dict:
        return {"n": self.n, "k": self.k, "weights": self.weights}

    def _check_params(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k!r}")
        weights = self.weights
        if weights is None:
            weights = [1.0 / self.n] * self.n
        weights = [float(w) for w in weights]
        if len(weights) != self.n or min(weights) < 0 or abs(sum(weights) - 1) > 1e-9:
            raise ValueError("weights must be n non-negative numbers summing to 1")
        return weights

    def fit(self, corpus, vocab: Vocab | None = None) -> "NgramLm":
        """Count n-grams over ``corpus`` (sentences of words or token ids).

        Sentences given as strings or word lists are added to ``vocab``
        (a fresh one by default); EOS is appended to every sentence.
        """
        self._weights = self._check_params()
        corpus = list(corpus)
        if not corpus:
            raise ValueError("empty corpus")
        self.vocab = vocab if vocab is not None else Vocab()
        sentences = []
        for sent in corpus:
            if isinstance(sent, str):
                sent = sent.split()
            sentences.append([self.vocab.add(w) if isinstance(w, str) else int(w)
                              for w in sent])
        bos, eos = self.vocab.bos_id, self.vocab.eos_id
        counts = [Counter() for _ in range(self.n)]
        for sent in sentences:
            padded = [bos] * (self.n - 1) + sent + [eos]
            for i in range(self.n - 1, len(padded)):
                for m in range(1, self.n + 1):
                    counts[m - 1][tuple(padded[i - m + 1:i + 1])] += 1
        self._set_counts(counts)
        return self

    def _set_counts(self, counts):
        self.counts = counts
        self.vocab_size = len(self.vocab)
        self.eos_id = self.vocab.eos_id
        # next-token count vectors per history, one dict per order
        V = self.vocab_size
        self._next = []
        for m, table in enumerate(counts, start=1):
            by_hist = {}
            for gram, c in table.items():
                by_hist.setdefault(gram[:-1], {})[gram[-1]] = c
            self._next.append({h: (np.fromiter(d.keys(), int, len(d)),
                                   np.fromiter(d.values(), float, len(d)))
                               for h, d in by_hist.items()})
        support = np.ones(V, dtype=bool)
        support[self.vocab.bos_id] = False
        self._support = support
        self._cache = {}

    def _order_probs(self, m: int, hist: tuple, lower):
        entry = self._next[m - 1].get(hist)
        V = self.vocab_size
        nsupport = V - 1
        if entry is None:
            if self.k == 0:
                return lower
            p = np.zeros(V)
            p[self._support] = 1.0 / nsupport
            return p
        idx, cnt = entry
        total = cnt.sum()
        p = np.zeros(V)
        p[self._support] = self.k
        p[idx] += cnt
        return p / (total + self.k * nsupport)

    def next_probs(self, prefix) -> np.ndarray:
        if self.vocab is None:
            raise RuntimeError("model is not fitted")
        hist = tuple([self.vocab.bos_id] * (self.n - 1) + list(prefix))
        hist = hist[len(hist) - (self.n - 1):] if self.n > 1 else ()
        cached = self._cache.get(hist)
        if cached is not None:
            return cached
        mix = np.zeros(self.vocab_size)
        lower = None
        for m in range(1, self.n + 1):
            p = self._order_probs(m, hist[len(hist) - (m - 1):] if m > 1 else (), lower)
            mix += self._weights[m - 1] * p
            lower = p
        with np.errstate(divide="ignore"):
            row = np.log(mix)
        row.setflags(write=False)
        self._cache[hist] = row
        return row

    def _score(self, prefixes):
        return np.stack([self.next_probs(p) for p in prefixes]) if prefixes \
            else np.zeros((0, self.vocab_size))

    # ------------------------------------------------------------- file I/O

    def save(self, path):
        payload = {
            "n": self.n, "k": self.k, "weights": self._weights,
            "vocab": self.vocab.words,
            "counts": [[[list(g), c] for g, c in sorted(t.items())]
                       for t in self.counts],
        }
        body = zlib.compress(json.dumps(payload).encode("utf-8"))
        with open(path, "wb") as fh:
            fh.write(MODEL_MAGIC + struct.pack("<HI", MODEL_VERSION, len(body)))
            fh.write(body)

    @classmethod
    def load(cls, path) -> "NgramLm":
        with open(path, "rb") as fh:
            data = fh.read()
        if len(data) < 10:
            raise CorruptModelError(f"{path}: truncated or empty model file")
        if data[:4] != MODEL_MAGIC:
            raise ModelVersionError(f"{path}: not a model file (bad magic bytes)")
        version, size = struct.unpack("<HI", data[4:10])
        if version != MODEL_VERSION:
            raise ModelVersionError(f"{path}: unsupported model version {version}")
        body = data[10:]
        if len(body) != size:
            raise CorruptModelError(f"{path}: payload length mismatch")
        try:
            payload = json.loads(zlib.decompress(body).decode("utf-8"))
        except (zlib.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptModelError(f"{path}: {exc}") from exc
        model = cls(n=payload["n"], k=payload["k"], weights=payload["weights"])
        model._weights = model._check_params()
        model.vocab = Vocab.from_words(payload["vocab"])
        model._set_counts([Counter({tuple(g): c for g, c in t})
                           for t in payload["counts"]])
        return model


class ExternalScorer(Scorer):
    """Client for a scorer running in a child process.

    Speaks line-delimited JSON over the child's stdin/stdout: one
    ``{"prefixes": [[...], ...]}`` request per line, answered by one
    ``{"logprobs": [[...], ...]}`` line in the same order.
    """

    def __init__(self, command, vocab_size: int, eos_id: int = 1,
                 timeout: float = 30.0, tolerance: float = 1e-3):
        super().__init__()
        if isinstance(command, str):
            command = shlex.split(command)
        self.command = list(command)
        self.vocab_size = vocab_size
        self.eos_id = eos_id
        self.timeout = timeout
        self.tolerance = tolerance
        self._io_lock = threading.Lock()
        self._buf = b""
        self._proc = subprocess.Popen(
            self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        self._sel = selectors.DefaultSelector()
        self._sel.register(self._proc.stdout, selectors.EVENT_READ)

    @classmethod
    def from_env(cls, vocab_size: int, eos_id: int = 1, var: str = "LOGICBEAM_SCORER_CMD"):
        cmd = os.environ.get(var)
        if not cmd:
            raise ScorerError(f"{var} is not set")
        return cls(cmd, vocab_size, eos_id)

    def _readline(self) -> bytes:
        fd = self._proc.stdout.fileno()
        while b"\n" not in self._buf:
            if not self._sel.select(self.timeout):
                raise ScorerTimeout(f"no response within {self.timeout}s")
            chunk = os.read(fd, 1 << 16)
            if not chunk:
                raise ProtocolError("scorer process closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _score(self, prefixes):
        payload = {"prefixes": [[int(t) for t in p] for p in prefixes]}
        request = json.dumps(payload).encode("utf-8") + b"\n"
        with self._io_lock:
            try:
                self._proc.stdin.write(request)
                self._proc.stdin.flush()
            except BrokenPipeError as exc:
                raise ProtocolError("scorer process is not accepting input") from exc
            line = self._readline()
        try:
            rows = json.loads(line)["logprobs"]
            rows = np.asarray(rows, dtype=np.float64)
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed response: {line[:200]!r}") from exc
        if rows.shape != (len(prefixes), self.vocab_size):
            raise ProtocolError(
                f"expected shape {(len(prefixes), self.vocab_size)}, got {rows.shape}")
        if len(rows):
            err = np.abs(logsumexp_rows(rows))
            if not np.all(err <= self.tolerance):
                raise NormalizationError(
                    f"row logsumexp off by {float(np.nanmax(err)):.3g}")
        return rows

    def close(self):
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        self._sel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
