"""Vocabulary construction, pretrained-vector ingestion, and the embedding layer.

The embedding table stores one column per vocabulary entry (dim x |V|); looking
up a token selects its column, which is the matrix-times-one-hot projection of
the word. Position-feature mode extends each word vector with two small learned
distance embeddings.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import INDICATOR_TOKENS, AnnotatedSequence, ParseError

UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (UNK_TOKEN,) + INDICATOR_TOKENS


def fan_in_init(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform init on [-1/sqrt(fan_in), +1/sqrt(fan_in)] with fan_in = cols."""
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def _random_columns(dim: int, n: int, rng: np.random.Generator) -> np.ndarray:
    # each column is a dim x 1 matrix under fan-in init, so the bound is 1
    return rng.uniform(-1.0, 1.0, size=(dim, n))


@dataclass
class Vocabulary:
    """Bijective token <-> dense index map with reserved UNK and indicator entries."""

    tokens: list[str]
    index_of: dict[str, int]

    @classmethod
    def from_tokens(cls, tokens: Iterable[str]) -> "Vocabulary":
        ordered = list(dict.fromkeys(tokens))
        for reserved in RESERVED_TOKENS:
            if reserved not in ordered:
                raise ValueError(f"reserved token {reserved!r} missing")
        return cls(tokens=ordered, index_of={t: i for i, t in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index_of

    @property
    def unk_index(self) -> int:
        return self.index_of[UNK_TOKEN]

    def lookup(self, token: str) -> int:
        return self.index_of.get(token, self.unk_index)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls.from_tokens(line for line in lines if line)


def build_vocab(corpus: Iterable[AnnotatedSequence], min_count: int = 1) -> Vocabulary:
    """Tokens with frequency >= min_count, plus UNK and the indicator tokens.

    Order is reserved tokens first, then corpus tokens by descending frequency
    (ties alphabetical), which keeps indices stable across runs.
    """
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(tok for seq in corpus for tok in seq.tokens)
    kept = [
        tok
        for tok, c in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        if c >= min_count and tok not in RESERVED_TOKENS
    ]
    return Vocabulary.from_tokens(list(RESERVED_TOKENS) + kept)


@dataclass
class EmbeddingTable:
    """Word-vector store: ``vectors[:, i]`` is the vector of vocabulary index i."""

    dim: int
    vectors: np.ndarray

    def __post_init__(self):
        if self.vectors.shape[0] != self.dim:
            raise ValueError(f"vector rows {self.vectors.shape} != dim {self.dim}")

    @classmethod
    def random(cls, dim: int, vocab: Vocabulary, rng: np.random.Generator) -> "EmbeddingTable":
        return cls(dim=dim, vectors=_random_columns(dim, len(vocab), rng))

    def column(self, index: int) -> np.ndarray:
        return self.vectors[:, index]


def _looks_like_header(fields: list[str]) -> bool:
    if len(fields) != 2:
        return False
    try:
        int(fields[0]), int(fields[1])
    except ValueError:
        return False
    return True


def load_pretrained(
    path: str | Path,
    vocab: Vocabulary,
    rng: np.random.Generator,
    dim: int | None = None,
) -> EmbeddingTable:
    """Load whitespace-delimited text vectors ("token v1 .. vD" per line).

    An optional "count dim" header line is auto-detected. In-vocabulary tokens
    receive their file vectors; everything else (including the indicator
    tokens) is randomly initialized. The dimension comes from the file when it
    has data lines, otherwise from ``dim``.
    """
    file_dim: int | None = None
    found: dict[int, np.ndarray] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            if line_no == 1 and _looks_like_header(fields):
                continue
            token, values = fields[0], fields[1:]
            if file_dim is None:
                file_dim = len(values)
                if file_dim == 0:
                    raise ParseError(line_no, f"no vector values after token {token!r}")
            elif len(values) != file_dim:
                raise ParseError(
                    line_no,
                    f"expected {file_dim} values, got {len(values)} for {token!r}",
                )
            if token in vocab and vocab.index_of[token] not in found:
                try:
                    found[vocab.index_of[token]] = np.array(values, dtype=np.float64)
                except ValueError:
                    raise ParseError(line_no, f"non-numeric vector entry for {token!r}")
    out_dim = file_dim if file_dim is not None else dim
    if out_dim is None:
        raise ValueError("vector file has no data lines and no dim was given")
    vectors = _random_columns(out_dim, len(vocab), rng)
    for idx, vec in found.items():
        vectors[:, idx] = vec
    return EmbeddingTable(dim=out_dim, vectors=vectors)


@dataclass
class PositionFeatureTables:
    """Learned embeddings of clipped signed distances to each nominal head."""

    max_dist: int
    dim: int
    d1_vectors: np.ndarray  # (2*max_dist + 1, dim)
    d2_vectors: np.ndarray

    @classmethod
    def random(cls, max_dist: int, dim: int, rng: np.random.Generator) -> "PositionFeatureTables":
        rows = 2 * max_dist + 1
        return cls(
            max_dist=max_dist,
            dim=dim,
            d1_vectors=_random_columns(dim, rows, rng).T.copy(),
            d2_vectors=_random_columns(dim, rows, rng).T.copy(),
        )

    def row_index(self, distance: int) -> int:
        clipped = max(-self.max_dist, min(self.max_dist, distance))
        return clipped + self.max_dist


def embed(
    seq: AnnotatedSequence,
    table: EmbeddingTable,
    vocab: Vocabulary,
    pf: PositionFeatureTables | None = None,
) -> np.ndarray:
    """Map a token sequence to its input matrix, one row per token.

    Out-of-vocabulary tokens use the UNK column. With position features the
    word vector is extended by the two distance embeddings (rows of width
    dim + 2 * pf.dim).
    """
    indices = [vocab.lookup(tok) for tok in seq.tokens]
    base = table.vectors[:, indices].T
    if seq.position_features is None:
        return np.ascontiguousarray(base)
    if pf is None:
        raise ValueError("sequence has position features but no PF tables were given")
    r1 = [pf.row_index(d1) for d1, _ in seq.position_features]
    r2 = [pf.row_index(d2) for _, d2 in seq.position_features]
    return np.hstack([base, pf.d1_vectors[r1], pf.d2_vectors[r2]])
