"""Synthetic relation tasks with controllable long-distance structure.

The order task hides its label in the relative order of two key tokens placed
at least ``separation`` positions apart between the nominals, with every key
kept at least two random filler tokens away from nominals, indicators, and
sentence boundaries. A window-3 convolution therefore sees label-independent
local windows, while an order-aware encoder can recover the label. Optional
distractor keys outside the nominal span make the task ambiguous unless the
model knows where the nominals are.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .data import Example, RelationSchema

KEY_FIRST = "pivot"
KEY_SECOND = "quill"

ORDER_SCHEMA = RelationSchema(
    families=("linked",), directional=(True,), neutral="Other"
)

SEPARABLE_SCHEMA = RelationSchema(
    families=("alpha", "beta"), directional=(True, True), neutral="Other"
)


@dataclass
class SyntheticTask:
    train: list[Example]
    test: list[Example]
    schema: RelationSchema


def _fillers(rng: random.Random, n: int, vocab_size: int) -> list[str]:
    return [f"f{rng.randrange(vocab_size):02d}" for _ in range(n)]


def _order_example(
    rng: random.Random,
    idx: int,
    separation: int,
    distractor_prob: float,
    vocab_size: int,
) -> Example:
    forward = rng.random() < 0.5
    key1, key2 = (KEY_FIRST, KEY_SECOND) if forward else (KEY_SECOND, KEY_FIRST)
    label = "linked(e1,e2)" if forward else "linked(e2,e1)"

    pre = _fillers(rng, rng.randint(2, 4), vocab_size)
    if rng.random() < distractor_prob:
        pre.insert(rng.randint(1, len(pre) - 1), rng.choice((KEY_FIRST, KEY_SECOND)))
    post = _fillers(rng, rng.randint(2, 4), vocab_size)
    if rng.random() < distractor_prob:
        post.insert(rng.randint(1, len(post) - 1), rng.choice((KEY_FIRST, KEY_SECOND)))

    tokens = list(pre)
    tokens += _fillers(rng, 1, vocab_size)  # e1 nominal, drawn from the filler vocab
    e1 = (len(tokens) - 1, len(tokens) - 1)
    tokens += _fillers(rng, rng.randint(2, 3), vocab_size)
    tokens.append(key1)
    tokens += _fillers(rng, separation - 1, vocab_size)
    tokens.append(key2)
    tokens += _fillers(rng, rng.randint(2, 3), vocab_size)
    tokens += _fillers(rng, 1, vocab_size)  # e2 nominal
    e2 = (len(tokens) - 1, len(tokens) - 1)
    tokens += post
    return Example(idx, tuple(tokens), e1, e2, label)


def make_order_task(
    n_train: int,
    n_test: int,
    seed: int,
    separation: int = 9,
    distractor_prob: float = 0.0,
    vocab_size: int = 20,
) -> SyntheticTask:
    """Key-order task: which of the two distant key tokens comes first."""
    if separation < 2:
        raise ValueError(f"separation must be >= 2, got {separation}")
    rng = random.Random(seed)
    train = [
        _order_example(rng, i, separation, distractor_prob, vocab_size)
        for i in range(n_train)
    ]
    test = [
        _order_example(rng, n_train + i, separation, distractor_prob, vocab_size)
        for i in range(n_test)
    ]
    return SyntheticTask(train=train, test=test, schema=ORDER_SCHEMA)


def make_separable_task(n: int, seed: int, vocab_size: int = 10) -> SyntheticTask:
    """Trivially separable 4-class task: a signal token after e1 decides the label."""
    rng = random.Random(seed)
    labels = ["alpha(e1,e2)", "alpha(e2,e1)", "beta(e1,e2)", "beta(e2,e1)"]
    examples = []
    for i in range(n):
        cls = i % len(labels)
        tokens = _fillers(rng, rng.randint(1, 2), vocab_size)
        tokens.append("head")
        e1 = (len(tokens) - 1, len(tokens) - 1)
        tokens.append(f"sig{cls}")
        tokens += _fillers(rng, rng.randint(2, 3), vocab_size)
        tokens.append("tail")
        e2 = (len(tokens) - 1, len(tokens) - 1)
        tokens += _fillers(rng, 1, vocab_size)
        examples.append(Example(i, tuple(tokens), e1, e2, labels[cls]))
    return SyntheticTask(train=examples, test=list(examples), schema=SEPARABLE_SCHEMA)
