"""Corpus records, nominal annotation, context lengths, and KBP dataset refinement.

The on-disk record grammar (shared by SemEval-2010 Task 8 and the refined KBP
corpus) is:

    line 1: <integer id> TAB "<sentence with inline <e1>..</e1> <e2>..</e2> markup>"
    line 2: relation name, optionally suffixed "(e1,e2)" or "(e2,e1)"
    line 3: "Comment:" free text (optional)
    line 4: blank

Tokenization is whitespace splitting after the entity markup has been separated
from adjacent characters; no lowercasing unless requested.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Sequence

E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE = "<e1>", "</e1>", "<e2>", "</e2>"
INDICATOR_TOKENS = (E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE)

_LABEL_RE = re.compile(r"^(?P<family>.+?)\((?P<dir>e1,e2|e2,e1)\)$")


class ParseError(ValueError):
    """Malformed record; message cites the line number and offending fragment."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class SchemaError(ValueError):
    """Relation name outside the active schema."""


def split_label(label: str) -> tuple[str, str | None]:
    """Split "Family(e1,e2)" into ("Family", "e1,e2"); bare names get None."""
    m = _LABEL_RE.match(label)
    if m:
        return m.group("family"), m.group("dir")
    return label, None


def make_label(family: str, direction: str | None) -> str:
    return family if direction is None else f"{family}({direction})"


def flip_direction(direction: str) -> str:
    return "e2,e1" if direction == "e1,e2" else "e1,e2"


@dataclass(frozen=True)
class RelationSchema:
    """Ordered relation inventory: directional families plus one neutral class."""

    families: tuple[str, ...]
    directional: tuple[bool, ...]
    neutral: str

    def __post_init__(self):
        if len(self.families) != len(self.directional):
            raise ValueError("families and directional flags differ in length")
        if self.neutral in self.families:
            raise ValueError(f"neutral class {self.neutral!r} repeated in families")

    @property
    def labels(self) -> tuple[str, ...]:
        out: list[str] = []
        for fam, directed in zip(self.families, self.directional):
            if directed:
                out.append(make_label(fam, "e1,e2"))
                out.append(make_label(fam, "e2,e1"))
            else:
                out.append(fam)
        out.append(self.neutral)
        return tuple(out)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def label_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise SchemaError(f"label {label!r} not in schema ({self.n_classes} classes)")

    def family_of(self, label: str) -> str | None:
        """Family name of a label, or None for the neutral class."""
        if label == self.neutral:
            return None
        family, _ = split_label(label)
        if family not in self.families:
            raise SchemaError(f"label {label!r} not in schema")
        return family


SEMEVAL_FAMILIES = (
    "Cause-Effect",
    "Component-Whole",
    "Content-Container",
    "Entity-Destination",
    "Entity-Origin",
    "Instrument-Agency",
    "Member-Collection",
    "Message-Topic",
    "Product-Producer",
)

SEMEVAL_SCHEMA = RelationSchema(
    families=SEMEVAL_FAMILIES,
    directional=(True,) * len(SEMEVAL_FAMILIES),
    neutral="Other",
)

KBP37_FAMILIES = (
    "per:alternate_names",
    "per:origin",
    "per:spouse",
    "per:title",
    "per:employee_of",
    "per:countries_of_residence",
    "per:stateorprovinces_of_residence",
    "per:cities_of_residence",
    "per:country_of_birth",
    "org:alternate_names",
    "org:subsidiaries",
    "org:top_members/employees",
    "org:founded",
    "org:founded_by",
    "org:country_of_headquarters",
    "org:stateorprovince_of_headquarters",
    "org:city_of_headquarters",
    "org:members",
)

KBP37_SCHEMA = RelationSchema(
    families=KBP37_FAMILIES,
    directional=(True,) * len(KBP37_FAMILIES),
    neutral="no_relation",
)


def infer_schema(labels: Iterable[str]) -> RelationSchema:
    """Match a builtin schema, or build an ad-hoc one from the observed labels.

    Directed labels become directional families; at most one direction-free
    label may occur and becomes the neutral class ("Other" when absent).
    """
    observed = set(labels)
    if observed and observed <= set(SEMEVAL_SCHEMA.labels):
        return SEMEVAL_SCHEMA
    if observed and observed <= set(KBP37_SCHEMA.labels):
        return KBP37_SCHEMA
    families: set[str] = set()
    bare: set[str] = set()
    for lab in observed:
        family, direction = split_label(lab)
        (families if direction else bare).add(family)
    if len(bare) > 1:
        raise SchemaError(f"multiple direction-free labels: {', '.join(sorted(bare))}")
    neutral = next(iter(bare)) if bare else "Other"
    if neutral in families:
        raise SchemaError(f"label {neutral!r} occurs both directed and direction-free")
    return RelationSchema(
        families=tuple(sorted(families)),
        directional=(True,) * len(families),
        neutral=neutral,
    )


@dataclass(frozen=True)
class Example:
    """One dataset record: tokens without indicator tokens, two nominal spans, label.

    Spans are inclusive (start, end) token-index pairs; e1 is the nominal that
    appears first in the sentence.
    """

    id: int
    tokens: tuple[str, ...]
    e1_span: tuple[int, int]
    e2_span: tuple[int, int]
    label: str

    def __post_init__(self):
        t = len(self.tokens)
        for name, (lo, hi) in (("e1", self.e1_span), ("e2", self.e2_span)):
            if not (0 <= lo <= hi < t):
                raise ValueError(f"{name} span {(lo, hi)} out of bounds for {t} tokens")
        if self.e1_span[1] >= self.e2_span[0]:
            raise ValueError(
                f"spans overlap or out of order: e1={self.e1_span}, e2={self.e2_span}"
            )

    @property
    def e1_surface(self) -> str:
        lo, hi = self.e1_span
        return " ".join(self.tokens[lo : hi + 1])

    @property
    def e2_surface(self) -> str:
        lo, hi = self.e2_span
        return " ".join(self.tokens[lo : hi + 1])


@dataclass(frozen=True)
class AnnotatedSequence:
    """Token sequence ready for encoding.

    Exactly one of two annotation styles is present: indicator tokens inserted
    into ``tokens`` (position-indicator mode), or per-token signed distances to
    the two nominal heads in ``position_features`` (position-feature mode).
    Plain sequences carry neither.
    """

    tokens: tuple[str, ...]
    position_features: tuple[tuple[int, int], ...] | None = None

    def __post_init__(self):
        if self.position_features is not None:
            if any(tok in INDICATOR_TOKENS for tok in self.tokens):
                raise ValueError("position features and indicator tokens are exclusive")
            if len(self.position_features) != len(self.tokens):
                raise ValueError("one (d1, d2) pair per token required")


# ---------------------------------------------------------------------------
# Parsing and serialization


def _tokenize_markup(sentence: str, lowercase: bool) -> list[str]:
    for marker in INDICATOR_TOKENS:
        sentence = sentence.replace(marker, f" {marker} ")
    if lowercase:
        toks = []
        for tok in sentence.split():
            toks.append(tok if tok in INDICATOR_TOKENS else tok.lower())
        return toks
    return sentence.split()


def _extract_spans(
    raw_tokens: list[str], line_no: int, allow_reversed: bool = False
) -> tuple[tuple[str, ...], tuple[int, int], tuple[int, int]]:
    """Strip the four markers from a token list, returning clean tokens and spans."""
    positions: dict[str, int] = {}
    clean: list[str] = []
    open_span: str | None = None
    bounds: dict[str, list[int]] = {"e1": [-1, -1], "e2": [-1, -1]}
    for tok in raw_tokens:
        if tok in (E1_OPEN, E2_OPEN):
            name = "e1" if tok == E1_OPEN else "e2"
            if tok in positions:
                raise ParseError(line_no, f"duplicate marker {tok}")
            if open_span is not None:
                raise ParseError(line_no, f"marker {tok} inside open <{open_span}> span")
            positions[tok] = len(clean)
            bounds[name][0] = len(clean)
            open_span = name
        elif tok in (E1_CLOSE, E2_CLOSE):
            name = "e1" if tok == E1_CLOSE else "e2"
            if tok in positions:
                raise ParseError(line_no, f"duplicate marker {tok}")
            if open_span != name:
                raise ParseError(line_no, f"unexpected marker {tok}")
            if bounds[name][0] == len(clean):
                raise ParseError(line_no, f"empty <{name}> span")
            positions[tok] = len(clean)
            bounds[name][1] = len(clean) - 1
            open_span = None
        else:
            clean.append(tok)
    missing = [m for m in INDICATOR_TOKENS if m not in positions]
    if missing:
        raise ParseError(line_no, f"missing markers: {' '.join(missing)}")
    e1 = tuple(bounds["e1"])
    e2 = tuple(bounds["e2"])
    if e1[1] >= e2[0] and e2[1] >= e1[0]:
        raise ParseError(line_no, f"overlapping spans e1={e1}, e2={e2}")
    if e1[0] > e2[0] and not allow_reversed:
        raise ParseError(line_no, "e1 appears after e2")
    return tuple(clean), e1, e2


def _iter_records(stream: Iterable[str]) -> Iterator[tuple[int, int, str, str]]:
    """Yield (line_no, id, inner_sentence, relation_line) per record."""
    lines = list(stream)
    i = 0
    n = len(lines)
    while i < n:
        if not lines[i].strip():
            i += 1
            continue
        line_no = i + 1
        head = lines[i].rstrip("\n")
        if "\t" not in head:
            raise ParseError(line_no, f"expected TAB after id in {head!r:.60}")
        id_part, sentence = head.split("\t", 1)
        try:
            rec_id = int(id_part)
        except ValueError:
            raise ParseError(line_no, f"non-integer id {id_part!r}")
        sentence = sentence.strip()
        # rare wrapped sentences continue until the closing quote
        while not sentence.endswith('"') or len(sentence) < 2:
            i += 1
            if i >= n:
                raise ParseError(line_no, "unterminated quoted sentence")
            sentence += " " + lines[i].strip()
        if not sentence.startswith('"'):
            raise ParseError(line_no, f"sentence not quoted: {sentence!r:.60}")
        i += 1
        if i >= n or not lines[i].strip():
            raise ParseError(line_no, "record missing relation line")
        relation = lines[i].strip()
        i += 1
        if i < n and lines[i].strip().startswith("Comment"):
            i += 1
        if i < n and lines[i].strip():
            raise ParseError(i + 1, f"expected blank separator, got {lines[i].strip()!r:.60}")
        yield line_no, rec_id, sentence[1:-1], relation


def _check_label(label: str, schema: RelationSchema | None, line_no: int) -> None:
    if schema is not None and label not in schema.labels:
        raise SchemaError(f"line {line_no}: unknown relation {label!r}")


def parse_semeval(
    stream: Iterable[str],
    schema: RelationSchema | None = None,
    lowercase: bool = False,
) -> list[Example]:
    """Parse a record stream into Examples, validating labels against ``schema``."""
    examples = []
    for line_no, rec_id, sentence, relation in _iter_records(stream):
        tokens, e1, e2 = _extract_spans(_tokenize_markup(sentence, lowercase), line_no)
        _check_label(relation, schema, line_no)
        examples.append(Example(rec_id, tokens, e1, e2, relation))
    return examples


def _marked_tokens(
    tokens: Sequence[str], e1: tuple[int, int], e2: tuple[int, int]
) -> list[str]:
    t = list(tokens)
    out = t[: e1[0]] + [E1_OPEN] + t[e1[0] : e1[1] + 1] + [E1_CLOSE]
    out += t[e1[1] + 1 : e2[0]] + [E2_OPEN] + t[e2[0] : e2[1] + 1] + [E2_CLOSE]
    out += t[e2[1] + 1 :]
    return out


def serialize_examples(examples: Iterable[Example], comments: bool = False) -> str:
    """Render Examples in the record grammar (inverse of parse_semeval)."""
    chunks = []
    for ex in examples:
        sentence = " ".join(_marked_tokens(ex.tokens, ex.e1_span, ex.e2_span))
        record = f'{ex.id}\t"{sentence}"\n{ex.label}\n'
        if comments:
            record += "Comment:\n"
        chunks.append(record + "\n")
    return "".join(chunks)


# ---------------------------------------------------------------------------
# Nominal annotation


def insert_position_indicators(ex: Example) -> AnnotatedSequence:
    """Wrap both nominal spans in indicator tokens, leaving other tokens unchanged."""
    return AnnotatedSequence(tuple(_marked_tokens(ex.tokens, ex.e1_span, ex.e2_span)))


def strip_position_indicators(
    seq: AnnotatedSequence,
) -> tuple[tuple[str, ...], tuple[int, int], tuple[int, int]]:
    """Inverse of insert_position_indicators: clean tokens plus the two spans."""
    return _extract_spans(list(seq.tokens), line_no=0)


def compute_position_features(ex: Example, max_dist: int = 30) -> AnnotatedSequence:
    """Signed token distances to each nominal head, clipped to [-max_dist, max_dist]."""

    def clip(d: int) -> int:
        return max(-max_dist, min(max_dist, d))

    e1_head, e2_head = ex.e1_span[0], ex.e2_span[0]
    pairs = tuple((clip(t - e1_head), clip(t - e2_head)) for t in range(len(ex.tokens)))
    return AnnotatedSequence(ex.tokens, position_features=pairs)


def annotate(ex: Example, mode: str, max_dist: int = 30) -> AnnotatedSequence:
    """Produce the model input sequence for a given annotation mode."""
    if mode == "pi":
        return insert_position_indicators(ex)
    if mode == "pf":
        return compute_position_features(ex, max_dist)
    if mode == "none":
        return AnnotatedSequence(ex.tokens)
    raise ValueError(f"unknown annotation mode {mode!r}")


# ---------------------------------------------------------------------------
# Context length


def context_length(ex: Example) -> int:
    """Token count from 3 before the first nominal to 3 after the second.

    Nominal tokens count; indicator tokens never exist on Example tokens.
    """
    lo = max(0, ex.e1_span[0] - 3)
    hi = min(len(ex.tokens) - 1, ex.e2_span[1] + 3)
    return hi - lo + 1


Bucket = tuple[int, int | None]

TABLE_BUCKETS = (10, 15)  # reporting cut points: <=10, 11-15, >=16


def bucket_bounds(thresholds: Sequence[int]) -> list[Bucket]:
    if list(thresholds) != sorted(set(thresholds)):
        raise ValueError(f"thresholds must be strictly increasing, got {thresholds}")
    bounds: list[Bucket] = []
    lo = 0
    for th in thresholds:
        bounds.append((lo, th))
        lo = th + 1
    bounds.append((lo, None))
    return bounds


def format_bucket(bucket: Bucket) -> str:
    lo, hi = bucket
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def bucket_by_context(
    examples: Iterable[Example], thresholds: Sequence[int]
) -> dict[Bucket, list[Example]]:
    """Partition examples by context length; every bucket key is present."""
    bounds = bucket_bounds(thresholds)
    buckets: dict[Bucket, list[Example]] = {b: [] for b in bounds}
    for ex in examples:
        n = context_length(ex)
        for lo, hi in bounds:
            if n >= lo and (hi is None or n <= hi):
                buckets[(lo, hi)].append(ex)
                break
    return buckets


# ---------------------------------------------------------------------------
# KBP37 refinement


@dataclass(frozen=True)
class RawKbpRecord:
    """MIML-RE style annotation: subject/object spans plus an undirected relation."""

    id: int
    tokens: tuple[str, ...]
    subj_span: tuple[int, int]
    obj_span: tuple[int, int]
    relation: str


def parse_kbp_raw(stream: Iterable[str], lowercase: bool = False) -> list[RawKbpRecord]:
    """Parse raw annotated records; <e1> marks the subject, <e2> the object.

    Unlike refined records, the subject may appear after the object in the
    sentence, and the relation line carries no direction suffix.
    """
    records = []
    for line_no, rec_id, sentence, relation in _iter_records(stream):
        tokens, subj, obj = _extract_spans(
            _tokenize_markup(sentence, lowercase), line_no, allow_reversed=True
        )
        if split_label(relation)[1] is not None:
            raise ParseError(line_no, f"raw relation {relation!r} already directed")
        records.append(RawKbpRecord(rec_id, tokens, subj, obj, relation))
    return records


# Directed rewrites from the KBP slot descriptions: naming the relation from the
# other participant's side reverses the direction.
KBP_REVERSING_RENAMES = {
    "org:parents": "org:subsidiaries",
    "org:member_of": "org:members",
}

# Slot inventory accepted in raw corpora (2013 KBP slots plus spelling variants
# seen in annotated-corpus releases).
KBP_RAW_RELATIONS = frozenset(
    {
        "per:alternate_names",
        "per:age",
        "per:cause_of_death",
        "per:charges",
        "per:children",
        "per:cities_of_residence",
        "per:city_of_birth",
        "per:city_of_death",
        "per:countries_of_residence",
        "per:country_of_birth",
        "per:country_of_death",
        "per:date_of_birth",
        "per:date_of_death",
        "per:employee_of",
        "per:employee_or_member_of",
        "per:origin",
        "per:other_family",
        "per:parents",
        "per:religion",
        "per:schools_attended",
        "per:siblings",
        "per:spouse",
        "per:stateorprovince_of_birth",
        "per:stateorprovince_of_death",
        "per:stateorprovinces_of_residence",
        "per:statesorprovinces_of_residence",
        "per:title",
        "org:alternate_names",
        "org:city_of_headquarters",
        "org:country_of_headquarters",
        "org:date_dissolved",
        "org:date_founded",
        "org:dissolved",
        "org:founded",
        "org:founded_by",
        "org:member_of",
        "org:members",
        "org:number_of_employees/members",
        "org:parents",
        "org:political/religious_affiliation",
        "org:shareholders",
        "org:stateorprovince_of_headquarters",
        "org:subsidiaries",
        "org:top_members/employees",
        "org:website",
    }
)


@dataclass(frozen=True)
class RefineConfig:
    min_direction_count: int = 100  # keep a family only if BOTH directions exceed this
    neutral_keep_fraction: float = 0.2
    train_fraction: float = 0.7
    dev_fraction: float = 0.1
    neutral: str = "no_relation"
    known_relations: frozenset[str] = KBP_RAW_RELATIONS
    renames: dict = field(default_factory=lambda: dict(KBP_REVERSING_RENAMES))


@dataclass
class RefinedCorpus:
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    schema: RelationSchema


def _direct_record(rec: RawKbpRecord, config: RefineConfig) -> Example:
    """Order spans by sentence position and derive the directed label."""
    if rec.relation == config.neutral:
        label = config.neutral
        subj_first = rec.subj_span[0] < rec.obj_span[0]
    else:
        family = rec.relation
        subj_first = rec.subj_span[0] < rec.obj_span[0]
        direction = "e1,e2" if subj_first else "e2,e1"
        if family in config.renames:
            family = config.renames[family]
            direction = flip_direction(direction)
        label = make_label(family, direction)
    e1, e2 = (rec.subj_span, rec.obj_span) if subj_first else (rec.obj_span, rec.subj_span)
    return Example(rec.id, rec.tokens, e1, e2, label)


def refine_kbp(
    records: Sequence[RawKbpRecord], seed: int, config: RefineConfig = RefineConfig()
) -> RefinedCorpus:
    """Refine a raw annotated corpus into directed train/dev/test splits.

    Steps: (1) direct every non-neutral relation by subject/object sentence
    order, rewriting reversing renames; (2) keep a relation family only when
    both directions occur more than ``min_direction_count`` times; (3) keep a
    random ``neutral_keep_fraction`` of neutral records; (4) shuffle and split
    each directed label 70/10/20; (5) drop dev/test records whose
    (e1 surface, e2 surface, label) triple also occurs in training
    (case-insensitive surfaces). All randomness flows from ``seed``.
    """
    unknown = sorted(
        {r.relation for r in records} - config.known_relations - {config.neutral}
    )
    if unknown:
        raise SchemaError(f"unknown relation names: {', '.join(unknown)}")
    rng = random.Random(seed)

    directed = [_direct_record(r, config) for r in records]

    counts = Counter(ex.label for ex in directed)
    kept_families = set()
    for family in {split_label(ex.label)[0] for ex in directed if ex.label != config.neutral}:
        both_over = all(
            counts[make_label(family, d)] > config.min_direction_count
            for d in ("e1,e2", "e2,e1")
        )
        if both_over:
            kept_families.add(family)
    survivors = [
        ex
        for ex in directed
        if ex.label == config.neutral or split_label(ex.label)[0] in kept_families
    ]

    neutral = [ex for ex in survivors if ex.label == config.neutral]
    relational = [ex for ex in survivors if ex.label != config.neutral]
    n_keep = round(config.neutral_keep_fraction * len(neutral))
    kept_idx = sorted(rng.sample(range(len(neutral)), n_keep))
    neutral = [neutral[i] for i in kept_idx]

    pool = relational + neutral
    rng.shuffle(pool)
    by_label: dict[str, list[Example]] = {}
    for ex in pool:
        by_label.setdefault(ex.label, []).append(ex)

    train: list[Example] = []
    dev: list[Example] = []
    test: list[Example] = []
    for label in sorted(by_label):
        group = by_label[label]
        n = len(group)
        i1 = int(config.train_fraction * n)
        i2 = int((config.train_fraction + config.dev_fraction) * n)
        train += group[:i1]
        dev += group[i1:i2]
        test += group[i2:]

    seen = {(ex.e1_surface.lower(), ex.e2_surface.lower(), ex.label) for ex in train}

    def unseen(ex: Example) -> bool:
        return (ex.e1_surface.lower(), ex.e2_surface.lower(), ex.label) not in seen

    dev = [ex for ex in dev if unseen(ex)]
    test = [ex for ex in test if unseen(ex)]

    schema = RelationSchema(
        families=tuple(sorted(kept_families)),
        directional=(True,) * len(kept_families),
        neutral=config.neutral,
    )
    return RefinedCorpus(train=train, dev=dev, test=test, schema=schema)


def relation_counts(examples: Iterable[Example]) -> Counter:
    return Counter(ex.label for ex in examples)
