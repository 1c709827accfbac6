import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relclass.data import (
    KBP37_SCHEMA,
    SEMEVAL_SCHEMA,
    AnnotatedSequence,
    Example,
    ParseError,
    RawKbpRecord,
    RefineConfig,
    RelationSchema,
    SchemaError,
    annotate,
    bucket_by_context,
    compute_position_features,
    context_length,
    infer_schema,
    insert_position_indicators,
    parse_kbp_raw,
    parse_semeval,
    refine_kbp,
    serialize_examples,
    split_label,
    strip_position_indicators,
)

PAPER_RECORD = (
    '1\t"<e1>people</e1> have been moving back into <e2>downtown</e2>"\n'
    "Entity-Destination(e1,e2)\n"
    "Comment:\n"
    "\n"
)


# ---------------------------------------------------------------------------
# Parsing


def test_parse_paper_example():
    (ex,) = parse_semeval(io.StringIO(PAPER_RECORD), schema=SEMEVAL_SCHEMA)
    assert ex.tokens == ("people", "have", "been", "moving", "back", "into", "downtown")
    assert ex.e1_span == (0, 0)
    assert ex.e2_span == (6, 6)
    assert ex.label == "Entity-Destination(e1,e2)"


def test_parse_empty_stream():
    assert parse_semeval(io.StringIO("")) == []


def test_parse_other_label_direction_free():
    record = '3\t"a <e1>b</e1> c <e2>d</e2> e"\nOther\n\n'
    (ex,) = parse_semeval(io.StringIO(record), schema=SEMEVAL_SCHEMA)
    assert ex.label == "Other"
    assert split_label(ex.label) == ("Other", None)


def test_parse_multiword_spans_and_attached_markup():
    record = '8\t"The <e1>big company</e1> fabricates plastic <e2>chairs</e2>."\nOther\n\n'
    (ex,) = parse_semeval(io.StringIO(record))
    assert ex.e1_span == (1, 2)
    assert ex.e1_surface == "big company"
    assert ex.tokens[-1] == "."  # markup separated from the attached period


def test_parse_lowercase_flag():
    record = '3\t"A <e1>Big</e1> c <e2>D</e2> e"\nOther\n\n'
    (ex,) = parse_semeval(io.StringIO(record), lowercase=True)
    assert ex.tokens == ("a", "big", "c", "d", "e")


def test_parse_error_cites_line_number():
    bad = "nonsense without a tab\nOther\n\n"
    with pytest.raises(ParseError, match="line 1"):
        parse_semeval(io.StringIO(bad))


def test_parse_missing_marker_rejected():
    record = '4\t"only <e1>one</e1> span here"\nOther\n\n'
    with pytest.raises(ParseError, match="missing markers"):
        parse_semeval(io.StringIO(record))


def test_parse_unknown_relation_is_schema_error():
    record = '5\t"x <e1>y</e1> z <e2>w</e2> v"\nNot-A-Relation(e1,e2)\n\n'
    with pytest.raises(SchemaError, match="Not-A-Relation"):
        parse_semeval(io.StringIO(record), schema=SEMEVAL_SCHEMA)


def test_parse_without_comment_line():
    record = '12\t"x <e1>y</e1> z <e2>w</e2> v"\nOther\n\n' * 2
    assert len(parse_semeval(io.StringIO(record))) == 2


tokens_strategy = st.lists(
    st.sampled_from(["alpha", "bravo", "unit", "x1", "jig", "dock", "nine"]),
    min_size=2,
    max_size=12,
)


@st.composite
def examples(draw, label=st.sampled_from(SEMEVAL_SCHEMA.labels)):
    toks = draw(tokens_strategy)
    n = len(toks)
    e1_start = draw(st.integers(0, n - 2))
    e1_end = draw(st.integers(e1_start, n - 2))
    e2_start = draw(st.integers(e1_end + 1, n - 1))
    e2_end = draw(st.integers(e2_start, n - 1))
    return Example(
        id=draw(st.integers(0, 10**6)),
        tokens=tuple(toks),
        e1_span=(e1_start, e1_end),
        e2_span=(e2_start, e2_end),
        label=draw(label),
    )


@given(st.lists(examples(), max_size=5))
def test_parse_serialize_round_trip(exs):
    text = serialize_examples(exs)
    parsed = parse_semeval(io.StringIO(text), schema=SEMEVAL_SCHEMA)
    assert parsed == exs


def test_serialize_with_comments_round_trips():
    (ex,) = parse_semeval(io.StringIO(PAPER_RECORD))
    text = serialize_examples([ex], comments=True)
    assert "Comment:" in text
    assert parse_semeval(io.StringIO(text)) == [ex]


# ---------------------------------------------------------------------------
# Position indicators and features


def test_insert_indicators_paper_example():
    (ex,) = parse_semeval(io.StringIO(PAPER_RECORD))
    seq = insert_position_indicators(ex)
    assert seq.tokens == (
        "<e1>", "people", "</e1>", "have", "been", "moving", "back", "into",
        "<e2>", "downtown", "</e2>",
    )
    assert seq.position_features is None


def test_insert_indicators_wraps_multiword_span():
    ex = Example(1, ("a", "b", "c", "d"), (0, 0), (2, 3), "Other")
    seq = insert_position_indicators(ex)
    assert seq.tokens == ("<e1>", "a", "</e1>", "b", "<e2>", "c", "d", "</e2>")


@given(examples())
def test_indicator_round_trip(ex):
    seq = insert_position_indicators(ex)
    assert len(seq.tokens) == len(ex.tokens) + 4
    toks, e1, e2 = strip_position_indicators(seq)
    assert toks == ex.tokens
    assert e1 == ex.e1_span
    assert e2 == ex.e2_span


def test_position_features_hand_case():
    ex = Example(1, ("A", "B", "C"), (0, 0), (2, 2), "Other")
    seq = compute_position_features(ex)
    assert seq.position_features == ((0, -2), (1, -1), (2, 0))


def test_position_feature_clipping():
    toks = tuple(f"t{i}" for i in range(50))
    ex = Example(1, toks, (0, 0), (48, 48), "Other")
    seq = compute_position_features(ex, max_dist=30)
    assert seq.position_features[45][0] == 30  # 45 positions after e1, clipped
    assert seq.position_features[0][1] == -30


def test_annotated_sequence_rejects_mixed_annotation():
    with pytest.raises(ValueError):
        AnnotatedSequence(("<e1>", "a", "</e1>"), position_features=((0, 0),) * 3)


def test_annotate_modes():
    ex = Example(1, ("a", "b", "c"), (0, 0), (2, 2), "Other")
    assert annotate(ex, "pi").tokens[0] == "<e1>"
    assert annotate(ex, "pf").position_features is not None
    assert annotate(ex, "none").tokens == ex.tokens
    with pytest.raises(ValueError):
        annotate(ex, "bogus")


# ---------------------------------------------------------------------------
# Context length and buckets


def test_context_length_hand_counts():
    # 11 tokens, nominals at 2 and 8: 2 prior + nominal + 5 between + nominal + 2 after
    toks = tuple(f"t{i}" for i in range(11))
    assert context_length(Example(1, toks, (2, 2), (8, 8), "Other")) == 11
    assert context_length(Example(1, ("a", "b"), (0, 0), (1, 1), "Other")) == 2


def test_context_length_paper_sentence():
    (ex,) = parse_semeval(io.StringIO(PAPER_RECORD))
    assert context_length(ex) == 7


@given(examples())
def test_context_length_never_counts_indicators(ex):
    n = context_length(ex)
    assert 1 <= n <= len(ex.tokens)


@given(st.integers(8, 30), st.integers(0, 4), st.integers(0, 12))
def test_context_length_monotone_in_span_gap(n, e1_start, gap):
    toks = tuple(f"t{i}" for i in range(n))
    e2a = e1_start + 1 + gap
    if e2a >= n - 1:
        return
    shorter = Example(1, toks, (e1_start, e1_start), (e2a, e2a), "Other")
    longer = Example(1, toks, (e1_start, e1_start), (e2a + 1, e2a + 1), "Other")
    assert context_length(longer) >= context_length(shorter)


def _ex_of_length(n):
    toks = tuple(f"t{i}" for i in range(n))
    return Example(1, toks, (0, 0), (n - 1, n - 1), "Other")


def test_bucket_by_context_three_way():
    exs = [_ex_of_length(7), _ex_of_length(12), _ex_of_length(20)]
    buckets = bucket_by_context(exs, (10, 15))
    assert buckets[(0, 10)] == [exs[0]]
    assert buckets[(11, 15)] == [exs[1]]
    assert buckets[(16, None)] == [exs[2]]


def test_bucket_empty_input():
    buckets = bucket_by_context([], (10, 15))
    assert all(v == [] for v in buckets.values())
    assert len(buckets) == 3


def test_bucket_thresholds_must_increase():
    with pytest.raises(ValueError):
        bucket_by_context([], (15, 10))


@given(st.lists(examples(), max_size=30), st.sets(st.integers(1, 40), min_size=1, max_size=4))
def test_bucket_is_partition(exs, raw_thresholds):
    thresholds = sorted(raw_thresholds)
    buckets = bucket_by_context(exs, thresholds)
    scattered = [ex for group in buckets.values() for ex in group]
    assert len(scattered) == len(exs)
    assert {id(e) for e in scattered} == {id(e) for e in exs}


# ---------------------------------------------------------------------------
# Schemas


def test_builtin_schema_sizes():
    assert SEMEVAL_SCHEMA.n_classes == 19
    assert KBP37_SCHEMA.n_classes == 37
    assert len(KBP37_SCHEMA.families) == 18


def test_schema_label_index_round_trip():
    for schema in (SEMEVAL_SCHEMA, KBP37_SCHEMA):
        for i, label in enumerate(schema.labels):
            assert schema.label_index(label) == i


def test_schema_family_of():
    assert SEMEVAL_SCHEMA.family_of("Cause-Effect(e2,e1)") == "Cause-Effect"
    assert SEMEVAL_SCHEMA.family_of("Other") is None
    with pytest.raises(SchemaError):
        SEMEVAL_SCHEMA.family_of("Nope(e1,e2)")


def test_infer_schema_detects_builtins():
    assert infer_schema(["Cause-Effect(e1,e2)", "Other"]) is SEMEVAL_SCHEMA
    assert infer_schema(["per:spouse(e2,e1)", "no_relation"]) is KBP37_SCHEMA


def test_infer_schema_ad_hoc():
    schema = infer_schema(["linked(e1,e2)", "linked(e2,e1)"])
    assert schema.families == ("linked",)
    assert schema.neutral == "Other"
    with pytest.raises(SchemaError):
        infer_schema(["a", "b"])


# ---------------------------------------------------------------------------
# KBP refinement


def _raw(i, relation, subj_first=True, subj="acme corp", obj="bob"):
    subj_toks = tuple(subj.split())
    obj_toks = tuple(obj.split())
    if subj_first:
        tokens = subj_toks + ("met",) + obj_toks + ("today", f"v{i}")
        s = (0, len(subj_toks) - 1)
        o = (len(subj_toks) + 1, len(subj_toks) + len(obj_toks))
    else:
        tokens = obj_toks + ("met",) + subj_toks + ("today", f"v{i}")
        o = (0, len(obj_toks) - 1)
        s = (len(obj_toks) + 1, len(obj_toks) + len(subj_toks))
    return RawKbpRecord(i, tokens, s, o, relation)


def _bulk(relation, n, start=0, subj_first=True, subj="acme corp", obj="bob"):
    return [
        _raw(start + i, relation, subj_first, subj=f"{subj} {i}", obj=f"{obj} {i}")
        for i in range(n)
    ]


def test_refine_direction_from_sentence_order():
    cfg = RefineConfig(min_direction_count=0)
    records = [_raw(1, "per:spouse", subj_first=True), _raw(2, "per:spouse", subj_first=False)]
    refined = refine_kbp(records, seed=0, config=cfg)
    labels = sorted(ex.label for ex in refined.train + refined.dev + refined.test)
    assert labels == ["per:spouse(e1,e2)", "per:spouse(e2,e1)"]
    for ex in refined.train + refined.dev + refined.test:
        assert ex.e1_span[0] < ex.e2_span[0]


def test_refine_reversing_renames():
    cfg = RefineConfig(min_direction_count=0)
    records = [
        _raw(1, "org:parents", subj_first=True),
        _raw(2, "org:parents", subj_first=False),
        _raw(3, "org:member_of", subj_first=True),
        _raw(4, "org:member_of", subj_first=False),
    ]
    refined = refine_kbp(records, seed=0, config=cfg)
    by_id = {ex.id: ex.label for ex in refined.train + refined.dev + refined.test}
    # subject-first org:parents names the parent from the child side -> reversed
    assert by_id == {
        1: "org:subsidiaries(e2,e1)",
        2: "org:subsidiaries(e1,e2)",
        3: "org:members(e2,e1)",
        4: "org:members(e1,e2)",
    }
    assert refined.schema.families == ("org:members", "org:subsidiaries")


def test_refine_unknown_relation_listed():
    records = [_raw(1, "per:spouse"), _raw(2, "per:owns_a_boat"), _raw(3, "org:bogus")]
    with pytest.raises(SchemaError, match="org:bogus, per:owns_a_boat"):
        refine_kbp(records, seed=0)


def test_refine_empty_corpus():
    refined = refine_kbp([], seed=0)
    assert refined.train == [] and refined.dev == [] and refined.test == []
    assert refined.schema.families == ()


def test_refine_drops_one_sided_relation():
    # 150 subject-first but only 50 reversed: both directions must exceed 100
    records = _bulk("per:title", 150, start=0, subj_first=True)
    records += _bulk("per:title", 50, start=1000, subj_first=False)
    records += _bulk("per:spouse", 120, start=2000, subj_first=True)
    records += _bulk("per:spouse", 110, start=4000, subj_first=False)
    refined = refine_kbp(records, seed=3)
    assert refined.schema.families == ("per:spouse",)
    labels = {ex.label for ex in refined.train + refined.dev + refined.test}
    assert not any("per:title" in lab for lab in labels)


def test_refine_threshold_is_strict():
    # exactly 100 in one direction fails the "more than 100" rule
    records = _bulk("per:spouse", 101, subj_first=True)
    records += _bulk("per:spouse", 100, start=500, subj_first=False)
    assert refine_kbp(records, seed=0).schema.families == ()
    records += _bulk("per:spouse", 1, start=999, subj_first=False)
    assert refine_kbp(records, seed=0).schema.families == ("per:spouse",)


def test_refine_neutral_subsampling_and_split_sizes():
    cfg = RefineConfig(min_direction_count=10)
    records = _bulk("per:spouse", 200, subj_first=True)
    records += _bulk("per:spouse", 200, start=1000, subj_first=False)
    records += _bulk("no_relation", 1000, start=5000)
    refined = refine_kbp(records, seed=11, config=cfg)
    every = refined.train + refined.dev + refined.test
    neutral = [ex for ex in every if ex.label == "no_relation"]
    # 80% of neutral records discarded
    assert len(neutral) == 200
    # 70/10/20 split within each label (dedup may remove a few dev/test records)
    assert len(refined.train) == int(0.7 * 200) * 2 + int(0.7 * 200)
    assert len(refined.dev) <= 60 and len(refined.test) <= 120


def test_refine_dedup_removes_training_triples():
    cfg = RefineConfig(min_direction_count=0)
    # identical surface pair + relation everywhere: dev/test must end up empty
    records = [
        RawKbpRecord(i, ("Alice", "met", "Bob", f"x{i}"), (0, 0), (2, 2), "per:spouse")
        for i in range(20)
    ] + [
        RawKbpRecord(20 + i, ("Alice", "met", "Bob", f"y{i}"), (2, 2), (0, 0), "per:spouse")
        for i in range(20)
    ]
    refined = refine_kbp(records, seed=5, config=cfg)
    assert len(refined.train) == 28  # 14 per direction
    assert refined.dev == [] and refined.test == []


def test_refine_dedup_is_case_insensitive():
    cfg = RefineConfig(min_direction_count=0)
    records = [
        RawKbpRecord(i, (w1, "met", w2, f"x{i}"), (0, 0), (2, 2), "per:spouse")
        for i, (w1, w2) in enumerate([("Alice", "Bob")] * 20 + [("ALICE", "bob")] * 20)
    ]
    refined = refine_kbp(records, seed=7, config=cfg)
    assert refined.dev == [] and refined.test == []


def test_refine_is_seed_deterministic():
    records = _bulk("per:spouse", 150, subj_first=True)
    records += _bulk("per:spouse", 150, start=1000, subj_first=False)
    records += _bulk("no_relation", 100, start=3000)
    a = refine_kbp(records, seed=42)
    b = refine_kbp(records, seed=42)
    c = refine_kbp(records, seed=43)
    assert a.train == b.train and a.dev == b.dev and a.test == b.test
    assert a.train != c.train


def test_refine_no_triple_overlap_property():
    records = _bulk("per:spouse", 130, subj_first=True, subj="alice smith", obj="bob")
    records += _bulk("per:spouse", 130, start=1000, subj_first=False, subj="carol", obj="dan")
    refined = refine_kbp(records, seed=9)
    train_triples = {(ex.e1_surface.lower(), ex.e2_surface.lower(), ex.label) for ex in refined.train}
    for ex in refined.dev + refined.test:
        assert (ex.e1_surface.lower(), ex.e2_surface.lower(), ex.label) not in train_triples


def test_parse_kbp_raw_allows_reversed_and_undirected():
    text = '7\t"the <e2>firm</e2> hired <e1>Jo</e1> yesterday"\nper:employee_of\n\n'
    (rec,) = parse_kbp_raw(io.StringIO(text))
    assert rec.subj_span == (3, 3)
    assert rec.obj_span == (1, 1)
    assert rec.relation == "per:employee_of"
    directed = '7\t"a <e1>b</e1> c <e2>d</e2> e"\nper:employee_of(e1,e2)\n\n'
    with pytest.raises(ParseError, match="already directed"):
        parse_kbp_raw(io.StringIO(directed))
