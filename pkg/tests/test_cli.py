import json

import pytest

from relclass.cli import main
from relclass.data import parse_semeval, serialize_examples
from relclass.synthetic import make_order_task

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


@pytest.fixture()
def corpus(tmp_path):
    task = make_order_task(24, 8, seed=3, separation=4)
    train = tmp_path / "train.txt"
    test = tmp_path / "test.txt"
    train.write_text(serialize_examples(task.train), encoding="utf-8")
    test.write_text(serialize_examples(task.test), encoding="utf-8")
    return train, test


def run(*argv):
    return main([str(a) for a in argv])


def test_train_writes_artifacts_and_is_deterministic(tmp_path, corpus, capsys):
    train_file, _ = corpus
    out1, out2 = tmp_path / "run1", tmp_path / "run2"
    for out in (out1, out2):
        code = run(
            "train", "--train", train_file, "--out", out, "--encoder", "rnn",
            "--mode", "pi", "--hidden", "8", "--embed-dim", "4", "--epochs", "3",
            "--seed", "7",
        )
        assert code == 0
    for name in ("model.json", "train_log.txt", "dev_curve.tsv", "config.json"):
        assert (out1 / name).is_file()
    assert (out1 / "train_log.txt").read_text() == (out2 / "train_log.txt").read_text()
    assert (out1 / "model.json").read_bytes() == (out2 / "model.json").read_bytes()
    echoed = capsys.readouterr().out
    assert '"seed": 7' in echoed


def test_train_missing_file_fails_without_artifacts(tmp_path, capsys):
    out = tmp_path / "out"
    with pytest.raises(SystemExit):
        run("train", "--train", tmp_path / "nope.txt", "--out", out)
    assert not out.exists()


def test_train_does_not_mutate_inputs(tmp_path, corpus):
    train_file, _ = corpus
    before = train_file.read_bytes()
    run("train", "--train", train_file, "--out", tmp_path / "o", "--hidden", "4",
        "--embed-dim", "3", "--epochs", "1", "--seed", "1")
    assert train_file.read_bytes() == before


def test_config_file_precedence(tmp_path, corpus):
    train_file, _ = corpus
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"epochs": 2, "hidden": 4, "embed_dim": 3, "seed": 9}))
    out = tmp_path / "out"
    code = run("train", "--train", train_file, "--config", cfg_file, "--out", out,
               "--epochs", "1")
    assert code == 0
    resolved = json.loads((out / "config.json").read_text())
    assert resolved["epochs"] == 1  # flag beats config file
    assert resolved["hidden"] == 4  # config file beats default
    log = (out / "train_log.txt").read_text()
    assert log.count("epoch") == 1


def test_config_file_unknown_key(tmp_path, corpus):
    train_file, _ = corpus
    cfg_file = tmp_path / "cfg.json"
    cfg_file.write_text(json.dumps({"epohcs": 2}))
    with pytest.raises(SystemExit, match="epohcs"):
        run("train", "--train", train_file, "--config", cfg_file)


def _train_quick(tmp_path, corpus):
    train_file, test_file = corpus
    out = tmp_path / "model_dir"
    assert run(
        "train", "--train", train_file, "--out", out, "--hidden", "8",
        "--embed-dim", "4", "--epochs", "4", "--seed", "2",
    ) == 0
    return out / "model.json", test_file


def test_evaluate_writes_report_with_buckets(tmp_path, corpus, capsys):
    model, test_file = _train_quick(tmp_path, corpus)
    out = tmp_path / "eval"
    code = run("evaluate", "--model", model, "--test", test_file, "--out", out,
               "--buckets", "10,15")
    assert code == 0
    report = (out / "eval_report.txt").read_text()
    assert "macro-F1:" in report
    assert "bucket 0-10:" in report
    assert "bucket 16+:" in report


def test_evaluate_schema_mismatch_lists_labels(tmp_path, corpus):
    model, _ = _train_quick(tmp_path, corpus)
    bad = tmp_path / "bad.txt"
    bad.write_text('1\t"a <e1>b</e1> c <e2>d</e2> e"\nUnrelated(e1,e2)\n\n', encoding="utf-8")
    with pytest.raises(SystemExit, match="Unrelated"):
        run("evaluate", "--model", model, "--test", bad, "--out", tmp_path / "e2")


def test_evaluate_empty_test_file(tmp_path, corpus):
    model, _ = _train_quick(tmp_path, corpus)
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    with pytest.raises(SystemExit, match="no records"):
        run("evaluate", "--model", model, "--test", empty, "--out", tmp_path / "e3")


def test_analyze_writes_profiles(tmp_path, corpus):
    model, test_file = _train_quick(tmp_path, corpus)
    out = tmp_path / "analysis"
    assert run("analyze", "--model", model, "--test", test_file, "--out", out) == 0
    lines = (out / "profiles.tsv").read_text().splitlines()
    assert lines[0] == "sentence_id\tstep\ttoken\tcontribution"
    assert len(lines) > 10
    assert "mean neighbor variance" in (out / "variance.txt").read_text()


RAW_KBP = (
    "".join(
        f'{i}\t"w{i} a <e1>alice {i}</e1> met <e2>bob {i}</e2> ok"\nper:spouse\n\n'
        for i in range(12)
    )
    + "".join(
        f'{100 + i}\t"w{i} b <e2>carl {i}</e2> saw <e1>dora {i}</e1> ok"\nper:spouse\n\n'
        for i in range(12)
    )
    + "".join(
        f'{200 + i}\t"n{i} c <e1>eve {i}</e1> near <e2>fay {i}</e2> ok"\nno_relation\n\n'
        for i in range(10)
    )
)


def test_refine_kbp_writes_three_splits(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text(RAW_KBP, encoding="utf-8")
    out = tmp_path / "refined"
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"seed": 5}))
    assert run("refine-kbp", "--raw", raw, "--config", config, "--out", out,
               "--min-direction-count", "10") == 0
    for name in ("train.txt", "dev.txt", "test.txt", "stats.txt"):
        assert (out / name).is_file()
    with open(out / "train.txt", encoding="utf-8") as fh:
        parsed = parse_semeval(fh)
    labels = {ex.label for ex in parsed}
    assert "per:spouse(e1,e2)" in labels and "per:spouse(e2,e1)" in labels
    stats = (out / "stats.txt").read_text()
    assert "relation classes: 3" in stats


def test_refine_kbp_unknown_relation(tmp_path):
    raw = tmp_path / "raw.txt"
    raw.write_text('1\t"a <e1>b</e1> c <e2>d</e2> e"\nper:likes_pizza\n\n', encoding="utf-8")
    code = run("refine-kbp", "--raw", raw, "--out", tmp_path / "o")
    assert code == 1


def test_gradcheck_passes(tmp_path, capsys):
    assert run("gradcheck", "--seed", "3", "--mode", "pf") == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    assert "PASS" in out


def test_cli_parse_error_is_one_line_cause(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("garbage no tab\nOther\n\n", encoding="utf-8")
    code = run("train", "--train", bad, "--out", tmp_path / "o")
    assert code == 1
    assert "error: line 1" in capsys.readouterr().err