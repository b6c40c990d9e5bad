"""End-to-end subcommand tests driven through cli.main, plus the
flag/documentation parity check and exit-code contract."""

import json
import math

import pytest

from gfse import cli
from gfse.pretrain import LOG_KEYS

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def c5_file(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("graphs") / "c5.g6")
    assert cli.main(["enumerate", "--nodes", "5", "--connected",
                     "--out", path]) == 0
    return path


@pytest.fixture(scope="module")
def tiny_corpus_file(tmp_path_factory):
    path = str(tmp_path_factory.mktemp("corpus") / "tiny.json")
    assert cli.main(["corpus", "--out", path, "--families", "er,ba",
                     "--per-family", "6", "--min-nodes", "8",
                     "--max-nodes", "10", "--seed", "3",
                     "--workers", "1"]) == 0
    return path


@pytest.fixture(scope="module")
def tiny_train_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "train.json"
    cfg = {"model": {"walk_steps": 4, "layers": 1, "heads": 2,
                     "hidden_dim": 8, "out_dim": 6, "embed_dim": 5,
                     "dtype": "f32"},
           "batch_size": 4, "max_epochs": 2, "patience": 10, "seed": 1}
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pretrain_dir(tmp_path_factory, tiny_corpus_file, tiny_train_config):
    out = str(tmp_path_factory.mktemp("run") / "report")
    assert cli.main(["pretrain", "--corpus", tiny_corpus_file,
                     "--out-dir", out, "--config", tiny_train_config,
                     "--json"]) == 0
    return out


def test_enumerate_counts(c5_file):
    lines = open(c5_file).read().splitlines()
    assert len(lines) == 21


def test_wl_test_json_report(capsys, tmp_path, c5_file):
    out_dir = str(tmp_path / "wl")
    code, out, _ = run(capsys, "wl-test", "--scheme", "rw", "--dim", "8",
                       "--input", c5_file, "--json", "--out-dir", out_dir,
                       "--workers", "1")
    assert code == 0
    report = json.loads(out)
    assert report["graphs"] == 21
    assert report["pairs"] == 210
    assert report["undistinguished"] == 0
    disk = json.loads(open(f"{out_dir}/report.json").read())
    assert disk == report
    csv_lines = open(f"{out_dir}/buckets.csv").read().splitlines()
    assert csv_lines[0] == "bucket_size,buckets"
    assert csv_lines[1] == "1,21"
    assert open(f"{out_dir}/buckets.png", "rb").read(8) == PNG_MAGIC


def test_wl_test_human_table(capsys, c5_file):
    code, out, _ = run(capsys, "wl-test", "--scheme", "wl",
                       "--input", c5_file, "--workers", "1")
    assert code == 0
    assert "undistinguished 0" in out


def test_wl_test_rw_requires_dim(capsys, c5_file):
    code, _, err = run(capsys, "wl-test", "--scheme", "rw",
                       "--input", c5_file)
    assert code == cli.EXIT_BAD_VALUE
    assert "--dim" in err


def test_wl_test_srg_validation_fails_on_plain_graphs(capsys, c5_file):
    code, _, err = run(capsys, "wl-test", "--scheme", "wl", "--input",
                       c5_file, "--srg", "16,6,2,2", "--workers", "1")
    assert code == cli.EXIT_BAD_VALUE
    assert "strongly regular" in err


def test_convert_round_trip(capsys, tmp_path, c5_file):
    as_json = str(tmp_path / "c5.json")
    back = str(tmp_path / "back.g6")
    assert run(capsys, "convert", "--input", c5_file, "--out", as_json)[0] == 0
    assert run(capsys, "convert", "--input", as_json, "--out", back)[0] == 0
    assert open(back).read() == open(c5_file).read()


def test_convert_rejects_unknown_extension(capsys, tmp_path, c5_file):
    code, _, err = run(capsys, "convert", "--input", c5_file,
                       "--out", str(tmp_path / "x.txt"))
    assert code == cli.EXIT_BAD_FORMAT
    assert not (tmp_path / "x.txt").exists()


def test_missing_input_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "labels", "--input",
                       str(tmp_path / "nope.g6"),
                       "--out", str(tmp_path / "x.jsonl"))
    assert code == cli.EXIT_MISSING_INPUT
    assert "missing input" in err


def test_labels_jsonl(capsys, tmp_path, c5_file):
    out = str(tmp_path / "labels.jsonl")
    code, _, _ = run(capsys, "labels", "--input", c5_file, "--out", out,
                     "--workers", "1")
    assert code == 0
    rows = [json.loads(line) for line in open(out)]
    assert len(rows) == 21
    for row in rows:
        assert {"spd", "motif", "community", "modularity",
                "diameter", "catalog_k"} <= set(row)


def test_corpus_idempotent(capsys, tmp_path):
    a = str(tmp_path / "a.json")
    b = str(tmp_path / "b.json")
    argv = ["corpus", "--families", "er,ba", "--per-family", "3",
            "--min-nodes", "8", "--max-nodes", "9", "--seed", "5",
            "--workers", "1"]
    assert cli.main(argv + ["--out", a]) == 0
    assert cli.main(argv + ["--out", b]) == 0
    capsys.readouterr()
    assert open(a, "rb").read() == open(b, "rb").read()


def test_pretrain_report_files(pretrain_dir):
    rows = [json.loads(line)
            for line in open(f"{pretrain_dir}/metrics.jsonl")]
    assert [r["epoch"] for r in rows] == [0, 1, 2]
    assert all(set(r) == set(LOG_KEYS) for r in rows)
    csv_lines = open(f"{pretrain_dir}/metrics.csv").read().splitlines()
    assert csv_lines[0] == ",".join(LOG_KEYS)
    assert len(csv_lines) == 4
    cfg = json.loads(open(f"{pretrain_dir}/train_config.json").read())
    assert cfg["max_epochs"] == 2
    for stem in ("losses", "uncertainty", "metrics"):
        png = open(f"{pretrain_dir}/training_{stem}.png", "rb").read(8)
        assert png == PNG_MAGIC


def test_pretrain_json_prints_final_row(capsys, tmp_path, tiny_corpus_file,
                                         tiny_train_config):
    out_dir = str(tmp_path / "r2")
    code, out, _ = run(capsys, "pretrain", "--corpus", tiny_corpus_file,
                       "--out-dir", out_dir, "--config", tiny_train_config,
                       "--json")
    assert code == 0
    row = json.loads(out.strip().splitlines()[-1])
    assert row["epoch"] == 2
    assert math.isfinite(row["loss_total"])


def test_pretrain_resume_rejects_config(capsys, tmp_path, tiny_corpus_file,
                                        tiny_train_config, pretrain_dir):
    code, _, err = run(capsys, "pretrain", "--corpus", tiny_corpus_file,
                       "--out-dir", str(tmp_path / "r3"),
                       "--config", tiny_train_config,
                       "--resume", f"{pretrain_dir}/checkpoint.gfse")
    assert code == cli.EXIT_BAD_VALUE
    assert "--config" in err


def test_pretrain_resume_continues(capsys, tmp_path, tiny_corpus_file,
                                   pretrain_dir):
    out_dir = str(tmp_path / "r4")
    code, out, _ = run(capsys, "pretrain", "--corpus", tiny_corpus_file,
                       "--out-dir", out_dir,
                       "--resume", f"{pretrain_dir}/checkpoint.gfse",
                       "--json")
    assert code == 0
    row = json.loads(out.strip().splitlines()[-1])
    assert row["epoch"] == 2   # max_epochs already reached; eval row only


def test_encode_idempotent(capsys, tmp_path, c5_file, pretrain_dir):
    a = str(tmp_path / "a.csv")
    b = str(tmp_path / "b.csv")
    ckpt = f"{pretrain_dir}/checkpoint.gfse"
    assert run(capsys, "encode", "--checkpoint", ckpt, "--input", c5_file,
               "--index", "2", "--out", a)[0] == 0
    assert run(capsys, "encode", "--checkpoint", ckpt, "--input", c5_file,
               "--index", "2", "--out", b)[0] == 0
    text = open(a).read()
    assert text == open(b).read()
    assert len(text.splitlines()) == 5


def test_encode_index_out_of_range(capsys, tmp_path, c5_file, pretrain_dir):
    out = str(tmp_path / "x.csv")
    code, _, err = run(capsys, "encode", "--checkpoint",
                       f"{pretrain_dir}/checkpoint.gfse",
                       "--input", c5_file, "--index", "99", "--out", out)
    assert code == cli.EXIT_BAD_VALUE
    assert "out of range" in err
    assert not (tmp_path / "x.csv").exists()


def test_walk_export_modes(capsys, tmp_path, c5_file):
    exact = str(tmp_path / "e.csv")
    flt = str(tmp_path / "f.csv")
    assert run(capsys, "walk", "--input", c5_file, "--index", "0",
               "--dim", "4", "--mode", "exact", "--out", exact)[0] == 0
    assert run(capsys, "walk", "--input", c5_file, "--index", "0",
               "--dim", "4", "--mode", "float", "--out", flt)[0] == 0
    assert "/" in open(exact).read()
    first = open(flt).read().splitlines()[0].split(",")
    assert float(first[0]) == 1.0


def test_augment_happy_path(capsys, tmp_path):
    x = tmp_path / "x.csv"
    p = tmp_path / "p.csv"
    x.write_text("1,2\n3,4\n")
    p.write_text("9\n8\n")
    out = str(tmp_path / "out.csv")
    code, _, _ = run(capsys, "augment", "--features", str(x),
                     "--pse", str(p), "--out", out)
    assert code == 0
    assert open(out).read() == "1,2,9\n3,4,8\n"


def test_augment_mismatch_no_output(capsys, tmp_path):
    x = tmp_path / "x.csv"
    p = tmp_path / "p.csv"
    x.write_text("1,2\n3,4\n")
    p.write_text("9\n")
    out = tmp_path / "out.csv"
    code, _, err = run(capsys, "augment", "--features", str(x),
                       "--pse", str(p), "--out", str(out))
    assert code == cli.EXIT_BAD_VALUE
    assert "row count" in err
    assert not out.exists()


def test_augment_rejects_non_numeric(capsys, tmp_path):
    x = tmp_path / "x.csv"
    x.write_text("1/2,3\n")
    code, _, err = run(capsys, "augment", "--features", str(x),
                       "--pse", str(x), "--out", str(tmp_path / "o.csv"))
    assert code == cli.EXIT_BAD_FORMAT


def test_gradcheck_passes(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert "gradient checks passed" in out


def test_gradcheck_json(capsys):
    code, out, _ = run(capsys, "gradcheck", "--json")
    assert code == 0
    results = json.loads(out)
    assert all(v < 1e-4 for v in results.values())


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["wl-test", "--no-such-flag"])
    assert exc.value.code == cli.EXIT_USAGE


def test_help_documents_every_flag_and_exit_code():
    parser = cli.build_parser()
    top_help = parser.format_help()
    for code in range(7):
        assert f"\n  {code}  " in top_help, f"exit code {code} undocumented"
    subs = cli.subcommand_parsers(parser)
    assert set(subs) == {"convert", "enumerate", "wl-test", "labels",
                         "corpus", "pretrain", "encode", "walk", "augment",
                         "gradcheck"}
    for name, sub in subs.items():
        text = sub.format_help()
        for action in sub._actions:
            for opt in action.option_strings:
                assert opt in text, f"{name}: {opt} missing from --help"
            assert action.help, f"{name}: {action.option_strings} lacks help"
