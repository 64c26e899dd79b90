import csv
import io
import json
import shutil

import pytest

from promptdp.cli import run
from promptdp.mechanism import gamma_from_epsilon


@pytest.fixture
def corpus(tmp_path, fixture_corpus):
    dst = tmp_path / "corpus.jsonl"
    shutil.copy(fixture_corpus, dst)
    return dst


def _lines(path):
    return [json.loads(l) for l in path.read_text().splitlines()]


def _pipeline(corpus, out_dir, seed="42"):
    out_dir.mkdir(exist_ok=True)
    p, r, rep = out_dir / "perturbed.jsonl", out_dir / "restored.jsonl", out_dir / "report.json"
    assert run(["perturb", "--epsilon", "5.5", "--seed", seed, "--in", str(corpus), "--out", str(p)]) == 0
    assert run(["restore", "--restorer", "mock", "--in", str(p), "--out", str(r)]) == 0
    assert run(["evaluate", "--in-original", str(corpus), "--in-restored", str(r), "--report", str(rep)]) == 0
    return p, r, rep


def test_perturb_output_and_manifest(corpus, tmp_path):
    p, _, _ = _pipeline(corpus, tmp_path / "a")
    header, *records = _lines(p)
    assert header["params"]["epsilon"] == 5.5 and header["params"]["seed"] == 42
    assert header["params"]["gamma"] == gamma_from_epsilon(5.5, 94)
    assert [r["id"] for r in records] == ["note-001", "note-002", "note-003"]
    assert all("text" not in r for r in records)
    originals = [json.loads(l)["text"] for l in corpus.read_text().splitlines()]
    for rec, orig in zip(records, originals):
        assert len(rec["perturbed_text"]) == len(orig)
        assert [len(w) for w in rec["perturbed_text"].split()] == [len(w) for w in orig.split()]
    manifest = json.loads((p.parent / "perturbed.jsonl.manifest.json").read_text())
    assert manifest["command"] == "perturb"
    assert manifest["settings"]["seed"] == 42
    assert list(manifest["inputs"].values())[0] and list(manifest["outputs"].values())[0]
    assert "numpy" in manifest["versions"]


def test_perturb_records_generated_seed(corpus, tmp_path):
    out = tmp_path / "p.jsonl"
    assert run(["perturb", "--epsilon", "3", "--in", str(corpus), "--out", str(out)]) == 0
    manifest = json.loads((tmp_path / "p.jsonl.manifest.json").read_text())
    seed = manifest["settings"]["seed"]
    assert isinstance(seed, int) and 0 <= seed < 2**64
    # replaying the recorded seed reproduces the output
    again = tmp_path / "q.jsonl"
    assert run(["perturb", "--epsilon", "3", "--seed", str(seed), "--in", str(corpus), "--out", str(again)]) == 0
    assert again.read_bytes() == out.read_bytes()


def test_restore_and_evaluate(corpus, tmp_path):
    _, r, rep = _pipeline(corpus, tmp_path / "a")
    header, *records = _lines(r)
    assert header["passes"] == 1 and len(records) == 3
    assert all(rec["pass_index"] == 1 for rec in records)
    report = json.loads(rep.read_text())
    assert report["epsilon"] == 5.5
    assert report["privacy_preserved"] + report["sensitive_rate"] == 100.0
    assert report["counts"]["documents"] == 3


def test_two_pass_restore(corpus, tmp_path):
    p, _, _ = _pipeline(corpus, tmp_path / "a")
    r2 = tmp_path / "r2.jsonl"
    assert run(["restore", "--restorer", "mock", "--passes", "2", "--in", str(p), "--out", str(r2)]) == 0
    _, *records = _lines(r2)
    assert all(rec["pass_index"] == 2 and rec["first_pass"]["pass_index"] == 1 for rec in records)


def test_evaluate_csv_report(corpus, tmp_path):
    _, r, _ = _pipeline(corpus, tmp_path / "a")
    out = tmp_path / "report.csv"
    assert run(["evaluate", "--in-original", str(corpus), "--in-restored", str(r), "--report", str(out),
                "--case-fold", "--strip-punctuation"]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 1 and float(rows[0]["epsilon"]) == 5.5


def test_pipeline_is_byte_identical(corpus, tmp_path):
    a = _pipeline(corpus, tmp_path / "a")
    b = _pipeline(corpus, tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()


def test_restore_refuses_original_text(corpus, tmp_path):
    assert run(["restore", "--restorer", "mock", "--in", str(corpus), "--out", str(tmp_path / "r.jsonl")]) == 1


def test_refuses_to_overwrite_input(corpus):
    assert run(["perturb", "--epsilon", "1", "--seed", "1", "--in", str(corpus), "--out", str(corpus)]) == 2
    assert json.loads(corpus.read_text().splitlines()[0])["id"] == "note-001"


def test_usage_and_io_exit_codes(tmp_path, corpus):
    assert run([]) == 2
    assert run(["perturb", "--epsilon", "1"]) == 2
    assert run(["sweep", "--in", str(corpus), "--epsilon-range", "1:x", "--out", "o.csv"]) == 2
    assert run(["perturb", "--epsilon", "1", "--in", str(tmp_path / "missing.jsonl"),
                "--out", str(tmp_path / "o.jsonl")]) == 3
    assert run(["perturb", "--epsilon", "1", "--in", str(corpus), "--out", str(tmp_path / "no" / "o.jsonl")]) == 3


def test_data_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "Harlan", "entities": [{"start": 1, "end": 6, "category": "NAME"}]}\n')
    assert run(["perturb", "--epsilon", "1", "--seed", "1", "--strict-annotations", "--in", str(bad),
                "--out", str(tmp_path / "o.jsonl")]) == 1
    assert "error[data]" in capsys.readouterr().err
    assert run(["perturb", "--epsilon", "-1", "--seed", "1", "--in", str(bad),
                "--out", str(tmp_path / "o.jsonl")]) == 1


def test_transport_exit_code(corpus, tmp_path, capsys):
    p, _, _ = _pipeline(corpus, tmp_path / "a")
    cfg = tmp_path / "remote.toml"
    cfg.write_text('[restorer]\nkind = "remote"\nendpoint_url = "http://127.0.0.1:9/v1"\nmodel_name = "m"\n'
                   'max_retries = 0\nrequest_timeout = 0.5\n')
    assert run(["restore", "--config", str(cfg), "--in", str(p), "--out", str(tmp_path / "r.jsonl")]) == 4
    assert "error[transport]" in capsys.readouterr().err


def test_malformed_config_is_a_config_error(corpus, tmp_path, capsys):
    p, _, _ = _pipeline(corpus, tmp_path / "a")
    cfg = tmp_path / "bad.toml"
    cfg.write_text("[restorer\nkind = ")
    assert run(["restore", "--config", str(cfg), "--in", str(p), "--out", str(tmp_path / "r.jsonl")]) == 1
    assert "error[config]" in capsys.readouterr().err


def test_config_precedence(corpus, tmp_path, monkeypatch):
    p, _, _ = _pipeline(corpus, tmp_path / "a")
    words = tmp_path / "words.txt"
    words.write_text("zzzz\n")
    monkeypatch.setenv("PROMPTDP_RESTORER_KIND", "remote")
    cfg = tmp_path / "mock.toml"
    cfg.write_text('[restorer]\nkind = "mock"\n')
    out = tmp_path / "r.jsonl"
    # config file beats the environment, the flag beats the config file
    assert run(["restore", "--config", str(cfg), "--dictionary", str(words), "--in", str(p), "--out", str(out)]) == 0
    manifest = json.loads((tmp_path / "r.jsonl.manifest.json").read_text())
    assert manifest["settings"]["restorer"]["kind"] == "mock"
    assert manifest["settings"]["restorer"]["dictionary_path"] == str(words)


def test_baseline_command(tmp_path, capsys):
    six = tmp_path / "six.jsonl"
    six.write_text(json.dumps({"id": "s", "text": "abcdef ghijkl mnopqr"}) + "\n")
    out = tmp_path / "base.csv"
    assert run(["baseline", "--alpha", "0", "--epsilon-range", "1:10:0.5", "--histogram-from", str(six),
                "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 19
    for row in rows:
        g = gamma_from_epsilon(float(row["epsilon"]), 94)
        assert float(row["probability"]) == pytest.approx((1 - g) ** 6, rel=1e-12)
    assert run(["baseline", "--epsilon", "5.5", "--histogram-from", str(six)]) == 0
    assert "0.1447" in capsys.readouterr().out


def test_sweep_command(tmp_path, corpus):
    out = tmp_path / "sweep.csv"
    assert run(["sweep", "--in", str(corpus), "--seed", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [float(r["epsilon"]) for r in rows] == [1.0 + 0.5 * i for i in range(19)]
    assert all(r["error"] == "" for r in rows)
    base = [float(r["baseline_prob"]) for r in rows]
    assert base == sorted(base)
    manifest = json.loads((tmp_path / "sweep.csv.manifest.json").read_text())
    assert manifest["settings"]["seed"] == 3 and len(manifest["settings"]["epsilons"]) == 19


def test_verify_dp_command(capsys):
    assert run(["verify-dp", "--epsilon", "4", "--k", "94"]) == 0
    assert "OK" in capsys.readouterr().out
    assert run(["verify-dp", "--epsilon-range", "0.5:10:0.5", "--k", "3"]) == 0
