import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from onepath.cli import main

DATA = Path(__file__).parent / "data" / "heart_synth.csv"
VECTOR = "3.1,2.2,4.5,5.0,6.1,7.2,3.3,4.4,5.5,6.6,7.7,8.8,9.9"


@pytest.fixture()
def runner(monkeypatch):
    monkeypatch.setenv("ONEPATH_SEED", "20240817")
    return CliRunner()


@pytest.fixture()
def keyed(tmp_path, runner):
    result = runner.invoke(
        main, ["keygen", "--out", str(tmp_path / "keys"), "--security-bits", "112"]
    )
    assert result.exit_code == 0, result.output
    return tmp_path


class TestKeygen:
    def test_defaults_print_window(self, tmp_path, runner):
        result = runner.invoke(
            main, ["keygen", "--out", str(tmp_path / "k"), "--security-bits", "112"]
        )
        assert result.exit_code == 0
        assert "W=(A_max+B_max)*2^16" in result.output
        assert "slope_max=16" in result.output

    def test_refuses_oversized_ring(self, tmp_path, runner):
        result = runner.invoke(
            main, ["keygen", "--out", str(tmp_path / "k"), "--ring-bits", "64"]
        )
        assert result.exit_code == 3
        assert "parameter error" in result.output

    def test_refuses_ambiguous_slope(self, tmp_path, runner):
        result = runner.invoke(
            main,
            ["keygen", "--out", str(tmp_path / "k"), "--security-bits", "112", "--slope-max", "99"],
        )
        assert result.exit_code == 3
        assert "signed decode ambiguous" in result.output

    def test_force_required_to_overwrite(self, keyed, runner):
        result = runner.invoke(
            main, ["keygen", "--out", str(keyed / "keys"), "--security-bits", "112"]
        )
        assert result.exit_code != 0
        result = runner.invoke(
            main,
            ["keygen", "--out", str(keyed / "keys"), "--security-bits", "112", "--force"],
        )
        assert result.exit_code == 0


class TestPipeline:
    def test_train_prepare_share_infer(self, keyed, runner):
        tree = keyed / "tree.json"
        result = runner.invoke(
            main, ["train", "--data", str(DATA), "--depth", "3", "--out", str(tree)]
        )
        assert result.exit_code == 0, result.output
        assert (keyed / "public.json").exists()

        result = runner.invoke(
            main,
            [
                "prepare",
                "--tree", str(tree),
                "--keys", str(keyed / "keys"),
                "--out", str(keyed / "model"),
            ],
        )
        assert result.exit_code == 0, result.output
        for name in ("enc_tree.bin", "root.bin", "seed_ct.bin", "provider.json"):
            assert (keyed / "model" / name).exists()

        result = runner.invoke(
            main,
            [
                "share",
                "--public", str(keyed / "public.json"),
                "--sk3", str(keyed / "keys" / "sk3.key"),
                "--seed-ct", str(keyed / "model" / "seed_ct.bin"),
                "--input", VECTOR,
                "--out", str(keyed / "shares"),
            ],
        )
        assert result.exit_code == 0, result.output

        result = runner.invoke(
            main,
            [
                "infer",
                "--keys", str(keyed / "keys"),
                "--model", str(keyed / "model"),
                "--shares", str(keyed / "shares"),
                "--json",
            ],
        )
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert doc["counters"]["sine_evaluations"] == 3

        # direct-input inference agrees with the share-file flow
        result = runner.invoke(
            main,
            [
                "infer",
                "--keys", str(keyed / "keys"),
                "--model", str(keyed / "model"),
                "--public", str(keyed / "public.json"),
                "--input", VECTOR,
                "--transcript", str(keyed / "t.jsonl"),
            ],
        )
        assert result.exit_code == 0, result.output
        assert result.output.strip() == doc["label"]
        first = json.loads((keyed / "t.jsonl").read_text().splitlines()[0])
        assert {"seq", "from", "to", "kind", "bytes", "t_ns"} <= set(first)


class TestBench:
    def test_report_and_json(self, tmp_path, runner):
        out = tmp_path / "report.json"
        result = runner.invoke(
            main,
            [
                "bench",
                "--data", str(DATA),
                "--depth", "3",
                "--reps", "3",
                "--json", str(out),
            ],
        )
        assert result.exit_code == 0, result.output
        assert "agreement=100.0%" in result.output
        doc = json.loads(out.read_text())
        assert doc["counters"]["sine_evaluations"] == 9
        assert doc["communication"]["prepare_bytes"] > 0

    def test_prepare_only(self, tmp_path, runner):
        result = runner.invoke(
            main, ["bench", "--data", str(DATA), "--depth", "2", "--reps", "0"]
        )
        assert result.exit_code == 0, result.output
        assert "reps=0" in result.output


class TestSelftest:
    def test_passes_and_deterministic(self, tmp_path, runner):
        outputs = []
        for name in ("a.bin", "b.bin"):
            result = runner.invoke(
                main, ["selftest", "--transcript-out", str(tmp_path / name)]
            )
            assert result.exit_code == 0, result.output
            assert "selftest passed" in result.output
            outputs.append(result.output)
        assert outputs[0] == outputs[1]
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_corrupted_key_file_named(self, keyed, runner, tmp_path):
        bad = keyed / "keys" / "sk1.key"
        bad.write_bytes(b"OPXX" + bad.read_bytes()[4:])
        result = runner.invoke(main, ["selftest", "--keys", str(keyed / "keys")])
        assert result.exit_code == 3
        assert "not a key file" in result.output


class TestAudit:
    def test_synthetic_audit(self, runner):
        result = runner.invoke(main, ["audit", "--depth", "2", "--reps", "1"])
        assert result.exit_code == 0, result.output
        doc = json.loads(result.output)
        assert doc["ok"] is True and "linear_identity" in doc["checks"]
