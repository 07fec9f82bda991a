import dataclasses
import json

import pytest

from dyadiclab import cli, suites
from dyadiclab.suites import Assertion, SuiteResult

TINY = """\
model: disc
delta: 0.125
depth: 2
K0: 2
meshResolution: 4096
seed: 0
measureCount: 2000
suites: [grid-verify]
samples: {cover: 200, integral: 5000, designPoints: 4}
"""


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(TINY + f"out: {tmp_path / 'out'}\n")
    return path


def test_suites_lists_registry_order(capsys):
    assert cli.main(["suites"]) == cli.EXIT_OK
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == suites.suite_names()
    assert len(names) == 14


def test_run_is_deterministic(tiny, tmp_path, capsys):
    assert cli.main(["run", str(tiny)]) == cli.EXIT_OK
    report = tmp_path / "out" / "grid-verify.json"
    first = report.read_bytes()
    assert "PASS" in capsys.readouterr().out
    (tmp_path / "out" / "grid.bin").unlink()  # force a rebuild as well
    assert cli.main(["run", str(tiny)]) == cli.EXIT_OK
    assert report.read_bytes() == first
    assert (tmp_path / "out" / "grid-verify.csv").exists()
    doc = json.loads(first)
    assert doc["passed"] is True


def test_invalid_delta_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("delta: 1.5\n")
    assert cli.main(["run", str(bad)]) == cli.EXIT_USAGE
    assert "delta" in capsys.readouterr().err


def test_missing_file_and_unknown_suite(tiny, tmp_path, capsys):
    assert cli.main(["run", str(tmp_path / "absent.yaml")]) == cli.EXIT_USAGE
    assert cli.main(["run", str(tiny), "--suite", "nope"]) == cli.EXIT_USAGE


def test_berezin_alias(tiny, tmp_path, capsys):
    code = cli.main(["run", str(tiny), "--suite", "berezin-identity", "--out", str(tmp_path / "b")])
    out = capsys.readouterr().out
    assert code == cli.EXIT_OK, out
    assert (tmp_path / "b" / "berezin-sweep.json").exists()


def test_grid_build_and_verify(tiny, tmp_path, capsys):
    assert cli.main(["grid", "build", str(tiny)]) == cli.EXIT_OK
    assert (tmp_path / "out" / "grid.bin").exists()
    capsys.readouterr()
    assert cli.main(["grid", "verify", str(tiny)]) == cli.EXIT_OK
    cached = json.loads(capsys.readouterr().out)
    (tmp_path / "out" / "grid.bin").unlink()
    assert cli.main(["grid", "verify", str(tiny)]) == cli.EXIT_OK
    fresh = json.loads(capsys.readouterr().out)
    assert cached == fresh and cached["passed"]


def test_failing_suite_exits_1(tiny, tmp_path, capsys, monkeypatch):
    def broken(ctx):
        return SuiteResult("grid-verify", [Assertion("forced", False, "always fails")])

    monkeypatch.setitem(suites.SUITES, "grid-verify", dataclasses.replace(suites.SUITES["grid-verify"], run=broken))
    assert cli.main(["run", str(tiny)]) == cli.EXIT_FAIL
    cap = capsys.readouterr()
    assert "FAIL" in cap.out and "forced" in cap.out
    assert str(tmp_path / "out" / "grid-verify.json") in cap.err
