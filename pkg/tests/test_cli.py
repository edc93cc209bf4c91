import io
import json
import os
import subprocess
import sys

import jsonschema
import pytest

from akv import cli, report
from conftest import manifest_path


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run_cli(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture(scope="module")
def schema():
    return report.load_schema()


@pytest.fixture(scope="module")
def kt_check():
    return run("check", "--manifold", "kodaira-thurston", "--points", "3")


def test_check_passes_and_validates(kt_check, schema):
    code, out, _ = kt_check
    assert code == cli.EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema)
    assert doc["summary"]["passed"] and doc["outcomes"]
    assert {o["id"] for o in doc["outcomes"]} >= {"eq05", "eq51", "eq76"}


def test_json_roundtrip_is_byte_stable(kt_check):
    out = kt_check[1]
    assert report.to_json(json.loads(out)) == out


def test_identical_runs_are_byte_identical(kt_check):
    assert run("check", "--manifold", "kodaira-thurston", "--points", "3")[1] == kt_check[1]


def test_nonclosed_manifest_exits_one(schema):
    code, out, _ = run("check", "--manifest", manifest_path("kodaira_thurston_nonclosed.manifest"),
                       "--points", "3")
    assert code == cli.EXIT_FAIL
    doc = json.loads(out)
    jsonschema.validate(doc, schema)
    assert {"eq03", "eq05", "eq06"} <= set(doc["summary"]["failed"])


@pytest.mark.parametrize("argv, fragment", [
    (["check", "--manifest", manifest_path("j_squared_broken.manifest")], "J2_plus_id"),
    (["check", "--manifold", "klein-bottle"], "unknown manifold"),
    (["check"], "required"),
    (["check", "--manifold", "kodaira-thurston", "--fd-step", "0.5"], "fd-step"),
    (["integrate", "--manifold", "kodaira-thurston", "--grid", "2"], "grid"),
    (["integrate", "--manifold", "product-spheres"], "quadrature"),
    (["check", "--manifold", "kodaira-thurston", "--identities", "eq99"], "eq99"),
    (["frobnicate"], ""),
])
def test_configuration_errors_exit_two(argv, fragment, capsys):
    code, _, err = run(*argv)
    assert code == cli.EXIT_CONFIG
    assert fragment in err + capsys.readouterr().err


def test_manifest_parse_error_reports_location(tmp_path):
    bad = tmp_path / "bad.manifest"
    bad.write_text("[manifold]\ndim = 2\nperiod.1 = 1\nperiod.2 = 1\n[metric]\ng.1.1 = 1 +\n[acs]\n")
    code, _, err = run("check", "--manifest", str(bad))
    assert code == cli.EXIT_CONFIG
    assert "line 6" in err


def test_manifest_path_via_manifold_flag():
    code, out, _ = run("check", "--manifold", manifest_path("flat_torus_4.manifest"), "--points", "2",
                       "--identities", "eq01,eq05")
    assert code == cli.EXIT_OK
    assert json.loads(out)["spec_label"] == "flat-torus-4-manifest"


def test_integrate_flat_torus(schema):
    code, out, _ = run("integrate", "--manifold", "flat-torus-4", "--grid", "4")
    assert code == cli.EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema)
    assert doc["integrals"]["QJ"] == [0.0, 0.0]


def test_classify_kt(schema):
    code, out, _ = run("classify", "--manifold", "kodaira-thurston", "--grid", "4")
    assert code == cli.EXIT_OK
    doc = json.loads(out)
    jsonschema.validate(doc, schema)
    assert doc["summary"]["verdict"] == "strictly almost Kähler"
    assert all(doc["summary"]["failed_hypotheses"][t] for t in ("Prop 3.1", "Thm 3.3"))


def test_text_format(kt_check):
    code, out, _ = run("check", "--manifold", "kodaira-thurston", "--points", "3", "--format", "text")
    assert code == cli.EXIT_OK
    assert out.startswith("akv ")
    assert "eq51" in out and "worst" in out


def test_output_file_written_atomically(tmp_path, kt_check):
    target = tmp_path / "report.json"
    code, out, _ = run("check", "--manifold", "kodaira-thurston", "--points", "3",
                       "--output", str(target))
    assert code == cli.EXIT_OK and out == ""
    assert target.read_text() == kt_check[1]
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_unwritable_output_exits_two(tmp_path):
    code, _, err = run("check", "--manifold", "flat-torus-2", "--points", "1",
                       "--output", str(tmp_path / "missing" / "r.json"))
    assert code == cli.EXIT_CONFIG
    assert "cannot write" in err


def test_list_command():
    code, out, _ = run("list", "--dim", "6")
    assert code == cli.EXIT_OK
    assert "eq05" in out and "eq76" not in out
    assert "kodaira-thurston" in out
    code, out, _ = run("list", "--format", "json")
    rows = json.loads(out)["summary"]["identities"]
    assert any(r["id"] == "eq77b" for r in rows)


def test_empty_report_is_valid(schema):
    doc = report.build_document("empty", {})
    jsonschema.validate(doc, schema)
    assert doc["outcomes"] == [] and doc["classification"] == []


def test_non_finite_values_become_null(schema):
    doc = report.build_document("nan", {}, outcomes=[
        {"id": "eq05", "point": [0.0], "residual": float("nan"), "tolerance": 1e-6, "pass": False}])
    jsonschema.validate(doc, schema)
    assert json.loads(report.to_json(doc))["outcomes"][0]["residual"] is None


def test_render_unknown_format():
    with pytest.raises(ValueError):
        report.render({}, "xml")


def test_run_config_serialises_without_output():
    cfg = cli.RunConfig(command="check", manifold="flat-torus-2", output="x.json")
    d = cfg.to_dict()
    assert "output" not in d and d["fd"]["step"] == 1e-3


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "akv.cli", "list", "--dim", "2"],
                          capture_output=True, text=True, cwd=os.path.dirname(__file__))
    assert proc.returncode == 0
    assert "eq01" in proc.stdout
