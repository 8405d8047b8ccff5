import json

import pytest
import yaml

from src.cli import EXIT_ERROR, main


@pytest.fixture
def example_args(fixtures_dir):
    base = fixtures_dir / "running_example"
    return {
        "net": str(base / "network.json"),
        "query": str(base / "query.json"),
        "query_gt": str(base / "query_gt.json"),
    }


def test_verify_unsat(example_args, capsys):
    code = main(["verify", "--net", example_args["net"], "--query", example_args["query"], "--tighten", "deeppoly"])
    assert code == 0
    assert json.loads(capsys.readouterr().out)["status"] == "UNSAT"


def test_verify_sat(example_args, capsys):
    code = main(["verify", "--net", example_args["net"], "--query", example_args["query_gt"], "--tighten", "deeppoly"])
    assert code == 1
    verdict = json.loads(capsys.readouterr().out)
    assert verdict["status"] == "SAT"
    assert len(verdict["witness"]) == 2


def test_verify_unknown(example_args):
    args = ["verify", "--net", example_args["net"], "--query", example_args["query"], "--tighten", "deeppoly", "--max-depth", "0"]
    assert main(args) == 2


def test_verify_with_pmnr(example_args):
    args = [
        "verify", "--net", example_args["net"], "--query", example_args["query"],
        "--tighten", "pmnr", "--pgd-iters", "40", "--pmnr-iters", "2",
    ]
    assert main(args) == 0


def test_tighten_writes_bounds(example_args, tmp_path, capsys):
    out = tmp_path / "bounds.json"
    code = main(["tighten", "--net", example_args["net"], "--query", example_args["query"], "--method", "deeppoly", "--out", str(out)])
    assert code == 0
    doc = json.loads(out.read_text())
    assert doc["negated"] is True
    assert doc["output"] == pytest.approx([-0.15, 26.1])
    assert len(doc["bounds"]["layers"]) == 4
    assert json.loads(capsys.readouterr().out)["method"] == "deeppoly"


def test_tighten_writes_planes(example_args, tmp_path):
    planes = tmp_path / "planes.json"
    args = [
        "tighten", "--net", example_args["net"], "--query", example_args["query"], "--method", "pmnr",
        "--pgd-iters", "30", "--pmnr-iters", "1", "--no-output-constraint", "--planes-out", str(planes),
    ]
    assert main(args) == 0
    doc = json.loads(planes.read_text())
    assert doc["planes"]
    assert {"terms", "bias", "provenance"} <= set(doc["planes"][0])


def test_missing_file(tmp_path):
    assert main(["tighten", "--query", str(tmp_path / "nope.json")]) == EXIT_ERROR


def test_malformed_network(example_args, tmp_path):
    bad = tmp_path / "net.json"
    bad.write_text('{"layers": [{"weights": [[1, 2]], "bias": [0, 0]}]}')
    assert main(["verify", "--net", str(bad), "--query", example_args["query"]]) == EXIT_ERROR


def test_usage_errors_exit_with_the_error_code(example_args):
    with pytest.raises(SystemExit) as err:
        main(["tighten", "--query", example_args["query"], "--method", "simulated-annealing"])
    assert err.value.code == EXIT_ERROR


def test_bench(tmp_path):
    manifest = tmp_path / "manifest.yaml"
    manifest.write_text(yaml.safe_dump({"methods": ["deeppoly"], "instances": [{"name": "ex", "builtin": "running_example"}]}))
    out = tmp_path / "report.csv"
    assert main(["bench", "--manifest", str(manifest), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0].startswith("instance,method,status")
