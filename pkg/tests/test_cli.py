import csv
import json

import numpy as np
import pytest

from fedkws.cli import main
from fedkws.engine import load_model
from fedkws.experiment import final_window_mean

SMALL = {
    "version": 1,
    "num_clients": 20, "num_classes": 4, "dim": 8, "samples_mean": 20, "test_size": 120,
    "rounds": 5, "local_steps": 3, "sample_fraction": 0.2, "hidden": [8],
    "strategy": "fedkws_ui",
}


def write_spec(tmp_path, **overrides):
    spec = dict(SMALL, **overrides)
    path = tmp_path / "spec.json"
    path.write_text(json.dumps(spec))
    return str(path)


def files_bytes(directory, pattern):
    return {p.name: p.read_bytes() for p in sorted(directory.glob(pattern))}


def test_generate_is_reproducible(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "b")]) == 0
    a = files_bytes(tmp_path / "a", "*")
    assert "manifest.json" in a and "test.csv" in a and "stats.csv" in a
    assert len([n for n in a if n.startswith("client_")]) == 20
    assert a == files_bytes(tmp_path / "b", "*")


def test_generate_rejects_zero_clients(tmp_path, capsys):
    spec = write_spec(tmp_path, num_clients=0)
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "o")]) == 2
    assert "num_clients" in capsys.readouterr().err


def test_alpha_orders_manifest_entropy(tmp_path):
    ent = {}
    for alpha in (0.1, 100.0):
        spec = write_spec(tmp_path, dirichlet_alpha=alpha, num_clients=100, samples_mean=45)
        out = tmp_path / f"a{alpha}"
        assert main(["generate", "--spec", spec, "--out", str(out)]) == 0
        ent[alpha] = json.loads((out / "manifest.json").read_text())["mean_entropy"]
    assert ent[0.1] < ent[100.0]


def test_run_outputs_and_determinism(tmp_path):
    spec = write_spec(tmp_path)
    for name in ("a", "b"):
        assert main(["run", "--spec", spec, "--out", str(tmp_path / name), "--repeat", "2"]) == 0
    a = files_bytes(tmp_path / "a", "*")
    assert set(a) == {"rounds_seed0.csv", "rounds_seed1.csv", "model_seed0.json",
                      "model_seed1.json", "summary.json"}
    assert a == files_bytes(tmp_path / "b", "*")
    rows = list(csv.DictReader(open(tmp_path / "a" / "rounds_seed0.csv")))
    assert [int(r["round"]) for r in rows] == [0, 3, 5]
    assert all(r["elapsed_ms"] == "" for r in rows)
    summary = json.loads(a["summary.json"])
    assert summary["config"]["strategy"] == "fedkws_ui"
    assert summary["runs"][0]["final5_accuracy"] == final_window_mean(
        float(r["accuracy"]) for r in rows)
    assert len(summary["runs"]) == 2


def test_run_seed_flag_and_threads(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["run", "--spec", spec, "--out", str(tmp_path / "s"), "--seed", "7"]) == 0
    assert main(["run", "--spec", spec, "--out", str(tmp_path / "t"), "--seed", "7",
                 "--threads", "3"]) == 0
    a = load_model(tmp_path / "s" / "model_seed7.json").to_vector()
    b = load_model(tmp_path / "t" / "model_seed7.json").to_vector()
    assert np.max(np.abs(a - b)) <= 1e-9


def test_run_from_exported_data(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["generate", "--spec", spec, "--out", str(tmp_path / "data")]) == 0
    inline = tmp_path / "inline"
    assert main(["run", "--spec", spec, "--out", str(inline)]) == 0
    spec2 = write_spec(tmp_path, data_dir=str(tmp_path / "data"))
    assert main(["run", "--spec", spec2, "--out", str(tmp_path / "loaded")]) == 0
    assert (inline / "rounds_seed0.csv").read_bytes() == \
        (tmp_path / "loaded" / "rounds_seed0.csv").read_bytes()


def test_alloc_table(tmp_path):
    spec = write_spec(tmp_path, local_steps=20)
    out = tmp_path / "alloc"
    assert main(["alloc-table", "--spec", spec, "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "allocation.csv")))
    assert len(rows) == 20
    summary = json.loads((out / "allocation_summary.json").read_text())
    assert abs(summary["total_steps"] - 20 * 20) <= 10
    assert summary["total_steps"] == sum(int(r["steps"]) for r in rows)


def test_landscape_recipe_and_given_models(tmp_path):
    spec = write_spec(tmp_path, resolution=3, probe_epochs=2, pretrain_steps=50)
    out = tmp_path / "ls"
    assert main(["landscape", "--spec", spec, "--out", str(out)]) == 0
    for name in ("landscape.csv", "landscape_alo.csv", "theta0.json", "theta1.json",
                 "theta2.json", "theta1_alo.json", "landscape_summary.json"):
        assert (out / name).exists()
    assert len(list(csv.DictReader(open(out / "landscape.csv")))) == 9
    spec2 = write_spec(tmp_path, resolution=3, theta0=str(out / "theta0.json"),
                       theta1=str(out / "theta1.json"), theta2=str(out / "theta2.json"))
    again = tmp_path / "ls2"
    assert main(["landscape", "--spec", spec2, "--out", str(again)]) == 0
    assert (again / "landscape.csv").read_bytes() == (out / "landscape.csv").read_bytes()


@pytest.mark.parametrize("edit,fragment", [
    ({"bogus_key": 1}, "unknown spec keys"),
    ({"version": 2}, "version"),
    ({"strategy": "nope"}, "strategy"),
    ({"theta0": "x.json"}, "theta"),
])
def test_bad_specs_exit_2(tmp_path, capsys, edit, fragment):
    spec = write_spec(tmp_path, **edit)
    cmd = "landscape" if "theta0" in edit else "run"
    assert main([cmd, "--spec", spec, "--out", str(tmp_path / "o")]) == 2
    assert fragment in capsys.readouterr().err


def test_missing_spec_file(tmp_path, capsys):
    assert main(["run", "--spec", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2
    assert "cannot read spec" in capsys.readouterr().err


def test_bad_flag_values(tmp_path):
    spec = write_spec(tmp_path)
    assert main(["run", "--spec", spec, "--out", str(tmp_path / "o"), "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        main(["run"])
