import subprocess
import sys

import numpy as np
import pytest

from genofp import pipeline
from genofp.cli import main
from genofp.snp_model import load_database, load_mask
from genofp.synth_data import GeneratorConfig


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["gen", "--families", "20", "--individuals", "120", "--loci", "30", "--seed", "2",
                 "--out", str(out)]) == 0
    return out


def test_gen_writes_all_files(data_dir):
    for name in pipeline.Dataset.FILES + ("config.txt",):
        assert (data_dir / name).exists()
    ds = pipeline.Dataset.load(data_dir)
    assert ds.db.shape == (120, 30)


def test_gen_is_byte_identical(tmp_path, data_dir):
    main(["gen", "--families", "20", "--individuals", "120", "--loci", "30", "--seed", "2",
          "--out", str(tmp_path)])
    for name in pipeline.Dataset.FILES:
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()


def test_dataset_roundtrip(tmp_path, small):
    small.save(tmp_path)
    back = pipeline.Dataset.load(tmp_path)
    assert back.db == small.db and back.ped == small.ped
    assert back.split == small.split
    assert back.similarity.entries == small.similarity.entries


@pytest.mark.parametrize("argv", [
    ["gen", "--families", "0", "--out", "x"],
    ["gen", "--families", "10", "--individuals", "5", "--out", "x"],
    ["insert", "--data", "x.csv", "--gamma-r", "0", "--gamma-l", "0.1", "--out", "y"],
    ["insert", "--data", "x.csv", "--gamma-r", "0.1", "--gamma-l", "0.1", "--key", "a|b", "--out", "y"],
    ["nonsense"],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as err:
        code = main(argv)
        raise SystemExit(code)
    assert err.value.code == 1


def test_data_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("id,p0\nr0,7\n")
    assert main(["insert", "--data", str(bad), "--gamma-r", "0.1", "--gamma-l", "0.1",
                 "--out", str(tmp_path / "o.csv")]) == 2
    assert main(["insert", "--data", str(tmp_path / "missing.csv"), "--gamma-r", "0.1", "--gamma-l", "0.1",
                 "--out", str(tmp_path / "o.csv")]) == 2
    assert main(["run", "--dataset", str(tmp_path), "--out", str(tmp_path / "r.csv")]) == 2


def test_insert_extract_detect(tmp_path, data_dir, capsys):
    fp = tmp_path / "fp.csv"
    mask = tmp_path / "mask.csv"
    reg = tmp_path / "reg.csv"
    for sp in (1, 2, 3):
        assert main(["insert", "--data", str(data_dir / "database.csv"), "--gamma-r", "1", "--gamma-l", "1",
                     "--sp-id", str(sp), "--out", str(tmp_path / f"fp{sp}.csv"), "--registry", str(reg)]) == 0
    assert main(["insert", "--data", str(data_dir / "database.csv"), "--gamma-r", "1", "--gamma-l", "1",
                 "--sp-id", "2", "--out", str(fp), "--mask", str(mask)]) == 0
    db = load_database(fp)
    assert load_mask(db, mask).n_marked == db.n_rows * db.n_loci
    capsys.readouterr()
    assert main(["extract", "--data", str(fp), "--gamma-r", "1", "--gamma-l", "1", "--sp-id", "2"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines[0]) == 128
    assert lines[-1] == "per_cmp 0.000000"
    assert main(["detect", "--data", str(fp), "--gamma-r", "1", "--gamma-l", "1", "--registry", str(reg)]) == 0
    first = capsys.readouterr().out.splitlines()[0]
    assert first == "2,128"


def test_attack_and_mitigate_commands(tmp_path, data_dir):
    fp, mask = tmp_path / "fp.csv", tmp_path / "mask.csv"
    main(["insert", "--data", str(data_dir / "database.csv"), "--gamma-r", "0.3", "--gamma-l", "0.3",
          "--out", str(fp), "--mask", str(mask)])
    robust = tmp_path / "robust.csv"
    assert main(["mitigate", "--data", str(fp), "--mask", str(mask), "--pedigree", str(data_dir / "pedigree.csv"),
                 "--similarity", str(data_dir / "similarity.csv"), "--joint", str(data_dir / "joint.csv"),
                 "--out", str(robust)]) == 0
    m = load_mask(load_database(fp), mask).marked
    np.testing.assert_array_equal(load_database(robust).cells[m], load_database(fp).cells[m])
    for kind, extra in (("flip", []), ("row", ["--pedigree", str(data_dir / "pedigree.csv"),
                                              "--similarity", str(data_dir / "similarity.csv")]),
                        ("col", ["--joint", str(data_dir / "joint.csv")])):
        assert main(["attack", "--data", str(robust), "--kind", kind, "--budget", "0.05",
                     "--out", str(tmp_path / f"{kind}.csv"), *extra]) == 0
    assert main(["attack", "--data", str(robust), "--kind", "row", "--budget", "0.05",
                 "--out", str(tmp_path / "x.csv")]) == 1


def test_run_is_deterministic_without_timing(tmp_path, data_dir):
    args = ["run", "--dataset", str(data_dir), "--gamma-r", "0.1,0.2", "--gamma-l", "0.2", "--scheme", "robust",
            "--attack", "none", "--attack", "row+col", "--attack", "flip:0.1", "--top-k", "5", "--no-timing"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    records = pipeline.read_records(tmp_path / "a.csv")
    assert len(records) == 6
    assert {r.attack_label for r in records} == {"none", "row+col", "flip"}
    assert all(r.wall_time_seconds == 0.0 for r in records)
    none = [r for r in records if r.attack_label == "none"]
    assert all(r.per_chg_attack == 0.0 for r in none)
    flip = [r for r in records if r.attack_label == "flip"]
    assert all(abs(r.per_chg_attack - 0.1) <= 1 / 3600 for r in flip)


def test_report(tmp_path, data_dir, capsys):
    out = tmp_path / "v.csv"
    main(["run", "--dataset", str(data_dir), "--gamma-r", "0.2", "--gamma-l", "0.2", "--attack", "none",
          "--top-k", "5", "--out", str(out)])
    assert main(["report", str(out), "--out", str(tmp_path / "rep")]) == 0
    consistency = (tmp_path / "rep" / "consistency.csv").read_text().splitlines()
    assert consistency[0] == "scheme,attack,0.2"
    assert consistency[1].startswith("vanilla,none,")
    scatter = (tmp_path / "rep" / "scatter.csv").read_text().splitlines()
    assert scatter[0] == "per_chg,per_cmp,series,side"
    assert scatter[-1].startswith("# success boundary")


def test_scatter_classification():
    rec = pipeline.ExperimentRecord(0.1, 0.1, "vanilla", "row+col", 0.05, 0.0, 0.6, 0.95, 0.8, 0.0)
    low = pipeline.ExperimentRecord(0.1, 0.1, "robust", "row+col", 0.05, 0.03, 0.2, 0.92, 0.7, 0.0)
    rows = pipeline.scatter_rows([rec, low])
    assert rows[1][2:] == ["vanilla:row+col", "above"]
    assert rows[2][2:] == ["robust:row+col", "below"]
    merged = pipeline.mitigation_table([rec, low])
    assert merged[1] == ["0.1", "0.0300"]


def test_stage_isolation(small):
    """Changing the attack plan must not change the fingerprinted copy."""
    a = pipeline.ExperimentConfig(gamma_r=(0.2,), gamma_l=(0.2,), scheme="robust", timing=False)
    db1, mask1, _ = pipeline.fingerprint(small, a, 0.2, 0.2)
    b = pipeline.ExperimentConfig(gamma_r=(0.2,), gamma_l=(0.2,), scheme="robust", timing=False,
                                  attacks=(pipeline.AttackPlan(("flip",), 0.3),))
    db2, mask2, _ = pipeline.fingerprint(small, b, 0.2, 0.2)
    assert db1 == db2
    np.testing.assert_array_equal(mask1.marked, mask2.marked)


def test_attack_plan_parse():
    plan = pipeline.AttackPlan.parse("flip:0.15")
    assert plan.kinds == ("flip",) and plan.budget == 0.15
    assert pipeline.AttackPlan.parse("none").label == "none"
    with pytest.raises(ValueError):
        pipeline.AttackPlan.parse("teleport")


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "genofp", "gen", "--families", "3", "--loci", "4",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert done.returncode == 0
    done = subprocess.run([sys.executable, "-m", "genofp"], capture_output=True, text=True)
    assert done.returncode == 1
