import csv
import json

import numpy as np
import pytest

from ddsf import symmetric_box
from ddsf.cli import (EXIT_OK, EXIT_VALIDATION, ConfigError, ExperimentConfig, LearningSpec,
                      count_violations, learning_signal, main, prbs, read_steps_csv)

SMALL = {"seed": 7, "run": {"steps": 60, "offline_max_iter": 6,
                            "online_checkpoints": [0, 20, 60],
                            "offline_checkpoints": [0, 3, 6]}}


def write_config(path, raw):
    path.write_text(json.dumps(raw))
    return path


def run(tmp_path, command, raw, *extra):
    cfg = write_config(tmp_path / "cfg.json", raw)
    return main([command, "--config", str(cfg), "--out", str(tmp_path / "out"), *extra])


def test_defaults_validate():
    cfg = ExperimentConfig.from_dict({"seed": 0})
    assert cfg.filter.N == 6 and cfg.filter.T_ini == 3 and cfg.data.n0 == 200


@pytest.mark.parametrize("raw", [
    {},
    {"seed": -1},
    {"seed": 0, "colour": 1},
    {"seed": 0, "filter": {"horizon": 6}},
    {"seed": 0, "filter": {"N": 3}},
    {"seed": 0, "learning": {"amplitude": 2.0}},
    {"seed": 0, "learning": {"kind": "chirp"}},
    {"seed": 0, "data": {"excitation": "noise"}},
    {"seed": 0, "constraints": {"u_min": [-1, -1], "u_max": [1, 1]}},
    {"seed": 0, "run": {"study2_t_ini": [6]}},
])
def test_invalid_configs(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw)


def test_paths_resolve_against_config(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path / "c.json", {"seed": 1}))
    assert cfg.resolve("x.csv") == tmp_path / "x.csv"


def test_collect_writes_validated_batch(tmp_path):
    assert run(tmp_path, "collect", {"seed": 3}) == EXIT_OK
    with open(tmp_path / "out" / "trajectory.csv") as f:
        assert len(list(csv.reader(f))) == 201


@pytest.mark.parametrize("data", [{"excitation": "constant"}, {"n0": 10}])
def test_collect_rejects_poor_data(tmp_path, data):
    assert run(tmp_path, "collect", {"seed": 3, "data": data}) == EXIT_VALIDATION


def test_unreadable_config_is_validation_error(tmp_path):
    (tmp_path / "cfg.json").write_text("{not json")
    assert main(["collect", "--config", str(tmp_path / "cfg.json")]) == EXIT_VALIDATION


def test_prbs_is_seeded_binary():
    a, b = prbs(200, 1, 1.0, 0.5, 4), prbs(200, 1, 1.0, 0.5, 4)
    np.testing.assert_array_equal(a, b)
    assert set(np.unique(a)) == {-1.0, 1.0}
    assert not np.array_equal(a, prbs(200, 1, 1.0, 0.5, 5))


def test_sinusoid_default_period():
    u = learning_signal(LearningSpec(), 120, 1, 0)
    np.testing.assert_allclose(u[60], u[0], atol=1e-12)
    assert np.abs(u).max() <= 1.0


def test_run_filter_artifacts(tmp_path):
    assert run(tmp_path, "run-filter", SMALL, "--dump-qp") == EXIT_OK
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    box = symmetric_box(1.0)
    assert summary["violations"] == count_violations(out / "steps.csv", box, box, 1e-7) == 0
    cols = read_steps_csv(out / "steps.csv")
    assert len(cols["t"]) == 60 and summary["all_optimal"]
    assert (out / "qp" / "step_00000_A.mtx").exists()


def test_violation_count_rescans_csv(tmp_path):
    assert run(tmp_path, "run-filter", SMALL) == EXIT_OK
    steps = tmp_path / "out" / "steps.csv"
    rows = list(csv.reader(open(steps)))
    rows[5][rows[0].index("y")] = "1.5"
    rows[9][rows[0].index("u_safe")] = "-1.01"
    with open(steps, "w", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(rows)
    box = symmetric_box(1.0)
    assert count_violations(steps, box, box, 1e-7) == 2


def test_study_one_small_is_deterministic(tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}"
        cfg = write_config(tmp_path / "cfg.json", SMALL)
        assert main(["study-1", "--config", str(cfg), "--out", str(out)]) == EXIT_OK
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert len(files) >= 7
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_seed_flag_changes_run(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", SMALL)
    main(["collect", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["collect", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "8"])
    assert (tmp_path / "a" / "trajectory.csv").read_bytes() != \
        (tmp_path / "b" / "trajectory.csv").read_bytes()


def test_export_set_skips_late_checkpoints(tmp_path):
    raw = json.loads(json.dumps(SMALL))
    raw["run"]["online_checkpoints"] = [0, 20, 60, 500]
    with pytest.warns(UserWarning):
        assert run(tmp_path, "export-set", raw) == EXIT_OK
    index = json.loads((tmp_path / "out" / "snapshots.json").read_text())
    assert [e["checkpoint"] for e in index["online"]] == [0, 20, 60]
    assert index["online"][0]["n_vertices"] == 1
    for kind in ("online", "offline"):
        for e in index[kind][1:]:
            assert e["max_distance_of_previous"] <= 1e-7


def test_study_two_small(tmp_path):
    raw = json.loads(json.dumps(SMALL))
    assert run(tmp_path, "study-2", raw) == EXIT_OK
    out = tmp_path / "out"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["tini2"]["violations"] == summary["tini3"]["violations"] == 0
    a = read_steps_csv(out / "tini2" / "run" / "steps.csv")["u_learning"]
    b = read_steps_csv(out / "tini3" / "run" / "steps.csv")["u_learning"]
    np.testing.assert_array_equal(a, b)
