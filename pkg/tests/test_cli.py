import csv
import json
import os

import numpy as np
import pytest

from outbreak_hmm import io as fio
from outbreak_hmm.cli import main
from outbreak_hmm.hmm import forward_posterior, train
from outbreak_hmm.pipeline import RollingConfig, assign_groups, rolling_baseline, rolling_hmm
from outbreak_hmm.baseline import baseline_score
from outbreak_hmm.series import SeriesGroup, train_test_split
from outbreak_hmm.simulator import SCENARIOS, simulate_scenario


def read_bytes(d):
    out = {}
    for root, _, files in os.walk(d):
        for f in files:
            path = os.path.join(root, f)
            out[os.path.relpath(path, d)] = open(path, "rb").read()
    return out


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenarios", "9", "--n-series", "12", "--seed", "7",
                 "--length", "300", "--out-dir", str(d)]) == 0
    return d


def test_simulate_outputs(tmp_path):
    assert main(["simulate", "--scenarios", "1,3", "--n-series", "2", "--seed", "42",
                 "--out-dir", str(tmp_path)]) == 0
    names = sorted(os.listdir(tmp_path))
    assert names == ["scenario_01_counts.csv", "scenario_01_labels.csv", "scenario_01_truth.json",
                     "scenario_03_counts.csv", "scenario_03_labels.csv", "scenario_03_truth.json"]
    r = rows(tmp_path / "scenario_01_counts.csv")
    assert len(r) == 2 * 624 and sum(x["series_id"] == "sc01_0001" for x in r) == 624
    truth = json.loads((tmp_path / "scenario_03_truth.json").read_text())
    assert truth["scenario"]["phi"] == 2.0 and len(truth["series"]) == 2
    assert all(0.9 <= s["a00"] <= 1 for s in truth["series"])


def test_simulate_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--scenarios", "1-14", "--n-series", "3", "--seed", "42",
                     "--out-dir", str(d)]) == 0
    assert read_bytes(a) == read_bytes(b)


def test_simulate_bad_scenario(tmp_path, capsys):
    assert main(["simulate", "--scenarios", "15", "--out-dir", str(tmp_path)]) == 2
    assert "unknown scenario 15" in capsys.readouterr().err


def test_train_balanced_groups(tmp_path):
    sims = simulate_scenario(SCENARIOS[9], 43, 1)
    ser = [s.series for s in sims]
    c = tmp_path / "c.csv"
    lab = tmp_path / "l.csv"
    c.write_text(fio.counts_csv(ser))
    lab.write_text(fio.labels_csv(ser))
    out = tmp_path / "m"
    assert main(["train", "--counts", str(c), "--labels", str(lab), "--n-groups", "5",
                 "--current-week", "2011-W50", "--out-dir", str(out)]) == 0
    gm = fio.read_group_map(out / "group_map.csv")
    sizes = sorted(np.unique(list(gm.values()), return_counts=True)[1])
    assert len(sizes) == 5 and sizes[-1] - sizes[0] <= 1 and sum(sizes) == 43
    doc = json.loads((out / "model_g1.json").read_text())
    assert doc["schema"] == 1
    assert doc["current_week"] == fio.week_offset("2000-W01", "2011-W50") + 1


def test_group_partition_sizes():
    ids = [f"s{i:03d}" for i in range(400)]
    groups = assign_groups(ids, 20, 0)
    assert [len(g) for g in groups] == [20] * 20
    assert sorted(i for g in groups for i in g) == ids
    assert assign_groups(ids, 20, 0) == groups
    with pytest.raises(Exception, match="fewer groups"):
        assign_groups(ids, 20, 0, ok=lambda g: False)


def test_train_requires_labels(sim_dir, tmp_path):
    assert main(["train", "--counts", str(sim_dir / "scenario_09_counts.csv"), "--n-groups", "2",
                 "--current-week", "2005-W20", "--out-dir", str(tmp_path)]) == 2


def test_train_schema_error_exit_code(tmp_path):
    c = tmp_path / "c.csv"
    c.write_text("series_id,year_week,count\ns,2000-W01,x\n")
    lab = tmp_path / "l.csv"
    lab.write_text("series_id,year_week,label\ns,2000-W01,0\n")
    assert main(["train", "--counts", str(c), "--labels", str(lab), "--n-groups", "1",
                 "--current-week", "2000-W01", "--out-dir", str(tmp_path)]) == 3


@pytest.fixture(scope="module")
def trained(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    assert main(["train", "--counts", str(sim_dir / "scenario_09_counts.csv"),
                 "--labels", str(sim_dir / "scenario_09_labels.csv"), "--n-groups", "2",
                 "--seed", "3", "--current-week", "2005-W20", "--out-dir", str(out)]) == 0
    return out


def detect(sim_dir, models, out, *extra):
    return main(["detect", "--model-dir", str(models),
                 "--counts", str(sim_dir / "scenario_09_counts.csv"),
                 "--labels", str(sim_dir / "scenario_09_labels.csv"),
                 "--from-week", "2005-W20", "--to-week", "2005-W27", "--out", str(out), *extra])


def test_detect_threshold_zero_alarms_everywhere(sim_dir, trained, tmp_path):
    assert detect(sim_dir, trained, tmp_path / "a.csv", "--threshold", "0") == 0
    r = rows(tmp_path / "a.csv")
    assert len(r) == 12 * 8 and all(x["alarm"] == "1" for x in r)
    assert list(r[0]) == ["series_id", "year_week", "p_outbreak", "alarm"]


def test_detect_threshold_validation(sim_dir, trained, tmp_path):
    assert detect(sim_dir, trained, tmp_path / "a.csv", "--threshold", "1.000001") == 2
    assert not (tmp_path / "a.csv").exists()


def test_detect_orphans(sim_dir, trained, tmp_path, capsys):
    counts = (sim_dir / "scenario_09_counts.csv").read_text()
    extra = "".join(f"zz,{fio.shift_year_week('2000-W01', i)},1\n" for i in range(300))
    c = tmp_path / "c.csv"
    c.write_text(counts + extra)
    code = main(["detect", "--model-dir", str(trained), "--counts", str(c),
                 "--labels", str(sim_dir / "scenario_09_labels.csv"),
                 "--from-week", "2005-W20", "--to-week", "2005-W20", "--out", str(tmp_path / "o")])
    assert code == 3 and "series without a model: zz" in capsys.readouterr().err


def test_detect_flags_large_injected_outbreak(sim_dir, trained, tmp_path):
    counts = fio.read_counts(sim_dir / "scenario_09_counts.csv")
    truth = json.loads((sim_dir / "scenario_09_truth.json").read_text())
    wk = "2005-W24"
    i = fio.week_offset(truth["start_week"], wk)
    counts["sc09_0004"][wk] = int(10 * truth["endemic_mean"][i]) + 30
    ser = fio.build_series(counts)
    c = tmp_path / "c.csv"
    c.write_text(fio.counts_csv(ser))
    assert main(["detect", "--model-dir", str(trained), "--counts", str(c),
                 "--labels", str(sim_dir / "scenario_09_labels.csv"), "--from-week", wk,
                 "--to-week", wk, "--threshold", "0.5", "--out", str(tmp_path / "o.csv")]) == 0
    hit = [x for x in rows(tmp_path / "o.csv") if x["series_id"] == "sc09_0004"]
    assert hit[0]["alarm"] == "1" and float(hit[0]["p_outbreak"]) > 0.9


def test_end_to_end_evaluate_and_determinism(sim_dir, trained, tmp_path):
    runs = []
    for k in ("a", "b"):
        d = tmp_path / k
        d.mkdir()
        assert detect(sim_dir, trained, d / "hmm.csv", "--refit-every", "4") == 0
        assert main(["detect", "--method", "baseline", "--counts",
                     str(sim_dir / "scenario_09_counts.csv"), "--from-week", "2005-W20",
                     "--to-week", "2005-W27", "--out", str(d / "base.csv")]) == 0
        assert main(["evaluate", "--hmm-scores", str(d / "hmm.csv"),
                     "--baseline-scores", str(d / "base.csv"),
                     "--labels", str(sim_dir / "scenario_09_labels.csv"),
                     "--truth", str(sim_dir / "scenario_09_truth.json"),
                     "--counts", str(sim_dir / "scenario_09_counts.csv"),
                     "--out-dir", str(d / "rep")]) == 0
        runs.append(read_bytes(d))
    assert runs[0] == runs[1]
    b = rows(tmp_path / "a" / "base.csv")
    assert list(b[0]) == ["series_id", "year_week", "p_value", "threshold", "alarm"]


def test_evaluate_errors(tmp_path, capsys):
    h = tmp_path / "h.csv"
    b = tmp_path / "b.csv"
    lab = tmp_path / "l.csv"
    h.write_text("series_id,year_week,p_outbreak,alarm\ns,2000-W01,0.5,1\n")
    b.write_text("series_id,year_week,p_value,threshold,alarm\nt,2000-W01,0.5,3,0\n")
    lab.write_text("series_id,year_week,label\ns,2000-W01,1\n")
    args = ["evaluate", "--hmm-scores", str(h), "--baseline-scores", str(b), "--labels", str(lab),
            "--out-dir", str(tmp_path / "o")]
    assert main(args) == 3
    assert "share no" in capsys.readouterr().err
    b.write_text("series_id,year_week,p_value,threshold,alarm\ns,2000-W01,0.5,3,0\n"
                 "s,2000-W02,0.5,3,0\n")
    assert main(args) == 3
    assert "first mismatched key ('s', '2000-W02')" in capsys.readouterr().err


def test_config_file_and_flag_override(sim_dir, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n-series = 2\nscenarios = 4\nlength = 100\n")
    assert main(["simulate", "--config", str(cfg), "--seed", "1", "--out-dir", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "scenario_04_counts.csv")) == 200
    assert main(["simulate", "--config", str(cfg), "--n-series", "3", "--out-dir",
                 str(tmp_path / "p")]) == 0
    assert len(rows(tmp_path / "p" / "scenario_04_counts.csv")) == 300
    cfg.write_text("bogus = 1\n")
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / "q")]) == 2


def test_rolling_matches_direct_computation():
    sims = simulate_scenario(SCENARIOS[9], 4, 5)
    g = SeriesGroup("g", tuple(s.series for s in sims))
    weeks = [300, 301, 302, 303, 304]
    rc = RollingConfig(window_years=5, holdout_u=26, refit_every=2)
    got = rolling_hmm(g, weeks, rc)
    base = rolling_baseline(g, weeks, rc)
    for T in weeks:
        T_fit = 300 + 2 * ((T - 300) // 2)
        model = train(g, T_fit, 5, 26)
        _, full = train_test_split(g, T, 5, 26)
        for n, s in enumerate(full.series):
            ref = forward_posterior(model, s, n, T)
            p, ev = got[(s.series_id, T)]
            assert p == pytest.approx(ref.p_outbreak, rel=1e-12, abs=1e-300)
            assert ev == pytest.approx(ref.log_evidence, rel=1e-12)
    for s in g.series:
        sc = baseline_score(s, 300)
        p, thr, alarm = base[(s.series_id, 300)]
        assert p == pytest.approx(sc.p_value, rel=1e-5, abs=1e-12)
        assert (thr, alarm) == (sc.threshold, sc.alarm)


def test_parallel_workers_match_serial(sim_dir, trained, tmp_path):
    assert detect(sim_dir, trained, tmp_path / "s.csv", "--workers", "1") == 0
    assert detect(sim_dir, trained, tmp_path / "p.csv", "--workers", "2") == 0
    assert (tmp_path / "s.csv").read_bytes() == (tmp_path / "p.csv").read_bytes()


def test_detect_past_end_of_data(sim_dir, trained, tmp_path, capsys):
    code = main(["detect", "--method", "baseline", "--counts",
                 str(sim_dir / "scenario_09_counts.csv"), "--from-week", "2005-W40",
                 "--to-week", "2005-W52", "--out", str(tmp_path / "o.csv")])
    assert code == 3 and "past the last data week" in capsys.readouterr().err
    sims = simulate_scenario(SCENARIOS[9], 2, 5)
    g = SeriesGroup("g", tuple(s.series for s in sims))
    with pytest.raises(Exception, match="beyond the data"):
        rolling_baseline(g, [624, 625])
