import json
import os

import pandas as pd
import pytest

from geopriv import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A small synthetic cohort taken through synth and extract."""
    root = tmp_path_factory.mktemp("cli")
    bundle, out = root / "bundle", root / "out"
    assert run("synth", "--seed", 7, "--users", 8, "--weeks", 6, "--out", bundle) == 0
    assert run("extract", "--bundle", bundle, "--out", out) == 0
    return root


def test_config_file_and_overrides(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nseed = 3\nusers = 5\nout = res\n[utility]\nmodels = rf\n"
                   "regimes = split, loso\ndaytime = 7-19\n[privacy]\nmi_bins = 8\n")
    cfg = cli.load_config(str(ini))
    assert (cfg.seed, cfg.users, cfg.models, cfg.regimes) == (3, 5, ["rf"], ["split", "loso"])
    assert cfg.daytime == (7, 19) and cfg.mi_bins == 8
    assert cfg.out == str(tmp_path / "res")
    cfg.validate()


def test_config_unknown_key(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[run]\nsed = 3\n")
    with pytest.raises(cli.CliError, match="unknown key 'sed'"):
        cli.load_config(str(ini))


def test_config_missing_path_rejected(tmp_path):
    cfg = cli.RunConfig(bundle=str(tmp_path / "nope"))
    with pytest.raises(cli.CliError, match="does not exist"):
        cfg.validate()


def test_config_hash_tracks_content():
    assert cli.RunConfig().config_hash() == cli.RunConfig().config_hash()
    assert cli.RunConfig(seed=1).config_hash() != cli.RunConfig().config_hash()


def test_missing_upstream_names_producer(tmp_path, caplog):
    assert run("eval", "--out", tmp_path, "--regime", "split") == 1
    assert "run `geopriv extract` first" in caplog.text


def test_extract_outputs(workdir):
    out = workdir / "out"
    df = pd.read_csv(out / "dataset.csv")
    assert len(df) > 0 and {"user_id", "date", "label"} <= set(df.columns)
    summary = json.loads((out / "extract.json").read_text())
    assert summary["rows"] == len(df)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["artifacts"]["dataset.csv"]["command"] == "extract"


def test_eval_loso_smoke(workdir):
    out = workdir / "out"
    assert run("eval", "--out", out, "--regime", "loso", "--set", "PA") == 0
    rep = json.loads((out / "eval" / "loso_PA_rf.json").read_text())
    assert rep["regime"] == "loso" and rep["feature_set"] == "PA"
    assert 0 <= rep["f1_mean"] <= 100


def test_attack_smoke(workdir):
    out = workdir / "out"
    assert run("attack", "--out", out, "--set", "RAW", "--scenario", "limited") == 0
    rep = json.loads((out / "attack" / "RAW_limited.json").read_text())
    curve = pd.read_csv(out / "attack" / "RAW_limited_topk.csv")
    assert list(curve["k"]) == list(range(1, 9))
    assert curve["accuracy"].iloc[-1] == 1.0
    assert rep["top1"] == pytest.approx(100 * curve["accuracy"].iloc[0], abs=1e-3)


def test_train_writes_loadable_model(workdir):
    out = workdir / "out"
    assert run("train", "--out", out, "--set", "AO", "--model", "gbt", "--balance", "none") == 0
    assert os.path.exists(out / "models" / "gbt_AO.json")


def test_analyze_and_report(workdir):
    out = workdir / "out"
    assert run("analyze", "--out", out) == 0
    mi = pd.read_csv(out / "analysis" / "mi.csv")
    assert len(mi) == 54 and mi["mutual_information"].is_monotonic_decreasing
    assert run("eval", "--out", out, "--regime", "split", "--set", "AF") == 0
    cfg = workdir / "report.ini"
    cfg.write_text("[run]\nregimes = split, loso\n")
    assert run("--config", cfg, "report", "--out", out) == 0
    reid = pd.read_csv(out / "report" / "reid.csv")
    assert list(reid["scenario"]) == ["rich", "moderate", "limited"]
    util = pd.read_csv(out / "report" / "utility_split.csv")
    assert list(util["metric"]) == ["Acc", "F1"] and "AF_RF" in util.columns
    ftest = pd.read_csv(out / "report" / "ftest_top10.csv")
    assert list(ftest.columns) == ["feature", "p_value", "r_value"]
    assert (out / "report" / "weekly_recreation.csv").exists()


def test_report_without_attacks(tmp_path, caplog):
    assert run("report", "--out", tmp_path) == 1
    assert "run `geopriv attack` first" in caplog.text


def test_commands_idempotent(workdir):
    out = workdir / "out"
    path = out / "attack" / "PA_rich.json"
    assert run("attack", "--out", out, "--set", "PA", "--scenario", "rich") == 0
    first = path.read_bytes()
    assert run("attack", "--out", out, "--set", "PA", "--scenario", "rich") == 0
    assert path.read_bytes() == first


def test_config_hash_ignores_output_location():
    a = cli.RunConfig(out="/tmp/x", bundle="/tmp/x/bundle")
    b = cli.RunConfig(out="/tmp/y", bundle="/tmp/y/bundle")
    assert a.config_hash() == b.config_hash()
    assert cli.RunConfig(out="/tmp/x", bundle="/data/b1").config_hash() != a.config_hash()
