"""The four subcommands, driven through main() the way a shell would."""

import pytest

from sosmesh.cli import main
from sosmesh.harness import CSV_HEADER
from sosmesh.scenario import bundled_scenario_path, load_scenario

HOME = str(bundled_scenario_path("smart_home"))


def test_validate_reports_the_shape(capsys):
    assert main(["validate", "--scenario", HOME]) == 0
    out = capsys.readouterr().out
    assert "smart_home: OK" in out
    assert "8 relays" in out and "3 proxy servers" in out and "3 proxy clients" in out


def test_validate_fails_cleanly_on_broken_files(tmp_path, capsys):
    bad = tmp_path / "broken.scn"
    bad.write_text("[meta]\nwidth = 10\n")
    assert main(["validate", "--scenario", str(bad)]) == 1
    assert "error:" in capsys.readouterr().err


def test_run_writes_a_csv_and_a_summary(tmp_path, capsys):
    code = main(
        ["run", "--scenario", HOME, "--experiment", "1",
         "--seed", "5", "--reps", "1", "--out", str(tmp_path)]
    )
    assert code == 0
    csv_path = tmp_path / "smart_home_exp1.csv"
    assert csv_path.exists()
    lines = csv_path.read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 60            # one repetition at 5/min for 12 min

    out = capsys.readouterr().out
    assert "experiment 1" in out
    assert "loss_pct" in out


def test_plot_consumes_run_output(tmp_path, capsys):
    main(
        ["run", "--scenario", HOME, "--experiment", "1",
         "--seed", "5", "--reps", "1", "--out", str(tmp_path)]
    )
    capsys.readouterr()
    out_file = tmp_path / "figure.svg"
    assert main(["plot", "--in", str(tmp_path), "--out", str(out_file)]) == 0
    assert out_file.exists()
    assert "<svg" in out_file.read_text()


def test_plot_with_no_matching_csvs_fails(tmp_path, capsys):
    (tmp_path / "notes.txt").write_text("nothing here")
    assert main(["plot", "--in", str(tmp_path), "--out", str(tmp_path / "x.svg")]) == 1
    assert "no result CSVs" in capsys.readouterr().err


def test_calibrate_writes_a_loadable_scenario(tmp_path, capsys):
    out_file = tmp_path / "tuned.scn"
    code = main(
        ["calibrate", "--scenario", HOME, "--target-loss", "8.5",
         "--target-hops", "3.11", "--out", str(out_file)]
    )
    assert code == 0
    tuned = load_scenario(out_file)
    assert tuned.name == "smart_home"
    assert tuned.base_loss > 0.0
    out = capsys.readouterr().out
    assert "calibrated smart_home" in out
    assert str(out_file) in out


def test_missing_subcommand_is_a_usage_error():
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2


def test_unknown_experiment_number_is_a_usage_error(tmp_path):
    with pytest.raises(SystemExit):
        main(["run", "--scenario", HOME, "--experiment", "9", "--out", str(tmp_path)])
