import pytest

from app.cli import build_parser, main
from conftest import write_run_file
from services.dataset_service import load_csv
from services.report_service import read_pareto_csv


class TestCli:
    def test_synth(self, tmp_path, capsys):
        path = tmp_path / "station.csv"
        assert main(["synth", "--days", "2", "--seed", "3", "--out", str(path)]) == 0
        assert "wrote" in capsys.readouterr().out
        frame = load_csv(path)
        assert frame.values.shape == (48, 11)
        assert frame.target_name == "power"

    def test_missing_config(self, tmp_path, capsys):
        assert main(["search", "--config", str(tmp_path / "absent.cfg")]) == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "run.cfg"
        write_run_file(path, {"task.horizon": "13"})
        assert main(["search", "--config", str(path)]) == 1
        assert "horizon" in capsys.readouterr().err

    def test_subcommand_is_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_search_then_predict(self, tmp_path, station_csv, capsys):
        config = tmp_path / "run.cfg"
        out = tmp_path / "out"
        write_run_file(config)
        assert main(["search", "--config", str(config), "--output-dir", str(out)]) == 0
        assert "best" in capsys.readouterr().out
        assert read_pareto_csv(out / "pareto.csv")

        code = main(["predict", "--arch", str(out / "best_arch.json"), "--data", str(station_csv),
                     "--horizon", "12", "--out", str(tmp_path / "forecast")])
        assert code == 0
        assert "windows=37" in capsys.readouterr().out
        assert (tmp_path / "forecast" / "forecast.csv").is_file()

    def test_predict_with_wrong_horizon(self, search_run, station_csv, capsys):
        _, _, out = search_run
        code = main(["predict", "--arch", str(out / "best_arch.json"), "--data", str(station_csv),
                     "--horizon", "24"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_baseline(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        write_run_file(config, {"output_dir": str(tmp_path / "out")})
        assert main(["baseline", "--config", str(config), "--names", "transformer"]) == 1
        assert "transformer" in capsys.readouterr().err
