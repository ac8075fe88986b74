import csv
import json

import pytest

from levyld.cli import main, resolve_config, build_parser
from levyld.config import ConfigError, ExperimentConfig, parse_config
from levyld.density import CSV_COLUMNS

FAST = ["--h-grid", "0.5,0.25", "--n", "3000"]


def _manifest(path):
    return json.loads(path.read_text())


def test_unknown_key_reports_path():
    with pytest.raises(ConfigError, match=r"model\.alpah"):
        parse_config({"model": {"alpah": 0.5}})
    with pytest.raises(ConfigError, match=r"varadhan\.h_grid"):
        parse_config({"varadhan": {"h_grid": "fast"}})


@pytest.mark.parametrize("seed", [-1, 2 ** 64])
def test_seed_range(seed):
    with pytest.raises(ConfigError, match="seed"):
        parse_config({"seed": seed})
    assert parse_config({"seed": 2 ** 64 - 1}).seed == 2 ** 64 - 1


def test_hash_is_canonical():
    a = ExperimentConfig()
    b = parse_config(json.loads(json.dumps(a.model_dump(mode="json"))))
    assert a.config_hash() == b.config_hash()
    assert parse_config({"seed": 1}).config_hash() != a.config_hash()


def test_config_file_then_flags(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"seed": 5, "rate": {"y": [1.0, 2.0], "radius": 0.2}}))
    args = build_parser().parse_args(["rate", "--config", str(cfg_file), "--y", "0.5,0.5"])
    cfg = resolve_config(args)
    assert cfg.seed == 5 and cfg.rate.y == [0.5, 0.5] and cfg.rate.radius == 0.2


def test_workers_environment_override(tmp_path, monkeypatch):
    monkeypatch.setenv("LEVYLD_WORKERS", "3")
    cfg = resolve_config(build_parser().parse_args(["rate"]))
    assert cfg.workers == 3
    cfg = resolve_config(build_parser().parse_args(["rate", "--workers", "2"]))
    assert cfg.workers == 2
    monkeypatch.setenv("LEVYLD_WORKERS", "many")
    assert main(["rate", "--out", str(tmp_path)]) == 1


def test_invalid_alpha_exits_one(tmp_path, capsys):
    cfg_file = tmp_path / "bad.json"
    cfg_file.write_text(json.dumps({"model": {"alpha": 1.2}}))
    code = main(["hamiltonian", "--config", str(cfg_file), "--out", str(tmp_path)])
    assert code == 1
    assert "alpha" in capsys.readouterr().err
    man = _manifest(tmp_path / "hamiltonian.manifest.json")
    assert man["status"] == "error" and man["exit_code"] == 1 and "alpha" in man["message"]


def test_unknown_key_in_file_exits_one(tmp_path, capsys):
    cfg_file = tmp_path / "bad.json"
    cfg_file.write_text(json.dumps({"model": {"alpah": 0.5}}))
    assert main(["rate", "--config", str(cfg_file), "--out", str(tmp_path)]) == 1
    assert "model.alpah" in capsys.readouterr().err


def test_stochastic_command_needs_seed(tmp_path):
    assert main(["varadhan", *FAST, "--out", str(tmp_path)]) == 1
    man = _manifest(tmp_path / "varadhan.manifest.json")
    assert "seed" in man["message"] and man["seed"] is None


def test_manifest_round_trip(tmp_path):
    assert main(["hamiltonian", "--xi", "0.5,0.25", "--out", str(tmp_path)]) == 0
    man = _manifest(tmp_path / "hamiltonian.manifest.json")
    for key in ("command", "config", "config_hash", "seed", "versions", "wall_time", "status",
                "exit_code", "artifacts"):
        assert key in man
    assert parse_config(man["config"]).config_hash() == man["config_hash"]
    result = json.loads((tmp_path / "hamiltonian.json").read_text())
    assert result


def test_varadhan_csv_schema_and_bytes(tmp_path):
    paths = []
    for run in ("a", "b"):
        target = tmp_path / run / "sweep.csv"
        code = main(["varadhan", *FAST, "--seed", "11", "--out", str(target)])
        assert code in (0, 2)
        paths.append(target)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    rows = list(csv.reader(paths[0].open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == 3
    man = _manifest(tmp_path / "a" / "sweep.manifest.json")
    assert str(paths[0]) in man["artifacts"]
    assert parse_config(man["config"]).config_hash() == man["config_hash"]


def test_worker_count_does_not_change_results(tmp_path):
    out = []
    for w in ("1", "2"):
        target = tmp_path / w / "s.csv"
        main(["varadhan", *FAST, "--seed", "12", "--workers", w, "--out", str(target)])
        out.append(target.read_bytes())
    assert out[0] == out[1]


def test_tauberian_command(tmp_path):
    assert main(["tauberian", "--out", str(tmp_path)]) in (0, 2)
    assert (tmp_path / "tauberian.manifest.json").exists()
