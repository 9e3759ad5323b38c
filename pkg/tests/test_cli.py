import hashlib
import json

import pytest

from gffperc.cli import csv_text, main, svg_plot


def run_cli(args, out):
    return main(list(args) + ["--out", str(out)])


def test_green_quadrature(tmp_path, capsys):
    assert run_cli(["green", "--d", "3", "--x", "0,0,0"], tmp_path / "g") == 0
    text = (tmp_path / "g" / "green.csv").read_text()
    assert "1.516386059151978" in text
    assert "quadrature" in capsys.readouterr().out


def test_manifest_digests(tmp_path):
    out = tmp_path / "g"
    run_cli(["green", "--d", "4"], out)
    man = json.loads((out / "manifest.json").read_text())
    for f in man["files"]:
        assert hashlib.sha256((out / f["name"]).read_bytes()).hexdigest() == f["sha256"]
    assert man["config"]["d"] == 4


def test_missing_required_parameter_exits_2(tmp_path):
    assert run_cli(["crossing", "--d", "3"], tmp_path / "x") == 2
    assert not (tmp_path / "x").exists()


def test_unknown_method_exits_2(tmp_path):
    assert run_cli(["green", "--d", "3", "--method", "nope"], tmp_path / "g") == 2


def test_missing_constants_refused(tmp_path):
    assert run_cli(["renorm-ub", "--d", "100000", "--eps", "1"], tmp_path / "u") == 2
    assert not (tmp_path / "u").exists()
    assert run_cli(["renorm-ub", "--d", "100000", "--eps", "1", "--allow-placeholders"], tmp_path / "u") == 0


def test_schedule_violation_exits_2_without_output(tmp_path, capsys):
    code = run_cli(["renorm-ub", "--d", "3", "--eps", "1", "--L0", "3", "--l0", "3", "--N", "1",
                    "--c2", "1", "--c5", "1"], tmp_path / "u")
    assert code == 2
    assert "l_0 ≥ 20(√d+N) violated (3 < 54.6)" in capsys.readouterr().err
    assert not (tmp_path / "u").exists()


def test_tolerance_failure_exits_3(tmp_path):
    code = run_cli(["green", "--d", "3", "--method", "monte_carlo", "--walks", "1000",
                    "--tolerance", "1e-7"], tmp_path / "m")
    assert code == 3
    assert not (tmp_path / "m").exists()


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"d": 3, "h": [0.0, 1.0], "replicas": 50, "seed": 4}))
    out = tmp_path / "c"
    assert main(["crossing", "--config", str(cfg), "--replicas", "30", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["replicas"] == 30 and man["config"]["seed"] == 4
    cfg.write_text(json.dumps({"d": 3, "bogus": 1}))
    assert main(["crossing", "--config", str(cfg), "--h", "0", "--out", str(tmp_path / "z")]) == 2


def test_reruns_are_byte_identical(tmp_path):
    args = ["crossing", "--d", "3", "--h=-0.5,0,0.5", "--replicas", "200", "--seed", "9"]
    run_cli(args, tmp_path / "a")
    run_cli(args, tmp_path / "b")
    assert (tmp_path / "a" / "crossing.csv").read_bytes() == (tmp_path / "b" / "crossing.csv").read_bytes()
    raw = (tmp_path / "a" / "crossing.csv").read_bytes()
    assert raw.count(b"\r\n") == 4


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("GFFPERC_OUT", str(tmp_path / "env"))
    assert main(["green", "--d", "3"]) == 0
    assert (tmp_path / "env" / "green.csv").exists()


def test_binary_samples(tmp_path):
    assert run_cli(["sample", "--d", "3", "--radius", "1", "--replicas", "2", "--format", "binary"],
                   tmp_path / "s") == 0
    files = sorted(p.name for p in (tmp_path / "s").iterdir())
    assert files == ["manifest.json", "sample_00000.gffs", "sample_00001.gffs"]


def test_renorm_lb_reports(tmp_path):
    assert run_cli(["renorm-lb", "--d", "60", "--eps", "1", "--c0-prime", "1", "--p-fail", "1e-6"],
                   tmp_path / "l") == 0
    rep = json.loads((tmp_path / "l" / "renorm_lb.json").read_text())
    assert "duality" in rep and rep["constants"]["c0_prime"]["placeholder"] is False


def test_plot_sweep_and_empty(tmp_path):
    out = tmp_path / "c"
    run_cli(["crossing", "--d", "3", "--h=-1,0,1", "--replicas", "50"], out)
    svg = tmp_path / "p.svg"
    assert main(["plot", "--input", str(out / "crossing.csv"), "--kind", "sweep", "--output", str(svg)]) == 0
    first = svg.read_bytes()
    main(["plot", "--input", str(out / "crossing.csv"), "--kind", "sweep", "--output", str(svg)])
    assert svg.read_bytes() == first and first.startswith(b"<svg")
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["plot", "--input", str(empty), "--kind", "trace", "--output", str(svg)]) == 0
    assert "no data" in svg.read_text()


def test_csv_text_format():
    text = csv_text([{"a": 1.0, "b": "x,y"}, {"a": float("inf"), "b": None}])
    assert text == 'a,b\r\n1.0,"x,y"\r\ninf,\r\n'
    assert "no data" in svg_plot([], "sweep")


def test_unknown_command_usage():
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 2
