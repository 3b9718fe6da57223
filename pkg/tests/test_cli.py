import json

import numpy as np
import pytest

from hsinpaint.cli import config_hash, main
from hsinpaint.cube import load_cube
from hsinpaint.lipdip import Network, encoder_decoder


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--rows", "4", "--cols", "4", "--bands", "4", "--rank", "2", "--fraction", "0.2",
                 "--sigma", "0.02", "--out", str(root / "syn")]) == 0
    assert main(["dictlearn", "--input", str(root / "syn/observed"), "--epochs", "3",
                 "--out", str(root / "dict")]) == 0
    return root


def common(data, *extra):
    return ["--input", str(data / "syn/observed"), "--mask", str(data / "syn/mask"),
            "--dictionary", str(data / "dict/dictionary"), "--truth", str(data / "syn/truth"), *extra]


def test_synth_outputs_and_manifest(data):
    man = json.loads((data / "syn/manifest.json").read_text())
    assert man["tool"] == "hsinpaint" and man["command"] == "synth"
    assert set(man["outputs"]) == {f"{n}.{e}" for n in ("truth", "mask", "observed") for e in ("json", "bin")}
    assert "time" not in json.dumps(man)
    assert load_cube(data / "syn/truth").shape == (4, 4, 4)


def test_synth_is_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["synth", "--rows", "3", "--cols", "3", "--bands", "2", "--rank", "1",
                     "--out", str(tmp_path / d)]) == 0
    for name in ("truth.bin", "mask.bin", "observed.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


@pytest.mark.parametrize("argv", [
    ["synth", "--fraction", "1.5", "--out", "{tmp}/x"],
    ["synth", "--rank", "0", "--out", "{tmp}/x"],
    ["inpaint", "--input", "{tmp}/missing", "--mask", "{tmp}/m", "--dictionary", "{tmp}/d", "--out", "{tmp}/o"],
    ["config", "--set", "novalue"],
    ["config", "--set", "gamma=-1"],
    ["config", "--set", "unknown_key=1"],
    ["certify"],
    ["nosuchcommand"],
])
def test_usage_errors_exit_2(tmp_path, argv):
    assert main([a.replace("{tmp}", str(tmp_path)) for a in argv]) == 2


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"solver": {"gamma": 2.0, "w_s": 0.3}, "nlm": {"h": 0.7}, "seed": 5}))
    assert main(["config", "--preset", "benchmark", "--config", str(cfg), "--w-s", "0.9"]) == 0
    eff = json.loads(capsys.readouterr().out)
    assert eff["solver"]["gamma"] == 2.0 and eff["solver"]["w_s"] == 0.9
    assert eff["solver"]["nlm_h"] == 0.7 and eff["seed"] == 5 and eff["solver"]["seed"] == 5
    assert main(["config", "--preset", "benchmark"]) == 0
    assert json.loads(capsys.readouterr().out)["solver"]["gamma"] == 5.0
    cfg.write_text("{not json")
    assert main(["config", "--config", str(cfg)]) == 2


def test_inpaint_writes_outputs_and_echo(data, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["inpaint", *common(data, "--metrics", "--max-iters", "5", "--out", str(out))]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["iterations"] == 5 and report["config"]["solver"]["max_outer_iters"] == 5
    assert report["quality"]["mpsnr"] > 0 and report["input_quality"]["mpsnr"] > 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["config_hash"] == config_hash(report["config"])
    assert set(man["inputs"]) >= {"input", "mask", "dictionary"}
    assert (out / "trace.csv").read_text().startswith("iter,dx,")
    assert load_cube(out / "inpainted").shape == (4, 4, 4)
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["iterations"] == 5


def test_deterministic_inpaint_is_byte_identical(data, tmp_path):
    for d in ("a", "b"):
        assert main(["inpaint", *common(data, "--max-iters", "6", "--deterministic", "--out", str(tmp_path / d))]) == 0
    for name in ("inpainted.bin", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    man = [json.loads((tmp_path / d / "manifest.json").read_text()) for d in ("a", "b")]
    for name in ("inpainted.bin", "inpainted.json", "trace.csv"):
        assert man[0]["outputs"][name] == man[1]["outputs"][name]


def test_sabotaged_network_exits_3(data, tmp_path):
    net = Network(encoder_decoder(4, widths=(4,)), 4, 4, seed=0)
    net.conv_layers[0].weight *= 1.5
    net.save(tmp_path / "bad")
    argv = common(data, "--branch", "dip", "--network", str(tmp_path / "bad"), "--max-iters", "2",
                  "--out", str(tmp_path / "o"))
    assert main(["inpaint", *argv]) == 3
    assert main(["certify", "--network", str(tmp_path / "bad"), "--trials", "20"]) == 3
    good = Network(encoder_decoder(4, widths=(4,)), 4, 4, seed=0)
    good.save(tmp_path / "good")
    assert main(["certify", "--network", str(tmp_path / "good"), "--trials", "20"]) == 0


def test_certify_denoiser(data, tmp_path, capsys):
    assert main(["certify", "--guide", str(data / "syn/observed"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "certification.json").read_text())
    assert rep["pass"] and rep["denoiser"]["problems"] == []
    assert main(["certify", "--guide", str(data / "syn/observed"), "--scale", "1.5"]) == 3


def test_metrics_command(data, capsys):
    assert main(["metrics", "--truth", str(data / "syn/truth"), "--test", str(data / "syn/truth")]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["mpsnr"] == 100.0


def test_ablation_grid(data, tmp_path):
    out = tmp_path / "abl"
    assert main(["ablate", *common(data, "--ws", "0,1", "--wlr", "0,1", "--max-iters", "3", "--out", str(out))]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0] == "w_s\\w_lr,0,1" and len(lines) == 3
    values = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert values.shape == (2, 2) and np.all(np.isfinite(values))
    for a in ("0", "1"):
        for b in ("0", "1"):
            assert (out / f"cell_ws{a}_wlr{b}" / "report.json").exists()
    assert main(["ablate", *common(data, "--ws", "a,b", "--out", str(out))]) == 2
