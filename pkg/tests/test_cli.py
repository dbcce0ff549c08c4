import json
import subprocess
import sys

from dualadapt.cli import main
from dualadapt.experiment import dump_config

from test_experiment import tiny_experiment


class TestAudit:
    def test_text(self, capsys):
        assert main(["audit", "--full-scale"]) == 0
        out = capsys.readouterr().out
        assert "924,480" in out and "stma_d 16 vs 12: 155,712" in out

    def test_json(self, capsys):
        assert main(["audit", "--full-scale", "--stma-d", "12", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert data["adapter_count"] == 768_768


class TestSamplePlan:
    def test_uniform(self, capsys):
        assert main(["sample-plan", "-T", "4", "-C", "30"]) == 0
        assert capsys.readouterr().out.split() == ["frame,slot", "0,0", "5,1", "15,2", "25,3"]

    def test_confidence(self, capsys):
        assert main(["sample-plan", "--strategy", "confidence", "-T", "3", "-C", "4",
                     "--scores", "0.1,0.9,0.5,0.9"]) == 0
        assert capsys.readouterr().out.split()[1:] == ["0,0", "1,1", "3,2"]

    def test_bad_input_exit_code(self, capsys):
        assert main(["sample-plan", "--strategy", "confidence", "-T", "3", "-C", "4"]) == 2
        assert "error" in capsys.readouterr().err


def test_train_then_eval(tmp_path, capsys):
    cfg = tiny_experiment(tmp_path / "run", variants=[])
    dump_config(cfg, tmp_path / "cfg.yaml")
    assert main(["train-synth", "--config", str(tmp_path / "cfg.yaml")]) == 0
    assert "baseline" in capsys.readouterr().out
    assert main(["eval-synth", "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["frames"] == 10
    saved = json.loads((tmp_path / "run" / "reports.json").read_text())["adapter"]
    assert report == saved


def test_eval_variant_checkpoint(tmp_path, capsys):
    cfg = tiny_experiment(tmp_path / "run", variants=["no_deep"])
    dump_config(cfg, tmp_path / "cfg.yaml")
    assert main(["train-synth", "--config", str(tmp_path / "cfg.yaml")]) == 0
    capsys.readouterr()
    ckpt = str(tmp_path / "run" / "model_no_deep.ckpt")
    assert main(["eval-synth", "--checkpoint", ckpt, "--variant", "no_deep", "--json"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report == json.loads((tmp_path / "run" / "reports.json").read_text())["no_deep"]
    assert main(["eval-synth", "--checkpoint", ckpt, "--variant", "bogus"]) == 2


def test_missing_checkpoint(tmp_path, capsys):
    assert main(["eval-synth", "--checkpoint", str(tmp_path / "none.ckpt")]) == 2


def test_console_script_help():
    done = subprocess.run([sys.executable, "-m", "dualadapt.cli", "--help"], capture_output=True, text=True)
    assert done.returncode == 0 and "sample-plan" in done.stdout

