import xml.etree.ElementTree as ET

import pytest

from emac import config as C
from emac.checkpoint import load_checkpoint
from emac.cli import main

TINY = """seed = 3
[world]
size = 6
n_agents = 2
sensor_k = 3, 3
timeout = 15
[network]
embed_dim = 8
actor_hidden = 8
critic_hidden = 8
q_hidden = 8
iac_hidden = 8
[train]
n_envs = 2
max_episodes = 2
eval_interval = 0
[iql]
learning_starts = 1
batch_size = 4
"""


@pytest.fixture
def tiny_cfg(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return str(path)


@pytest.mark.parametrize("algo", ["emac", "iql", "iac"])
def test_train_writes_checkpoint_and_curve(tmp_path, tiny_cfg, algo, capsys):
    out = tmp_path / "run"
    assert main(["train", "--algo", algo, "--config", tiny_cfg, "--seed", "7", "--out", str(out),
                 "--progress", "0"]) == 0
    assert (out / f"{algo}.ckpt").exists()
    curve = (out / f"{algo}_curve.tsv").read_text().splitlines()
    assert curve[0].startswith("episode\tmean_length") and len(curve) == 3
    model = load_checkpoint(out / f"{algo}.ckpt")
    assert model.config.seed == 7
    assert C.parse_config(out / "config.cfg") == model.config


def test_eval_checkpoint_and_render(tmp_path, tiny_cfg, capsys):
    out = tmp_path / "run"
    main(["train", "--config", tiny_cfg, "--out", str(out), "--progress", "0"])
    logs = tmp_path / "logs"
    assert main(["eval", "--checkpoint", str(out / "emac.ckpt"), "--trials", "3", "--log-dir", str(logs),
                 "--out", str(tmp_path / "res")]) == 0
    assert "mean_completion" in capsys.readouterr().out
    assert len((tmp_path / "res" / "trials.jsonl").read_text().splitlines()) == 3
    log = next(logs.glob("*.log"))
    svg = tmp_path / "ep.svg"
    assert main(["render", "--log", str(log), "--out", str(svg)]) == 0
    assert ET.parse(svg).getroot().tag.endswith("svg")


def test_eval_builtin_policies_and_robustness(tmp_path, tiny_cfg, capsys):
    assert main(["eval", "--policy", "nrl", "--config", tiny_cfg, "--trials", "2"]) == 0
    assert main(["eval", "--policy", "random", "--preset", "desk", "--trials", "2",
                 "--collision-mode", "no_move"]) == 0
    assert main(["eval", "--policy", "no_move", "--config", tiny_cfg, "--trials", "2",
                 "--experiment", "robustness", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "robustness.tsv").read_text().startswith("factor\tsetting\tcompletion_steps")


def test_bench(capsys):
    assert main(["bench", "--steps", "200"]) == 0
    assert "steps/s" in capsys.readouterr().out


def test_gradcheck_exits_zero(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out and "FAIL" not in out


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--algo", "ppo"], ["eval"], ["train", "--seed", "x"]])
def test_bad_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[world]\nsensor_k = 6, 6, 6\n")
    assert main(["bench", "--config", str(bad)]) == 1
    assert "sensor_k" in capsys.readouterr().err
    assert main(["render", "--log", str(tmp_path / "missing.log"), "--out", str(tmp_path / "x.svg")]) == 1
