import json

import pytest

from radar_denoise.cli import main
from radar_denoise.config import RunConfig
from radar_denoise.synth import SceneConfig, generate_dataset

TOY_SYNTH = SceneConfig(seed=7, num_objects=(2, 3))


def toy_config(**overrides) -> RunConfig:
    base = {"synth.seed": 7, "synth.num_objects": [2, 3], "train.epochs": 3}
    base.update(overrides)
    return RunConfig().replace(**base)


@pytest.fixture(scope="session")
def toy_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy_data")
    generate_dataset(TOY_SYNTH, (5, 2, 2), d)
    return d


@pytest.fixture(scope="session")
def toy_config_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("toy_cfg") / "config.json"
    p.write_text(json.dumps({"synth": {"seed": 7, "num_objects": [2, 3]}, "train": {"epochs": 2}}))
    return p


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory, toy_data, toy_config_file):
    out = tmp_path_factory.mktemp("toy_run")
    assert main(["train", "--config", str(toy_config_file), "--data", str(toy_data),
                 "--out", str(out)]) == 0
    return out


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
