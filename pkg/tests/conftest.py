import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = {
    "data.n_episodes": 20,
    "model.epochs": 3,
    "model.hidden": 16,
    "model.n_layers": 2,
    "model.n_members": 3,
    "model.n_elites": 2,
    "rollout.n_rollouts": 50,
    "agent.hidden": 16,
    "agent.batch_size": 32,
    "train.n_iter": 4,
    "train.updates_per_iter": 5,
    "train.eval_every": 2,
    "train.final_eval_iters": 2,
    "train.checkpoint_every": 2,
    "eval.n_episodes": 10,
    "single_thread": True,
}


@pytest.fixture
def tiny_config(tmp_path):
    from riskmbrl.config import ExperimentConfig

    def make(name="run", **extra):
        overrides = {**TINY, "out_dir": str(tmp_path / name), **extra}
        return ExperimentConfig().with_overrides(overrides)

    return make


_CRITERIA: list = []


@pytest.fixture(scope="session")
def criterion_log():
    """Record one acceptance line: ``criterion_log(n, passed, detail)``."""

    def record(number, passed, detail):
        line = f"ACCEPTANCE {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        _CRITERIA.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA, key=lambda item: str(item[0])):
            terminalreporter.write_line(line)
