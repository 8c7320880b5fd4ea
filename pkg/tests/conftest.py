import sys
from pathlib import Path

import numpy as np
import pytest

from subspace_lab import data as data_mod, harness, micronet as mn, models
from subspace_lab.harness import AttackSpec, ExperimentPlan

sys.path.insert(0, str(Path(__file__).parent))

LAB_VERSION = "desk-lab-v2"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running desk-scale experiment")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_lab_plan(request):
    """Trained desk-scale zoo plus its plan, built once and cached between sessions."""
    root = Path(request.config.cache.mkdir(LAB_VERSION))
    plan_path = root / "plan.json"
    if plan_path.exists():
        try:
            plan = harness.ExperimentPlan.load(plan_path)
            plan.validate()
            return plan
        except (harness.PlanError, models.ModelFormatError):
            pass
    return harness.prepare_desk_lab(root)


@pytest.fixture(scope="session")
def desk_lab(desk_lab_plan):
    return harness.load_lab(desk_lab_plan)


def linear_net(weights, bias=None):
    """Flatten + head on a (1, 1, n) input, i.e. z = W x + b."""
    w = np.asarray(weights, dtype=np.float32)
    k, n = w.shape
    spec = mn.NetworkSpec((mn.Flatten(), mn.Head()), (1, 1, n), k)
    params = mn.ParameterSet({1: {"w": w, "b": np.zeros(k, np.float32) if bias is None
                                  else np.asarray(bias, np.float32)}})
    return spec, params


@pytest.fixture
def tiny_conv(rng):
    spec = models.build_architecture("conv-small", (1, 8, 8), 4)
    return spec, mn.init_params(spec, rng)


FAST = models.TrainConfig(epochs=4)
MINI_DATASET = {"kind": "synthetic", "count": 700, "seed": 0, "size": 12, "channels": 1}
MINI_SPLITS = {"victim_train": 500, "attack_eval": 150, "reference_fraction": 0.1, "seed": 0}


def mini_attacks(budget=200):
    cfg = harness.desk_attack_config(budget=budget, epsilon=0.3, eta=0.02)
    return [AttackSpec("subspace", "subspace", cfg), AttackSpec("bandit", "bandit", cfg),
            AttackSpec("rand", "random-subspace", cfg, dimension=10),
            AttackSpec("nes", "nes", cfg, nes_samples=5), AttackSpec("transfer", "transfer", cfg, transfer_steps=5)]


@pytest.fixture(scope="session")
def mini_plan(tmp_path_factory):
    """Tiny trained lab on 12x12 glyphs: conv-small victim, two references."""
    root = tmp_path_factory.mktemp("mini-lab")
    sp = data_mod.standard_splits(harness.load_dataset(MINI_DATASET), **MINI_SPLITS)
    harness.train_and_save("conv-small", sp["victim_train"], sp["attack_eval"], root / "victim", FAST)
    for arch in ("mlp-small", "conv-small"):
        harness.train_and_save(arch, sp["reference_train"], sp["attack_eval"], root / f"ref-{arch}", FAST)
    plan = ExperimentPlan(victim="victim", references={"small": ["ref-mlp-small", "ref-conv-small"]},
                          attacks=mini_attacks(), dataset=MINI_DATASET, splits=MINI_SPLITS, images=6,
                          base_dir=root)
    plan.save(root / "plan.json")
    return ExperimentPlan.load(root / "plan.json")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
