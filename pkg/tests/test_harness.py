import json

import numpy as np
import pytest

from subspace_lab import data, harness, models
from subspace_lab.attack import AttackConfig
from subspace_lab.harness import AttackSpec, ExperimentPlan, PlanError, RunRecord

from conftest import MINI_DATASET, MINI_SPLITS, mini_attacks


def rec(success, queries, name="a"):
    return RunRecord(0, name, success, queries, queries // 2, 0, "f")


# --- metrics ------------------------------------------------------------------

def test_metrics_examples():
    m = harness.compute_metrics([rec(True, 10), rec(True, 30), rec(False, 2000), rec(True, 20)])
    assert m.failure_rate == 0.25 and m.mean_queries == 20 and m.median_queries == 20 and m.runs == 4
    m = harness.compute_metrics([rec(False, 5)] * 3)
    assert m.failure_rate == 1.0 and m.mean_queries is None and m.median_queries is None
    m = harness.compute_metrics([rec(True, 10), rec(True, 11)])
    assert m.median_queries == 10.5


def test_metrics_reject_empty():
    with pytest.raises(ValueError):
        harness.compute_metrics([])


def test_metrics_by_attack_groups():
    out = harness.metrics_by_attack([rec(True, 4, "a"), rec(False, 8, "b"), rec(True, 6, "a")])
    assert out["a"].mean_queries == 5 and out["b"].failure_rate == 1.0


def test_records_round_trip(tmp_path):
    records = [RunRecord(3, "sub", True, 12, 6, 99, "abc"), RunRecord(4, "sub", False, 200, 100, 7, "abc")]
    path = tmp_path / "r.csv"
    harness.write_records(records, path)
    assert path.read_text().splitlines()[0] == ",".join(harness.CSV_COLUMNS)
    assert harness.read_records(path) == records


def test_fingerprint_and_seed_are_stable():
    assert harness.fingerprint({"b": 1, "a": [1, 2]}) == harness.fingerprint({"a": [1, 2], "b": 1})
    assert harness.derive_seed(0, 5) == harness.derive_seed(0, 5) != harness.derive_seed(1, 5)
    assert 0 <= harness.derive_seed(3, 10**9) < 2**63


# --- projection residuals -----------------------------------------------------

def test_projection_residual_cases(rng):
    g = rng.normal(size=10)
    assert harness.projection_residual(g, np.empty((0, 10))) == 1.0
    assert harness.projection_residual(g, np.eye(10)) == pytest.approx(0.0, abs=1e-12)
    assert harness.projection_residual(g, [g]) == pytest.approx(0.0, abs=1e-12)
    assert harness.projection_residual(g, [np.eye(10)[0]]) == pytest.approx(1 - g[0] ** 2 / (g @ g))
    with pytest.raises(ValueError):
        harness.projection_residual(np.zeros(10), np.eye(10))


def test_projection_residual_is_monotone_in_nested_bases(rng):
    g = rng.normal(size=20)
    vectors = rng.normal(size=(8, 20))
    values = [harness.projection_residual(g, vectors[:k]) for k in range(9)]
    assert all(a >= b - 1e-12 for a, b in zip(values, values[1:]))


# --- plans ----------------------------------------------------------------------

def test_plan_round_trip(tmp_path):
    plan = ExperimentPlan(victim="v", references=["r0", "r1"], attacks=mini_attacks(), base_dir=tmp_path)
    assert plan.references == {"default": ["r0", "r1"]}
    plan.save(tmp_path / "p.json")
    back = ExperimentPlan.load(tmp_path / "p.json")
    assert back == plan and back.attacks[2].dimension == 10


@pytest.mark.parametrize("change", [{"format_version": 2}, {"images": 0}, {"references": {"x": []}},
                                    {"attacks": [{"name": "a", "kind": "zeroth"}]},
                                    {"attacks": [{"name": "a", "kind": "bandit"}, {"name": "a", "kind": "nes"}]},
                                    {"attacks": [{"name": "a", "kind": "subspace", "reference_set": "big"}]},
                                    {"unknown_field": 1}])
def test_plan_rejects_bad_input(change):
    d = {"victim": "v", "references": ["r"], "attacks": []}
    d.update(change)
    with pytest.raises(PlanError):
        ExperimentPlan.from_dict(d)


def test_plan_reports_missing_models(tmp_path):
    plan = ExperimentPlan(victim="v", references=["r"], attacks=[], base_dir=tmp_path)
    with pytest.raises(PlanError, match="missing model file"):
        plan.validate()


def test_plan_overrides():
    plan = ExperimentPlan(victim="v", references=["r"], attacks=mini_attacks())
    out = plan.with_overrides(seed=4, budget=77, epsilon=0.1)
    assert out.seed == 4 and all(a.config.budget == 77 and a.config.epsilon == 0.1 for a in out.attacks)
    assert plan.attacks[0].config.budget == 200


def test_attack_fingerprint_ignores_name_only():
    a = AttackSpec("x", "bandit", AttackConfig())
    assert a.fingerprint() == a.replace(name="y").fingerprint()
    assert a.fingerprint() != a.replace(config=AttackConfig(budget=3)).fingerprint()


# --- labs and batches ---------------------------------------------------------

def test_no_attackable_images(mini_plan):
    spec, params, _ = models.load_model(mini_plan.resolve(mini_plan.victim))
    from subspace_lab import micronet as mn
    x = np.zeros((3,) + spec.input_shape)
    pred = int(np.argmax(mn.forward(spec, params, x[0])))
    right = data.Dataset(x, [pred] * 3, [0, 1, 2])
    assert list(harness.select_images(spec, params, right, 5, 0)) == [0, 1, 2]
    wrong = data.Dataset(x, [(pred + 1) % 10] * 3, [0, 1, 2])
    for split in (wrong, right.subset([])):
        with pytest.raises(PlanError, match="no attackable images"):
            harness.select_images(spec, params, split, 5, 0)


def test_lab_selects_correct_images(mini_plan):
    lab = harness.load_lab(mini_plan)
    spec, params = lab.victim_spec, lab.victim_params
    assert len(lab.images) == 6 and list(lab.image_ids) == sorted(lab.image_ids)
    from subspace_lab import micronet as mn
    pred = [int(np.argmax(mn.forward(spec, params, x))) for x in lab.images]
    np.testing.assert_array_equal(pred, lab.labels)


def test_hygiene_rejects_attack_eval_training(mini_plan, tmp_path):
    sp = harness.plan_splits(mini_plan)
    harness.train_and_save("mlp-small", sp["attack_eval"], sp["attack_eval"], tmp_path / "leak",
                           models.TrainConfig(epochs=1))
    plan = ExperimentPlan(victim=str(mini_plan.resolve("victim")), references=[str(tmp_path / "leak")],
                          attacks=[], dataset=MINI_DATASET, splits=MINI_SPLITS, images=2)
    with pytest.raises(PlanError, match="attack-eval"):
        harness.load_lab(plan)


def test_batch_outputs_and_determinism(mini_plan, tmp_path):
    lab = harness.load_lab(mini_plan)
    a = harness.run_batch(mini_plan, tmp_path / "a", lab=lab)
    b = harness.run_batch(mini_plan, tmp_path / "b", lab=lab)
    assert len(a.records) == 6 * 5
    assert a.records_path.read_bytes() == b.records_path.read_bytes()
    assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()
    summary = json.loads(a.metrics_path.read_text())
    assert summary["images"] == 6 and set(summary["attacks"]) == {"subspace", "bandit", "rand", "nes", "transfer"}
    recount = harness.metrics_by_attack(harness.read_records(a.records_path))
    for name, m in recount.items():
        assert m.to_dict() == summary["attacks"][name]
    for r in a.records:
        assert r.queries <= 200 and (r.attack != "transfer" or r.queries == 1)


def test_parallel_batch_matches_serial(mini_plan, tmp_path):
    lab = harness.load_lab(mini_plan)
    attacks = mini_plan.attacks[:2]
    serial = harness.run_attacks(lab, attacks, 0)
    parallel = harness.run_attacks(lab, attacks, 0, workers=2)
    assert serial == parallel


def test_sweeps_produce_rows(mini_plan):
    lab = harness.load_lab(mini_plan)
    cfg = harness.desk_attack_config(budget=40, epsilon=0.3, eta=0.02)
    base = AttackSpec("subspace", "subspace", cfg)
    dims = harness.dimension_sweep(lab, [5, "n"], cfg, 0)
    assert [r["m"] for r in dims] == [5, lab.input_size, "full"]
    drop = harness.ablation_dropout(lab, base, (0.0, 0.5))
    assert [(r["training_set"], r["p_max"]) for r in drop] == [("small", 0.0), ("small", 0.5)]
    refs = harness.ablation_references(lab, base, [(0,), (0, 1)])
    assert len(refs) == 3
    grid = harness.grid_sweep(lab, base, (0.1,), (0.1, 1.0), (1.0,))
    assert len(grid) == 2
    rng = np.random.default_rng(0)
    resid = harness.residual_sweep(lab.victim_spec, lab.victim_params, lab.references["small"], lab.images,
                                   lab.labels, 0.0, rng)
    assert [r["k"] for r in resid] == [1, 2]
    assert all(0 <= r["prior_residual"] <= 1 and 0 <= r["random_residual"] <= 1 for r in resid)


def test_write_table(tmp_path):
    harness.write_table([{"a": 1, "b": None}, {"a": 2, "b": 0.5}], tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "a,b\n1,\n2,0.5\n"
