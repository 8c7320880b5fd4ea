"""Experiment orchestration: plans, batch runs, metrics, sweeps and ablations.

A plan names a dataset recipe, a split plan, one victim model file and one
or more named sets of reference model files, plus the attacks to run. Each
attack runs on every sampled image with a seed derived from the plan seed
and the image id, so batches are order independent and can be spread over
a worker pool without changing a byte of output.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import baselines
from . import data as data_mod
from . import micronet as mn
from . import models
from .attack import AttackConfig, check_result, subspace_attack
from .oracle import ReferenceOracle, VictimOracle

log = logging.getLogger(__name__)

PLAN_VERSION = 1
CSV_COLUMNS = ("image_id", "attack", "success", "queries", "iterations", "seed", "config_fingerprint")
ATTACK_KINDS = ("subspace", "bandit", "random-subspace", "nes", "transfer")
BANDIT_FAMILY = ("subspace", "bandit", "random-subspace")

DEFAULT_DATASET = {"kind": "synthetic", "count": 6500, "seed": 0, "size": 28, "channels": 3}
DEFAULT_SPLITS = {"victim_train": 5000, "attack_eval": 1000, "reference_fraction": 0.1, "seed": 0}


class PlanError(ValueError):
    pass


def desk_attack_config(**changes) -> AttackConfig:
    """Hyperparameters calibrated for the desk-scale zoo (budget 2,000)."""
    base = AttackConfig(epsilon=0.2, eta=0.01, eta_g=0.1, delta=0.1, tau=1.0, budget=2000,
                        p0=0.05, p_step=0.05, p_max=0.5)
    return base.replace(**changes)


# ---------------------------------------------------------------------------
# Records and metrics


@dataclass(frozen=True)
class RunRecord:
    image_id: int
    attack: str
    success: bool
    queries: int
    iterations: int
    seed: int
    config_fingerprint: str

    def row(self) -> list:
        return [self.image_id, self.attack, int(self.success), self.queries, self.iterations, self.seed,
                self.config_fingerprint]


@dataclass(frozen=True)
class Metrics:
    failure_rate: float
    mean_queries: Optional[float]
    median_queries: Optional[float]
    runs: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def compute_metrics(records: Sequence[RunRecord]) -> Metrics:
    """Failure rate over all runs; mean and median queries over successful runs only."""
    records = list(records)
    if not records:
        raise ValueError("no records to summarize")
    queries = [r.queries for r in records if r.success]
    failures = len(records) - len(queries)
    if not queries:
        return Metrics(failures / len(records), None, None, len(records))
    return Metrics(failures / len(records), sum(queries) / len(queries), float(statistics.median(queries)),
                   len(records))


def metrics_by_attack(records: Sequence[RunRecord]) -> dict:
    names = list(dict.fromkeys(r.attack for r in records))
    return {name: compute_metrics([r for r in records if r.attack == name]) for name in names}


def write_records(records: Sequence[RunRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        writer.writerows(r.row() for r in records)


def read_records(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise PlanError(f"{path}: unexpected columns {reader.fieldnames}")
        return [RunRecord(int(r["image_id"]), r["attack"], r["success"] == "1", int(r["queries"]),
                          int(r["iterations"]), int(r["seed"]), r["config_fingerprint"]) for r in reader]


def write_table(rows: Sequence[dict], path) -> None:
    """Write a list of flat dicts as CSV (columns from the first row, missing values empty)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows({k: "" if v is None else v for k, v in row.items()} for row in rows)


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def derive_seed(plan_seed: int, image_id: int) -> int:
    """Per-image seed; a hash so that it does not depend on batch order."""
    digest = hashlib.blake2b(f"{plan_seed}:{image_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


# ---------------------------------------------------------------------------
# Plans


@dataclass(frozen=True)
class AttackSpec:
    """One attack column of a plan: a kind, its AttackConfig and kind-specific extras."""

    name: str
    kind: str
    config: AttackConfig = field(default_factory=desk_attack_config)
    reference_set: Optional[str] = None
    references: Optional[tuple] = None  # indices into the reference set, None for all
    dimension: Optional[int] = None  # random-subspace only
    nes_samples: int = 25
    nes_sigma: float = 0.01
    transfer_steps: int = 50

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise PlanError(f"unknown attack kind {self.kind!r}; choose from {ATTACK_KINDS}")
        if self.kind == "random-subspace" and (self.dimension is None or self.dimension < 1):
            raise PlanError(f"attack {self.name!r}: random-subspace needs a positive dimension")
        if self.references is not None:
            object.__setattr__(self, "references", tuple(int(i) for i in self.references))
            if not self.references:
                raise PlanError(f"attack {self.name!r}: empty reference subset")

    @property
    def uses_references(self) -> bool:
        return self.kind in ("subspace", "transfer")

    def replace(self, **changes) -> "AttackSpec":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["config"] = self.config.to_dict()
        d["references"] = list(self.references) if self.references is not None else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        d = dict(d)
        d["config"] = AttackConfig(**d.get("config", {})) if "config" in d else desk_attack_config()
        try:
            return cls(**d)
        except TypeError as exc:
            raise PlanError(f"bad attack entry: {exc}") from exc

    def fingerprint(self) -> str:
        d = self.to_dict()
        del d["name"]
        return fingerprint(d)


@dataclass
class ExperimentPlan:
    """Versioned description of one batch experiment.

    JSON layout::

        {"format_version": 1, "seed": 0, "images": 200,
         "dataset": {"kind": "synthetic", "count": 6500, "seed": 0, "size": 28, "channels": 3},
         "splits": {"victim_train": 5000, "attack_eval": 1000, "reference_fraction": 0.1, "seed": 0},
         "victim": "models/victim",
         "references": {"small": ["models/small-conv-deep", ...], "full": [...]},
         "attacks": [{"name": "subspace", "kind": "subspace", "config": {...}}, ...],
         "records": "records.csv", "metrics": "metrics.json"}

    Model paths are file stems (``<stem>.manifest.json`` / ``<stem>.weights.bin``)
    relative to the plan file. An IDX dataset uses
    ``{"kind": "idx", "images": path, "labels": path}`` instead.
    """

    victim: str
    references: dict
    attacks: list
    dataset: dict = field(default_factory=lambda: dict(DEFAULT_DATASET))
    splits: dict = field(default_factory=lambda: dict(DEFAULT_SPLITS))
    images: int = 200
    seed: int = 0
    records: str = "records.csv"
    metrics: str = "metrics.json"
    format_version: int = PLAN_VERSION
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        if self.format_version != PLAN_VERSION:
            raise PlanError(f"unknown plan format version {self.format_version!r}")
        if isinstance(self.references, (list, tuple)):
            self.references = {"default": list(self.references)}
        self.attacks = [a if isinstance(a, AttackSpec) else AttackSpec.from_dict(a) for a in self.attacks]
        self.base_dir = Path(self.base_dir)
        if self.images < 1:
            raise PlanError("plan must request at least one image")
        if not self.references or any(not paths for paths in self.references.values()):
            raise PlanError("plan needs at least one non-empty reference set")
        names = [a.name for a in self.attacks]
        if len(set(names)) != len(names):
            raise PlanError("attack names must be unique")
        for a in self.attacks:
            if a.reference_set is not None and a.reference_set not in self.references:
                raise PlanError(f"attack {a.name!r} names unknown reference set {a.reference_set!r}")

    @property
    def default_reference_set(self) -> str:
        return next(iter(self.references))

    def resolve(self, path) -> Path:
        path = Path(path)
        return path if path.is_absolute() else self.base_dir / path

    def to_dict(self) -> dict:
        return {"format_version": self.format_version, "seed": self.seed, "images": self.images,
                "dataset": self.dataset, "splits": self.splits, "victim": self.victim,
                "references": self.references, "attacks": [a.to_dict() for a in self.attacks],
                "records": self.records, "metrics": self.metrics}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "ExperimentPlan":
        try:
            return cls(**d, base_dir=Path(base_dir))
        except TypeError as exc:
            raise PlanError(f"bad plan: {exc}") from exc

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except ValueError as exc:
            raise PlanError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw, base_dir=path.parent)

    def model_paths(self) -> list:
        paths = [self.victim] + [p for ps in self.references.values() for p in ps]
        return [self.resolve(p) for p in paths]

    def validate(self) -> None:
        """Check that every referenced model file exists."""
        for stem in self.model_paths():
            for suffix in (".manifest.json", ".weights.bin"):
                f = stem.with_name(stem.name + suffix)
                if not f.exists():
                    raise PlanError(f"missing model file {f}")
        if self.dataset.get("kind") == "idx":
            for key in ("images", "labels"):
                if not self.resolve(self.dataset[key]).exists():
                    raise PlanError(f"missing dataset file {self.dataset[key]}")

    def with_overrides(self, seed=None, budget=None, epsilon=None) -> "ExperimentPlan":
        changes = {k: v for k, v in (("budget", budget), ("epsilon", epsilon)) if v is not None}
        attacks = [a.replace(config=a.config.replace(**changes)) for a in self.attacks] if changes else self.attacks
        return dataclasses.replace(self, attacks=attacks, seed=self.seed if seed is None else seed)


def load_dataset(recipe: dict, base_dir=".") -> data_mod.Dataset:
    recipe = dict(recipe)
    kind = recipe.pop("kind", "synthetic")
    if kind == "synthetic":
        count = recipe.pop("count")
        return data_mod.make_synthetic(count, **recipe)
    if kind == "idx":
        base = Path(base_dir)
        return data_mod.load_idx_dataset(base / recipe["images"], base / recipe["labels"],
                                         class_count=recipe.get("class_count"))
    raise PlanError(f"unknown dataset kind {kind!r}")


def plan_splits(plan: ExperimentPlan) -> dict:
    dataset = load_dataset(plan.dataset, plan.base_dir)
    splits = data_mod.standard_splits(dataset, **plan.splits)
    data_mod.check_disjoint(splits)
    return splits


# ---------------------------------------------------------------------------
# Loaded experiment context


@dataclass
class Lab:
    """Everything a batch needs in memory: victim, reference sets and attackable images."""

    victim_spec: mn.NetworkSpec
    victim_params: mn.ParameterSet
    references: dict  # set name -> list of ReferenceOracle
    images: np.ndarray
    labels: np.ndarray
    image_ids: np.ndarray

    def oracle(self, budget=None) -> VictimOracle:
        return VictimOracle(self.victim_spec, self.victim_params, budget=budget)

    def refs_for(self, attack: AttackSpec) -> list:
        name = attack.reference_set or next(iter(self.references))
        refs = self.references[name]
        if attack.references is None:
            return list(refs)
        if max(attack.references) >= len(refs) or min(attack.references) < 0:
            raise PlanError(f"attack {attack.name!r}: reference index out of range for set {name!r}")
        return [refs[i] for i in attack.references]

    @property
    def input_size(self) -> int:
        return int(np.prod(self.images.shape[1:]))


def select_images(spec, params, split: data_mod.Dataset, count: int, seed: int) -> np.ndarray:
    """Indices (sorted by sample id) of up to ``count`` correctly classified samples."""
    if len(split) == 0:
        raise PlanError("no attackable images")
    _, correct = models.evaluate(spec, params, split)
    if len(correct) == 0:
        raise PlanError("no attackable images")
    order = np.random.default_rng(seed).permutation(len(correct))
    chosen = correct[order[:count]]
    return chosen[np.argsort(split.ids[chosen], kind="stable")]


def load_lab(plan: ExperimentPlan) -> Lab:
    plan.validate()
    splits = plan_splits(plan)
    vspec, vparams, vman = models.load_model(plan.resolve(plan.victim))
    _check_hygiene(plan.victim, vman)
    references = {}
    for set_name, paths in plan.references.items():
        refs = []
        for i, path in enumerate(paths):
            spec, params, man = models.load_model(plan.resolve(path))
            _check_hygiene(path, man)
            if spec.input_shape != vspec.input_shape or spec.class_count != vspec.class_count:
                raise PlanError(f"reference {path} does not match the victim's input/output shape")
            refs.append(ReferenceOracle(spec, params, model_index=i, name=man.architecture))
        references[set_name] = refs
    split = splits["attack_eval"]
    if split.input_shape != vspec.input_shape:
        raise PlanError(f"dataset shape {split.input_shape} != victim input {vspec.input_shape}")
    idx = select_images(vspec, vparams, split, plan.images, plan.seed)
    return Lab(vspec, vparams, references, split.images[idx], split.labels[idx], split.ids[idx])


def _check_hygiene(path, manifest):
    if manifest.training_split == "attack_eval":
        raise PlanError(f"model {path} was trained on the attack-eval split")


# ---------------------------------------------------------------------------
# Running attacks


def run_attack(lab: Lab, attack: AttackSpec, x, y, image_id: int, seed: int) -> RunRecord:
    """Run one attack on one image with a fresh oracle and validate the result."""
    cfg = attack.config
    victim = lab.oracle(cfg.budget)
    rng = np.random.default_rng(seed)
    if attack.kind == "subspace":
        result = subspace_attack(x, y, victim, lab.refs_for(attack), cfg, rng)
    elif attack.kind == "bandit":
        result = baselines.bandit_gaussian_attack(x, y, victim, cfg, rng)
    elif attack.kind == "random-subspace":
        basis = baselines.random_orthonormal_basis(lab.input_size, attack.dimension, rng)
        result = baselines.random_subspace_attack(x, y, victim, basis, cfg, rng)
    elif attack.kind == "nes":
        nes_cfg = baselines.NesConfig(samples=attack.nes_samples, sigma=attack.nes_sigma, attack=cfg)
        result = baselines.nes_attack(x, y, victim, nes_cfg, rng)
    else:
        result = baselines.transfer_attack(x, y, lab.refs_for(attack), victim, cfg, rng, attack.transfer_steps)
    problems = check_result(result, x, cfg.epsilon, cfg.budget)
    if result.queries_used != victim.query_count:
        problems.append(f"reported {result.queries_used} queries, oracle counted {victim.query_count}")
    if problems:
        raise RuntimeError(f"{attack.name} on image {image_id}: " + "; ".join(problems))
    return RunRecord(int(image_id), attack.name, bool(result.success), int(result.queries_used),
                     int(result.iterations), int(seed), attack.fingerprint())


def _run_image(lab: Lab, attacks, plan_seed: int, i: int) -> list:
    image_id = int(lab.image_ids[i])
    seed = derive_seed(plan_seed, image_id)
    x, y = lab.images[i], int(lab.labels[i])
    return [run_attack(lab, a, x, y, image_id, seed) for a in attacks]


_WORKER: dict = {}


def _worker_init(lab, attacks, plan_seed):
    _WORKER.update(lab=lab, attacks=attacks, seed=plan_seed)


def _worker_image(i):
    return _run_image(_WORKER["lab"], _WORKER["attacks"], _WORKER["seed"], i)


def run_attacks(lab: Lab, attacks: Sequence[AttackSpec], seed: int, workers: int = 1,
                out: Optional[list] = None) -> list:
    """All attacks on all lab images, ordered by image id then attack order.

    Finished records are appended to ``out`` as they arrive, so a caller can
    still flush partial results if a later run raises.
    """
    attacks = list(attacks)
    out = [] if out is None else out
    if workers <= 1 or len(lab.image_ids) <= 1:
        for i in range(len(lab.image_ids)):
            out.extend(_run_image(lab, attacks, seed, i))
        return out
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                             initargs=(lab, attacks, seed)) as pool:
        for batch in pool.map(_worker_image, range(len(lab.image_ids))):
            out.extend(batch)
    return out


@dataclass
class BatchResult:
    records: list
    metrics: dict
    records_path: Optional[Path] = None
    metrics_path: Optional[Path] = None


def _write_outputs(records, out_dir: Path, plan: ExperimentPlan) -> tuple:
    rpath, mpath = out_dir / plan.records, out_dir / plan.metrics
    write_records(records, rpath)
    metrics = {name: m.to_dict() for name, m in metrics_by_attack(records).items()} if records else {}
    mpath.write_text(json.dumps({"images": len(set(r.image_id for r in records)), "attacks": metrics},
                                indent=2, sort_keys=True) + "\n")
    return rpath, mpath


def run_batch(plan: ExperimentPlan, out_dir=None, workers: int = 1, lab: Optional[Lab] = None) -> BatchResult:
    """Run every plan attack on the plan's images and write ``records.csv`` and ``metrics.json``."""
    out_dir = Path(out_dir) if out_dir is not None else plan.base_dir
    lab = lab or load_lab(plan)
    records: list = []
    try:
        run_attacks(lab, plan.attacks, plan.seed, workers, out=records)
    except BaseException:
        if records:
            _write_outputs(records, out_dir, plan)
        raise
    rpath, mpath = _write_outputs(records, out_dir, plan)
    return BatchResult(records, metrics_by_attack(records), rpath, mpath)


def _summarize(lab, attacks, seed, workers, describe) -> list:
    records = run_attacks(lab, attacks, seed, workers)
    rows = []
    for a in attacks:
        m = compute_metrics([r for r in records if r.attack == a.name])
        rows.append({**describe(a), **m.to_dict()})
    return rows


# ---------------------------------------------------------------------------
# Analyses


def projection_residual(gradient, basis) -> float:
    """Squared norm of the part of ``gradient/||gradient||`` outside ``span(basis)``."""
    g = np.asarray(gradient, dtype=np.float64).ravel()
    norm = np.linalg.norm(g)
    if norm == 0:
        raise ValueError("projection residual of a zero gradient is undefined")
    g = g / norm
    vectors = np.asarray(basis, dtype=np.float64)
    if vectors.size == 0:
        return 1.0
    q = baselines.gram_schmidt(vectors.reshape(len(vectors), -1))
    r = g - q.T @ (q @ g)
    return float(np.clip(r @ r, 0.0, 1.0))


def residual_sweep(victim_spec, victim_params, refs, images, labels, p: float, rng: np.random.Generator,
                   loss_kind: str = "hinge", return_all: bool = False):
    """Residuals of the true victim gradient against prior and random subspaces.

    For ``k = 1..len(refs)`` the prior subspace holds the first ``k``
    reference gradients (in the given order) and the random subspace ``k``
    Gaussian directions; both are nested in ``k``. This is an analysis tool
    and reads victim gradients directly. Returns rows ``{k, prior_residual,
    random_residual, prior_better}`` of means over images (and the
    per-image ``(images, k)`` arrays when ``return_all``).
    """
    refs = list(refs)
    m = len(refs)
    prior = np.empty((len(images), m))
    random = np.empty((len(images), m))
    for i, (x, y) in enumerate(zip(images, labels)):
        g = mn.input_gradient(victim_spec, victim_params, x, int(y), loss_kind).astype(np.float64).ravel()
        priors = np.stack([ref.prior_gradient(x, int(y), p, rng, loss_kind).astype(np.float64).ravel()
                           for ref in refs])
        dirs = rng.standard_normal((m, g.size))
        for k in range(1, m + 1):
            prior[i, k - 1] = projection_residual(g, priors[:k])
            random[i, k - 1] = projection_residual(g, dirs[:k])
    rows = [{"k": k, "prior_residual": float(prior[:, k - 1].mean()),
             "random_residual": float(random[:, k - 1].mean()),
             "prior_better": float(np.mean(prior[:, k - 1] < random[:, k - 1]))} for k in range(1, m + 1)]
    return (rows, prior, random) if return_all else rows


def dimension_sweep(lab: Lab, m_grid: Sequence, cfg: AttackConfig, seed: int, workers: int = 1) -> list:
    """Random-subspace failure/query statistics per subspace size, plus the full-dimension bandit row.

    ``"n"`` (or any value >= the input size) in ``m_grid`` means ``m = n``.
    """
    n = lab.input_size
    attacks = []
    for m in m_grid:
        m = n if m == "n" or int(m) >= n else int(m)
        attacks.append(AttackSpec(f"random-{m}", "random-subspace", cfg, dimension=m))
    attacks.append(AttackSpec("bandit", "bandit", cfg))
    return _summarize(lab, attacks, seed, workers,
                      lambda a: {"m": a.dimension if a.dimension is not None else "full"})


def ablation_dropout(lab: Lab, base: AttackSpec, p_max_grid=(0.0, 0.2, 0.5), reference_sets=None,
                     seed: int = 0, workers: int = 1) -> list:
    """Training-set x p_max table; ``p_max = 0`` also zeroes ``p0`` so no drop is ever sampled."""
    reference_sets = list(reference_sets or lab.references)
    attacks = []
    for set_name in reference_sets:
        for p_max in p_max_grid:
            cfg = base.config.replace(p_max=float(p_max), p0=min(base.config.p0, float(p_max)))
            attacks.append(base.replace(name=f"{set_name}@{p_max:g}", kind="subspace", config=cfg,
                                        reference_set=set_name))
    return _summarize(lab, attacks, seed, workers,
                      lambda a: {"training_set": a.reference_set, "p_max": a.config.p_max})


def ablation_references(lab: Lab, base: AttackSpec, subsets: Sequence, reference_set: Optional[str] = None,
                        seed: int = 0, workers: int = 1) -> list:
    """Coordinate-mode metrics per reference subset, plus full-subspace mode on the largest subset."""
    set_name = reference_set or next(iter(lab.references))
    refs = lab.references[set_name]
    attacks = []
    for subset in subsets:
        subset = tuple(int(i) for i in subset)
        label = "+".join(refs[i].name or str(i) for i in subset)
        attacks.append(base.replace(name=f"coordinate:{label}", kind="subspace", reference_set=set_name,
                                    references=subset, config=base.config.replace(mode="coordinate")))
    largest = max(subsets, key=len)
    label = "+".join(refs[i].name or str(i) for i in largest)
    attacks.append(base.replace(name=f"full-subspace:{label}", kind="subspace", reference_set=set_name,
                                references=tuple(largest), config=base.config.replace(mode="full-subspace")))
    return _summarize(lab, attacks, seed, workers,
                      lambda a: {"mode": a.config.mode, "references": " ".join(map(str, a.references)),
                                 "reference_count": len(a.references)})


def grid_sweep(lab: Lab, base: AttackSpec, deltas=(0.1,), taus=(0.1,), eta_gs=(100.0,), seed: int = 0,
               workers: int = 1) -> list:
    """Metrics of ``base`` over the delta x tau x eta_g grid."""
    attacks = []
    for d in deltas:
        for t in taus:
            for e in eta_gs:
                cfg = base.config.replace(delta=float(d), tau=float(t), eta_g=float(e))
                attacks.append(base.replace(name=f"{base.name}:d={d:g},tau={t:g},eta_g={e:g}", config=cfg))
    return _summarize(lab, attacks, seed, workers,
                      lambda a: {"delta": a.config.delta, "tau": a.config.tau, "eta_g": a.config.eta_g})


# ---------------------------------------------------------------------------
# Desk-scale lab preparation

ZOO_ORDER = ("conv-deep", "resnet-tiny", "conv-small", "mlp-wide", "mlp-small")  # deep to shallow
VICTIM_TRAINING = models.TrainConfig()
# references never share the victim's init seed: a same-architecture reference
# would otherwise start from the victim's exact weights
SMALL_SPLIT_TRAINING = models.TrainConfig(epochs=40, decay_every=10, seed=1)
FULL_SPLIT_TRAINING = models.TrainConfig(seed=1)


def default_attacks(cfg: Optional[AttackConfig] = None) -> list:
    cfg = cfg or desk_attack_config()
    return [AttackSpec("subspace", "subspace", cfg), AttackSpec("bandit", "bandit", cfg),
            AttackSpec("nes", "nes", cfg), AttackSpec("transfer", "transfer", cfg)]


def train_and_save(arch: str, split: data_mod.Dataset, eval_split: data_mod.Dataset, path,
                   config: models.TrainConfig) -> models.ModelManifest:
    spec = models.build_architecture(arch, split.input_shape, split.class_count)
    params = models.train(spec, split, config)
    acc, _ = models.evaluate(spec, params, eval_split)
    manifest = models.ModelManifest(arch, list(spec.input_shape), spec.class_count, split.split_id, float(acc))
    log.info("trained %s on %s: accuracy %.3f", arch, split.split_id, acc)
    return models.save_model(spec, params, manifest, path)


def prepare_desk_lab(out_dir, dataset: Optional[dict] = None, splits: Optional[dict] = None,
                     victim_arch: str = "conv-deep", reference_archs: Sequence[str] = ZOO_ORDER,
                     full_split_references: bool = True, images: int = 200, seed: int = 0,
                     attacks: Optional[list] = None) -> ExperimentPlan:
    """Train the victim and reference zoo, save them under ``out_dir`` and write ``plan.json``.

    The victim trains on ``victim_train``. The ``small`` reference set trains
    on the disjoint ``reference_train`` split; the optional ``full`` set on
    ``victim_train`` (the training-scale ablation).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = dict(dataset or DEFAULT_DATASET)
    splits_cfg = dict(splits or DEFAULT_SPLITS)
    sp = data_mod.standard_splits(load_dataset(dataset, out_dir), **splits_cfg)
    train_and_save(victim_arch, sp["victim_train"], sp["attack_eval"], out_dir / "models" / "victim",
                   VICTIM_TRAINING)
    references = {"small": [], "full": []} if full_split_references else {"small": []}
    for arch in reference_archs:
        stem = f"models/small-{arch}"
        train_and_save(arch, sp["reference_train"], sp["attack_eval"], out_dir / stem, SMALL_SPLIT_TRAINING)
        references["small"].append(stem)
        if full_split_references:
            stem = f"models/full-{arch}"
            train_and_save(arch, sp["victim_train"], sp["attack_eval"], out_dir / stem, FULL_SPLIT_TRAINING)
            references["full"].append(stem)
    plan = ExperimentPlan(victim="models/victim", references=references,
                          attacks=attacks if attacks is not None else default_attacks(),
                          dataset=dataset, splits=splits_cfg, images=images, seed=seed, base_dir=out_dir)
    plan.save(out_dir / "plan.json")
    return plan
