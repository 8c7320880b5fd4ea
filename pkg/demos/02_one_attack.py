"""
One image, four attacks
=======================

A victim and two reference models trained on disjoint data, then the
subspace attack against the Gaussian bandit, NES and plain transfer on a
single image. The victim is only reachable through a counting oracle.
"""

import numpy as np

from subspace_lab import attack, baselines, data, models
from subspace_lab.attack import AttackConfig
from subspace_lab.oracle import ReferenceOracle, VictimOracle

ds = data.make_synthetic(2000, seed=1, size=16)
sp = data.standard_splits(ds, victim_train=1500, attack_eval=300)

victim_spec = models.build_architecture("conv-small", (1, 16, 16))
victim_params = models.train(victim_spec, sp["victim_train"], models.TrainConfig(epochs=6))

# references only ever see the small reference split, and never share the victim's init seed
refs = []
for k, arch in enumerate(("mlp-small", "conv-small")):
    spec = models.build_architecture(arch, (1, 16, 16))
    params = models.train(spec, sp["reference_train"], models.TrainConfig(epochs=30, decay_every=10, seed=1))
    refs.append(ReferenceOracle(spec, params, model_index=k, name=arch))

_, correct = models.evaluate(victim_spec, victim_params, sp["attack_eval"])
i = correct[0]
x, y = sp["attack_eval"].images[i], int(sp["attack_eval"].labels[i])

cfg = AttackConfig(epsilon=0.2, eta=0.01, eta_g=0.1, tau=1.0, budget=2000, p_step=0.05)


def oracle():
    return VictimOracle(victim_spec, victim_params, budget=cfg.budget)


# ## Subspace attack

result = attack.subspace_attack(x, y, oracle(), refs, cfg, np.random.default_rng(0))
print("subspace  ", result.success, result.queries_used)
print("linf", np.abs(result.x_adv - x).max())

# ## Baselines

r = baselines.bandit_gaussian_attack(x, y, oracle(), cfg, np.random.default_rng(0))
print("bandit    ", r.success, r.queries_used)

r = baselines.nes_attack(x, y, oracle(), baselines.NesConfig(attack=cfg), np.random.default_rng(0))
print("nes       ", r.success, r.queries_used)

r = baselines.transfer_attack(x, y, refs, oracle(), cfg)
print("transfer  ", r.success, r.queries_used)

# ## Query curve over a few images

queries = {"subspace": [], "bandit": []}
for i in correct[:20]:
    x, y = sp["attack_eval"].images[i], int(sp["attack_eval"].labels[i])
    rng = np.random.default_rng(int(i))
    queries["subspace"].append(attack.subspace_attack(x, y, oracle(), refs, cfg, rng).queries_used)
    queries["bandit"].append(baselines.bandit_gaussian_attack(x, y, oracle(), cfg, rng).queries_used)
{k: (np.mean(v), np.median(v)) for k, v in queries.items()}
