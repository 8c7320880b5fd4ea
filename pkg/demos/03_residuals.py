"""
How much of the victim gradient do reference gradients span?
============================================================

Projection residuals of the true victim gradient against subspaces spanned
by reference-model gradients, compared with equally many random directions.
This reads victim gradients directly, so it is an analysis, not an attack.
"""

import numpy as np

from subspace_lab import data, harness, models
from subspace_lab.oracle import ReferenceOracle

ds = data.make_synthetic(2000, seed=2, size=16)
sp = data.standard_splits(ds, victim_train=1500, attack_eval=300)

victim_spec = models.build_architecture("conv-deep", (1, 16, 16))
victim_params = models.train(victim_spec, sp["victim_train"], models.TrainConfig(epochs=6))

refs = []
for k, arch in enumerate(("resnet-tiny", "conv-small", "mlp-small")):
    spec = models.build_architecture(arch, (1, 16, 16))
    params = models.train(spec, sp["reference_train"], models.TrainConfig(epochs=30, decay_every=10, seed=1))
    refs.append(ReferenceOracle(spec, params, model_index=k, name=arch))

_, correct = models.evaluate(victim_spec, victim_params, sp["attack_eval"])
images, labels = sp["attack_eval"].images[correct[:50]], sp["attack_eval"].labels[correct[:50]]

# ## Nested subspaces, k = 1..3

rows = harness.residual_sweep(victim_spec, victim_params, refs, images, labels, 0.0, np.random.default_rng(0))
for row in rows:
    print(row)

# ## The analytic cases

e = np.eye(3)
harness.projection_residual(e[0], e), harness.projection_residual(e[0], e[1:]), \
    harness.projection_residual(e[0] + e[1], e[:1])
