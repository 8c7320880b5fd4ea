"""
A tour of the array engine
==========================

Build a network, train it on synthetic glyphs, and look at input gradients
with and without a sampled drop configuration.
"""

# ## Imports

import numpy as np

from subspace_lab import data, losses, micronet as mn, models

# ## Data

ds = data.make_synthetic(1200, seed=0, size=14)
splits = data.standard_splits(ds, victim_train=900, attack_eval=200)
{name: len(s) for name, s in splits.items()}

# ## A small convnet

spec = models.build_architecture("conv-small", input_shape=(1, 14, 14), class_count=10)
print(spec)
params = models.train(spec, splits["victim_train"], models.TrainConfig(epochs=5))
acc, correct = models.evaluate(spec, params, splits["attack_eval"])
print(f"held-out accuracy {acc:.3f}")

# ## Input gradients

x, y = splits["attack_eval"].images[correct[0]], int(splits["attack_eval"].labels[correct[0]])
g = mn.input_gradient(spec, params, x, y, "hinge")
print("hinge loss", losses.hinge_loss(mn.forward(spec, params, x), y), "gradient norm", np.linalg.norm(g))

# Dropping hidden units changes the gradient direction but keeps it correlated.

rng = np.random.default_rng(0)
for p in (0.1, 0.3, 0.5):
    gp = mn.input_gradient(spec, params, x, y, "hinge", mn.sample_drop(spec, p, rng))
    cos = float(g.ravel() @ gp.ravel() / (np.linalg.norm(g) * np.linalg.norm(gp)))
    print(f"p={p}: cosine to the undropped gradient {cos:.3f}")

# ## Saving and loading

manifest = models.ModelManifest("conv-small", list(spec.input_shape), 10, "victim_train", float(acc))
models.save_model(spec, params, manifest, "conv-small-demo")
spec2, params2, manifest2 = models.load_model("conv-small-demo")
print(manifest2)
np.allclose(mn.forward(spec2, params2, x), mn.forward(spec, params, x))
