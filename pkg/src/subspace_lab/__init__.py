"""Query-efficient black-box attacks steered by reference-model gradients.

Modules: ``micronet`` (numpy network engine), ``models`` (zoo, training,
weight files), ``data``, ``oracle`` (the black-box boundary), ``attack``,
``baselines`` and ``harness`` (plans, batches, sweeps).
"""

__version__ = "0.1.0"
