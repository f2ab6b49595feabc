"""Supervised vs Mean Teacher on a small synthetic corpus, one seed each.

This takes a few minutes on one CPU. The full four-seed comparison is
``panolayout experiment --spec demos/desk_experiment.json --out runs/desk``.

Run:  python3 demos/small_comparison.py
"""
from panolayout.data import ExperimentSpec, run_experiment, synthetic_dataset

data = synthetic_dataset({"train": 120, "val": 20, "test": 40}, seed=5)
spec = ExperimentSpec(
    label_counts=[20],
    seeds=[0, 1],
    modes=["supervised", "mean_teacher"],
    base={"epochs": 8, "lr": 1e-3, "alpha": 0.9, "eval_every": 4},
)
result = run_experiment(spec, data=data, workers=1)
print(result.table())
for f in result.failures:
    print("failed run:", f)
