"""A short federated-learning run comparing the four aggregation schemes.

Run:  python demos/04_federated_learning.py            (under a minute)
"""

from uavfl.flsim import LearningConfig, run_experiment
from uavfl.scenario import load_scenario

sc = load_scenario("paper_default").replace(max_outer_iters=15)
cfg = LearningConfig.from_dict({**sc.learning, "partition": "label-skew"})

report = run_experiment(sc, cfg, trials=2, rounds=40)
acc = report.table("accuracy")
err = report.table("error_sq_norm")
print(f"{'scheme':>11}  acc@10  acc@40  mean |e|^2")
for scheme in report.schemes:
    a = acc[scheme].mean(axis=0)
    print(f"{scheme:>11}  {a[9]:.3f}   {a[-1]:.3f}   {err[scheme].mean():.3e}")
