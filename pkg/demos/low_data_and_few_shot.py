"""Low-data sweep on domain A, followed by one-shot transfer to domain B.

The full-data models trained for the sweep are reused as the starting point
for the one-shot protocol: a fresh decoder, the encoder kept, and a single
labelled domain-B image per class. Takes roughly six minutes.

Run: python3 demos/low_data_and_few_shot.py
"""

from kgv import harness as H
from kgv.synth import benchmark_kg, generate, load_spec

bench = load_spec()
data = generate(bench, {"A": {"train": 100, "test": 30}, "B": {"test": 100}}, seed=0, per_element=20)
kg = benchmark_kg(bench)
cfg = H.TrainConfig()

trained = {}
for name, c in (("kgv", cfg), ("baseline", cfg.baseline())):
    trained[(name, 0, 1.0)], _ = H.train(c, data, kg)

rows = H.lowdata_sweep([0.1, 0.5, 1.0], cfg, data, kg, seeds=(0,), trained=trained)
print(H.rows_to_csv(rows), end="")

print("\none-shot transfer A -> B")
for name, c in (("kgv", cfg), ("baseline", cfg.baseline())):
    metrics, info = H.fewshot(trained[(name, 0, 1.0)], c, data, kg, shots=1, epochs=100)
    print(f"  {name:<9} accuracy {metrics.accuracy:.3f} "
          f"({info['retrain_size']} retraining images, {info['eval_size']} evaluated)")
