"""How many pad colors do you need?

Trains rainbow variants with K in {1, 3, 7} on the same corpus and compares
response-length stability when the canvas grows from 64 to 256. K=1 is a
single repeated pad token, which inherits a milder version of the <eos>
problem: one token again monopolizes the tail. Larger K spreads the tail mass
over the cycle and the stability ratio improves.

Run with:  python3 demos/04_k_ablation.py
(about 15 minutes; trains three models)
"""

import json

from rainbowpad.denoiser import DenoiserConfig
from rainbowpad.harness import ExperimentConfig, VariantSpec, run_experiment
from rainbowpad.padding import Scheme
from rainbowpad.tasks import TaskKind
from rainbowpad.trainer import TrainConfig

cfg = ExperimentConfig(
    variants=(VariantSpec(Scheme.RAINBOW, 1), VariantSpec(Scheme.RAINBOW, 3),
              VariantSpec(Scheme.RAINBOW, 7)),
    tasks=(TaskKind.REPEAT, TaskKind.COPY),
    train_examples=128000,
    eval_examples=40,
    train_length=64,
    response_len_min=25,
    response_len_max=32,
    eval_max_lengths=(64, 256),
    model=DenoiserConfig(n_layers=2, n_heads=4, d_model=64, d_ff=256,
                         max_len=256, vocab_size=0),
    train=TrainConfig(epochs=1, batch_size=64, learning_rate=3e-3,
                      warmup_steps=100),
    output_dir="runs",
)

run_dir = run_experiment(cfg, progress=print)
rows = json.loads((run_dir / "results.json").read_text())

by_label: dict[str, dict[int, float]] = {}
for r in rows:
    by_label.setdefault(r["label"], {})[r["max_length"]] = r["mean_res_length"]

print()
print(f"{'variant':>12s} {'res@64':>8s} {'res@256':>8s} {'stability':>10s}")
for label, vals in by_label.items():
    ratio = vals[256] / vals[64] if vals[64] else float("nan")
    print(f"{label:>12s} {vals[64]:>8.1f} {vals[256]:>8.1f} {ratio:>10.2f}")
print()
print("stability = res@256 / res@64; 1.0 is perfect, small values mean the")
print("longer canvas truncated the response. Expect K=7 >= K=3 >= K=1.")
