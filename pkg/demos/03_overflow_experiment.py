"""The headline experiment: identical training, two padding schemes, and a
canvas four times longer than anything seen in training.

EOS_PAD models reuse <eos> as padding, so at decode time the tail is a wall of
high-confidence <eos> predictions. Confidence decoding reveals those first and
the response collapses. RAINBOW keeps one <eos> plus a cyclic pad palette and
the response length stays put.

Run with:  python3 demos/03_overflow_experiment.py
(about 10 minutes; trains two models and sweeps both canvas lengths)
"""

import csv
import json

from rainbowpad.denoiser import DenoiserConfig
from rainbowpad.harness import ExperimentConfig, VariantSpec, run_experiment
from rainbowpad.padding import Scheme
from rainbowpad.tasks import TaskKind
from rainbowpad.trainer import TrainConfig

cfg = ExperimentConfig(
    variants=(VariantSpec(Scheme.EOS_PAD), VariantSpec(Scheme.RAINBOW, 7)),
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
print()
print("run directory:", run_dir)
print()

rows = json.loads((run_dir / "results.json").read_text())
print(f"{'variant':>12s} {'canvas':>7s} {'res_len':>8s} {'accuracy':>9s} {'eos_first50':>12s}")
for r in rows:
    print(f"{r['label']:>12s} {r['max_length']:>7d} {r['mean_res_length']:>8.1f} "
          f"{r['accuracy']:>9.2f} {r['eos_first50_ratio']:>12.3f}")

print()
for label in ("EOS_PAD", "RAINBOW_K7"):
    recs = list(csv.reader(open(run_dir / f"profiles_{label}.csv")))[2:]
    p_eos = [float(r[1]) for r in recs]
    p_pad = [float(r[2]) for r in recs]
    print(f"{label}: step-0 p(eos) at position 255 = {p_eos[255]:.3f}, "
          f"max pad confidence = {max(p_pad):.3f}")

print()
print("CSV reports, SVG charts, and raw decode traces are in the run directory;")
print("`rainbowpad report --run-dir ...` regenerates them byte-for-byte.")
