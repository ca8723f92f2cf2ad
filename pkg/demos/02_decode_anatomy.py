"""Watch any-order decoding happen: train a small model for a minute, then
decode one prompt step by step and inspect the reveal order, the cascade
probe, and the step-0 confidence profile.

Run with:  python3 demos/02_decode_anatomy.py
"""

import dataclasses

import numpy as np

from rainbowpad.decoder import DecodePolicy, Strategy, cascade_probe, decode
from rainbowpad.denoiser import Denoiser, DenoiserConfig
from rainbowpad.harness import ExperimentConfig, VariantSpec, build_instances, lay_out_corpus
from rainbowpad.metrics import initial_confidence_profile
from rainbowpad.padding import Scheme
from rainbowpad.tasks import TaskKind, task_vocab
from rainbowpad.trainer import TrainConfig, train

cfg = ExperimentConfig(
    variants=(VariantSpec(Scheme.RAINBOW, 7),),
    tasks=(TaskKind.REPEAT,),
    train_examples=32000,
    train_length=48,
    response_len_min=10,
    response_len_max=16,
    model=DenoiserConfig(n_layers=2, n_heads=4, d_model=64, d_ff=256,
                         max_len=96, vocab_size=0),
    train=TrainConfig(epochs=1, batch_size=64, learning_rate=3e-3,
                      warmup_steps=50),
)
v = task_vocab(cfg.palette_size)
model_cfg = dataclasses.replace(cfg.model, vocab_size=v.size)

print("training a small RAINBOW model on the repeat task (about a minute)...")
instances = build_instances(cfg, v, seed=1, n_per_task=cfg.train_examples)
corpus = lay_out_corpus(instances, cfg.train_length, cfg.variants[0], v, seed=3)
model, _ = train(Denoiser(model_cfg), corpus, cfg.train, v)

prompt = [v.bos_id, v.id_of("repeat"), v.id_of("f"), v.id_of("1"), v.id_of("2")]
L = 48
policy = DecodePolicy(strategy=Strategy.CONFIDENCE)
trace = decode(model, prompt, L, policy, v)

print()
print("prompt: repeat f 12   ->   expected response: f x 12, then <eos>, then pads")
print()
print("reveal order (step: position -> token, confidence):")
for s in trace.steps[:14]:
    for p, t, sc in zip(s.positions, s.tokens, s.scores):
        print(f"  step {s.step:3d}: pos {p:2d} -> {v.token_of(t):>7s}  ({sc:.3f})")
print(f"  ... {len(trace.steps) - 14} more steps")
print()
resp = trace.final_tokens[trace.prompt_len:trace.prompt_len + trace.res_length]
print("res_length =", trace.res_length, " response =",
      " ".join(v.token_of(t) for t in resp))
print()

prof = initial_confidence_profile(model, prompt, L, v)
print("step-0 confidence profile (all generation positions masked):")
print(f"  p(eos) at the last position:  {prof['p_eos'][-1]:.3f}")
print(f"  max pad probability anywhere: {prof['p_pad_max'].max():.3f}")
print()

probe = cascade_probe(model, prompt, L, i=L - 20, k=10, v=v)
print("cascade probe at position L-20 with an <eos> clamped 10 ahead:")
print(f"  p(eos) base        = {probe['p_base']:.4f}")
print(f"  p(eos) conditioned = {probe['p_conditioned']:.4f}")
print()
print("with rainbow padding the single <eos> carries position information, so")
print("clamping a later <eos> should not inflate earlier <eos> probabilities.")
