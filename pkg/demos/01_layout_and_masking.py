"""A guided tour of the data layer: vocabularies, padding layouts, and the
masking forward process.

Run with:  python3 demos/01_layout_and_masking.py
"""

import numpy as np

from rainbowpad.masking import apply_mask, masked_ce_loss, sample_mask
from rainbowpad.padding import Scheme, layout
from rainbowpad.tasks import task_vocab

rng = np.random.default_rng(0)
v = task_vocab(7)

print("vocabulary:", v.size, "tokens;", "mask =", v.mask_id, " eos =", v.eos_id,
      " pads =", list(v.pad_ids))
print()

prompt = [v.bos_id, v.id_of("repeat"), v.id_of("c"), v.id_of("5")]
response = [v.id_of("c")] * 5
L = 20


def render(tokens):
    return " ".join(f"{v.token_of(t):>7s}" for t in tokens)


print("the same (prompt, response) pair laid out to L =", L,
      "under each padding scheme:")
for scheme in Scheme:
    ex = layout(list(prompt), list(response), L, scheme, v, rng)
    print(f"{scheme.value:>10s} | {render(ex.tokens)}")
print()
print("EOS_PAD repeats <eos>; SINGLE_PAD repeats one pad; RANDOM_PAD draws")
print("pads at random; RAINBOW cycles pad_0..pad_6 after a single <eos>.")
print()

# the forward process: mask a fraction lambda of the maskable region
ex = layout(list(prompt), list(response), L, Scheme.RAINBOW, v, rng)
spec = sample_mask(ex, rng)
corrupted = apply_mask(ex, spec, v)
print(f"sampled corruption rate lambda = {spec.lam:.3f}")
print("original :", render(ex.tokens))
print("corrupted:", render(corrupted))
print()
print("masked positions carry a 1/lambda loss weight; prompts are never masked.")

# show the 1/lambda weight law concretely with a uniform model
from rainbowpad.masking import MaskSpec

logits = np.zeros((L, v.size))
targets = np.array(ex.tokens)
base = masked_ce_loss(logits, targets, spec)
half_lam = MaskSpec(spec.lam / 2, spec.mask, spec.maskable_from)
print(f"uniform-model masked CE at lambda={spec.lam:.3f}: {base:.4f} nats")
print(f"same mask at lambda/2 doubles the weighted loss: "
      f"{masked_ce_loss(logits, targets, half_lam):.4f} nats")
