import math
from types import SimpleNamespace

import numpy as np
import pytest

from rainbowpad.decoder import (DecodeError, DecodePolicy, DecodeTrace, Strategy,
                                cascade_probe, decode, decode_batch,
                                score_positions)
from rainbowpad.denoiser import Denoiser, DenoiserConfig
from rainbowpad.tasks import task_vocab
from rainbowpad.vocab import build_vocab

V = task_vocab(3)
# small universe for frozen-logit instances: mask=2, eos=3, bos=4, pad_0=5
V_SMALL = build_vocab(["a", "b"], k=1)


class FrozenLogitModel:
    """Stand-in whose logits ignore the canvas; lets the decode order be
    checked against an exhaustive oracle."""

    def __init__(self, logits, max_len=64):
        self.logits = np.asarray(logits, dtype=float)
        self.config = SimpleNamespace(max_len=max_len)

    def forward(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            return self.logits.copy()
        return np.repeat(self.logits[None], tokens.shape[0], axis=0)


def oracle_decode(logits, prompt_len, policy, eos_id, mask_id):
    """Exhaustive reference decoder, written independently with plain python
    loops. Deterministic policies only."""
    L = len(logits)
    probs = []
    for row in logits:
        exps = [math.exp(x - max(row)) for x in row]
        z = sum(exps)
        p = [e / z for e in exps]
        if mask_id < len(p):
            p[mask_id] = 0.0
            z1 = sum(p)
            p = [x / z1 for x in p]
        if policy.eos_penalty < 1.0 and eos_id < len(p):
            p[eos_id] *= policy.eos_penalty
            z2 = sum(p)
            p = [x / z2 for x in p]
        probs.append(p)

    def score(p):
        s = sorted(p, reverse=True)
        if policy.strategy is Strategy.CONFIDENCE:
            return s[0]
        if policy.strategy is Strategy.MARGIN:
            return s[0] - s[1]
        return sum(x * math.log(x) for x in p if x > 0)

    gen = L - prompt_len
    size = gen // policy.n_blocks
    block_of = {}
    for j in range(prompt_len, L):
        b = min((j - prompt_len) // size, policy.n_blocks - 1)
        block_of[j] = b

    masked = set(range(prompt_len, L))
    schedule = policy.schedule(gen)
    order = []
    for quota in schedule:
        for _ in range(quota):
            if not masked:
                break
            first_block = min(block_of[j] for j in masked)
            cands = [j for j in masked if block_of[j] == first_block]
            best = max(cands, key=lambda j: (score(probs[j]), -j))
            masked.discard(best)
            token = max(range(len(probs[best])), key=lambda t: probs[best][t])
            order.append((best, token))
    return order


def random_instances(n=40, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        L = int(rng.integers(2, 7))
        vsz = int(rng.integers(2, 6))
        logits = rng.normal(scale=2.0, size=(L, vsz))
        prompt_len = int(rng.integers(0, L - 1))
        out.append((logits, prompt_len, vsz))
    return out


@pytest.mark.parametrize("strategy", list(Strategy))
def test_decode_matches_oracle(strategy):
    for logits, prompt_len, vsz in random_instances():
        policy = DecodePolicy(strategy=strategy)
        model = FrozenLogitModel(logits)
        prompt = [0] * prompt_len
        trace = decode(model, prompt, len(logits), policy, V_SMALL)
        expected = oracle_decode(logits, prompt_len, policy, V_SMALL.eos_id,
                                 V_SMALL.mask_id)
        assert trace.revealed_in_order() == expected


@pytest.mark.parametrize("n_blocks", [1, 2, 3])
def test_decode_matches_oracle_with_blocks(n_blocks):
    for logits, prompt_len, vsz in random_instances(seed=n_blocks):
        if len(logits) - prompt_len < n_blocks:
            continue
        policy = DecodePolicy(n_blocks=n_blocks)
        trace = decode(FrozenLogitModel(logits), [0] * prompt_len, len(logits),
                       policy, V_SMALL)
        expected = oracle_decode(logits, prompt_len, policy, V_SMALL.eos_id,
                                 V_SMALL.mask_id)
        assert trace.revealed_in_order() == expected


def test_decode_matches_oracle_with_eos_penalty():
    checked = 0
    for logits, prompt_len, vsz in random_instances(seed=5):
        policy = DecodePolicy(eos_penalty=0.5)
        trace = decode(FrozenLogitModel(logits), [0] * prompt_len, len(logits),
                       policy, V_SMALL)
        expected = oracle_decode(logits, prompt_len, policy, V_SMALL.eos_id,
                                 V_SMALL.mask_id)
        assert trace.revealed_in_order() == expected
        checked += vsz > V_SMALL.eos_id  # penalty actually engaged
    assert checked > 10


def test_scores_confidence_forced_argmax():
    probs = np.array([[0.9, 0.1, 0.0], [0.5, 0.3, 0.2]])
    s = score_positions(probs, Strategy.CONFIDENCE)
    assert s[0] > s[1]
    assert s[0] == pytest.approx(0.9)


def test_scores_margin():
    probs = np.array([[0.6, 0.3, 0.1], [0.5, 0.45, 0.05]])
    s = score_positions(probs, Strategy.MARGIN)
    assert s[0] == pytest.approx(0.3)
    assert s[1] == pytest.approx(0.05)


def test_scores_entropy():
    probs = np.array([[0.9, 0.1], [0.5, 0.5]])
    s = score_positions(probs, Strategy.ENTROPY)
    assert -s[0] == pytest.approx(0.3251, abs=1e-4)
    assert -s[1] == pytest.approx(np.log(2), rel=1e-6)
    assert s[0] > s[1]


def test_confidence_rank_monotone_in_top1():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(4), size=6)
    base_rank = np.argsort(-score_positions(probs, Strategy.CONFIDENCE)).tolist()
    i = base_rank[-1]
    boosted = probs.copy()
    top = boosted[i].argmax()
    boosted[i, top] += 0.5
    boosted[i] /= boosted[i].sum()
    new_scores = score_positions(boosted, Strategy.CONFIDENCE)
    assert (np.argsort(-new_scores).tolist().index(i)
            <= base_rank.index(i))


def real_model():
    cfg = DenoiserConfig(n_layers=1, n_heads=2, d_model=16, d_ff=32, max_len=32,
                         vocab_size=V.size, seed=1)
    return Denoiser(cfg)


def test_every_masked_position_revealed_once():
    model = real_model()
    rng = np.random.default_rng(0)
    for strategy in Strategy:
        for n_blocks in (1, 3):
            policy = DecodePolicy(strategy=strategy, n_blocks=n_blocks)
            trace = decode(model, [0, 1], 16, policy, V, rng)
            positions = [p for p, _ in trace.revealed_in_order()]
            assert sorted(positions) == list(range(2, 16))
            assert V.mask_id not in trace.final_tokens


def test_deterministic_replay():
    model = real_model()
    policy = DecodePolicy()
    t1 = decode(model, [0], 12, policy, V, np.random.default_rng(0))
    t2 = decode(model, [0], 12, policy, V, np.random.default_rng(99))
    assert t1.to_json() == t2.to_json()


def test_block_limit_forces_left_to_right():
    model = real_model()
    gen = 14
    policy = DecodePolicy(n_blocks=gen)  # one-token blocks
    trace = decode(model, [0, 1], 16, policy, V)
    positions = [p for p, _ in trace.revealed_in_order()]
    assert positions == list(range(2, 16))


def test_single_block_equals_blockless_path():
    model = real_model()
    t1 = decode(model, [0], 12, DecodePolicy(n_blocks=1), V)
    # n_blocks=1 goes through the same generic block machinery; equality with
    # an explicitly trivial block partition is the contract
    t2 = decode(model, [0], 12, DecodePolicy(n_blocks=1, steps=None), V)
    assert t1.to_json() == t2.to_json()


def test_gumbel_noise_changes_order_but_still_completes():
    model = real_model()
    policy = DecodePolicy(gumbel_temperature=2.0)
    t1 = decode(model, [0], 16, policy, V, np.random.default_rng(1))
    t2 = decode(model, [0], 16, policy, V, np.random.default_rng(2))
    assert V.mask_id not in t1.final_tokens
    assert t1.revealed_in_order() != t2.revealed_in_order()


def test_sampling_temperature_draws_tokens():
    model = real_model()
    policy = DecodePolicy(sampling_temperature=5.0, top_k=0)
    t1 = decode(model, [0], 16, policy, V, np.random.default_rng(1))
    t2 = decode(model, [0], 16, policy, V, np.random.default_rng(2))
    assert t1.final_tokens != t2.final_tokens


def test_schedule_mismatch_rejected():
    with pytest.raises(DecodeError):
        DecodePolicy(tokens_per_step=(2, 2)).schedule(5)


def test_too_many_blocks_rejected():
    model = real_model()
    with pytest.raises(DecodeError):
        decode(model, [0] * 10, 12, DecodePolicy(n_blocks=3), V)


def test_multi_token_schedule_covers_all_positions():
    model = real_model()
    policy = DecodePolicy(steps=4)
    trace = decode(model, [0], 13, policy, V)
    sizes = [len(s.positions) for s in trace.steps]
    assert sum(sizes) == 12
    assert len(sizes) == 4


def test_trace_json_round_trip():
    model = real_model()
    trace = decode(model, [0], 10, DecodePolicy(), V)
    again = DecodeTrace.from_json(trace.to_json())
    assert again.to_json() == trace.to_json()


def test_cascade_probe_uniform_model_no_coupling():
    model = real_model()  # tiny fresh init is near-uniform
    out = cascade_probe(model, [0], 24, 12, 10, V)
    assert out["p_base"] == pytest.approx(1.0 / V.size, abs=0.05)
    assert out["p_conditioned"] == pytest.approx(out["p_base"], abs=0.05)


def test_cascade_probe_bounds_checked():
    model = real_model()
    with pytest.raises(DecodeError):
        cascade_probe(model, [0, 1], 16, 0, 10, V)
    with pytest.raises(DecodeError):
        cascade_probe(model, [0], 16, 10, 10, V)
