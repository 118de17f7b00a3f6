"""Span corruption and the seven-denoiser mixture, with the lossless check.

Run from the repository root:  python3 demos/04_denoiser_mixture.py
"""

from collections import Counter

import numpy as np

from denoiserforge import objectives as obj
from denoiserforge import tokenizer as tk

vocab = tk.train_vocab(
    ["пример корпуса для демонстрации деноизеров"],
    "bbpe",
    256 + 16 + len(tk.default_specials()),
)
naturals = np.array(vocab.natural_ids())
rng = np.random.default_rng(0)
ids = [int(x) for x in naturals[rng.integers(0, len(naturals), 100)]]
seq = tk.TokenSeq(ids, vocab.vocab_id)

# The seven built-in denoisers: a prefix-LM split plus six span-corruption
# settings over mean span length and corruption rate.
for spec in obj.BUILTIN_DENOISERS:
    mu = "L/4" if spec.mu is None else spec.mu
    print(f"  {spec.control_token:6s} kind={spec.kind} mu={mu} r={spec.r} n={spec.n}")

# A light span corruption: ~15 of 100 tokens vanish into sentinel slots.
example = obj.span_corrupt(seq, obj.BUILTIN_DENOISERS[1], vocab, seed=11)
kept = sum(1 for t in example.input_ids.ids if not vocab.is_special(t))
print(f"<SC1> removed {100 - kept} tokens in {example.meta['num_spans']} spans")
print("input prefix:", example.input_ids.ids[:12])
print("target prefix:", example.target_ids.ids[:12])

# Splicing the target spans back at the sentinels recovers the original.
assert obj.reconstruct(example, vocab) == ids
print("reconstruction: exact")

# The <LM> denoiser splits into prefix and continuation; nothing in the
# target precedes anything in the input.
lm = obj.span_corrupt(seq, obj.BUILTIN_DENOISERS[0], vocab, seed=0)
print(f"<LM> split: {len(lm.input_ids)} input + {len(lm.target_ids)} target tokens")

# The mixture picks one denoiser uniformly per example and prepends its
# control token.
counts = Counter()
for i in range(7000):
    ex = obj.mod_sample(seq, vocab, seed=1 ^ i)
    counts[ex.meta["denoiser"]] += 1
print("mixture counts over 7000 draws:")
for spec in obj.BUILTIN_DENOISERS:
    print(f"  {spec.control_token:6s} {counts[spec.control_token]}")
