"""Exercise the full protocol stack on the trainable bigram model:
training, perplexity, zero-shot selection, PenLP thresholding, beam search.

Run from the repository root:  python3 demos/07_toy_lm_protocols.py
"""

import numpy as np

from denoiserforge import objectives as obj
from denoiserforge import tokenizer as tk
from denoiserforge import toylm as tl

rng = np.random.default_rng(0)
words = ["дом", "лес", "река", "поле", "гора", "море"]


def sentence(r, label):
    return " ".join(words[i] for i in r.integers(0, len(words), 4)) + " " + label


# A corpus where the answer "да" dominates.
docs = [sentence(rng, "да" if rng.random() < 0.9 else "нет") for _ in range(1500)]
vocab = tk.train_vocab(docs, "bbpe", 256 + 24 + len(tk.default_specials()))
examples = list(obj.pack_clm([tk.encode(d, vocab) for d in docs], 32, vocab))

model0 = tl.ToyModel(
    np.zeros((vocab.size, vocab.size)), np.zeros(vocab.size), vocab_id=vocab.vocab_id
)
model, curve = tl.train(model0, examples, lr=2.0, epochs=40)
print(f"training loss {curve[0]:.3f} -> {curve[-1]:.3f} over {len(curve)} epochs")

# Perplexity drops on in-domain text.
good = tk.encode("дом лес река да", vocab)
weird = tk.encode("zzz qqq www", vocab)
print("ppl in-domain :", round(tl.perplexity(model, good), 2))
print("ppl off-domain:", round(tl.perplexity(model, weird), 2))

# Zero-shot label selection: the candidate with the lowest perplexity wins.
prompt = "гора море поле"
choice = tl.zero_shot_classify(
    model, [("да", prompt + " да"), ("нет", prompt + " нет")], vocab
)
print("zero-shot picks:", choice)

# PenLP scores sentences by length-penalized log-probability; a threshold
# fitted by cross-validation turns them into a binary classifier.
acceptable = [sentence(np.random.default_rng(i), "да") for i in range(40)]
weird_rng = np.random.default_rng(99)
strange = ["".join(chr(int(c)) for c in weird_rng.integers(1072, 1103, 12)) for _ in range(40)]
scores = [(tl.penlp(model, tk.encode(s, vocab)), 1) for s in acceptable]
scores += [(tl.penlp(model, tk.encode(s, vocab)), 0) for s in strange]
fit = tl.fit_threshold(scores, folds=10, seed=0)
print(f"penlp threshold {fit.threshold:.2f} with validation mcc {fit.mcc:.2f}")

# Beam search with a repetition penalty; beams=1 is plain greedy decoding.
out = tl.beam_search(
    model,
    tk.encode("дом", vocab),
    beams=5,
    rep_penalty=1.05,
    max_len=12,
    eos_id=vocab.specials["eos"],
)
print("beam output:", repr(tk.decode(out, vocab)))
