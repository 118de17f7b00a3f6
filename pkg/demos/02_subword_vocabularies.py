"""Train the three tokenizer schemes and inspect their behavior.

Run from the repository root:  python3 demos/02_subword_vocabularies.py
"""

import tempfile
from pathlib import Path

from denoiserforge import tokenizer as tk

corpus = [
    "низко низко летят самолёты",
    "самолёты летят на юг",
    "на юг летят и птицы",
] * 10

# Character-level BPE: the alphabet comes from the corpus, merges are greedy
# highest-frequency pairs, ties broken by byte order.
bpe = tk.train_vocab(corpus, "bpe", 40, specials=["pad", "eos", "unk"])
print("bpe size:", bpe.size)
print("first merges:", [(bpe.tokens[l] + b"+" + bpe.tokens[r]).decode() for l, r in bpe.merges[:5]])

seq = tk.encode("самолёты летят", bpe)
print("bpe tokens:", [bpe.tokens[i].decode() for i in seq.ids])

# Unknown characters only exist for character BPE; byte-level schemes cover
# every input.
print("bpe on unseen char:", tk.encode("z", bpe).ids, "(the unk id is", bpe.specials["unk"], ")")

# Byte-level BPE keeps all 256 byte tokens, so decode(encode(x)) == x for any
# string whatsoever.
bbpe = tk.train_vocab(corpus, "bbpe", 256 + 30 + len(tk.default_specials()))
for text in ["самолёты", "mixed текст 123", "🛩️ emoji"]:
    assert tk.decode(tk.encode(text, bbpe), bbpe) == text
print("bbpe roundtrips hold; size", bbpe.size, "with", len(bbpe.merges), "merges")

# The unigram scheme segments with Viterbi over piece log-probabilities
# learned by EM plus pruning. Its inventory also keeps the 256 bytes.
uni = tk.train_vocab(corpus, "unigram", 256 + 30 + len(tk.default_specials()))
useq = tk.encode("самолёты летят", uni)
print("unigram pieces:", [uni.tokens[i].decode("utf-8", "replace") for i in useq.ids])

# Specials are never produced from natural text, only via parse_specials.
text = "вход <SC1> выход"
plain = tk.encode(text, bbpe)
parsed = tk.encode(text, bbpe, parse_specials=True)
print("natural encode produces the control token:", bbpe.specials["<SC1>"] in plain.ids)
print("parse_specials produces the control token:", bbpe.specials["<SC1>"] in parsed.ids)
print("decode renders special names:", tk.decode(parsed, bbpe))

# Vocabularies serialize to a diff-able line format.
path = Path(tempfile.mkdtemp()) / "demo.vocab"
tk.save_vocab(bbpe, path)
print("vocab file header:", path.read_text(encoding="utf-8").splitlines()[0])
loaded = tk.load_vocab(path)
assert loaded.vocab_id == bbpe.vocab_id
print("reloaded vocab id matches:", loaded.vocab_id)
