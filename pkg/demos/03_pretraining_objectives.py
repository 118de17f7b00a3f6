"""Build masked-LM, sentence-pair, causal-LM, and detection-input examples.

Run from the repository root:  python3 demos/03_pretraining_objectives.py
"""

from denoiserforge import corpus as cp
from denoiserforge import objectives as obj
from denoiserforge import tokenizer as tk

corpus = [
    "Первое предложение текста. Второе предложение текста. Третье в конце.",
    "Другой документ начинается здесь. Он короче первого.",
]
vocab = tk.train_vocab(corpus, "bbpe", 256 + 40 + len(tk.default_specials()))
seq = tk.encode(corpus[0], vocab)
print("document is", len(seq), "tokens")

# Masked LM with the 80/10/10 rule: of the selected positions, 80% become the
# mask token, 10% a random token, 10% stay as they were.
mlm = obj.make_mlm(seq, p_mask=0.15, vocab=vocab, seed=7)
selected = [t for t in mlm.target_ids.ids if t != obj.IGNORE_ID]
print("mlm selected", len(selected), "positions at", mlm.meta["mask_positions"])
print("reconstruction is exact:", obj.reconstruct(mlm, vocab) == seq.ids)

# Detection inputs substitute only the mask token, and the positions map in
# meta feeds a downstream generator.
rtd = obj.make_rtd_input(seq, p_mask=0.25, vocab=vocab, seed=7)
print("rtd masked", rtd.meta["mask_positions"].count(",") + 1, "positions")

# Sentence pairs carry an is-next label; masking applies on top.
doc_a = cp.Document.from_text(corpus[0])
doc_b = cp.Document.from_text(corpus[1])
pair = obj.make_nsp_pair(doc_a, doc_b, vocab, seed=3)
print("nsp label:", pair.meta["nsp_label"], "boundary at", pair.meta["segment_boundary"])

# Causal LM packing joins documents with eos and cuts fixed-size blocks; the
# final partial block is dropped and targets are the inputs shifted by one.
token_docs = [tk.encode(text, vocab) for text in corpus * 8]
blocks = list(obj.pack_clm(token_docs, ctx_len=32, vocab=vocab))
print("packed", len(blocks), "blocks of 32 tokens")
first = blocks[0]
assert first.target_ids.ids[:-1] == first.input_ids.ids[1:]
print("shift-by-one holds on the first block")

# Examples serialize to a compact length-prefixed binary format.
import tempfile
from pathlib import Path

path = Path(tempfile.mkdtemp()) / "examples.bin"
obj.write_examples(path, [mlm, rtd, pair] + blocks)
loaded = list(obj.read_examples(path, vocab.vocab_id))
print("wrote and reloaded", len(loaded), "records from", path.stat().st_size, "bytes")
