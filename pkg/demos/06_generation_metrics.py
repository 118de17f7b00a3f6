"""Score generation outputs: overlap metrics, the detox combiner, CO2.

Run from the repository root:  python3 demos/06_generation_metrics.py
"""

from denoiserforge import metrics as m

predictions = [
    "кошка спит на ковре",
    "собака бежит по двору быстро",
]
references = [
    ["кошка спит на ковре"],
    ["собака быстро бежит по двору", "собака бежит во дворе"],
]

print("bleu    :", round(m.bleu(predictions, references).score, 4))
print("chrf1   :", round(m.chrf1(predictions, references).score, 2))
print("rougeL  :", round(m.rouge_l(predictions, references).score, 4))
print("meteor  :", round(m.meteor_lite(predictions, references).score, 4))

# Simplification scoring needs the sources too: SARI rewards keeping what the
# references kept, adding what they added, deleting what they deleted.
sources = ["кошка крепко спит на большом ковре", "собака бежит по двору быстро"]
print("sari    :", round(m.sari(sources, predictions, references).score, 2))

# Classification metrics share the same report shape.
preds = ["1", "0", "1", "1", "0"]
golds = ["1", "0", "0", "1", "0"]
print("mcc     :", round(m.mcc(preds, golds).score, 4))
f1, em = m.f1_em(["на ковре"], ["кошка на ковре"])
print("f1/em   :", round(f1.score, 4), em.score)

# The detox combiner multiplies per-example style accuracy, similarity, and
# fluency probabilities, then averages (scaled to 0..100).
joint = m.joint_detox([0.8, 0.9], [0.9, 0.95], [0.5, 0.8])
print("joint   :", round(joint.score, 2), "per-example:", [round(x, 1) for x in joint.per_example])

# Emissions from power figures: pue * kwh * intensity / 1000 kilograms.
print("co2 kg  :", m.co2(m.Co2Params(pue=1.3, kwh=1000, intensity=300)))

# The encoder-based similarity stand-in is pluggable; the default is a bag of
# character n-grams.
sim = m.embedding_similarity(predictions, references)
print("emb sim :", [round(x, 3) for x in sim.per_example])
