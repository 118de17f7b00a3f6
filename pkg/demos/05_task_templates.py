"""Render benchmark task instances for the three model families.

Run from the repository root:  python3 demos/05_task_templates.py
"""

from denoiserforge import templates as tp

# An entailment-style instance rendered for each family.
instance = tp.TaskInstance(
    "terra", {"premise": "Кошка спит на ковре.", "hypothesis": "Животное отдыхает."}
)
for family in tp.FAMILIES:
    spec = tp.get_template("terra", family)
    label, rendered = tp.render(instance, spec)[0]
    print(f"{family:14s} labels={spec.label_set}")
    print(f"               {rendered}")

# A yes/no question over a passage, in the text-to-text style.
danetqa = tp.TaskInstance(
    "danetqa", {"question": "Земля круглая?", "passage": "Земля имеет форму шара."}
)
pairs = tp.render(danetqa, tp.get_template("danetqa", "t5_style"))
for label, rendered in pairs:
    print(f"danetqa [{label:3s}] {rendered}")

# Candidate-entity substitution: one rendered string per entity, the entity
# itself acting as the label.
rucos = tp.TaskInstance(
    "rucos",
    {
        "passage": "Речь идёт о столицах.",
        "query": "@placeholder является столицей России.",
        "entities": ["Москва", "Париж"],
    },
)
for label, rendered in tp.render(rucos, tp.get_template("rucos", "bert_style")):
    print(f"rucos [{label}] {rendered}")

# The coreference task ships a constant majority prediction.
print("rwsd renders:", tp.render(tp.TaskInstance("rwsd", {}), tp.get_template("rwsd", "t5_style")))

# For perplexity scoring, labels are appended so candidates differ.
for label, candidate in tp.continuation_candidates(danetqa, tp.get_template("danetqa", "t5_style")):
    print(f"candidate [{label:3s}] ...{candidate[-20:]}")
