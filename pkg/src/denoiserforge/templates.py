"""Benchmark task templates and instance rendering.

Nine task types render into model-family-specific input strings. The
``roberta_style`` family wraps segments in ``<s>``/``</s>`` separators, the
``bert_style`` family uses ``[CLS]``/``[SEP]``, and the ``t5_style`` family
uses a task prefix with named fields. The reading-comprehension task with
entity candidates (``rucos``) substitutes each entity into the query's
``@placeholder`` slot and yields one candidate string per entity; the
coreference task (``rwsd``) is a constant-output task that always predicts
``False``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

TASKS = (
    "lidirus",
    "rcb",
    "parus",
    "muserc",
    "terra",
    "russe",
    "rwsd",
    "danetqa",
    "rucos",
)
FAMILIES = ("roberta_style", "bert_style", "t5_style")

#: Marker used as the label set of tasks whose candidate labels come from the
#: instance itself (entity candidates).
DYNAMIC_LABELS = "{entities[i]}"


class TemplateError(Exception):
    pass


@dataclass(frozen=True)
class TemplateSpec:
    task: str
    family: str
    pattern: str
    label_set: tuple[str, ...]

    @property
    def dynamic(self) -> bool:
        return self.label_set == (DYNAMIC_LABELS,)


@dataclass
class TaskInstance:
    task: str
    fields: dict
    gold: str | None = None


_ENTAIL2 = ("entailment", "not_entailment")
_ENTAIL2_T5 = ("entails", "doesn't entail")
_ENTAIL3 = ("entailment", "contradiction", "neutral")
_BIN = ("0", "1")
_NOYES = ("no", "yes")

_ROBERTA_NLI = "<s> {premise} </s></s> {hypothesis} </s>"
_BERT_NLI = "[CLS] {premise} [SEP] {hypothesis} [SEP]"

_TEMPLATE_TABLE: dict[tuple[str, str], tuple[str, tuple[str, ...]]] = {
    ("lidirus", "roberta_style"): (_ROBERTA_NLI, _ENTAIL2),
    ("lidirus", "bert_style"): (_BERT_NLI, _ENTAIL2),
    ("lidirus", "t5_style"): (
        "lidirus premise: {premise} hypothesis: {hypothesis}",
        _ENTAIL2_T5,
    ),
    ("rcb", "roberta_style"): (_ROBERTA_NLI, _ENTAIL3),
    ("rcb", "bert_style"): (_BERT_NLI, _ENTAIL3),
    ("rcb", "t5_style"): (
        "rcb premise: {premise} hypothesis: {hypothesis}",
        _ENTAIL3,
    ),
    ("parus", "roberta_style"): (_ROBERTA_NLI, _BIN),
    ("parus", "bert_style"): (_BERT_NLI, _BIN),
    ("parus", "t5_style"): (
        "parus premise: {premise} hypothesis1: {choice1} hypothesis2: {choice2}",
        ("hypothesis1", "hypothesis2"),
    ),
    ("muserc", "roberta_style"): (
        "<s> {passage} </s></s> {question} {answer} </s>",
        _BIN,
    ),
    ("muserc", "bert_style"): (
        "[CLS] {passage} [SEP] {question} {answer} [SEP]",
        _BIN,
    ),
    ("muserc", "t5_style"): (
        "muserc question: {question} answer: {answer} text: {passage}",
        _NOYES,
    ),
    ("terra", "roberta_style"): (_ROBERTA_NLI, _ENTAIL2),
    ("terra", "bert_style"): (_BERT_NLI, _ENTAIL2),
    ("terra", "t5_style"): (
        "terra premise: {premise} hypothesis: {hypothesis}",
        _ENTAIL2_T5,
    ),
    ("russe", "roberta_style"): (
        "<s> {sentence1} </s></s> {sentence2} </s></s> {word} </s>",
        ("True", "False"),
    ),
    ("russe", "bert_style"): (
        "[CLS] {sentence1} [SEP] {sentence2} [SEP]",
        ("True", "False"),
    ),
    ("russe", "t5_style"): (
        "russe sentence1: {sentence1} sentence2: {sentence2} slovo: {word}",
        _NOYES,
    ),
    ("rwsd", "roberta_style"): ("False", ()),
    ("rwsd", "bert_style"): ("False", ()),
    ("rwsd", "t5_style"): ("False", ()),
    ("danetqa", "roberta_style"): (
        "<s> {passage} </s></s> {question} </s>",
        _BIN,
    ),
    ("danetqa", "bert_style"): (
        "[CLS] {passage} [SEP] {question} [SEP]",
        _BIN,
    ),
    ("danetqa", "t5_style"): (
        "danetqa question: {question} text: {passage}",
        _NOYES,
    ),
    ("rucos", "roberta_style"): (
        "<s> {passage} </s></s> {query_filled} </s>",
        (DYNAMIC_LABELS,),
    ),
    ("rucos", "bert_style"): (
        "[CLS] {passage} [SEP] {query_filled} [SEP]",
        (DYNAMIC_LABELS,),
    ),
    ("rucos", "t5_style"): (
        "rucos question: {query} entities: {entities_joined}",
        (DYNAMIC_LABELS,),
    ),
}

TEMPLATES: dict[tuple[str, str], TemplateSpec] = {
    key: TemplateSpec(key[0], key[1], pattern, labels)
    for key, (pattern, labels) in _TEMPLATE_TABLE.items()
}

REQUIRED_FIELDS: dict[str, tuple[str, ...]] = {
    "lidirus": ("premise", "hypothesis"),
    "rcb": ("premise", "hypothesis"),
    "parus": ("premise", "choice1", "choice2"),
    "muserc": ("passage", "question", "answer"),
    "terra": ("premise", "hypothesis"),
    "russe": ("sentence1", "sentence2", "word"),
    "rwsd": (),
    "danetqa": ("question", "passage"),
    "rucos": ("passage", "query", "entities"),
}


def get_template(task: str, family: str) -> TemplateSpec:
    try:
        return TEMPLATES[(task, family)]
    except KeyError:
        raise TemplateError(f"no template for task {task!r} family {family!r}") from None


_FIELD_RE = re.compile(r"\{(\w+)\}")


def _fill(pattern: str, fields: dict) -> str:
    def lookup(match: re.Match) -> str:
        name = match.group(1)
        if name not in fields:
            raise TemplateError(f"missing field {name!r}")
        return str(fields[name])

    return _FIELD_RE.sub(lookup, pattern)


def render(instance: TaskInstance, spec: TemplateSpec) -> list[tuple[str, str]]:
    """Render one instance into (label, string) candidates.

    Entity-candidate tasks produce one string per entity with the entity as
    its label. The constant-output task returns its fixed prediction. All
    other tasks return the same rendered string once per label in the
    template's label set.
    """
    if spec.task != instance.task:
        raise TemplateError(
            f"template is for task {spec.task!r} but instance is {instance.task!r}"
        )
    if spec.task == "rwsd":
        return [("False", "False")]
    if spec.task == "rucos":
        entities = instance.fields.get("entities")
        if not entities:
            raise TemplateError("missing field 'entities'")
        query = instance.fields.get("query")
        if query is None:
            raise TemplateError("missing field 'query'")
        out = []
        for entity in entities:
            fields = dict(instance.fields)
            fields["query_filled"] = str(query).replace("@placeholder", str(entity))
            fields["entities_joined"] = ", ".join(str(e) for e in entities)
            out.append((str(entity), _fill(spec.pattern, fields)))
        return out
    rendered = _fill(spec.pattern, instance.fields)
    return [(label, rendered) for label in spec.label_set]


def continuation_candidates(
    instance: TaskInstance, spec: TemplateSpec, sep: str = " "
) -> list[tuple[str, str]]:
    """Candidates for perplexity scoring: each label appended to its string.

    For entity-candidate tasks the rendered strings already differ per
    candidate, so they pass through unchanged.
    """
    pairs = render(instance, spec)
    if spec.task == "rucos" and spec.family != "t5_style":
        return pairs
    if spec.task == "rwsd":
        return pairs
    return [(label, text + sep + label) for label, text in pairs]


def load_instances(path: str | Path, task: str) -> list[TaskInstance]:
    """Parse a JSON-lines task file; unknown keys are preserved in ``fields``."""
    if task not in REQUIRED_FIELDS:
        raise TemplateError(f"unknown task {task!r}")
    required = REQUIRED_FIELDS[task]
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TemplateError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(record, dict):
                raise TemplateError(f"{path}:{lineno}: expected a JSON object")
            for name in required:
                if name not in record:
                    raise TemplateError(
                        f"{path}:{lineno}: missing required key {name!r}"
                    )
            gold = record.get("label")
            instances.append(
                TaskInstance(task=task, fields=record, gold=None if gold is None else str(gold))
            )
    return instances
