"""denoiserforge: pretraining-example pipelines and desk-scale evaluation.

The package turns raw text corpora into training examples for the classic
pretraining objectives (masked LM with next-sentence pairs, causal LM
packing, span corruption, replaced-token-detection inputs, and a
mixture-of-denoisers), trains and applies the matching subword vocabularies,
renders benchmark task templates, and scores outputs with standard
classification and generation metrics. A small trainable bigram model
exercises the full protocol stack end to end.
"""

from .corpus import (
    CorpusError,
    CorpusManifest,
    Document,
    Domain,
    IngestReport,
    dedup_filter,
    ingest,
    normalize_text,
)
from .metrics import (
    Co2Params,
    MetricReport,
    bleu,
    chrf1,
    co2,
    embedding_similarity,
    f1_em,
    joint_detox,
    mcc,
    meteor_lite,
    rouge_l,
    sari,
)
from .objectives import (
    BUILTIN_DENOISERS,
    IGNORE_ID,
    DenoiserSpec,
    ObjectiveError,
    ObjectiveExample,
    make_mlm,
    make_nsp_pair,
    make_rtd_input,
    mod_sample,
    pack_clm,
    read_examples,
    reconstruct,
    span_corrupt,
    write_examples,
)
from .templates import (
    FAMILIES,
    TASKS,
    TaskInstance,
    TemplateError,
    TemplateSpec,
    continuation_candidates,
    get_template,
    load_instances,
    render,
)
from .tokenizer import (
    MODEL_VOCAB_SIZES,
    TokenSeq,
    Vocab,
    VocabError,
    decode,
    default_specials,
    encode,
    load_vocab,
    save_vocab,
    train_vocab,
)
from .toylm import (
    FitResult,
    PenLPConfig,
    ToyLmError,
    ToyModel,
    beam_search,
    fit_threshold,
    penlp,
    perplexity,
    train,
    zero_shot_classify,
)

__version__ = "0.1.0"
