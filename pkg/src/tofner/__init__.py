"""Zero-resource NER by staged fine-tuning: MLM -> MRC -> NER with pseudo-label refinement."""

__version__ = "0.1.0"

from .convert import QueryTemplateSet, WordMap, mrc_normalize, mrc_to_ner, ner_to_mrc, substitute_words
from .corpus import (
    CorpusRegistry,
    CorpusRole,
    LabelSet,
    MrcExample,
    TaggedSentence,
    extract_entities,
    normalize_tags,
    parse_conll,
    read_conll,
    serialize_conll,
    spans_from_tags,
    strip_labels,
    validate_bio,
)
from .errors import (
    AlignmentError,
    BioError,
    ConfigError,
    ContractError,
    LabelingError,
    ParseError,
    ResumeError,
    TofError,
    TrainingError,
)
from .evaluate import PrfScore, RunAggregate, aggregate_runs, entity_f1
from .masking import MaskPolicy, MaskedInstance, build_mlm_corpus, generate_maskings, mask_corpus
from .model import ModelState, StageParams, load_checkpoint, mrc_decode, ner_decode, save_checkpoint, train_stage
from .pipeline import Mode, PipelineConfig, PipelineTrace, StageRecord, generate_pseudo_labels, plan_stages, resume, run_tof
