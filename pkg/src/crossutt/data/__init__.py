from .corpus import (Corpus, CorpusFormatError, LengthMismatchError, Utterance, read_corpus,
                     read_feature_file, read_vocab, write_corpus, write_feature_file, write_vocab)
from .serialize import SerializedBatchPlan, SlotStep, serialize
from .synthetic import SyntheticTaskSpec, generate_synthetic_corpus, template_classifier, token_templates

__all__ = [
    "Corpus", "CorpusFormatError", "LengthMismatchError", "Utterance", "read_corpus",
    "read_feature_file", "read_vocab", "write_corpus", "write_feature_file", "write_vocab",
    "SerializedBatchPlan", "SlotStep", "serialize", "SyntheticTaskSpec",
    "generate_synthetic_corpus", "template_classifier", "token_templates",
]
