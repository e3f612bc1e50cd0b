"""HTTP bridge serving a causal LM, plus prefix-tuned guidance distillation."""

from .distill_data import (
    DistillationRecord,
    build_distillation_set,
    load_records,
    parse_phrases,
    query_examples,
    read_dataset,
    save_records,
)
from .modeling import LoadedModel, build_tiny, load_model, param_checksum
from .prefix import PrefixBundle, PrefixEncoder, distill
from .server import create_app, serve
from .tokenizer import WordTokenizer

__version__ = "0.1.0"
