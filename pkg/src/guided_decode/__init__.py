"""Guided text generation: topic boosting and constraint suppression over
any autoregressive model, plus the knowledge-grounded benchmark harness
used to evaluate it."""

from . import errors
from .benchmark import (
    DatasetSplit,
    Demonstration,
    InstructionInstance,
    Template,
    build_splits,
    extract_entities,
    load_templates,
    read_dataset,
    render,
    render_instance,
    sample_hierarchy_instance,
    sample_property_instance,
    write_dataset,
)
from .decoder import DecodeTrace, GenerationResult, GuidanceConfig, generate, guided_step
from .guidance import (
    GuidanceStep,
    GuidanceTrie,
    QueryTemplate,
    TrieCursor,
    binary_verify,
    build_trie,
    generate_textual_examples,
    lookahead_span,
    topk_guidance,
    trie_step,
    verifier_guidance,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .knowledge import (
    EntityRef,
    HierarchyKB,
    PropertyKB,
    mention_match,
    on_topic,
    violates,
)
from .metrics import (
    EvalReport,
    InstanceResult,
    copy_bleu,
    evaluate_dataset,
    instruction_conformance,
    perplexity,
    rep_n,
)
from .models import (
    BridgeModel,
    NGramModel,
    TableModel,
    Vocabulary,
    greedy_continue,
    next_logits,
    score_sequence,
)

__version__ = "0.1.0"
