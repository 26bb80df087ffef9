"""Binary code similarity over data-dependence slices.

The package takes functions in a textual micro-IR, prunes dead
definitions, slices each basic block along def-use chains, connects the
slices into a flow-typed graph, embeds slices with a masked-token
transformer fine-tuned contrastively, and matches graphs pairwise with
a cross-graph attention network.  A retrieval pipeline, a synthetic
corpus generator, an HTTP service and a CLI sit on top.
"""

from .arch import DEFAULT_ARGUMENT_REGISTERS, argument_register_set, load_argument_registers
from .corpus import (
    CONFIG_SEQUENCE,
    BuildConfig,
    Manifest,
    ManifestEntry,
    gen_corpus,
    gen_function,
    make_variant,
)
from .encoder import (
    CorpusUnit,
    EmbeddingCache,
    EncoderConfig,
    FineTunePair,
    FinetuneReport,
    SliceEncoder,
    embed_batch,
    embed_slice,
    finetune,
    load_encoder,
    make_pairs,
    masked_accuracy,
    pretrain,
    save_encoder,
)
from .gmn import (
    GraphInput,
    MatchConfig,
    MatchModel,
    attention_to_dot,
    export_attention,
    graph_input,
    load_matcher,
    pair_loss,
    propagate_pair,
    save_matcher,
    score_pair,
    train_matcher,
)
from .graphbuild import (
    FlowType,
    SliceGraph,
    build_block_graph,
    build_graph,
    canonical_key,
    graph_dumps,
    graph_from_json,
    graph_to_dot,
    graph_to_json,
    merge_duplicates,
)
from .metrics import mrr, rank_of, recall_at_k
from .pipeline import (
    ABLATIONS,
    Artifacts,
    ExperimentOutcome,
    PipelineOptions,
    TrainSettings,
    build_artifacts,
    parse_ablation,
    run_experiment,
    run_task,
    task_queries,
)
from .preprocess import compute_liveness, prune
from .sir import (
    BasicBlock,
    Diagnostic,
    FunctionIR,
    Instruction,
    Operand,
    OperandKind,
    SIRParseError,
    def_use,
    format_instruction,
    parse_sir,
    print_sir,
)
from .slicer import Slice, slice_block, slice_function, slice_oracle
from .tokens import Vocab, build_vocab, normalize, tokenize_slice

__version__ = "0.1.0"
