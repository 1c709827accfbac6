"""Relation classification with from-scratch BiRNN and CNN sentence encoders."""

from .data import (
    KBP37_SCHEMA,
    SEMEVAL_SCHEMA,
    AnnotatedSequence,
    Example,
    RefineConfig,
    RelationSchema,
    annotate,
    bucket_by_context,
    compute_position_features,
    context_length,
    infer_schema,
    insert_position_indicators,
    parse_kbp_raw,
    parse_semeval,
    refine_kbp,
    serialize_examples,
)
from .embedding import (
    EmbeddingTable,
    PositionFeatureTables,
    Vocabulary,
    build_vocab,
    embed,
    fan_in_init,
    load_pretrained,
)
from .encoders import (
    ClassifierParams,
    CnnParams,
    RnnParams,
    SentenceEncoding,
    bidir_combine,
    classify,
    cnn_encode,
    max_pool,
    rnn_backward_pass,
    rnn_forward_pass,
)
from .evaluation import (
    EvalReport,
    SemanticProfile,
    corpus_neighbor_variance,
    f1_by_bucket,
    macro_f1,
    semantic_profile,
)
from .numeric import (
    GradCheckReport,
    ShapeError,
    compare_gradients,
    finite_diff_gradient,
    matvec,
    softmax,
    tanh_map,
)
from .training import (
    ModelBundle,
    TrainConfig,
    bptt_gradients,
    build_model,
    cross_entropy,
    encode_example,
    gradient_check,
    load_model,
    predict_label,
    predict_probs,
    save_model,
    sgd_step,
    train,
)

__version__ = "0.1.0"
