from .config import RETRIEVAL_MODES, ModelConfig
from .network import (
    CameraEncoder,
    DiTBlock,
    HybridMemoryDiT,
    MemoryTokenizer,
    encode_and_inject_camera,
    timestep_features,
    tokenize_memory,
)
from .retrieval import (
    MemoryTokens,
    RetrievalSelection,
    affinity,
    affinity_rows,
    attention,
    dense_attention_reference,
    fov_overlap_select,
    pool_query,
    retrieval_attention,
    token_centres,
    topk_select,
    topk_select_rows,
    window_overlap,
)
