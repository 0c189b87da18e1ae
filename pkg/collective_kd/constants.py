"""
Collective KD - Constants and Default Values
"""

# ═══════════════════════════════════════════════════════════════════════════════
# FILE FORMATS
# ═══════════════════════════════════════════════════════════════════════════════

# Embedding file: magic, u32 version, u32 dim, u64 count, then entries
EMBEDDING_MAGIC = b"CRNK"
EMBEDDING_VERSION = 1
EMBEDDING_HEADER = "<4sIIQ"         # magic, version, dim, count
EMBEDDING_ENTRY_HEADER = "<QI"      # id, token_count

# Checkpoint file: magic, u32 version, u32 dim_out, u32 dim_in, then W
CHECKPOINT_MAGIC = b"CRWT"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = "<4sIII"        # magic, version, dim_out, dim_in

FLOAT_DTYPE = "<f4"                 # little-endian float32 payloads

META_SUFFIX = ".meta.json"          # sidecar for binary artifacts and run files
RUN_TAG_PREFIX = "ckd"

# Persisted index directory layout
INDEX_PASSAGES = "passages.crnk"
INDEX_STATIC_TOKENS = "static_tokens.crnk"
INDEX_VOCAB = "vocab.tsv"
INDEX_IDF = "idf.tsv"
INDEX_PROJECTION = "projection.crwt"
INDEX_MANIFEST = "manifest.json"


# ═══════════════════════════════════════════════════════════════════════════════
# EMBEDDINGS
# ═══════════════════════════════════════════════════════════════════════════════

DEFAULT_DIM_IN = 32
DEFAULT_DIM_OUT = 16
DEFAULT_CONTEXT_WINDOW = 2
DEFAULT_PROVIDER_SEED = 13

# Hashed provider contextualization: row = SELF * base + CONTEXT * mean(neighbors)
CONTEXT_SELF_WEIGHT = 0.7
CONTEXT_NEIGHBOR_WEIGHT = 0.3

ROW_NORM_TOLERANCE = 1e-6
NORM_FLOOR = 1e-12


# ═══════════════════════════════════════════════════════════════════════════════
# RETRIEVAL
# ═══════════════════════════════════════════════════════════════════════════════

DEFAULT_DEPTH = 1000
HARD_NEGATIVE_POOL = 100            # top-100 ranking replaces the p- pool
RANDOM_NEGATIVE_POOL = 1000         # "top-1000" pool for the random baseline


# ═══════════════════════════════════════════════════════════════════════════════
# COLLECTIVE TEACHER
# ═══════════════════════════════════════════════════════════════════════════════

DEFAULT_F_P = 3                     # feedback passages
DEFAULT_F_C = 24                    # k-means clusters
DEFAULT_F_E = 10                    # centroids kept after IDF selection
DEFAULT_BETA = 1.0

KMEANS_TOL = 1e-6
KMEANS_MAX_ITERS = 50

DEFAULT_NEGATIVES_PER_QUERY = 8


# ═══════════════════════════════════════════════════════════════════════════════
# TRAINING
# ═══════════════════════════════════════════════════════════════════════════════

DEFAULT_LEARNING_RATE = 0.05
DEFAULT_EPOCHS = 20
DEFAULT_TRAIN_SEED = 7
DEFAULT_PRETRAIN_EPOCHS = 10
DEFAULT_INIT_SEED = 3

THETA_LABEL = "pretrained-theta"


# ═══════════════════════════════════════════════════════════════════════════════
# EVALUATION
# ═══════════════════════════════════════════════════════════════════════════════

DEFAULT_BINARY_CUTOFF = 2           # grade >= 2 counts as relevant
MAX_GRADE = 3
MRR_DEPTH = 10
NDCG_DEPTH = 10
RECALL_DEPTH = 1000
PLANTED_RECALL_DEPTH = 10
DEFAULT_MRT_REPETITIONS = 3

PR_CUTOFFS = (1, 2, 3)

# One-at-a-time sweep grid
SWEEP_GRID = {
    "f_p": (1, 3, 5),
    "f_c": (12, 24),
    "f_e": (5, 10),
    "beta": (0.5, 1.0),
}


# ═══════════════════════════════════════════════════════════════════════════════
# COMMAND LINE
# ═══════════════════════════════════════════════════════════════════════════════

class ExitCode:
    """Process exit codes"""
    OK = 0
    VALIDATION = 1       # bad config, missing inputs, malformed files
    RUNTIME = 2          # anything that fails after validation


DEFAULT_THREADS = 1
