"""
設定ファイル - アプリケーション全体の設定を一元管理（定数版）
"""

import os
from typing import List, Tuple
from dotenv import load_dotenv

# .envファイルから環境変数を読み込み
load_dotenv()

# ==============================================================================
# コーパス関連の設定
# ==============================================================================

# 特殊トークン（語彙の先頭3つのIDを占める）
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
SPECIAL_TOKENS = (BOS_TOKEN, EOS_TOKEN, UNK_TOKEN)
BOS_ID = 0
EOS_ID = 1
UNK_ID = 2
PAD_ID = -1  # ミニバッチのパディング位置（損失から除外）

# 語彙・文フィルタ
VOCAB_TOP_N = 10000
MAX_SENTENCE_LENGTH = 39
TOKEN_ALLOWED_PUNCTUATION = "-'"

# ==============================================================================
# 言語モデルのアーキテクチャ設定（フル規模）
# ==============================================================================

EMBED_DIM = 400
GRU_HIDDEN = 500
GRU_PROJECTION = 400
TRANSFORMER_HEADS = 8
TRANSFORMER_FFN_DIM = 1024
ALLOWED_LAYER_COUNTS = (1, 2, 4)
POSITION_ENCODING_BASE = 10000.0

# 初期化
EMBEDDING_INIT_RANGE = 0.1
ATTENTION_MASK_VALUE = -1e30

# チェックポイントファイル
CHECKPOINT_MAGIC = b"SRPLCKPT"
CHECKPOINT_FORMAT_VERSION = 1

# ==============================================================================
# 学習関連の設定
# ==============================================================================

INITIAL_LR_GRU = 0.02
INITIAL_LR_TRANSFORMER = 0.005
MOMENTUM = 0.9
EPOCHS = 2
BATCH_SIZE = 10
FULL_CHECKPOINT_LADDER = (1_000, 3_000, 10_000, 30_000, 100_000,
                           300_000, 1_000_000, 3_000_000)
FULL_SEEDS = (1, 2, 3, 4, 5, 6, 7, 8)

# ==============================================================================
# 読解データ関連の設定
# ==============================================================================

DATASET_KINDS = ("SPR", "ET", "EEG")
READING_TIME_MIN_MS = 50.0
READING_TIME_MAX_MS = 3500.0
READING_DATA_COLUMNS = ["dataset", "subject", "sentence_id", "position",
                        "word", "measure", "baseline", "artifact"]

# ==============================================================================
# 混合効果モデル関連の設定
# ==============================================================================

LMER_MAX_EVALUATIONS = 2000
LMER_TOLERANCE = 1e-8
LMER_LOG_THETA_BOUNDS = (-15.0, 5.0)
LMER_RESTARTS = 1
VIF_THRESHOLD = 15.0
CORRELATION_THRESHOLD = 0.9
CHI2_95_DF1 = 3.841458820694124

# ==============================================================================
# GAM関連の設定
# ==============================================================================

GAM_BASIS_SIZE = 10
GAM_CI_LEVEL = 0.95
GAM_GRID_SIZE = 200
GAM_LAMBDA_GRID: Tuple[float, float, int] = (-6.0, 6.0, 25)  # log10の範囲と点数
GAM_REFINE_POINTS = 11
GAM_MAX_CYCLES = 5

# ==============================================================================
# パイプライン関連の設定
# ==============================================================================

DEFAULT_OUTPUT_DIR = os.environ.get("SURPRISAL_OUTPUT_DIR", "output")
CONCURRENT_WORKERS = int(os.environ.get("SURPRISAL_JOBS", "1"))
DEFAULT_COMPARISON_PAIRS: List[Tuple[str, str]] = [
    ("gru1", "transformer2"),
    ("gru1", "gru2"),
    ("transformer1", "transformer2"),
]

# 終了コード
EXIT_SUCCESS = 0
EXIT_INPUT_ERROR = 1
EXIT_NUMERICAL_ERROR = 2

# ==============================================================================
# 合成データ生成の設定
# ==============================================================================

SYNTH_SUBJECTS_SPR = 24
SYNTH_SUBJECTS_ET = 16
SYNTH_SUBJECTS_EEG = 16
SYNTH_SURPRISAL_EFFECT = 0.15  # 従属変数のSD単位
SYNTH_NOISE_SD = 1.0
SYNTH_SUBJECT_SD = 0.3
SYNTH_ITEM_SD = 0.2
SYNTH_ARTIFACT_RATE = 0.05
SYNTH_SHARED_FRACTION = 205 / 361  # ET/EEG刺激文の割合

# ==============================================================================
# 表示・出力フォーマット設定
# ==============================================================================

JSON_INDENT_LEVEL = 2
DISPLAY_SEPARATOR_CHAR = "="
DISPLAY_SEPARATOR_LENGTH = 60
FIGURE_FORMAT = "svg"
FLOAT_FORMAT = "%.10g"
