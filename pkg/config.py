# --- FILE: config.py ---

import os
from dotenv import load_dotenv

load_dotenv()

## -- Path Configuration --
# Get the absolute path of the directory where the project is located.
BASE_DIR = os.path.dirname(os.path.abspath(__file__))
OUTPUT_DIR = os.getenv('ACTIVECLR_OUTPUT_DIR', os.path.join(BASE_DIR, 'runs'))

# Sub-directories created inside every run output directory
LOGS_SUBDIR = 'logs'
TRACES_SUBDIR = 'traces'
CHECKPOINTS_SUBDIR = 'checkpoints'
CONFIG_ECHO_FILE = 'config.txt'


## -- Logging --
LOG_LEVEL = os.getenv('ACTIVECLR_LOG_LEVEL', 'INFO').upper()
SHOW_PROGRESS = os.getenv('ACTIVECLR_PROGRESS', '0') == '1'


## -- Published Hyperparameters --
TEMPERATURE = 0.1
CONTRASTIVE_LR = 1e-4
PROXY_LR = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_SIZE = 128
POSITIVE_FRACTION = 0.14317
NEGATIVE_SUBCLUSTERS = 8
CANDIDATE_CAP = 10000
DECISION_THRESHOLD = 0.5

# Row norms at or below this are treated as degenerate by the normalizer
NORM_EPS = 1e-12

# Starting bias of every projection-head layer; nonzero keeps z off the origin
HEAD_BIAS_INIT = 0.01


## -- Profiles --
# Key paths mirror the RunConfig layout (see experiment_config.py).
PROFILES = {
    'desk': {
        'dataset': {'pool_size': 2000, 'patch_side': 8},
        'split': {'labeled_size': 200, 'test_size': 500},
        'encoder': {'hidden_dims': [128, 128], 'feature_dim': 64, 'head_dims': [64, 64, 32]},
        'contrastive': {'batch_size': 64, 'epochs': 30, 'learning_rate': 1e-3},
        'proxy': {'epochs': 40, 'learning_rate': 1e-2, 'batch_size': 32},
        'loop': {'budget': 100, 'iterations': 10, 'candidate_cap': CANDIDATE_CAP},
        'benchmark': {'contrastive_epochs': 30, 'proxy_epochs': 200, 'eval_interval': 20},
    },
    'published': {
        'dataset': {'pool_size': 107180, 'patch_side': 8},
        'split': {'labeled_size': 1000, 'test_size': 7180},
        'encoder': {'hidden_dims': [128, 128], 'feature_dim': 128, 'head_dims': [128, 128, 128]},
        'contrastive': {'batch_size': BATCH_SIZE, 'epochs': 100, 'learning_rate': CONTRASTIVE_LR},
        'proxy': {'epochs': 40, 'learning_rate': PROXY_LR, 'batch_size': BATCH_SIZE},
        'loop': {'budget': 1000, 'iterations': 20, 'candidate_cap': CANDIDATE_CAP},
        'benchmark': {'contrastive_epochs': 100, 'proxy_epochs': 200, 'eval_interval': 20},
    },
}
DEFAULT_PROFILE = 'desk'
