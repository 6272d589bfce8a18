"""Top-down RST discourse parsing as a sequence of token-boundary splitting decisions."""

from .document import (Document, RelationLabel, generate_synthetic_corpus, load_corpus,
                       validate_document)
from .inference import (beam_parse_gold_edu, exhaustive_oracle, greedy_parse_e2e,
                        greedy_parse_gold_edu, parse_document)
from .metrics import evaluate, parseval, rst_parseval, segmentation_f1
from .model import E2E, GOLD_EDU, ModelConfig, ModelParams, encode, init_params
from .training import TrainConfig, train
from .tree import (DiscourseTree, SplitDecision, binarize, splits_to_tree, tree_to_splits_e2e,
                   tree_to_splits_edu)

__version__ = "0.1.0"
