"""Multi-task CNN ensemble for joint aspect category detection and polarity."""

__version__ = "0.1.0"

from .corpus import (  # noqa: E402
    Dataset,
    Review,
    SynthSpec,
    Vocabulary,
    build_vocabulary,
    encode,
    generate_synthetic,
    load_dataset,
    normalize_text,
    tokenize,
    transform_labels,
)
from .ensemble import EnsembleConfig, EnsembleModel, ensemble_predict, hard_vote, soft_vote, train_ensemble  # noqa: E402
from .metrics import EvalPair, decode_to_set, hamming_loss, jaccard_index, per_label_report  # noqa: E402
from .neuralnet import ModelConfig, ModelParams, forward, backward, grad_check, init_params  # noqa: E402
from .training import Checkpoint, TrainConfig, load_checkpoint, multitask_loss, predict, save_checkpoint, train  # noqa: E402
