"""Membership inference against teacher/student transfer-learning pipelines."""

from .attack import AttackModel, infer_membership, score, train_attack_model
from .data import LabeledDataset, LabeledSample, SplitBundle, load_dataset, split_dataset
from .models import (
    BlockedModel,
    ModelSpec,
    TrainConfig,
    TransferMode,
    build_model,
    predict_posteriors,
    train,
    transfer,
)
from .shadow import (
    AttackDataset,
    AttackRecord,
    ShadowPlan,
    build_attack_dataset,
    prepare_attack1,
    prepare_attack2,
    prepare_attack3,
)

__version__ = "0.1.0"
