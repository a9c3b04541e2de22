"""The membership classifier: posterior features in, member score out."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .models import BlockedModel, TrainConfig, predict_posteriors
from .shadow import AttackDataset, top_k_features

# Attack models see confidence vectors whose informative range is squeezed
# against 1.0; Adam copes with that scale where plain SGD at lr 1e-3 stalls.
DEFAULT_ATTACK_CONFIG = TrainConfig(epochs=50, learning_rate=0.001, batch_size=32, optimizer="adam")


class AttackError(ValueError):
    pass


class _Net(nn.Module):
    def __init__(self, input_dim: int, hidden_width: int):
        super().__init__()
        self.hidden = nn.Linear(input_dim, hidden_width)
        self.out = nn.Linear(hidden_width, 1)

    def forward(self, x):
        # log-confidence spreads the near-1 region where members and non-members differ
        x = torch.log(x.clamp_min(1e-12))
        return self.out(F.relu(self.hidden(x))).squeeze(-1)


@dataclass(eq=False)
class AttackModel:
    input_dim: int
    net: _Net
    threshold: float = 0.5
    hidden_width: int = 64
    provenance: dict | None = None

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise AttackError(f"threshold must lie in (0, 1), got {self.threshold}")

    @torch.no_grad()
    def scores(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise AttackError(f"expected feature vectors of length {self.input_dim}, got shape {x.shape}")
        self.net.eval()
        return torch.sigmoid(self.net(torch.tensor(x, dtype=torch.float32)).double()).numpy()

    def decide(self, scores) -> np.ndarray:
        # ties go to member
        return (np.asarray(scores) >= self.threshold).astype(np.int64)


def train_attack_model(
    data: AttackDataset, cfg: TrainConfig = DEFAULT_ATTACK_CONFIG, hidden_width: int = 64, threshold: float = 0.5
) -> AttackModel:
    labels = np.asarray(data.labels)
    if len(labels) == 0 or len(np.unique(labels)) < 2:
        raise AttackError("degenerate labels: attack training needs both members and non-members")
    if data.features.ndim != 2 or data.features.shape[1] != data.feature_k:
        raise AttackError("inconsistent feature lengths in attack dataset")

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        net = _Net(data.feature_k, hidden_width)
    optimizer = cfg.make_optimizer(net.parameters())
    x_all = torch.from_numpy(np.array(data.features, dtype=np.float32))
    y_all = torch.from_numpy(labels.astype(np.float32))
    gen = torch.Generator().manual_seed(cfg.seed)
    net.train()
    for _ in range(cfg.epochs):
        order = torch.randperm(len(y_all), generator=gen)
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss = F.binary_cross_entropy_with_logits(net(x_all[idx]), y_all[idx])
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
    net.eval()
    return AttackModel(
        input_dim=data.feature_k,
        net=net,
        threshold=threshold,
        hidden_width=hidden_width,
        provenance={"attack_kind": data.attack_kind, "n_records": len(labels), "train_config": asdict(cfg)},
    )


def score(attack_model: AttackModel, features) -> float:
    """Member score in [0, 1] for a single feature vector."""
    vec = np.asarray(features, dtype=np.float64)
    if vec.ndim != 1:
        raise AttackError("score takes one feature vector; use AttackModel.scores for batches")
    return float(attack_model.scores(vec[None])[0])


def infer_membership(attack_model: AttackModel, target_model: BlockedModel, sample, k: int | None = None):
    """Query ``target_model`` and classify.

    ``sample`` may be one LabeledSample or a batch (dataset / list); a single
    sample yields ``(score, decision)``, a batch yields arrays.
    """
    k = attack_model.input_dim if k is None else k
    if k != attack_model.input_dim:
        raise AttackError(f"k={k} does not match attack input_dim={attack_model.input_dim}")
    posteriors = predict_posteriors(target_model, sample)
    scores = attack_model.scores(top_k_features(posteriors, k))
    decisions = attack_model.decide(scores)
    if hasattr(sample, "label") and hasattr(sample, "features"):
        return float(scores[0]), int(decisions[0])
    return scores, decisions


def save_attack_model(model: AttackModel, path: str | Path) -> None:
    from safetensors.torch import save_file

    tensors = {f"attack/{k.replace('.', '/')}": v.detach().contiguous().clone() for k, v in model.net.state_dict().items()}
    meta = {
        "input_dim": model.input_dim,
        "hidden_width": model.hidden_width,
        "threshold": model.threshold,
        "provenance": model.provenance or {},
    }
    save_file(tensors, str(path), metadata={"transfer_mia": json.dumps(meta, sort_keys=True)})


def load_attack_model(path: str | Path) -> AttackModel:
    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as f:
        meta = json.loads((f.metadata() or {}).get("transfer_mia", "null"))
        state = {k.removeprefix("attack/").replace("/", "."): f.get_tensor(k) for k in f.keys()}
    if not isinstance(meta, dict) or "input_dim" not in meta:
        raise AttackError(f"{path}: not an attack model checkpoint")
    net = _Net(meta["input_dim"], meta["hidden_width"])
    net.load_state_dict(state)
    net.eval()
    return AttackModel(meta["input_dim"], net, meta["threshold"], meta["hidden_width"], meta["provenance"])
