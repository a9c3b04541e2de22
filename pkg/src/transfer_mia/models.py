"""Block-structured CNNs, supervised training and the two transfer procedures.

A block is the unit of freezing: two 3x3 convolutions, one batch norm and a
2x2 max-pool. ``residual`` blocks add a 1x1 projection shortcut around the
convolutions; ``vgg`` blocks are a plain stack. The head is global average
pooling followed by one linear layer.
"""

from __future__ import annotations

import contextlib
import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import LabeledDataset, LabeledSample

FAMILIES = ("residual", "vgg")
OPTIMIZERS = ("sgd", "adam")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    num_classes: int
    input_shape: tuple[int, int, int] = (32, 32, 3)
    num_blocks: int = 5
    width: int = 8

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unsupported family {self.family!r}; expected one of {FAMILIES}")
        if self.num_blocks < 1:
            raise ModelError(f"num_blocks must be >= 1, got {self.num_blocks}")
        if self.num_classes < 2:
            raise ModelError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))

    def channels(self) -> list[int]:
        return [self.width * 2 ** min(i, 3) for i in range(self.num_blocks)]

    def with_classes(self, num_classes: int) -> "ModelSpec":
        return ModelSpec(self.family, num_classes, self.input_shape, self.num_blocks, self.width)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.epochs < 0:
            raise ModelError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ModelError(f"optimizer must be one of {OPTIMIZERS}")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**asdict(self), **changes})

    def make_optimizer(self, params) -> torch.optim.Optimizer:
        if self.optimizer == "adam":
            return torch.optim.Adam(params, lr=self.learning_rate, weight_decay=self.weight_decay)
        return torch.optim.SGD(
            params, lr=self.learning_rate, momentum=self.momentum, weight_decay=self.weight_decay
        )


@dataclass(frozen=True)
class TransferMode:
    kind: str = "fine_tune"
    frozen_blocks: int = 0

    def __post_init__(self):
        if self.kind not in ("fine_tune", "feature_extractor"):
            raise ModelError(f"unknown transfer kind {self.kind!r}")
        if self.kind == "fine_tune" and self.frozen_blocks != 0:
            raise ModelError("fine_tune freezes no blocks")
        if self.frozen_blocks < 0:
            raise ModelError("frozen_blocks must be >= 0")

    @classmethod
    def feature_extractor(cls, k: int) -> "TransferMode":
        return cls("feature_extractor", k)


class Block(nn.Module):
    def __init__(self, family: str, c_in: int, c_out: int):
        super().__init__()
        self.residual = family == "residual"
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.bn = nn.BatchNorm2d(c_out)
        if self.residual:
            self.proj = nn.Conv2d(c_in, c_out, 1, bias=False)
        # ceil_mode keeps a 1x1 map at 1x1 for deep stacks on small inputs
        self.pool = nn.MaxPool2d(2, ceil_mode=True)

    def forward(self, x):
        h = self.bn(self.conv2(F.relu(self.conv1(x))))
        if self.residual:
            h = h + self.proj(x)
        return self.pool(F.relu(h))


class BlockedModel(nn.Module):
    """Classifier with ordered, freezable blocks and a replaceable head."""

    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        c_in = spec.input_shape[2]
        blocks = []
        for c_out in spec.channels():
            blocks.append(Block(spec.family, c_in, c_out))
            c_in = c_out
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Linear(c_in, spec.num_classes)
        self.training_log: list[dict] = []
        self.provenance: dict = {}
        self.trained = False

    def features(self, x):
        for block in self.blocks:
            x = block(x)
        return x.mean(dim=(2, 3))

    def forward(self, x):
        return self.head(self.features(x))

    def block_tensors(self, i: int) -> dict[str, torch.Tensor]:
        """Parameters and buffers of block ``i`` (1-based), keyed by layer/param."""
        return {k: v for k, v in self.blocks[i - 1].state_dict().items()}

    def named_tensors(self) -> dict[str, torch.Tensor]:
        """Checkpoint keys: ``block<i>/<layer>/<param>`` and ``head/<param>``."""
        out = {}
        for key, value in self.state_dict().items():
            parts = key.split(".")
            if parts[0] == "blocks":
                out[f"block{int(parts[1]) + 1}/" + "/".join(parts[2:])] = value
            else:
                out["/".join(parts)] = value
        return out


@contextlib.contextmanager
def _seeded(seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def build_model(spec: ModelSpec, seed: int) -> BlockedModel:
    with _seeded(seed):
        model = BlockedModel(spec)
    model.provenance = {"seed": seed, "built_from": asdict(spec)}
    return model.eval()


def _to_tensor(features: np.ndarray) -> torch.Tensor:
    # N x H x W x C -> N x C x H x W
    return torch.from_numpy(np.array(features, dtype=np.float32)).permute(0, 3, 1, 2)


def _check_shape(model: BlockedModel, shape: Sequence[int]):
    if tuple(shape) != model.spec.input_shape:
        raise ModelError(f"sample shape {tuple(shape)} does not match model input {model.spec.input_shape}")


def train(model: BlockedModel, data: LabeledDataset, cfg: TrainConfig, frozen_blocks: int = 0) -> BlockedModel:
    """Train a copy of ``model`` on ``data``; blocks 1..frozen_blocks stay untouched.

    Frozen blocks keep ``requires_grad=False`` and run in eval mode, so their
    batch-norm running statistics do not drift either.
    """
    if len(data) == 0:
        raise ModelError("cannot train on an empty dataset")
    if data.num_classes != model.spec.num_classes:
        raise ModelError(f"class-count mismatch: data has {data.num_classes}, model has {model.spec.num_classes}")
    if not 0 <= frozen_blocks <= model.spec.num_blocks:
        raise ModelError(f"frozen_blocks must lie in [0, {model.spec.num_blocks}], got {frozen_blocks}")
    _check_shape(model, data.sample_shape)

    model = copy.deepcopy(model)
    for i, block in enumerate(model.blocks):
        block.requires_grad_(i >= frozen_blocks)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = cfg.make_optimizer(params)

    x_all = _to_tensor(data.features)
    y_all = torch.from_numpy(np.array(data.labels))
    gen = torch.Generator().manual_seed(cfg.seed)
    log = []
    for epoch in range(cfg.epochs):
        model.train()
        for block in model.blocks[:frozen_blocks]:
            block.eval()
        order = torch.randperm(len(data), generator=gen)
        total_loss, correct = 0.0, 0
        for start in range(0, len(data), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = x_all[idx], y_all[idx]
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            total_loss += loss.item() * len(idx)
            correct += int((logits.argmax(1) == y).sum())
        log.append({"epoch": epoch + 1, "loss": total_loss / len(data), "accuracy": correct / len(data)})

    model.requires_grad_(True)
    model.eval()
    model.training_log = model.training_log + log
    model.trained = True
    model.provenance = {
        **model.provenance,
        "trained_on": data.name,
        "train_config": asdict(cfg),
        "frozen_blocks": frozen_blocks,
    }
    return model


def transfer(teacher: BlockedModel, student_data: LabeledDataset, mode: TransferMode, cfg: TrainConfig) -> BlockedModel:
    """Derive a student from ``teacher``: fresh head, then fine-tune or feature-extract.

    The head is re-initialized for ``student_data.num_classes`` (seeded by
    ``cfg.seed``) in both modes. ``feature_extractor`` keeps blocks 1..K of the
    teacher bit-identical.
    """
    if not teacher.trained:
        raise ModelError("teacher model is untrained")
    if len(student_data) == 0:
        raise ModelError("student dataset is empty")
    n = teacher.spec.num_blocks
    k = mode.frozen_blocks if mode.kind == "feature_extractor" else 0
    if not 0 <= k <= n:
        raise ModelError(f"invalid K={k}: frozen blocks must lie in [0, {n}]")

    student = copy.deepcopy(teacher)
    student.spec = teacher.spec.with_classes(student_data.num_classes)
    with _seeded(cfg.seed):
        student.head = nn.Linear(teacher.head.in_features, student_data.num_classes)
    student.training_log = []
    student.provenance = {"teacher": teacher.provenance, "transfer": asdict(mode)}
    return train(student, student_data, cfg, frozen_blocks=k)


def _stack(samples) -> np.ndarray:
    if isinstance(samples, LabeledDataset):
        return samples.features
    if isinstance(samples, np.ndarray):
        return samples if samples.ndim == 4 else samples[None]
    if isinstance(samples, LabeledSample):
        return samples.features[None]
    samples = list(samples)
    if not samples:
        return np.empty((0,), np.float32)
    shapes = {s.features.shape for s in samples}
    if len(shapes) != 1:
        raise ModelError(f"mixed sample shapes: {sorted(shapes)}")
    return np.stack([s.features for s in samples])


@torch.no_grad()
def predict_posteriors(model: BlockedModel, samples, batch_size: int = 256) -> np.ndarray:
    """Softmax posteriors, one float64 row per sample, in input order."""
    x = _stack(samples)
    if len(x) == 0:
        return np.empty((0, model.spec.num_classes))
    _check_shape(model, x.shape[1:])
    model.eval()
    out = []
    for start in range(0, len(x), batch_size):
        logits = model(_to_tensor(x[start:start + batch_size]))
        out.append(F.softmax(logits.double(), dim=1).numpy())
    return np.concatenate(out)


def accuracy(model: BlockedModel, data: LabeledDataset) -> float:
    return float((predict_posteriors(model, data).argmax(1) == data.labels).mean())


def blocks_equal(a: BlockedModel, b: BlockedModel, blocks: Iterable[int]) -> bool:
    """Bitwise comparison of the given (1-based) blocks' parameters and buffers."""
    for i in blocks:
        ta, tb = a.block_tensors(i), b.block_tensors(i)
        if ta.keys() != tb.keys() or not all(torch.equal(ta[k], tb[k]) for k in ta):
            return False
    return True


def save_checkpoint(model: BlockedModel, path: str | Path) -> None:
    """Write a safetensors archive; metadata lives in one JSON entry so the bytes are stable."""
    from safetensors.torch import save_file

    meta = {
        "spec": asdict(model.spec),
        "provenance": model.provenance,
        "training_log": model.training_log,
        "trained": model.trained,
    }
    tensors = {k: v.detach().contiguous().clone() for k, v in model.named_tensors().items()}
    save_file(tensors, str(path), metadata={"transfer_mia": json.dumps(meta, sort_keys=True, default=str)})


def load_checkpoint(path: str | Path) -> BlockedModel:
    from safetensors import safe_open

    with safe_open(str(path), framework="pt") as f:
        meta = json.loads((f.metadata() or {}).get("transfer_mia", "null"))
        tensors = {k: f.get_tensor(k) for k in f.keys()}
    if meta is None:
        raise ModelError(f"{path}: not a transfer_mia checkpoint")
    model = BlockedModel(ModelSpec(**meta["spec"]))
    state = {}
    for key, value in tensors.items():
        parts = key.split("/")
        if parts[0].startswith("block"):
            state[".".join(["blocks", str(int(parts[0][5:]) - 1), *parts[1:]])] = value
        else:
            state[".".join(parts)] = value
    model.load_state_dict(state)
    model.provenance = meta["provenance"]
    model.training_log = meta["training_log"]
    model.trained = meta["trained"]
    return model.eval()
