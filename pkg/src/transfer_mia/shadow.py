"""Shadow-model training and attack-dataset assembly for the three attack surfaces.

attack1
    query the teacher, infer membership in the teacher's training data.
attack2
    query a student, infer membership in the *teacher's* training data.
attack3
    query a student, infer membership in the student's own training data.

In every case the attack model is trained on records from adversary-side
shadow models (shadow partitions) and evaluated on records from the victim
models (target partitions), so the two record sets never share an id.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .data import LabeledDataset, SplitBundle, chunk, split_dataset
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

ATTACK_KINDS = ("attack1", "attack2", "attack3")
DEFAULT_FEATURE_K = 3


class ShadowError(ValueError):
    pass


@dataclass(frozen=True)
class AttackRecord:
    features: np.ndarray
    membership: int
    source_id: str


@dataclass(frozen=True, eq=False)
class AttackDataset:
    features: np.ndarray
    labels: np.ndarray
    source_ids: tuple[str, ...]
    attack_kind: str
    feature_k: int
    degenerate: bool = False

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64).reshape(-1, self.feature_k)
        labels = np.asarray(self.labels, dtype=np.int64)
        if self.attack_kind not in ATTACK_KINDS:
            raise ShadowError(f"unknown attack kind {self.attack_kind!r}")
        if len(features) != len(labels) or len(labels) != len(self.source_ids):
            raise ShadowError("features, labels and source ids differ in length")
        if not np.isin(labels, (0, 1)).all():
            raise ShadowError("membership labels must be 0 or 1")
        if not self.degenerate and len(np.unique(labels)) < 2:
            raise ShadowError("attack dataset lacks members or non-members; flag it degenerate if intended")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "source_ids", tuple(str(s) for s in self.source_ids))

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[AttackRecord]:
        for f, y, sid in zip(self.features, self.labels, self.source_ids):
            yield AttackRecord(f, int(y), sid)

    @property
    def records(self) -> list[AttackRecord]:
        return list(self)

    @property
    def n_members(self) -> int:
        return int(self.labels.sum())


def top_k_features(posteriors: np.ndarray, k: int) -> np.ndarray:
    """Largest ``k`` entries of each posterior row, descending, zero-padded to ``k``."""
    if k < 1:
        raise ShadowError(f"feature_k must be >= 1, got {k}")
    p = np.atleast_2d(np.asarray(posteriors, dtype=np.float64))
    top = -np.sort(-p, axis=1)[:, :k]
    if top.shape[1] < k:
        top = np.pad(top, ((0, 0), (0, k - top.shape[1])))
    return top


def build_attack_dataset(
    model: BlockedModel, members: LabeledDataset, nonmembers: LabeledDataset, k: int, kind: str
) -> AttackDataset:
    if len(members) == 0 or len(nonmembers) == 0:
        raise ShadowError("degenerate ground truth: members and non-members must both be non-empty")
    feats = top_k_features(predict_posteriors(model, members), k)
    feats_out = top_k_features(predict_posteriors(model, nonmembers), k)
    return AttackDataset(
        features=np.concatenate([feats, feats_out]),
        labels=np.r_[np.ones(len(members), np.int64), np.zeros(len(nonmembers), np.int64)],
        source_ids=members.ids + nonmembers.ids,
        attack_kind=kind,
        feature_k=k,
    )


def pool(datasets: list[AttackDataset]) -> AttackDataset:
    if not datasets:
        raise ShadowError("nothing to pool")
    kinds = {d.attack_kind for d in datasets}
    ks = {d.feature_k for d in datasets}
    if len(kinds) != 1 or len(ks) != 1:
        raise ShadowError("cannot pool attack datasets of different kinds or feature lengths")
    return AttackDataset(
        features=np.concatenate([d.features for d in datasets]),
        labels=np.concatenate([d.labels for d in datasets]),
        source_ids=sum((d.source_ids for d in datasets), ()),
        attack_kind=kinds.pop(),
        feature_k=ks.pop(),
    )


def check_no_leakage(train_set: AttackDataset, evaluation: AttackDataset) -> None:
    shared = set(train_set.source_ids) & set(evaluation.source_ids)
    if shared:
        raise ShadowError(f"ground-truth leakage: {len(shared)} ids in both attack training and evaluation")


@dataclass(frozen=True)
class ShadowPlan:
    """What the adversary trains, and how the victim's models are built.

    ``target_spec`` defaults to ``shadow_spec`` (matched architectures).
    Victim models are seeded from ``train_cfg.seed``; shadow model ``i`` from
    ``shadow_seed + i``.
    """

    shadow_spec: ModelSpec
    train_cfg: TrainConfig = TrainConfig()
    transfer_mode: TransferMode = TransferMode()
    num_shadow_models: int = 1
    feature_k: int = DEFAULT_FEATURE_K
    shadow_seed: int = 1
    target_spec: ModelSpec | None = None

    def __post_init__(self):
        if self.num_shadow_models < 1:
            raise ShadowError("num_shadow_models must be >= 1")
        if self.feature_k < 1:
            raise ShadowError("feature_k must be >= 1")

    @property
    def target(self) -> ModelSpec:
        return self.target_spec or self.shadow_spec

    def shadow_cfg(self, i: int) -> TrainConfig:
        return self.train_cfg.replace(seed=self.shadow_seed + i)


@dataclass
class AttackPreparation:
    """Attack-training records, evaluation records and every model trained on the way."""

    train: AttackDataset
    evaluation: AttackDataset
    models: dict[str, BlockedModel] = field(default_factory=dict)

    def __iter__(self):
        # unpacks as (train, evaluation)
        return iter((self.train, self.evaluation))


def train_teacher(data: LabeledDataset, spec: ModelSpec, cfg: TrainConfig) -> BlockedModel:
    """Build ``spec`` for ``data``'s label space and train it from scratch, seeded by ``cfg.seed``."""
    spec = replace(spec.with_classes(data.num_classes), input_shape=data.sample_shape)
    return train(build_model(spec, cfg.seed), data, cfg)


def _same_architecture(a: ModelSpec, b: ModelSpec) -> bool:
    # input shape and label space follow the data, not the adversary's choice
    return (a.family, a.num_blocks, a.width) == (b.family, b.num_blocks, b.width)


def _shadow_parts(bundle: SplitBundle, m: int):
    return list(zip(chunk(bundle.shadow_train, m), chunk(bundle.shadow_test, m)))


def prepare_attack1(
    bundle_teacher: SplitBundle, plan: ShadowPlan, target_teacher: BlockedModel | None = None
) -> AttackPreparation:
    models = {}
    if target_teacher is None:
        target_teacher = train_teacher(bundle_teacher.target_train, plan.target, plan.train_cfg)
    models["target_teacher"] = target_teacher

    parts = []
    for i, (members, nonmembers) in enumerate(_shadow_parts(bundle_teacher, plan.num_shadow_models)):
        shadow_teacher = train_teacher(members, plan.shadow_spec, plan.shadow_cfg(i))
        models[f"shadow_teacher_{i}"] = shadow_teacher
        parts.append(build_attack_dataset(shadow_teacher, members, nonmembers, plan.feature_k, "attack1"))

    evaluation = build_attack_dataset(
        target_teacher, bundle_teacher.target_train, bundle_teacher.target_test, plan.feature_k, "attack1"
    )
    prep = AttackPreparation(pool(parts), evaluation, models)
    check_no_leakage(prep.train, prep.evaluation)
    return prep


def prepare_attack2(
    bundle_teacher: SplitBundle,
    student_data: LabeledDataset | SplitBundle,
    plan: ShadowPlan,
    target_teacher: BlockedModel | None = None,
    target_student: BlockedModel | None = None,
    shadow_teachers: list[BlockedModel] | None = None,
) -> AttackPreparation:
    """Students are trained on the student corpus's train partitions (target / shadow);
    the membership question is about the teacher corpus.

    ``shadow_teachers`` lets callers reuse shadow teachers already trained on
    the same shadow parts (e.g. by :func:`prepare_attack1` with the same plan).
    """
    student_bundle = (
        student_data if isinstance(student_data, SplitBundle) else split_dataset(student_data, bundle_teacher.seed)
    )
    models = {}
    if target_student is None:
        if target_teacher is None:
            target_teacher = train_teacher(bundle_teacher.target_train, plan.target, plan.train_cfg)
        target_student = transfer(target_teacher, student_bundle.target_train, plan.transfer_mode, plan.train_cfg)
    if target_teacher is not None:
        models["target_teacher"] = target_teacher
    models["target_student"] = target_student

    m = plan.num_shadow_models
    parts = []
    for i, ((members, nonmembers), student_part) in enumerate(
        zip(_shadow_parts(bundle_teacher, m), chunk(student_bundle.shadow_train, m))
    ):
        if shadow_teachers is not None:
            shadow_teacher = shadow_teachers[i]
        else:
            shadow_teacher = train_teacher(members, plan.shadow_spec, plan.shadow_cfg(i))
        shadow_student = transfer(shadow_teacher, student_part, plan.transfer_mode, plan.shadow_cfg(i))
        models[f"shadow_teacher_{i}"] = shadow_teacher
        models[f"shadow_student_{i}"] = shadow_student
        parts.append(build_attack_dataset(shadow_student, members, nonmembers, plan.feature_k, "attack2"))

    evaluation = build_attack_dataset(
        target_student, bundle_teacher.target_train, bundle_teacher.target_test, plan.feature_k, "attack2"
    )
    prep = AttackPreparation(pool(parts), evaluation, models)
    check_no_leakage(prep.train, prep.evaluation)
    return prep


def prepare_attack3(
    teacher: BlockedModel,
    bundle_student: SplitBundle,
    plan: ShadowPlan,
    target_student: BlockedModel | None = None,
    shadow_teacher: BlockedModel | None = None,
) -> AttackPreparation:
    """The published ``teacher`` seeds both shadow and target students.

    When ``plan.shadow_spec`` describes a different architecture than the
    teacher, the adversary cannot reuse it and must supply ``shadow_teacher``
    (its own model of ``shadow_spec``'s architecture).
    """
    if shadow_teacher is None:
        if not _same_architecture(plan.shadow_spec, teacher.spec):
            raise ShadowError("shadow_spec differs from the teacher architecture; pass an adversary shadow_teacher")
        shadow_teacher = teacher
    models = {"teacher": teacher}
    if shadow_teacher is not teacher:
        models["shadow_teacher"] = shadow_teacher
    if target_student is None:
        target_student = transfer(teacher, bundle_student.target_train, plan.transfer_mode, plan.train_cfg)
    models["target_student"] = target_student

    parts = []
    for i, (members, nonmembers) in enumerate(_shadow_parts(bundle_student, plan.num_shadow_models)):
        shadow_student = transfer(shadow_teacher, members, plan.transfer_mode, plan.shadow_cfg(i))
        models[f"shadow_student_{i}"] = shadow_student
        parts.append(build_attack_dataset(shadow_student, members, nonmembers, plan.feature_k, "attack3"))

    evaluation = build_attack_dataset(
        target_student, bundle_student.target_train, bundle_student.target_test, plan.feature_k, "attack3"
    )
    prep = AttackPreparation(pool(parts), evaluation, models)
    check_no_leakage(prep.train, prep.evaluation)
    return prep


def save_attack_dataset(data: AttackDataset, path: str | Path) -> None:
    """Columnar text: a ``#`` header line naming kind and k, then ``source_id,label,f1..fk``."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# attack_kind={data.attack_kind} feature_k={data.feature_k}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source_id", "label", *(f"f{j + 1}" for j in range(data.feature_k))])
        for rec in data:
            writer.writerow([rec.source_id, rec.membership, *(repr(float(v)) for v in rec.features)])


def load_attack_dataset(path: str | Path) -> AttackDataset:
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ShadowError(f"{path}: missing attack dataset header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        rows = list(csv.reader(fh))[1:]
    k = int(meta["feature_k"])
    return AttackDataset(
        features=np.array([[float(v) for v in r[2:]] for r in rows]).reshape(-1, k),
        labels=np.array([int(r[1]) for r in rows], dtype=np.int64),
        source_ids=tuple(r[0] for r in rows),
        attack_kind=meta["attack_kind"],
        feature_k=k,
        degenerate=len({r[1] for r in rows}) < 2,
    )
