"""Experiment suites: attack effectiveness (q1), frozen-block sweep (q2) and
shadow/target architecture mismatch (q3)."""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Callable, Iterable, Sequence

from ..attack import AttackModel, train_attack_model
from ..data import LabeledDataset, SplitBundle, split_dataset
from ..models import BlockedModel, ModelSpec, TrainConfig, TransferMode, accuracy, blocks_equal
from ..shadow import (
    AttackPreparation,
    ShadowPlan,
    prepare_attack1,
    prepare_attack2,
    prepare_attack3,
    train_teacher,
)
from .metrics import MetricsReport, compute_metrics

EXPERIMENTS = ("q1", "q2", "q3", "attack1", "attack2", "attack3")


class ExperimentError(ValueError):
    pass


def fingerprint(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass(frozen=True)
class SweepResult:
    frozen_blocks: int
    report: MetricsReport
    blocks_identical: bool = True

    def as_dict(self) -> dict:
        return {"frozen_blocks": self.frozen_blocks, "report": self.report.as_dict(),
                "blocks_identical": self.blocks_identical}


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    reports: dict[str, MetricsReport] = field(default_factory=dict)
    sweeps: dict[str, list[SweepResult]] = field(default_factory=dict)
    model_stats: dict[str, dict] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    # transient: not serialized
    models: dict[str, BlockedModel] = field(default_factory=dict, repr=False)
    attack_models: dict[str, AttackModel] = field(default_factory=dict, repr=False)
    preparations: dict[str, AttackPreparation] = field(default_factory=dict, repr=False)

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.config)

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "fingerprint": self.fingerprint,
            "config": self.config,
            "reports": {k: r.as_dict() for k, r in sorted(self.reports.items())},
            "sweeps": {k: [s.as_dict() for s in v] for k, v in sorted(self.sweeps.items())},
            "model_stats": dict(sorted(self.model_stats.items())),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentResult":
        try:
            result = cls(
                experiment=doc["experiment"],
                config=doc["config"],
                reports={k: MetricsReport(**v) for k, v in doc.get("reports", {}).items()},
                sweeps={
                    k: [SweepResult(s["frozen_blocks"], MetricsReport(**s["report"]), s.get("blocks_identical", True))
                        for s in v]
                    for k, v in doc.get("sweeps", {}).items()
                },
                model_stats=doc.get("model_stats", {}),
                provenance=doc.get("provenance", {}),
            )
        except (KeyError, TypeError) as exc:
            raise ExperimentError(f"corrupt result: {exc}") from None
        if "fingerprint" in doc and doc["fingerprint"] != result.fingerprint:
            raise ExperimentError("corrupt result: fingerprint does not match the stored config")
        return result


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def evaluate_preparation(
    prep: AttackPreparation, attack_cfg: TrainConfig, hidden_width: int = 64, threshold: float = 0.5
) -> tuple[MetricsReport, AttackModel]:
    """Train the attack model on the shadow records and score the victim records."""
    attack_model = train_attack_model(prep.train, attack_cfg, hidden_width=hidden_width, threshold=threshold)
    scores = attack_model.scores(prep.evaluation.features)
    return compute_metrics(scores, prep.evaluation.labels, threshold), attack_model


def _default_config(**parts) -> dict:
    out = {}
    for key, value in parts.items():
        if isinstance(value, LabeledDataset):
            value = {"name": value.name, "n": len(value)}
        elif isinstance(value, (list, tuple)) and value and isinstance(value[0], LabeledDataset):
            value = [{"name": d.name, "n": len(d)} for d in value]
        elif hasattr(value, "__dataclass_fields__"):
            value = asdict(value)
        out[key] = value
    return json.loads(json.dumps(out, default=str))  # tuples become lists, as after a round trip


def _stats(model: BlockedModel, train_part: LabeledDataset, test_part: LabeledDataset) -> dict:
    tr, te = accuracy(model, train_part), accuracy(model, test_part)
    return {"train_accuracy": tr, "test_accuracy": te, "gap": tr - te}


class _Run:
    """Shared bookkeeping for one experiment invocation."""

    def __init__(self, experiment: str, config: dict, attack_cfg: TrainConfig, hidden_width: int, threshold: float):
        self.result = ExperimentResult(experiment, config)
        self.attack_cfg = attack_cfg
        self.hidden_width = hidden_width
        self.threshold = threshold
        self.started = time.perf_counter()
        self.result.provenance["started_utc"] = datetime.now(timezone.utc).isoformat()

    def evaluate(self, key: str, prep: AttackPreparation) -> MetricsReport:
        report, attack_model = evaluate_preparation(prep, self.attack_cfg, self.hidden_width, self.threshold)
        return self.record(key, prep, report, attack_model)

    def record(self, key, prep, report, attack_model):
        self.result.reports[key] = report
        self.result.attack_models[key] = attack_model
        self.result.preparations[key] = prep
        known = list(self.result.models.values())
        for role, model in prep.models.items():
            if not any(model is m for m in known):
                self.result.models[f"{key}/{role}"] = model
        return report

    def finish(self, **provenance) -> ExperimentResult:
        self.result.provenance.update(provenance)
        self.result.provenance["wall_clock_seconds"] = round(time.perf_counter() - self.started, 3)
        self.result.provenance["attack_seed"] = self.attack_cfg.seed
        return self.result


def run_q1(
    teacher_corpus: LabeledDataset,
    student_corpora: Sequence[LabeledDataset],
    plan: ShadowPlan,
    cfg: TrainConfig,
    data_seed: int = 0,
    attacks: Iterable[str] = ("attack1", "attack2", "attack3"),
    transfer_mode: TransferMode = TransferMode("fine_tune"),
    workers: int = 1,
    hidden_width: int = 64,
    threshold: float = 0.5,
    config: dict | None = None,
) -> ExperimentResult:
    """All three attacks against fine-tuned students; one report per (attack, corpus).

    ``cfg`` trains the attack models. Report keys are ``attack1/<teacher>`` and
    ``attack2/<student>``, ``attack3/<student>`` per student corpus. Pass a
    subset of ``attacks`` (and optionally another ``transfer_mode``) to run
    single attacks.
    """
    attacks = tuple(attacks)
    unknown = set(attacks) - {"attack1", "attack2", "attack3"}
    if unknown:
        raise ExperimentError(f"unknown attacks {sorted(unknown)}")
    plan = replace(plan, transfer_mode=transfer_mode)
    config = config or _default_config(teacher=teacher_corpus, students=list(student_corpora), plan=plan,
                                       attack_cfg=cfg, data_seed=data_seed, attacks=list(attacks))
    run = _Run("q1" if len(attacks) == 3 else "+".join(attacks), config, cfg, hidden_width, threshold)
    tb = split_dataset(teacher_corpus, data_seed)

    # attack1's shadow teachers are exactly the ones attack2 needs (same data, spec, seeds)
    p1 = prepare_attack1(tb, plan)
    teacher = p1.models["target_teacher"]
    shadow_teachers = [p1.models[f"shadow_teacher_{i}"] for i in range(plan.num_shadow_models)]
    run.result.model_stats[f"{teacher_corpus.name}/target_teacher"] = _stats(teacher, tb.target_train, tb.target_test)
    if "attack1" in attacks:
        run.evaluate(f"attack1/{teacher_corpus.name}", p1)
    else:
        run.result.models[f"{teacher_corpus.name}/target_teacher"] = teacher

    def per_corpus(corpus: LabeledDataset):
        sb = split_dataset(corpus, data_seed)
        out = {}
        p3 = prepare_attack3(teacher, sb, plan)
        student = p3.models["target_student"]
        out["stats"] = _stats(student, sb.target_train, sb.target_test)
        if "attack3" in attacks:
            out["attack3"] = (p3, *evaluate_preparation(p3, cfg, hidden_width, threshold))
        if "attack2" in attacks:
            p2 = prepare_attack2(tb, sb, plan, target_teacher=teacher, target_student=student,
                                 shadow_teachers=shadow_teachers)
            out["attack2"] = (p2, *evaluate_preparation(p2, cfg, hidden_width, threshold))
        return out

    if {"attack2", "attack3"} & set(attacks):
        outcomes = _map(per_corpus, list(student_corpora), workers)
        for corpus, out in zip(student_corpora, outcomes):
            run.result.model_stats[f"{corpus.name}/target_student"] = out["stats"]
            for kind in ("attack3", "attack2"):
                if kind in out:
                    prep, report, attack_model = out[kind]
                    run.record(f"{kind}/{corpus.name}", prep, report, attack_model)
    return run.finish(data_seed=data_seed, target_seed=plan.train_cfg.seed, shadow_seed=plan.shadow_seed)


def run_q2_frozen_sweep(
    teacher: BlockedModel,
    student_bundle: SplitBundle,
    plan: ShadowPlan,
    cfg: TrainConfig,
    ks: Iterable[int] | None = None,
    workers: int = 1,
    hidden_width: int = 64,
    threshold: float = 0.5,
) -> list[SweepResult]:
    """Attack-3 against feature-extractor students for each frozen-block count K."""
    n = teacher.spec.num_blocks
    ks = sorted(range(1, n + 1) if ks is None else set(ks))
    bad = [k for k in ks if not 1 <= k <= n]
    if bad:
        raise ExperimentError(f"sweep domain is [1, {n}]; got K={bad}")

    def point(k: int) -> SweepResult:
        plan_k = replace(plan, transfer_mode=TransferMode.feature_extractor(k))
        prep = prepare_attack3(teacher, student_bundle, plan_k)
        report, _ = evaluate_preparation(prep, cfg, hidden_width, threshold)
        identical = blocks_equal(teacher, prep.models["target_student"], range(1, k + 1))
        return SweepResult(k, report, identical)

    return _map(point, ks, workers)


def run_q2(
    teacher_corpus: LabeledDataset,
    student_corpus: LabeledDataset,
    plan: ShadowPlan,
    cfg: TrainConfig,
    data_seed: int = 0,
    workers: int = 1,
    hidden_width: int = 64,
    threshold: float = 0.5,
    config: dict | None = None,
) -> ExperimentResult:
    """Train the teacher on the teacher corpus, then sweep K on one student corpus."""
    config = config or _default_config(teacher=teacher_corpus, students=[student_corpus], plan=plan,
                                       attack_cfg=cfg, data_seed=data_seed)
    run = _Run("q2", config, cfg, hidden_width, threshold)
    tb = split_dataset(teacher_corpus, data_seed)
    teacher = train_teacher(tb.target_train, plan.target, plan.train_cfg)
    run.result.models[f"{teacher_corpus.name}/target_teacher"] = teacher
    run.result.model_stats[f"{teacher_corpus.name}/target_teacher"] = _stats(teacher, tb.target_train, tb.target_test)
    sb = split_dataset(student_corpus, data_seed)
    run.result.sweeps[student_corpus.name] = run_q2_frozen_sweep(
        teacher, sb, plan, cfg, workers=workers, hidden_width=hidden_width, threshold=threshold
    )
    return run.finish(data_seed=data_seed, target_seed=plan.train_cfg.seed, shadow_seed=plan.shadow_seed)


def run_q3_transfer_attack(
    shadow_spec: ModelSpec,
    target_spec: ModelSpec,
    teacher_corpus: LabeledDataset,
    student_corpora: Sequence[LabeledDataset],
    plan: ShadowPlan,
    cfg: TrainConfig,
    data_seed: int = 0,
    workers: int = 1,
    hidden_width: int = 64,
    threshold: float = 0.5,
    config: dict | None = None,
) -> ExperimentResult:
    """Attack-3 when the adversary's architecture differs from the victim's.

    The adversary trains its own ``shadow_spec`` teacher on the teacher
    corpus's shadow half and derives shadow students from it; victims use
    ``target_spec`` throughout. Keys ``transfer/<corpus>`` hold the mismatched
    reports, ``matched/<corpus>`` the same-architecture control.
    """
    if shadow_spec.family == target_spec.family:
        raise ExperimentError("q3 needs different shadow and target families")
    config = config or _default_config(teacher=teacher_corpus, students=list(student_corpora), plan=plan,
                                       shadow_spec=shadow_spec, target_spec=target_spec, attack_cfg=cfg,
                                       data_seed=data_seed)
    run = _Run("q3", config, cfg, hidden_width, threshold)
    matched_plan = replace(plan, shadow_spec=target_spec, target_spec=target_spec)
    mismatched_plan = replace(plan, shadow_spec=shadow_spec, target_spec=target_spec)

    tb = split_dataset(teacher_corpus, data_seed)
    teacher = train_teacher(tb.target_train, target_spec, plan.train_cfg)
    shadow_teacher = train_teacher(tb.shadow_train, shadow_spec, plan.shadow_cfg(0))
    run.result.model_stats[f"{teacher_corpus.name}/target_teacher"] = _stats(teacher, tb.target_train, tb.target_test)
    run.result.model_stats[f"{teacher_corpus.name}/shadow_teacher"] = _stats(
        shadow_teacher, tb.shadow_train, tb.shadow_test)

    def per_corpus(corpus: LabeledDataset):
        sb = split_dataset(corpus, data_seed)
        matched = prepare_attack3(teacher, sb, matched_plan)
        mismatched = prepare_attack3(teacher, sb, mismatched_plan,
                                     target_student=matched.models["target_student"], shadow_teacher=shadow_teacher)
        return (
            (matched, *evaluate_preparation(matched, cfg, hidden_width, threshold)),
            (mismatched, *evaluate_preparation(mismatched, cfg, hidden_width, threshold)),
        )

    for corpus, (m, mm) in zip(student_corpora, _map(per_corpus, list(student_corpora), workers)):
        run.record(f"matched/{corpus.name}", *m)
        run.record(f"transfer/{corpus.name}", *mm)
    return run.finish(data_seed=data_seed, target_seed=plan.train_cfg.seed, shadow_seed=plan.shadow_seed)
