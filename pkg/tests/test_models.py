import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from transfer_mia.models import (
    ModelError,
    ModelSpec,
    TrainConfig,
    TransferMode,
    accuracy,
    blocks_equal,
    build_model,
    load_checkpoint,
    predict_posteriors,
    save_checkpoint,
    train,
    transfer,
)
from transfer_mia.toy import toy_dataset

from conftest import random_dataset


def _params_equal(a, b):
    sa, sb = a.state_dict(), b.state_dict()
    return sa.keys() == sb.keys() and all(torch.equal(sa[k], sb[k]) for k in sa)


def test_build_is_deterministic():
    spec = ModelSpec("residual", 10, (16, 16, 3))
    assert _params_equal(build_model(spec, 1), build_model(spec, 1))
    assert not _params_equal(build_model(spec, 1), build_model(spec, 2))


def test_build_does_not_touch_global_rng():
    torch.manual_seed(123)
    expected = torch.rand(3)
    torch.manual_seed(123)
    build_model(ModelSpec("vgg", 3, (8, 8, 3)), 5)
    assert torch.equal(torch.rand(3), expected)


def test_vgg_block_and_head_shape():
    model = build_model(ModelSpec("vgg", 7, (16, 16, 3), num_blocks=5), 0)
    assert len(model.blocks) == 5
    assert model.head.out_features == 7


@pytest.mark.parametrize("bad", [dict(num_blocks=0), dict(num_classes=1), dict(family="mlp")])
def test_invalid_spec(bad):
    kwargs = dict(family="residual", num_classes=4, input_shape=(8, 8, 3)) | bad
    with pytest.raises(ModelError):
        ModelSpec(**kwargs)


def test_every_parameter_in_one_block_or_head():
    model = build_model(ModelSpec("residual", 5, (16, 16, 3)), 0)
    keys = list(model.named_tensors())
    assert all(k.startswith(("block", "head/")) for k in keys)
    owned = [k.split("/")[0] for k in keys]
    assert set(owned) == {f"block{i}" for i in range(1, 6)} | {"head"}
    n_params = sum(p.numel() for p in model.parameters())
    n_owned = sum(p.numel() for b in model.blocks for p in b.parameters()) + sum(p.numel() for p in model.head.parameters())
    assert n_params == n_owned


def test_checkpoint_keys(tmp_path):
    model = build_model(ModelSpec("residual", 5, (16, 16, 3)), 0)
    keys = set(model.named_tensors())
    assert {"block1/conv1/weight", "block1/bn/running_mean", "block5/proj/weight", "head/weight", "head/bias"} <= keys


def test_epochs_zero_is_identity(glyphs_small, tiny_spec):
    model = build_model(tiny_spec, 0)
    out = train(model, glyphs_small, TrainConfig(epochs=0))
    assert _params_equal(model, out)
    assert out.training_log == []


def test_train_does_not_mutate_input(glyphs_small, tiny_spec, fast_cfg):
    model = build_model(tiny_spec, 0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(model, glyphs_small, fast_cfg)
    assert all(torch.equal(before[k], v) for k, v in model.state_dict().items())


def test_training_log_has_one_entry_per_epoch(tiny_teacher, fast_cfg):
    assert [e["epoch"] for e in tiny_teacher.training_log] == list(range(1, fast_cfg.epochs + 1))


def test_memorizes_ten_samples():
    data = toy_dataset("glyphs", 10, seed=9)
    model = build_model(ModelSpec("residual", 10, (16, 16, 3)), 0)
    trained = train(model, data, TrainConfig(epochs=200))
    assert accuracy(trained, data) == 1.0


def test_freeze_all_blocks_only_head_moves(glyphs_small, tiny_spec, fast_cfg):
    model = build_model(tiny_spec, 0)
    out = train(model, glyphs_small, fast_cfg, frozen_blocks=5)
    assert blocks_equal(model, out, range(1, 6))
    assert not torch.equal(model.head.weight, out.head.weight)


def test_train_is_deterministic(glyphs_small, tiny_spec, fast_cfg):
    model = build_model(tiny_spec, 0)
    assert _params_equal(train(model, glyphs_small, fast_cfg), train(model, glyphs_small, fast_cfg))


def test_train_errors(glyphs_small, tiny_spec, fast_cfg):
    model = build_model(tiny_spec.with_classes(3), 0)
    with pytest.raises(ModelError, match="class-count mismatch"):
        train(model, glyphs_small, fast_cfg)
    with pytest.raises(ModelError, match="empty"):
        train(model, glyphs_small.subset([]), fast_cfg)
    with pytest.raises(ModelError, match="frozen_blocks"):
        train(build_model(tiny_spec, 0), glyphs_small, fast_cfg, frozen_blocks=6)


@pytest.mark.parametrize("bad", [dict(epochs=-1), dict(learning_rate=0), dict(batch_size=0), dict(optimizer="rmsprop")])
def test_train_config_validation(bad):
    with pytest.raises(ModelError):
        TrainConfig(**bad)


def test_feature_extractor_full_freeze_copies_teacher_blocks(tiny_teacher, blobs_small, fast_cfg):
    student = transfer(tiny_teacher, blobs_small, TransferMode.feature_extractor(5), fast_cfg)
    assert blocks_equal(tiny_teacher, student, range(1, 6))
    assert student.head.out_features == blobs_small.num_classes


def test_feature_extractor_partial_freeze(tiny_teacher, blobs_small, fast_cfg):
    student = transfer(tiny_teacher, blobs_small, TransferMode.feature_extractor(2), fast_cfg.replace(epochs=1))
    assert blocks_equal(tiny_teacher, student, [1, 2])
    for i in (3, 4, 5):
        assert not blocks_equal(tiny_teacher, student, [i])


def test_fine_tune_zero_epochs_is_teacher_plus_fresh_head(tiny_teacher, blobs_small):
    cfg = TrainConfig(epochs=0, seed=42)
    student = transfer(tiny_teacher, blobs_small, TransferMode("fine_tune"), cfg)
    assert blocks_equal(tiny_teacher, student, range(1, 6))
    again = transfer(tiny_teacher, blobs_small, TransferMode("fine_tune"), cfg)
    assert torch.equal(student.head.weight, again.head.weight)
    assert student.spec.num_classes == blobs_small.num_classes


def test_fine_tune_updates_every_block(tiny_teacher, blobs_small, fast_cfg):
    student = transfer(tiny_teacher, blobs_small, TransferMode("fine_tune"), fast_cfg.replace(epochs=1))
    for i in range(1, 6):
        assert not blocks_equal(tiny_teacher, student, [i])


def test_transfer_errors(tiny_spec, tiny_teacher, blobs_small, fast_cfg):
    with pytest.raises(ModelError, match="untrained"):
        transfer(build_model(tiny_spec, 0), blobs_small, TransferMode("fine_tune"), fast_cfg)
    with pytest.raises(ModelError, match="invalid K"):
        transfer(tiny_teacher, blobs_small, TransferMode.feature_extractor(6), fast_cfg)
    with pytest.raises(ModelError):
        TransferMode("fine_tune", 2)


def test_posteriors_contract(tiny_teacher, glyphs_small):
    p = predict_posteriors(tiny_teacher, glyphs_small)
    assert p.shape == (len(glyphs_small), 10)
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(p, predict_posteriors(tiny_teacher, glyphs_small))


def test_posteriors_preserve_order(tiny_teacher, glyphs_small):
    samples = glyphs_small.samples[:7]
    batch = predict_posteriors(tiny_teacher, samples)
    singles = np.vstack([predict_posteriors(tiny_teacher, [s]) for s in reversed(samples)])[::-1]
    np.testing.assert_allclose(batch, singles, atol=1e-12)


def test_posterior_shape_mismatch(tiny_teacher):
    with pytest.raises(ModelError, match="does not match"):
        predict_posteriors(tiny_teacher, random_dataset(3, shape=(8, 8, 3)))


def test_checkpoint_round_trip(tmp_path, tiny_teacher, glyphs_small):
    path = tmp_path / "teacher.safetensors"
    save_checkpoint(tiny_teacher, path)
    loaded = load_checkpoint(path)
    assert loaded.spec == tiny_teacher.spec
    assert loaded.trained and loaded.training_log == tiny_teacher.training_log
    np.testing.assert_array_equal(predict_posteriors(loaded, glyphs_small), predict_posteriors(tiny_teacher, glyphs_small))


def test_train_accuracy_dominates_test_after_fifty_epochs():
    data = toy_dataset("gratings", 200, seed=5)
    train_part, test_part = data.subset(data.ids[:100]), data.subset(data.ids[100:])
    model = train(build_model(ModelSpec("vgg", 8, (16, 16, 3)), 0), train_part, TrainConfig(epochs=50))
    assert accuracy(model, train_part) >= accuracy(model, test_part) - 0.02


@settings(max_examples=15, deadline=None)
@given(
    family=st.sampled_from(["residual", "vgg"]),
    blocks=st.integers(1, 5),
    k=st.integers(0, 5),
    teacher_classes=st.integers(2, 6),
    student_classes=st.integers(2, 6),
)
def test_freezing_and_head_dimension_invariants(family, blocks, k, teacher_classes, student_classes):
    k = min(k, blocks)
    teacher_data = random_dataset(12, teacher_classes, (8, 8, 3), seed=1)
    student_data = random_dataset(12, student_classes, (8, 8, 3), seed=2)
    cfg = TrainConfig(epochs=1, learning_rate=0.05, batch_size=4)
    teacher = train(build_model(ModelSpec(family, teacher_classes, (8, 8, 3), blocks, 4), 0), teacher_data, cfg)
    student = transfer(teacher, student_data, TransferMode.feature_extractor(k), cfg)
    assert blocks_equal(teacher, student, range(1, k + 1))
    assert predict_posteriors(student, student_data).shape == (12, student_classes)
