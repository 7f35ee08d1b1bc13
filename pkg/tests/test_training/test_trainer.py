"""Tests for the Supernet trainer: schedule, sandwich steps, gradients and resume."""

import numpy as np
import pytest

from src.autodiff.gradcheck import check_gradients
from src.autodiff.tensor import Tape
from src.supernet.model import SupernetModel
from src.supernet.search_space import SearchSpace
from src.training.metrics_log import MetricsLog
from src.training.trainer import SupernetTrainer, latest_checkpoint, switch_epoch
from src.utils.errors import ContractError


@pytest.fixture
def trainer(tiny_config, tiny_model, tmp_path):
    return SupernetTrainer(tiny_config, tiny_model, tmp_path / "run")


@pytest.fixture
def batch(tiny_corpus):
    return tiny_corpus.train[:4]


class TestSchedule:
    def test_switch_epoch(self):
        assert switch_epoch(18, 2 / 3) == 12
        assert switch_epoch(2, 2 / 3) == 1
        assert switch_epoch(3, 2 / 3) == 2

    def test_full_schedule(self, tiny_config, tiny_model, tmp_path):
        tiny_config.train.epochs = 18
        tiny_config.train.anneal_start_epoch = 6
        trainer = SupernetTrainer(tiny_config, tiny_model, tmp_path / "run")
        lr = tiny_config.train.lr
        assert trainer.switch_epoch == 12
        assert trainer.lr_at(0) == lr
        assert trainer.lr_at(6) == lr
        assert trainer.lr_at(8) == pytest.approx(lr * 0.96**2)
        assert trainer.kd_weight_at(11) == 1.0
        assert trainer.kd_weight_at(12) == 0.1
        assert trainer.optimizer_kind_at(11) == "adam"
        assert trainer.optimizer_kind_at(12) == "scaled_adam"

    def test_new_optimizer_uses_config(self, trainer, tiny_config):
        state = trainer.new_optimizer("adam")
        assert state.lr == tiny_config.train.lr
        assert state.weight_decay == tiny_config.train.weight_decay
        assert state.step == 0


class TestSandwichStep:
    def test_plan(self, trainer, batch, rng):
        plans = trainer.plan_step(batch, rng)
        assert [p.role for p in plans] == ["max", "min", "random", "random"]
        assert plans[0].config == trainer.space.max_config()
        assert plans[1].config == trainer.space.min_config()
        assert plans[0].utterances == batch
        assert [len(p.utterances) for p in plans] == [4, 1, 1, 1]
        quarters = [p.utterances[0].id for p in plans[1:]]
        assert len(set(quarters)) == 3

    def test_batch_not_divisible_by_four(self, trainer, tiny_corpus, rng):
        with pytest.raises(ContractError):
            trainer.plan_step(tiny_corpus.train[:3], rng)

    def test_individual_mode_single_pass(self, tiny_config, tiny_model, tmp_path, batch, rng):
        tiny_config.train.mode = "individual"
        tiny_config.train.individual_config = "min"
        trainer = SupernetTrainer(tiny_config, tiny_model, tmp_path / "run")
        plans = trainer.plan_step(batch, rng)
        assert len(plans) == 1
        assert plans[0].config == tiny_model.space.min_config()
        assert not trainer.kd_enabled

    def test_accumulated_equals_combined_gradient(self, trainer, batch, rng):
        plans = trainer.plan_step(batch, rng)
        names = list(trainer.model.params)
        total, passes, error = trainer.accumulate_gradients(plans, kd_weight=0.5)
        assert error is None
        assert len(passes) == 4
        with Tape() as tape:
            loss = trainer.combined_loss(plans, kd_weight=0.5)
        combined = tape.gradients(loss, [trainer.model.params[n] for n in names])
        for name, grad in zip(names, combined):
            assert np.allclose(total[name], grad, rtol=1e-9, atol=1e-12), name

    def test_combined_loss_matches_finite_differences(self, tiny_config, tiny_model, tmp_path, batch, rng):
        tiny_config.train.kd_mode = "kld"
        trainer = SupernetTrainer(tiny_config, tiny_model, tmp_path / "run")
        plans = trainer.plan_step(batch, rng)
        teacher = {}
        trainer.pass_loss(plans[0], cache_teacher=teacher)
        probes = [tiny_model.params["joiner.out.bias"], tiny_model.params["predictor.gate.bias"]]
        errors = check_gradients(lambda: trainer.combined_loss(plans, 0.7, teacher), probes)
        assert max(errors.values()) < 1e-4

    def test_distillation_vanishes_when_all_configs_coincide(self, tiny_config, tiny_dims, tmp_path, batch, rng):
        tiny_config.train.base_dropout = 0.0
        space = SearchSpace(n_layers_max=2, layer_options=[0], channel_options=[4])
        trainer = SupernetTrainer(tiny_config, SupernetModel(space, tiny_dims, seed=1), tmp_path / "run")
        plans = trainer.plan_step(batch, rng)
        assert len({p.config for p in plans}) == 1
        _, passes, error = trainer.accumulate_gradients(plans, kd_weight=1.0)
        assert error is None
        assert passes[0].kd_loss == 0.0
        assert all(abs(p.kd_loss) < 1e-10 for p in passes[1:])

    def test_single_config_gradient_is_full_plus_quarter_batches(self, tiny_config, tiny_dims, tmp_path, batch, rng):
        tiny_config.train.base_dropout = 0.0
        tiny_config.train.kd_mode = "none"
        space = SearchSpace(n_layers_max=2, layer_options=[0], channel_options=[4])
        model = SupernetModel(space, tiny_dims, seed=1)
        sandwich = SupernetTrainer(tiny_config, model, tmp_path / "sandwich")
        total, _, error = sandwich.accumulate_gradients(sandwich.plan_step(batch, rng), kd_weight=0.0)
        assert error is None

        tiny_config.train.mode = "individual"
        tiny_config.train.individual_config = "max"
        single = SupernetTrainer(tiny_config, model, tmp_path / "single")
        names = list(model.params)
        expected = {n: np.zeros_like(t.data) for n, t in model.params.items()}
        for subset in (batch, batch[:1], batch[1:2], batch[2:3]):
            (plan,) = single.plan_step(subset, rng)
            with Tape() as tape:
                loss, _, _ = single.pass_loss(plan)
            for name, grad in zip(names, tape.gradients(loss, [model.params[n] for n in names])):
                expected[name] += grad
        for name in names:
            assert np.allclose(total[name], expected[name], rtol=1e-9, atol=1e-12), name

    def test_distillation_costs_flops(self, tiny_config, tiny_model, tmp_path, batch):
        with_kd = SupernetTrainer(tiny_config, tiny_model, tmp_path / "kd")
        plans = with_kd.plan_step(batch, np.random.default_rng(0))
        _, kd_passes, _ = with_kd.accumulate_gradients(plans, 1.0)
        tiny_config.train.kd_mode = "none"
        without_kd = SupernetTrainer(tiny_config, tiny_model, tmp_path / "plain")
        _, plain_passes, _ = without_kd.accumulate_gradients(plans, 1.0)
        assert kd_passes[0].flops == plain_passes[0].flops
        assert sum(p.flops for p in kd_passes) > sum(p.flops for p in plain_passes)

    def test_non_finite_step_is_aborted(self, trainer, batch, rng):
        trainer.model.params["input_proj.bias"].data[0] = np.nan
        before = {n: t.data.copy() for n, t in trainer.model.params.items()}
        optimizer = trainer.new_optimizer("adam")
        metrics = trainer.train_step(batch, optimizer, rng, kd_weight=1.0)
        assert metrics.aborted
        assert metrics.error
        assert optimizer.step == 0
        for name, data in before.items():
            assert np.array_equal(trainer.model.params[name].data, data, equal_nan=True)

    def test_successful_step_updates_parameters(self, trainer, batch, rng):
        before = trainer.model.params["joiner.out.bias"].data.copy()
        optimizer = trainer.new_optimizer("adam")
        metrics = trainer.train_step(batch, optimizer, rng, kd_weight=1.0)
        assert not metrics.aborted
        assert metrics.is_finite()
        assert metrics.n_passes == 4
        assert metrics.flops == sum(p.flops for p in metrics.passes)
        assert optimizer.step == 1
        assert not np.array_equal(trainer.model.params["joiner.out.bias"].data, before)


class TestTrainLoop:
    def test_writes_metrics_and_checkpoints(self, trainer, tiny_corpus):
        result = trainer.train(tiny_corpus.train, tiny_corpus.dev)
        records = MetricsLog(result.metrics_path).read()
        assert len(records) == 4
        for record in records:
            assert record["n_passes"] == 4
            assert [p["role"] for p in record["passes"]] == ["max", "min", "random", "random"]
            assert [p["n_utterances"] for p in record["passes"]] == [4, 1, 1, 1]
            assert record["format"] == "todm-metrics/1"
        assert [r["optimizer"] for r in records] == ["adam", "adam", "scaled_adam", "scaled_adam"]
        assert [r["kd_weight"] for r in records] == [1.0, 1.0, 0.1, 0.1]

        epochs = MetricsLog(result.epochs_path).read()
        assert [e["epoch"] for e in epochs] == [0, 1]
        assert set(epochs[-1]["dev_wer"]) == {"max", "min"}
        assert len(result.checkpoints) == 2
        assert latest_checkpoint(trainer.run_dir) == trainer.checkpoint_path(1)
        assert set(trainer.manifest.artifacts_of_kind("checkpoint")) == {
            "checkpoint/epoch_000",
            "checkpoint/epoch_001",
        }

    def test_resume_matches_uninterrupted_run(self, tiny_config, tiny_space, tiny_dims, tiny_corpus, tmp_path):
        full = SupernetTrainer(tiny_config, SupernetModel(tiny_space, tiny_dims, seed=0), tmp_path / "full")
        full.train(tiny_corpus.train)

        resumed = SupernetTrainer(tiny_config, SupernetModel(tiny_space, tiny_dims, seed=0), tmp_path / "resumed")
        resumed.train(tiny_corpus.train, resume_from=full.checkpoint_path(0))

        for name, tensor in full.model.params.items():
            assert np.array_equal(resumed.model.params[name].data, tensor.data), name
        records = MetricsLog(resumed.metrics_log.path).read()
        assert {r["epoch"] for r in records} == {1}

    def test_resume_forgets_later_checkpoints(self, tiny_config, tiny_space, tiny_dims, tiny_corpus, tmp_path):
        first = SupernetTrainer(tiny_config, SupernetModel(tiny_space, tiny_dims, seed=0), tmp_path / "run")
        first.train(tiny_corpus.train)
        assert len(first.manifest.artifacts_of_kind("checkpoint")) == 2

        tiny_config.train.epochs = 1
        again = SupernetTrainer(tiny_config, SupernetModel(tiny_space, tiny_dims, seed=0), tmp_path / "run")
        again.train(tiny_corpus.train, resume_from=first.checkpoint_path(0))
        assert set(again.manifest.artifacts_of_kind("checkpoint")) == {"checkpoint/epoch_000"}
        assert again.manifest.load().commands[-1]["command"] == "resume"

    def test_training_set_smaller_than_batch(self, trainer, tiny_corpus):
        with pytest.raises(ContractError):
            trainer.train(tiny_corpus.train[:3])

    def test_latest_checkpoint_of_empty_run(self, tmp_path):
        assert latest_checkpoint(tmp_path) is None
