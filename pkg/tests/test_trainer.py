"""Anchor-scene training: objective, loop, checkpoints and resume."""

import numpy as np
import pytest

from bloomgs.config import parse_run_config
from bloomgs.errors import InvalidArgumentError, NonFiniteGradientError, NonFiniteLossError
from bloomgs.models import ViewKind
from bloomgs.services import trainer as trainer_module
from bloomgs.services.pipeline import generate
from bloomgs.services.providers import SyntheticProvider
from bloomgs.services.trainer import (
    LossResult, Trainer, build_scene, compute_loss, dpr_terms, objective, split_holdout, train,
)

from conftest import TINY_CONFIG


@pytest.fixture(scope="module")
def config():
    return parse_run_config(TINY_CONFIG)


@pytest.fixture(scope="module")
def generation(config):
    return generate(config, SyntheticProvider("room", seed=config.run.seed))


def with_train(config, **values):
    return config.model_copy(update={"train": config.train.model_copy(update=values)})


def assert_same_params(a, b):
    pa, pb = a.params(), b.params()
    assert pa.keys() == pb.keys()
    for name in pa:
        np.testing.assert_array_equal(pa[name], pb[name], err_msg=name)


class TestHelpers:

    def test_ablation_terms(self):
        assert dpr_terms("none") == ("pixel", "dist", "smooth")
        assert dpr_terms("no_dpr") == ()
        assert dpr_terms("no_dist") == ("pixel", "smooth")
        assert dpr_terms("no_scc") == ("pixel", "dist", "smooth")

    def test_every_other_support_view_held_out(self, generation):
        train_views, held = split_holdout(generation.training_views(), 2)
        assert [v.index for v in held] == [3, 5]
        assert all(v.kind == ViewKind.SUPPORT for v in held)
        assert len(train_views) == 5

    def test_holdout_disabled(self, generation):
        train_views, held = split_holdout(generation.training_views(), 0)
        assert held == [] and len(train_views) == 7

    def test_needs_a_training_view(self, config, generation):
        with pytest.raises(InvalidArgumentError):
            Trainer(config, [], build_scene(generation.cloud, config))


class TestObjective:

    def test_breakdown_terms(self, config, generation):
        state = build_scene(generation.cloud, config)
        view = generation.training_views()[1]
        noise = np.zeros((len(state.anchors), state.anchors.attribute_dim))
        result = compute_loss(state, view, config, noise)
        for key in ("rgb", "pixel", "dist", "smooth", "entropy", "volume", "total"):
            assert np.isfinite(result.breakdown[key]), key
        assert set(result.grads) == set(state.params())

    def test_zero_noise_matches_noiseless(self, config, generation):
        state = build_scene(generation.cloud, config)
        view = generation.training_views()[0]
        zeros = np.zeros((len(state.anchors), state.anchors.attribute_dim))
        with_zero = compute_loss(state, view, config, zeros, with_grads=False).total
        assert with_zero == pytest.approx(compute_loss(state, view, config, None, with_grads=False).total)

    def test_support_views_skip_depth_terms(self, config, generation):
        state = build_scene(generation.cloud, config)
        support = generation.training_views()[4]
        result = compute_loss(state, support, config, None, with_grads=False)
        assert "pixel" not in result.breakdown

    def test_objective_averages_views(self, config, generation):
        state = build_scene(generation.cloud, config)
        views = generation.training_views()[:2]
        expected = np.mean([compute_loss(state, v, config, None, with_grads=False).total for v in views])
        assert objective(state, views, config) == pytest.approx(expected)
        assert objective(state, [], config) == 0.0

    def test_no_scc_drops_rate_terms(self, config, generation):
        ablated = with_train(config, ablation="no_scc")
        state = build_scene(generation.cloud, ablated)
        result = compute_loss(state, generation.training_views()[0], ablated, None, with_grads=False)
        assert "entropy" not in result.breakdown


class TestTraining:

    def test_zero_iterations_returns_initialization(self, config, generation):
        zero = with_train(config, iterations=0)
        result = train(zero, generation.cloud, generation.training_views())
        assert_same_params(result.state, build_scene(generation.cloud, zero))
        assert result.summary.iterations == 0
        assert result.summary.initial_loss == result.summary.final_loss

    def test_short_run_stays_finite(self, config, generation, tmp_path):
        result = train(config, generation.cloud, generation.training_views(), checkpoint_dir=str(tmp_path))
        summary = result.summary
        assert summary.iterations == 4
        assert np.isfinite(summary.final_loss)
        assert summary.holdout_views == 2
        assert summary.final_holdout_psnr is not None
        assert [h.iteration for h in summary.history] == [0, 1, 2, 3]
        assert (tmp_path / "iter_000002.npz").exists()
        assert (tmp_path / "iter_000004.npz").exists()

    def test_resume_matches_uninterrupted_run(self, config, generation, tmp_path):
        views = generation.training_views()
        full = train(config, generation.cloud, views, checkpoint_dir=str(tmp_path / "a"))
        resumed = train(config, generation.cloud, views, checkpoint_dir=str(tmp_path / "b"),
                        resume_from=str(tmp_path / "a" / "iter_000002.npz"))
        assert resumed.summary.iterations == 4
        assert_same_params(resumed.state, full.state)

    def test_same_seed_same_result(self, config, generation):
        short = with_train(config, iterations=2)
        a = train(short, generation.cloud, generation.training_views())
        b = train(short, generation.cloud, generation.training_views())
        assert_same_params(a.state, b.state)

    def test_nan_loss_saves_last_good(self, config, generation, tmp_path, monkeypatch):
        monkeypatch.setattr(trainer_module, "compute_loss",
                            lambda *args, **kwargs: LossResult(float("nan"), {}))
        trainer = Trainer(config, generation.training_views(), build_scene(generation.cloud, config),
                          str(tmp_path))
        with pytest.raises(NonFiniteLossError) as info:
            trainer.step()
        assert info.value.iteration == 0
        assert (tmp_path / "last_good.npz").exists()

    def test_nan_gradient_saves_last_good(self, config, generation, tmp_path, monkeypatch):
        real_loss = trainer_module.compute_loss

        def poisoned(*args, **kwargs):
            result = real_loss(*args, **kwargs)
            result.grads["anchor.features"] = np.full_like(result.grads["anchor.features"], np.nan)
            return result

        monkeypatch.setattr(trainer_module, "compute_loss", poisoned)
        state = build_scene(generation.cloud, config)
        trainer = Trainer(config, generation.training_views(), state, str(tmp_path))
        with pytest.raises(NonFiniteGradientError) as info:
            trainer.step()
        assert info.value.group == "feature"
        assert info.value.checkpoint == str(tmp_path / "last_good.npz")
        assert (tmp_path / "last_good.npz").exists()
        assert trainer.iteration == 0
        assert_same_params(trainer.state, state)


@pytest.mark.slow
class TestLongerRun:

    def test_loss_drops(self, tmp_path):
        config = parse_run_config(TINY_CONFIG, {"train": {"iterations": 300, "checkpoint_every": 100}})
        generation = generate(config, SyntheticProvider("room", seed=config.run.seed))
        summary = train(config, generation.cloud, generation.training_views(), str(tmp_path)).summary
        assert summary.final_loss < summary.initial_loss
        assert len(list(tmp_path.glob("iter_*.npz"))) == 3
