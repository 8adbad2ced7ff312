from itertools import product

import numpy as np
import pytest

from conftest import BASE_GENES, make_genotype
from core.exceptions import InvalidOption, ShapeMismatch
from models.frame import TaskKind, TaskSpec
from models.genotype import GENE_OPTIONS, Genotype
from nn.assembly import assemble, param_count
from nn.autodiff import grad_check


@pytest.fixture
def batch(small_splits):
    arrays = small_splits.arrays("train")
    return arrays.inputs[:4], arrays.marks[:4]


class TestParameterCount:
    def test_single_layer_mlp_on_eleven_features(self, pv_frame):
        model = assemble(make_genotype(), TaskSpec(history=96, horizon=12), pv_frame, shape_only=True)
        assert param_count(model) == 96 * 12 + 12 + 11 + 1

    def test_shape_only_matches_allocated(self, pv_frame, small_task):
        g = make_genotype(sm="DAIN", fem="TimeFeatureMix", cps="LSTM", ln=2, hs=128, fam="TimeFeatures")
        assert (assemble(g, small_task, pv_frame, shape_only=True).param_count()
                == assemble(g, small_task, pv_frame, seed=3).param_count())

    def test_feature_selection_narrows_the_network(self, pv_frame, small_task):
        model = assemble(make_genotype(fsm="Pearson", fst=0.5), small_task, pv_frame, shape_only=True)
        assert model.network.width == model.feature_mask.n_kept
        assert model.network.width < pv_frame.n_features
        assert "power" in model.kept_features

    def test_invalid_gene_value(self, pv_frame, small_task):
        broken = Genotype.model_construct(**{**make_genotype().genes(), "hs": 100})
        with pytest.raises(InvalidOption):
            assemble(broken, small_task, pv_frame)


class TestForward:
    @pytest.mark.parametrize("genes", [
        {},
        {"sm": "RevIN", "fem": "Decomp", "cps": "TCN", "ln": 2},
        {"sm": "DAIN", "fem": "MultiScaleDecomp", "cps": "CNN"},
        {"fam": "TimeFeatures", "fem": "FreqMix", "cps": "MLP", "ln": 2},
        {"dgm": "Gaussian", "fem": "LinearEmbed", "cps": "LSTM"},
        {"fsm": "mRMR", "fst": 0.3, "fem": "TimeFeatureMix", "ln": 3},
    ])
    def test_predict_shape(self, pv_frame, small_task, batch, genes):
        model = assemble(make_genotype(**genes), small_task, pv_frame, seed=1)
        inputs, marks = batch
        out = model.predict(inputs, marks)
        assert out.shape == (4, 12)
        assert np.isfinite(out).all()

    def test_time_features_need_marks(self, pv_frame, small_task, batch):
        model = assemble(make_genotype(fam="TimeFeatures"), small_task, pv_frame)
        with pytest.raises(ShapeMismatch):
            model.predict(batch[0])

    def test_wrong_feature_count(self, pv_frame, small_task, batch):
        model = assemble(make_genotype(), small_task, pv_frame)
        with pytest.raises(ShapeMismatch):
            model.predict(batch[0][..., :5])

    def test_task2_inputs_are_longer(self, pv_frame):
        task = TaskSpec(kind=TaskKind.TASK2, history=24, horizon=12)
        model = assemble(make_genotype(), task, pv_frame, shape_only=True)
        assert model.io_shapes[0] == 36
        assert model.param_count() == 36 * 12 + 12 + 11 + 1

    def test_same_seed_same_model(self, pv_frame, small_task, batch):
        a = assemble(make_genotype(cps="CNN"), small_task, pv_frame, seed=4)
        b = assemble(make_genotype(cps="CNN"), small_task, pv_frame, seed=4)
        assert np.array_equal(a.predict(*batch), b.predict(*batch))

    def test_state_dict_round_trip(self, pv_frame, small_task, batch):
        g = make_genotype(sm="RevIN", fem="Decomp")
        source = assemble(g, small_task, pv_frame, seed=1)
        target = assemble(g, small_task, pv_frame, seed=2)
        target.load_state_dict(source.state_dict())
        assert np.array_equal(source.predict(*batch), target.predict(*batch))

    def test_load_state_dict_missing_entry(self, pv_frame, small_task):
        model = assemble(make_genotype(), small_task, pv_frame)
        state = model.state_dict()
        state.pop(sorted(state)[0])
        with pytest.raises(ShapeMismatch):
            model.load_state_dict(state)

    def test_gradients_of_assembled_network(self, pv_frame, small_task, batch):
        model = assemble(make_genotype(sm="RevIN", fem="Decomp"), small_task, pv_frame, seed=5)
        assert grad_check(model.graph, model.feed(batch[0][:2]), max_entries=8) < 1e-4

    def test_training_settings_come_from_genes(self, pv_frame, small_task):
        model = assemble(make_genotype(lr=0.0005, of="SGD", bs=64), small_task, pv_frame, shape_only=True)
        assert model.train_cfg.lr == 0.0005
        assert model.train_cfg.optimizer.value == "SGD"
        assert model.train_cfg.batch_size == 64
        assert set(BASE_GENES) == set(model.genotype.genes())


class TestExhaustiveSweep:
    @pytest.mark.parametrize("kind", [TaskKind.TASK1, TaskKind.TASK2])
    def test_every_block_combination_is_shape_stable(self, pv_frame, kind):
        task = TaskSpec(kind=kind, history=96, horizon=12)
        x = np.random.default_rng(0).standard_normal((1, task.input_length, pv_frame.n_features))
        assert x.shape[1:] == ((96, 11) if kind == TaskKind.TASK1 else (108, 11))
        combos = list(product(GENE_OPTIONS["fem"], GENE_OPTIONS["cps"], GENE_OPTIONS["ln"], GENE_OPTIONS["hs"]))
        assert len(combos) == 288
        for fem, cps, ln, hs in combos:
            model = assemble(make_genotype(fem=fem, cps=cps, ln=ln, hs=hs), task, pv_frame)
            assert model.param_count() > 0
            out = model.predict(x)
            assert out.shape == (1, 12), (fem, cps, ln, hs)
            assert np.isfinite(out).all(), (fem, cps, ln, hs)
