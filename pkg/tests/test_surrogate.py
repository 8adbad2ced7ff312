import numpy as np
import pytest

from conftest import PlantedEvaluator
from core.exceptions import InsufficientData
from models.genotype import ENCODING_LENGTH
from models.request import SearchConfig
from services.search_space import random_genotype
from services.surrogate_service import encode_many, fit_surrogate

CFG = SearchConfig(ensemble_size=3, ensemble_hidden=32, ensemble_epochs=150, ensemble_lr=0.01)


@pytest.fixture(scope="module")
def records():
    rng = np.random.default_rng(0)
    evaluator = PlantedEvaluator()
    genotypes = {}
    while len(genotypes) < 40:
        g = random_genotype(rng)
        genotypes[g.key] = g
    return evaluator.evaluate_many(genotypes.values())


class TestSurrogate:
    def test_encoding_matrix(self, records):
        x = encode_many(r.genotype for r in records)
        assert x.shape == (40, ENCODING_LENGTH)
        assert encode_many([]).shape == (0, ENCODING_LENGTH)

    def test_prediction_shape(self, records):
        ensemble = fit_surrogate(records, CFG, seed=1)
        assert len(ensemble) == 3
        assert ensemble.predict_genotypes([r.genotype for r in records[:5]]).shape == (3, 5)
        assert ensemble.predict(np.zeros((0, ENCODING_LENGTH))).shape == (3, 0)

    def test_fits_the_training_errors(self, records):
        ensemble = fit_surrogate(records, CFG, seed=1)
        predicted = ensemble.predict_genotypes([r.genotype for r in records]).mean(axis=0)
        actual = np.array([r.measured_error for r in records])
        assert np.corrcoef(predicted, actual)[0, 1] > 0.8

    def test_members_start_from_different_inits(self, records):
        ensemble = fit_surrogate(records, CFG, seed=1)
        p = ensemble.predict_genotypes([r.genotype for r in records])
        assert not np.array_equal(p[0], p[1])

    def test_seeded(self, records):
        a = fit_surrogate(records, CFG, seed=4).predict_genotypes([records[0].genotype])
        b = fit_surrogate(records, CFG, seed=4).predict_genotypes([records[0].genotype])
        assert np.array_equal(a, b)

    def test_constant_errors_stay_finite(self, records):
        flat = [r.model_copy(update={"measured_error": 0.5}) for r in records[:5]]
        predictions = fit_surrogate(flat, CFG, seed=0).predict_genotypes([r.genotype for r in flat])
        assert np.isfinite(predictions).all()

    def test_needs_two_finite_records(self, records):
        infinite = records[1].model_copy(update={"measured_error": float("inf")})
        with pytest.raises(InsufficientData):
            fit_surrogate([records[0], infinite], CFG)
