import json

import numpy as np
import pytest

from krongp import (KernelSpec, ModelMetadata, ObservationSet,
                    OptimizerSettings, TargetStandardizer, fit, load_model,
                    mtgp_comp_config, predict_mean, predict_variance,
                    save_model)
from krongp.errors import DataError


def fitted_model(seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(10, 3))
    Y = rng.normal(size=(10, 2))
    Y[6:, 0] = np.nan
    data = ObservationSet.from_grid(X, Y)
    config = mtgp_comp_config(2, KernelSpec.se(), KernelSpec.nn(), 1, 1)
    return fit(config, data, OptimizerSettings(num_restarts=1, max_iterations=20,
                                               seed=seed))


class TestRoundTrip:
    def test_predictions_bit_identical(self, tmp_path):
        model = fitted_model()
        path = tmp_path / "m.json"
        save_model(model, path)
        back, _ = load_model(path)
        Xs = np.random.default_rng(1).uniform(0, 1, size=(6, 3))
        for task in range(2):
            assert np.array_equal(predict_mean(model, Xs, task),
                                  predict_mean(back, Xs, task))
            assert np.array_equal(predict_variance(model, Xs, task),
                                  predict_variance(back, Xs, task))

    def test_parameters_and_architecture_survive(self, tmp_path):
        model = fitted_model(2)
        path = tmp_path / "m.json"
        save_model(model, path)
        back, _ = load_model(path)
        assert np.array_equal(back.config.pack(), model.config.pack())
        assert back.config.label == model.config.label
        assert [s.kind for _, s in back.config.terms] == ["se", "nn"]
        assert [tc.rank for tc, _ in back.config.terms] == [1, 1]
        assert back.config.noise_corr.rank == 0

    def test_metadata_survives(self, tmp_path):
        model = fitted_model(3)
        std = TargetStandardizer(mean=np.array([1.0, 2.0]),
                                 std=np.array([3.0, 4.0]))
        meta = ModelMetadata(method="mtgp-comp-se-nn", seed=7,
                             task_names=("nitrogen", "chlorophyll"),
                             wavelengths=np.array([400.0, 410.0, 420.0]),
                             standardizer=std)
        path = tmp_path / "m.json"
        save_model(model, path, meta)
        _, back = load_model(path)
        assert back.method == "mtgp-comp-se-nn"
        assert back.seed == 7
        assert back.task_names == ("nitrogen", "chlorophyll")
        assert np.array_equal(back.wavelengths, meta.wavelengths)
        assert np.array_equal(back.standardizer.mean, std.mean)
        assert np.array_equal(back.standardizer.std, std.std)

    def test_metadata_optional(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(fitted_model(), path)
        _, meta = load_model(path)
        assert meta.task_names is None
        assert meta.standardizer is None
        assert meta.wavelengths is None


class TestValidation:
    def test_checksum_detects_tampering(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(fitted_model(), path)
        doc = json.loads(path.read_text())
        doc["training"]["y"][0] += 1.0
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="checksum"):
            load_model(path)

    def test_not_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("definitely not json {")
        with pytest.raises(DataError, match="JSON"):
            load_model(path)

    def test_wrong_format_marker(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(DataError, match="not a"):
            load_model(path)

    def test_future_version_rejected(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(fitted_model(), path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(DataError, match="version"):
            load_model(path)

    def test_missing_file_is_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_model(tmp_path / "absent.json")
