import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings as hypothesis_settings

from app.schemas.experiment import ExperimentConfig

hypothesis_settings.register_profile("default", max_examples=100, deadline=None)
hypothesis_settings.register_profile("fast", max_examples=20, deadline=None)
hypothesis_settings.register_profile(
    "ci", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
hypothesis_settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def toy_rows():
    """(1,0), (1,0), (0,1) with labels 0, 0, 1"""
    return np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), [0, 0, 1]


@pytest.fixture
def small_config(tmp_path):
    """A few-second synthetic run: 8 steps of B=8, mu=7 on 448 unlabeled points"""
    def build(**overrides) -> ExperimentConfig:
        values = dict(
            dataset="synthetic",
            synthetic_classes=4,
            synthetic_dims=8,
            synthetic_train=448,
            synthetic_validation=100,
            synthetic_test=200,
            num_labels=40,
            hidden_sizes=[16],
            batch_size=8,
            mu=7,
            epochs=1,
            seed=0,
            output_dir=str(tmp_path / "run"),
        )
        values.update(overrides)
        return ExperimentConfig(**values)
    return build
