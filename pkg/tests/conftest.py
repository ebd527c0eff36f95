import pytest

from rpmhmm.benchmark import routine_spec
from rpmhmm.config import PipelineConfig
from rpmhmm.pipeline import prepare_split, train_and_calibrate
from rpmhmm.simulator import simulate_days


class Trained:
    def __init__(self):
        self.cfg = PipelineConfig()
        self.spec = routine_spec(self.cfg)
        self.behavior, self.presence = simulate_days(self.spec, 21, 7)
        self.split = prepare_split(self.behavior, self.presence, 0.7)
        self.result, self.threshold = train_and_calibrate(
            self.split.train_segments, self.cfg.n_states, self.cfg.train, self.cfg.detector)
        self.model = self.result.model


@pytest.fixture(scope="session")
def trained():
    return Trained()
