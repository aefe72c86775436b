from __future__ import annotations

import pytest

from mmosim.config import RunConfig
from mmosim.domain import PlayerProfile, ProfileClass


def make_config(**overrides) -> RunConfig:
    doc = {
        "config_version": 1,
        "run_id": overrides.pop("run_id", "test"),
        "seed": overrides.pop("seed", 42),
        "steps_per_day": overrides.pop("steps_per_day", 24),
        "total_days": overrides.pop("total_days", 2),
        "population": overrides.pop(
            "population", {"clusters": "default", "n": 30, "seed": 42}),
    }
    doc.update(overrides)
    return RunConfig.from_dict(doc)


def make_profile(uid: int = 1, **overrides) -> PlayerProfile:
    base = dict(
        uid=uid,
        profile_class=ProfileClass.STABLE_DEVELOPMENT,
        skill=0.5,
        frustration_tolerance=0.5,
        spend_propensity=0.5,
        activeness=0.6,
        session_length_mean=6,
        habit_informal_trade=0.3,
    )
    base.update(overrides)
    return PlayerProfile(**base)


@pytest.fixture
def config():
    return make_config()
