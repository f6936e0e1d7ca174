from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rbrl.agent import AgentConfig, Runner
from rbrl.envs import ToyEnv, make_env
from rbrl.language import LanguageGateway, ScriptedBackend

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def scripted_gateway(seed: int = 0, **backend_kw) -> LanguageGateway:
    return LanguageGateway(ScriptedBackend(seed, **backend_kw), seed=seed)


def toy_runner(variant: str = "rbrl", seed: int = 0, steps: int = 200, world=None, env_kw=None, **cfg_kw):
    cfg = AgentConfig(variant=variant, total_timesteps=steps, seed=seed, **cfg_kw)
    gw = scripted_gateway(seed, world_kwargs=world or {})
    return Runner(cfg, lambda i: ToyEnv(**(env_kw or {})), gw)


def env_runner(env_id: str, variant: str = "rbrl", seed: int = 0, steps: int = 64, backend_kw=None,
               env_kw=None, **cfg_kw):
    cfg = AgentConfig(variant=variant, total_timesteps=steps, seed=seed, **cfg_kw)
    gw = scripted_gateway(seed, **(backend_kw or {}))
    return Runner(cfg, lambda i: make_env(env_id, **(env_kw or {})), gw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
