from .base import (ActionError, BudgetStatus, EnvSpec, LanguageEnv, NumericState, ParseFailure,
                   StepOutcome, parse_action_id)
from .heat import HeatAlertsEnv, HeatConfig
from .toy import ToyEnv
from .vitals import VitalsConfig, VitalsEnv, variant_config


def make_env(env_id: str, **kwargs) -> LanguageEnv:
    """Build an environment from its id: uganda, mimic, vitals, heat or toy."""
    if env_id in ("uganda", "mimic"):
        return VitalsEnv(variant_config(env_id, **kwargs), variant=env_id)
    if env_id == "vitals":
        return VitalsEnv(VitalsConfig(**kwargs))
    if env_id == "heat":
        return HeatAlertsEnv(HeatConfig(**kwargs))
    if env_id == "toy":
        return ToyEnv(**kwargs)
    raise KeyError(f"unknown environment {env_id!r}")


__all__ = [
    "ActionError", "BudgetStatus", "EnvSpec", "LanguageEnv", "NumericState", "ParseFailure",
    "StepOutcome", "parse_action_id", "HeatAlertsEnv", "HeatConfig", "ToyEnv", "VitalsConfig",
    "VitalsEnv", "variant_config", "make_env",
]
