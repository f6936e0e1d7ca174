from .backends import Backend, BackendError, RemoteBackend, ScriptedBackend
from .gateway import GatewayError, LanguageGateway, parse_rules, rule_reward
from .prompts import EMPTY_EXPLANATION, CallFlags, JudgeScores, PromptBundle, Rule, Thought, build_prompt

__all__ = [
    "Backend", "BackendError", "RemoteBackend", "ScriptedBackend", "GatewayError", "LanguageGateway",
    "parse_rules", "rule_reward", "EMPTY_EXPLANATION", "CallFlags", "JudgeScores", "PromptBundle",
    "Rule", "Thought", "build_prompt",
]
