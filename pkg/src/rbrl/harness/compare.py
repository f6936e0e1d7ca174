"""Pairwise explanation comparison between two episode logs, judged by a language model."""

from __future__ import annotations

import re
from collections import defaultdict

from ..language.gateway import LanguageGateway
from ..language.prompts import EMPTY_EXPLANATION

_PROMPT = re.compile(r"^Task: (?P<task>.*?)\n\nState:\n(?P<state>.*)\n\nConstraints: (?P<constraints>.*?)"
                     r"\n\nPossible actions: (?P<actions>.*)$", re.DOTALL)


def split_prompt(text: str) -> dict[str, str]:
    m = _PROMPT.match(text)
    if not m:
        raise ValueError("prompt text does not have the task/state/constraints/actions layout")
    return m.groupdict()


def _usable(records: list[dict]) -> list[dict]:
    return [r for r in records if r.get("event") is None and r.get("explanation")
            and r["explanation"] != EMPTY_EXPLANATION]


def match_records(records_a: list[dict], records_b: list[dict]) -> tuple[list[tuple[dict, dict]], int, int]:
    """Pair steps whose prompts are identical, first unused occurrence first.

    Returns (pairs, unmatched in a, unmatched in b).
    """
    pool = defaultdict(list)
    for r in _usable(records_b):
        pool[r["prompt_hash"]].append(r)
    pairs, unmatched_a = [], 0
    for r in _usable(records_a):
        bucket = pool.get(r["prompt_hash"])
        if bucket:
            pairs.append((r, bucket.pop(0)))
        else:
            unmatched_a += 1
    unmatched_b = sum(len(v) for v in pool.values())
    return pairs, unmatched_a, unmatched_b


def compare_logs(records_a: list[dict], records_b: list[dict], gateway: LanguageGateway,
                 limit: int | None = None) -> dict:
    pairs, ua, ub = match_records(records_a, records_b)
    if limit is not None:
        pairs = pairs[:limit]
    counts = {"A": 0, "B": 0, "tie": 0}
    halluc = {"A": 0, "B": 0}
    rows = []
    for i, (ra, rb) in enumerate(pairs):
        ea, eb = ra["explanation"], rb["explanation"]
        if ea == eb:
            verdict = "tie"
        else:
            verdict = {"first": "A", "second": "B", "tie": "tie"}[
                gateway.compare(ra["prompt"], ea, eb, f"compare/{ra['prompt_hash']}/{i}")]
        counts[verdict] += 1
        ha = bool(gateway.hallucination(ra["prompt"], ea, f"halluc/{ra['prompt_hash']}/{i}/a"))
        hb = bool(gateway.hallucination(rb["prompt"], eb, f"halluc/{rb['prompt_hash']}/{i}/b"))
        halluc["A"] += ha
        halluc["B"] += hb
        rows.append({"prompt_hash": ra["prompt_hash"], "verdict": verdict, "hallucination_a": ha,
                     "hallucination_b": hb})
    n = len(pairs)
    pct = (lambda c: 100.0 * c / n) if n else (lambda c: 0.0)
    return {
        "pairs": n, "unmatched_a": ua, "unmatched_b": ub,
        "A_pct": pct(counts["A"]), "B_pct": pct(counts["B"]), "tie_pct": pct(counts["tie"]),
        "hallucination_a_pct": pct(halluc["A"]), "hallucination_b_pct": pct(halluc["B"]),
        "rows": rows,
    }


def format_table(result: dict) -> str:
    lines = [
        f"pairs: {result['pairs']} (unmatched: A {result['unmatched_a']}, B {result['unmatched_b']})",
        f"{'':14}{'A':>8}{'B':>8}{'tie':>8}",
        f"{'preferred %':14}{result['A_pct']:8.1f}{result['B_pct']:8.1f}{result['tie_pct']:8.1f}",
        f"{'hallucinated %':14}{result['hallucination_a_pct']:8.1f}{result['hallucination_b_pct']:8.1f}",
    ]
    return "\n".join(lines)
