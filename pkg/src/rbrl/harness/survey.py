"""Blinded survey documents: two explanations per case, agent identities hidden."""

from __future__ import annotations

import numpy as np

from .compare import match_records, split_prompt

QUESTIONS = """**Q1. Do Explanation A and Explanation B appear the same or different to you?**

- [ ] Same (skip Q2 and go to Q3)
- [ ] Different

**Q2. Which explanation do you find better?**

- [ ] Explanation A
- [ ] Explanation B

**Q3. Do the explanations contain any hallucinations?**

- [ ] Both
- [ ] Only Explanation A
- [ ] Only Explanation B
- [ ] None"""


def export_survey(records_a: list[dict], records_b: list[dict], n: int, seed: int = 0) -> tuple[str, list[dict]]:
    """Markdown survey with ``n`` cases and the answer key (kept out of the document).

    Cases are steps where both logs saw the same prompt; which log appears as
    Explanation A is randomized per case.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    pairs, _, _ = match_records(records_a, records_b)
    if not pairs:
        raise ValueError("the two logs share no prompts with explanations")
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(pairs), size=min(n, len(pairs)), replace=False))
    head = split_prompt(pairs[0][0]["prompt"])
    out = [f"**Task:** {head['task']}", "", f"**Possible actions:** {head['actions']}", "",
           f"In the following, you will be presented with {len(picks)} case{'s' if len(picks) > 1 else ''}. "
           "Each case includes two explanations. Please read the text for each case carefully and answer "
           "the questions provided.", ""]
    key = []
    for case, i in enumerate(picks, 1):
        ra, rb = pairs[i]
        swap = bool(rng.integers(2))
        first, second = (rb, ra) if swap else (ra, rb)
        parts = split_prompt(ra["prompt"])
        out += [f"## Case {case}", "", "Current state of the decision problem:", "", ra["state_text"], "",
                f"Constraints: {parts['constraints']}", "",
                f"**Explanation A:** {first['explanation']}", "",
                f"**Explanation B:** {second['explanation']}", "", QUESTIONS, ""]
        key.append({"case": case, "prompt_hash": ra["prompt_hash"], "A": "second" if swap else "first",
                    "B": "first" if swap else "second"})
    return "\n".join(out), key
