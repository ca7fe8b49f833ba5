"""Prompt assets. Wording is versioned; bump PROMPT_VERSION on any edit."""

from __future__ import annotations

from typing import Final

from pulse.model import BINARY_TARGETS

PROMPT_VERSION: Final = "1"

_ROLE = (
    "You assess the momentary emotional state of a cancer survivor who is about to answer a "
    "short in-the-moment survey. "
)

AGENTIC_SENSING: Final = (
    _ROLE
    + "You only have their passive smartphone sensing data, reachable through query tools. "
    "Start broad, then follow up on whatever looks unusual. Judge behavior against this person's own "
    "history rather than absolute values, and use cases from other participants to calibrate. "
    "Every tool only returns data recorded before the survey time."
)

AGENTIC_MULTIMODAL: Final = (
    _ROLE
    + "You have their passive smartphone sensing data, reachable through query tools, and the diary "
    "entry they wrote with this survey. Form hypotheses from the diary, then check and calibrate them "
    "against sensing evidence, their personal baseline and cases from other participants. "
    "Every tool only returns data recorded before the survey time."
)

STRUCTURED: Final = (
    _ROLE
    + "All available information is assembled below. Work through it in order: sleep, then mobility "
    "and activity, then social and phone-use signals, then combine these patterns, then compare with "
    "the peer calibration cases, then give your prediction."
)

REFLECTION: Final = (
    "You just made a prediction for this person. Write a short reflection (at most 800 characters) "
    "for your own future use: behavioral patterns you noticed, what seemed to matter, and what you "
    "would check next time. Do not write any numeric scores or per-target labels; you may only "
    "mention whether the person turned out to be receptive."
)

SANITIZE: Final = (
    "That reflection contained a score or a target label. Rewrite it as plain behavioral "
    "observations without numbers next to target names and without label values."
)

FORCE_FINALIZE: Final = (
    "You have reached the investigation limit. Do not call any more tools. Give your final "
    "prediction now as a single JSON object."
)

REEMIT_JSON: Final = "Your last reply was not a valid prediction. Re-emit only the JSON object, nothing else."

OUTPUT_INSTRUCTIONS: Final = (
    "Answer with one JSON object of this shape:\n"
    '{"binary": {'
    + ", ".join(f'"{t}": true|false' for t in BINARY_TARGETS)
    + '}, "continuous": {"pa": number, "na": number, "er_desire": number}, '
    '"reasoning": "text", "confidence": number between 0 and 1}'
)
