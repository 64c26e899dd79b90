"""Published reference numbers for live-model runs.

These come from runs with a hosted chat model on a licensed clinical corpus,
so they cannot be reproduced offline. They are kept so that a sweep run with
real credentials and data can be lined up against them.
"""

from __future__ import annotations

import json
from importlib import resources
from typing import Sequence

from .evaluation import EvaluationReport


def load_reference_expectations() -> dict:
    path = resources.files("promptdp") / "data" / "reference_expectations.json"
    return json.loads(path.read_text(encoding="utf-8"))


def compare_to_reference(reports: Sequence[EvaluationReport], dataset: str = "i2b2_uthealth",
                         restoration_pass: str = "first") -> list[dict]:
    """Differences (measured minus reported, in percentage points) at every shared epsilon."""
    rows = {r["epsilon"]: r for r in load_reference_expectations()["datasets"][dataset]["iterative_restoration"]}
    out = []
    for rep in reports:
        ref = rows.get(rep.epsilon)
        if ref is None:
            continue
        entry = {"epsilon": rep.epsilon}
        for metric, key in (("sensitive_rate", "sensitive"), ("non_sensitive_rate", "non_sensitive")):
            measured = getattr(rep, metric)
            reported = ref[f"{key}_{restoration_pass}"]
            entry[metric] = None if measured is None else measured - reported
        out.append(entry)
    return out
