"""Thinking-behaviour statistics.

Keyword matching is case-insensitive on whole whitespace-delimited words with
leading and trailing punctuation stripped, so ``"So"`` inside ``"Solve"`` does
not count. A multi-word keyword matches only when its words are separated by
single spaces in the source text. Each token position counts at most once per
group.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from leash.envsim import Action, Rollout

GROUP_NAMES = ("summary", "rethink", "plan")

_TOKEN = re.compile(r"\S+")
_PUNCT = string.punctuation


def _dedupe(words: Iterable[str]) -> tuple[str, ...]:
    seen: dict[str, None] = {}
    for w in words:
        seen.setdefault(w.lower(), None)
    return tuple(seen)


@dataclass(frozen=True)
class KeywordGroups:
    summary: tuple[str, ...] = ("So", "Therefore", "Thus", "conclude", "overall")
    rethink: tuple[str, ...] = (
        "check again", "double-check", "re-evaluate", "re-examine", "reanalyze", "reassess",
        "recheck", "reconsider", "reevaluate", "reevaluation", "reexamine", "rethink",
        "think again", "verify again", "wait",
    )
    plan: tuple[str, ...] = ("first", "First", "Second", "second", "step", "Step")

    def __post_init__(self) -> None:
        for name in GROUP_NAMES:
            words = _dedupe(getattr(self, name))
            if not words or any(not w.strip() for w in words):
                raise ValueError(f"keyword group {name!r} must hold non-empty keywords")
            object.__setattr__(self, name, words)

    def items(self) -> list[tuple[str, tuple[str, ...]]]:
        return [(name, getattr(self, name)) for name in GROUP_NAMES]


@dataclass(frozen=True)
class BehaviorStats:
    mean_counts: dict[str, float] = field(default_factory=dict)
    mean_length: float = 0.0
    sample_count: int = 0


def count_keywords(text: str, groups: KeywordGroups | None = None) -> dict[str, int]:
    groups = groups or KeywordGroups()
    spans = [(m.start(), m.end()) for m in _TOKEN.finditer(text)]
    words = [text[a:b].strip(_PUNCT).lower() for a, b in spans]
    counts = {}
    for name, keywords in groups.items():
        phrases = [k.split(" ") for k in keywords]
        n = 0
        for i in range(len(words)):
            for parts in phrases:
                k = len(parts)
                if i + k > len(words):
                    continue
                if k == 1:
                    hit = words[i] == parts[0]
                else:
                    raw = text[spans[i][0] : spans[i + k - 1][1]].strip(_PUNCT).lower()
                    hit = raw == " ".join(parts)
                if hit:
                    n += 1
                    break
        counts[name] = n
    return counts


_MARKERS = {
    Action.THINK_SUMMARY: "summary",
    Action.THINK_RETHINK: "rethink",
    Action.THINK_PLAN: "plan",
}


def rollout_behavior_stats(rollouts: Sequence[Rollout]) -> BehaviorStats:
    """Mean marker-action counts per rollout and mean length."""
    if not rollouts:
        raise ValueError("no rollouts to analyse")
    totals = dict.fromkeys(GROUP_NAMES, 0)
    total_length = 0
    for r in rollouts:
        total_length += r.length
        for a in r.actions:
            name = _MARKERS.get(a)
            if name:
                totals[name] += 1
    n = len(rollouts)
    return BehaviorStats({k: v / n for k, v in totals.items()}, total_length / n, n)


def text_behavior_stats(texts: Sequence[str], groups: KeywordGroups | None = None) -> BehaviorStats:
    """Mean keyword counts per document; length is the whitespace token count."""
    if not texts:
        raise ValueError("no documents to analyse")
    groups = groups or KeywordGroups()
    totals = dict.fromkeys(GROUP_NAMES, 0)
    total_length = 0
    for t in texts:
        total_length += len(t.split())
        for k, v in count_keywords(t, groups).items():
            totals[k] += v
    n = len(texts)
    return BehaviorStats({k: v / n for k, v in totals.items()}, total_length / n, n)
