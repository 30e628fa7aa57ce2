"""Paraphrase manifest: per-task command templates with paraphrases, plus a
held-out query list for the routing fixture.

The held-out queries must not share content words with the five canonical
templates (function words are exempt); `overlap_violations` enforces that
before a fixture is built.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "TaskEntry",
    "HeldOutQuery",
    "ParaphraseManifest",
    "default_manifest",
    "load_manifest",
    "overlap_violations",
]

N_TASKS = 5

# Function words exempt from the no-overlap rule between held-out queries
# and the canonical templates.
_STOPWORDS = {
    "a", "an", "the", "to", "of", "in", "on", "at", "and", "or", "for",
    "your", "you", "it", "its", "with", "while", "as", "by", "is", "are",
    "be", "then", "into", "onto", "over", "under", "up", "down", "out",
    "one", "each", "every", "all",
}

_WORD_RE = re.compile(r"[a-z']+")


def _content_words(text: str) -> set[str]:
    return {w for w in _WORD_RE.findall(text.lower()) if w not in _STOPWORDS}


@dataclass(frozen=True)
class TaskEntry:
    template: str
    paraphrases: tuple[str, ...]

    @property
    def all_texts(self) -> tuple[str, ...]:
        return (self.template, *self.paraphrases)


@dataclass(frozen=True)
class HeldOutQuery:
    text: str
    label: int


@dataclass(frozen=True)
class ParaphraseManifest:
    tasks: tuple[TaskEntry, ...]
    held_out: tuple[HeldOutQuery, ...]

    def validate(self) -> None:
        if len(self.tasks) != N_TASKS:
            raise ValueError(f"manifest must define {N_TASKS} tasks, got {len(self.tasks)}")
        for i, entry in enumerate(self.tasks):
            if not entry.template or len(entry.paraphrases) < 3:
                raise ValueError(f"task {i} needs a template plus at least 3 paraphrases")
        for q in self.held_out:
            if q.label not in range(N_TASKS):
                raise ValueError(f"held-out label {q.label} out of range: {q.text!r}")


def overlap_violations(manifest: ParaphraseManifest) -> list[tuple[str, set[str]]]:
    """Held-out queries that share content words with any template."""
    template_words = set()
    for entry in manifest.tasks:
        template_words |= _content_words(entry.template)
    bad = []
    for q in manifest.held_out:
        shared = _content_words(q.text) & template_words
        if shared:
            bad.append((q.text, shared))
    return bad


def default_manifest() -> ParaphraseManifest:
    """Shipped manifest: each task's canonical template plus three
    paraphrases, and fifteen held-out queries (three per task) that avoid
    every content word of the templates."""
    tasks = (
        TaskEntry(
            "Go to the target position",
            (
                "Fly to the goal point",
                "Navigate to the destination",
                "Head to the target location",
            ),
        ),
        TaskEntry(
            "Avoid obstacle, reach target",
            (
                "Reach the goal while avoiding the obstacle",
                "Get to the target without hitting the obstacle",
                "Dodge the obstacle and fly to the goal",
            ),
        ),
        TaskEntry(
            "Fly low and reach target",
            (
                "Stay low and get to the target",
                "Keep a low altitude on the way to the goal",
                "Fly near the ground to the destination",
            ),
        ),
        TaskEntry(
            "Hover at the designated pose",
            (
                "Hold your hover at the target pose",
                "Stay in place and hover steadily",
                "Maintain a stationary hover at the goal point",
            ),
        ),
        TaskEntry(
            "Fly through waypoints in order",
            (
                "Fly through all the waypoints one by one",
                "Visit the waypoints in sequence",
                "Pass through each waypoint in order",
            ),
        ),
    )
    held_out = (
        HeldOutQuery("head straight for the goal", 0),
        HeldOutQuery("make your way over to the destination", 0),
        HeldOutQuery("proceed to the marked location", 0),
        HeldOutQuery("dodge the barrier and get to the goal", 1),
        HeldOutQuery("steer around the obstruction on your way to the goal", 1),
        HeldOutQuery("get to the goal while steering clear of the barrier", 1),
        HeldOutQuery("stay close to the ground while heading to the goal", 2),
        HeldOutQuery("keep the altitude down as you approach the destination", 2),
        HeldOutQuery("skim just above the floor toward the landing spot", 2),
        HeldOutQuery("keep the craft steady in one spot without moving", 3),
        HeldOutQuery("float in place without drifting away", 3),
        HeldOutQuery("remain stationary at the set point", 3),
        HeldOutQuery("visit every checkpoint one after another", 4),
        HeldOutQuery("pass each marker in sequence", 4),
        HeldOutQuery("hit all the stops along the route in turn", 4),
    )
    return ParaphraseManifest(tasks=tasks, held_out=held_out)


def load_manifest(path) -> ParaphraseManifest:
    """Read a manifest from JSON: {"tasks": {"0": {"template", "paraphrases"}},
    "held_out": [{"text", "label"}]}."""
    doc = json.loads(Path(path).read_text())
    tasks = []
    for task_id in range(N_TASKS):
        entry = doc["tasks"][str(task_id)]
        tasks.append(TaskEntry(str(entry["template"]), tuple(str(p) for p in entry["paraphrases"])))
    held_out = tuple(
        HeldOutQuery(str(q["text"]), int(q["label"])) for q in doc.get("held_out", [])
    )
    manifest = ParaphraseManifest(tasks=tuple(tasks), held_out=held_out)
    manifest.validate()
    return manifest
