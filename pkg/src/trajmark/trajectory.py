"""Canonical data model for actions and trajectories, plus JSONL ingestion.

An action is a tool invocation with an ordered map of scalar arguments.
A grey-box trajectory is what a deployed agent service reveals to users:
the action sequence and the final response, with internal reasoning steps
withheld. Full trajectories (thought/action/observation triples) exist only
inside the simulation kit and are never written to corpus files.

Wire format: one JSON object per line (JSONL), UTF-8, ``\\n`` line endings,
stable key order ``query_id, user_uid, actions, response``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Union

from .errors import EmptyActions, MalformedLine, SchemaViolation

Scalar = Union[str, int, float, bool]

_TOOL_RE = re.compile(r"[A-Za-z0-9_.]+\Z")
_UID_RE = re.compile(r"[0-9a-f]+\Z")


@dataclass(frozen=True)
class Action:
    """One tool invocation: a tool name and its ordered scalar arguments."""

    tool: str
    args: tuple[tuple[str, Scalar], ...] = ()

    def __post_init__(self) -> None:
        if not self.tool or not _TOOL_RE.match(self.tool):
            raise SchemaViolation(f"bad tool name: {self.tool!r}")
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))
        names = [k for k, _ in self.args]
        if len(names) != len(set(names)):
            raise SchemaViolation(f"duplicate argument names in {self.tool}: {names}")
        for name, value in self.args:
            if not isinstance(name, str):
                raise SchemaViolation(f"argument name must be a string: {name!r}")
            # bool must be listed before int: isinstance(True, int) holds
            if not isinstance(value, (str, int, float, bool)):
                raise SchemaViolation(
                    f"argument {self.tool}.{name} must be a scalar, got {type(value).__name__}"
                )

    @classmethod
    def make(cls, tool: str, args: Mapping[str, Scalar] | None = None) -> "Action":
        return cls(tool, tuple((args or {}).items()))

    def arg_map(self) -> dict[str, Scalar]:
        return dict(self.args)

    def get(self, name: str) -> Scalar | None:
        for key, value in self.args:
            if key == name:
                return value
        return None


@dataclass(frozen=True)
class GreyBoxTrajectory:
    """User-visible trajectory: actions plus final response."""

    query_id: str
    actions: tuple[Action, ...]
    response: str
    user_uid: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.actions, tuple):
            object.__setattr__(self, "actions", tuple(self.actions))
        if self.user_uid is not None and not _UID_RE.match(self.user_uid):
            raise SchemaViolation(f"user_uid must be lowercase hex: {self.user_uid!r}")


@dataclass(frozen=True)
class FullTrajectory:
    """Internal trajectory with hidden thought/observation steps.

    Exists only inside the simulation kit; the grey-box projection is the
    only form ever serialized.
    """

    query_id: str
    steps: tuple[tuple[str, Action, str], ...]
    response: str
    user_uid: str | None = None


def grey_box_view(t: FullTrajectory) -> GreyBoxTrajectory:
    """Project a full trajectory to its user-visible form.

    Thoughts and observations are dropped; actions and the response are
    copied verbatim.
    """
    return GreyBoxTrajectory(
        query_id=t.query_id,
        actions=tuple(action for _, action, _ in t.steps),
        response=t.response,
        user_uid=t.user_uid,
    )


def _action_from_obj(obj: object, where: str) -> Action:
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where}: action must be an object")
    extra = set(obj) - {"tool", "args"}
    if extra:
        raise SchemaViolation(f"{where}: unknown action keys {sorted(extra)}")
    tool = obj.get("tool")
    if not isinstance(tool, str):
        raise SchemaViolation(f"{where}: 'tool' must be a string")
    args = obj.get("args", {})
    if not isinstance(args, dict):
        raise SchemaViolation(f"{where}: 'args' must be an object")
    return Action(tool, tuple(args.items()))


def parse_trajectory_line(line: str) -> GreyBoxTrajectory:
    """Parse one JSONL line into a validated grey-box trajectory.

    Argument order inside ``args`` is preserved exactly as read.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedLine(f"not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation("trajectory line must be a JSON object")
    extra = set(obj) - {"query_id", "user_uid", "actions", "response"}
    if extra:
        raise SchemaViolation(f"unknown trajectory keys {sorted(extra)}")
    for key, kind in (("query_id", str), ("response", str)):
        if not isinstance(obj.get(key), kind):
            raise SchemaViolation(f"'{key}' must be a {kind.__name__}")
    uid = obj.get("user_uid")
    if uid is not None and not isinstance(uid, str):
        raise SchemaViolation("'user_uid' must be a string when present")
    raw_actions = obj.get("actions")
    if not isinstance(raw_actions, list):
        raise SchemaViolation("'actions' must be an array")
    if not raw_actions:
        raise EmptyActions(f"trajectory {obj['query_id']!r} has no actions")
    actions = tuple(
        _action_from_obj(a, f"actions[{i}]") for i, a in enumerate(raw_actions)
    )
    return GreyBoxTrajectory(obj["query_id"], actions, obj["response"], uid)


def serialize_trajectory(t: GreyBoxTrajectory) -> str:
    """Render a trajectory as a single compact JSON line (no newline).

    Key order is fixed (query_id, user_uid, actions, response) so that
    equal trajectories serialize byte-identically; ``user_uid`` is omitted
    when absent.
    """
    obj: dict[str, object] = {"query_id": t.query_id}
    if t.user_uid is not None:
        obj["user_uid"] = t.user_uid
    obj["actions"] = [
        {"tool": a.tool, "args": {k: v for k, v in a.args}} for a in t.actions
    ]
    obj["response"] = t.response
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_jsonl(path: str) -> list[GreyBoxTrajectory]:
    """Load a whole trajectory corpus from a JSONL file."""
    return list(iter_jsonl(path))


def iter_jsonl(path: str) -> Iterator[GreyBoxTrajectory]:
    """Stream trajectories from a JSONL file one line at a time."""
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield parse_trajectory_line(line)
            except (MalformedLine, SchemaViolation) as exc:
                raise type(exc)(f"{path}:{lineno}: {exc}") from exc


def write_jsonl(path: str, trajectories: Iterable[GreyBoxTrajectory]) -> int:
    """Write a corpus to a JSONL file; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for t in trajectories:
            handle.write(serialize_trajectory(t))
            handle.write("\n")
            count += 1
    return count
