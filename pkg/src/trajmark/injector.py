"""Watermark insertion: scan visible action sequences and rewrite matches.

Passes are applied sequentially in ascending ``order_rank``; each pass
scans the action sequence as left by its predecessors, so a rewrite made
by an earlier pass can create or destroy matches for a later one. Every
matched span triggers an independent draw from the pass's biased
distribution; draws that select the already-present member are recorded
but rewrite nothing. Actions outside matched spans and the response string
are never touched.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .equivalence import WatermarkPass, scan_equivalence
from .errors import EmptyActions
from .seeds import derive_rng
from .trajectory import Action, GreyBoxTrajectory, Scalar


@dataclass(frozen=True)
class MatchSpan:
    """One non-overlapping match of a pass's equivalence set."""

    pass_id: int
    member_index: int
    start: int
    length: int
    bindings: dict[str, Scalar]


@dataclass
class EditRecord:
    """Ground truth for one biased draw over a matched span.

    ``start``/``length`` are coordinates at the time the owning pass ran;
    ``final_positions`` are the indices of the rewritten actions that
    survived all later passes, in the final trajectory.
    """

    pass_id: int
    start: int
    length: int
    original_index: int
    replacement_index: int
    original_actions: tuple[Action, ...]
    rewritten_actions: tuple[Action, ...]
    final_positions: tuple[int, ...] = ()

    @property
    def changed(self) -> bool:
        return self.replacement_index != self.original_index


def scan_matches(actions: Sequence[Action], wm_pass: WatermarkPass) -> list[MatchSpan]:
    """Greedy leftmost-first, longest-member-first scan; spans never overlap."""
    return [
        MatchSpan(wm_pass.pass_id, m_idx, start, length, bindings)
        for m_idx, start, length, bindings in scan_equivalence(actions, wm_pass.eqset)
    ]


def apply_pass(
    actions: Sequence[Action], wm_pass: WatermarkPass, rng: random.Random
) -> tuple[tuple[Action, ...], list[EditRecord]]:
    """Re-sample every matched span from the pass's biased distribution.

    Returns the rewritten action sequence and one edit record per span
    (including draws that kept the original member).
    """
    spans = scan_matches(actions, wm_pass)
    if not spans:
        return tuple(actions), []
    out: list[Action] = []
    edits: list[EditRecord] = []
    cursor = 0
    for span in spans:
        out.extend(actions[cursor : span.start])
        draw = wm_pass.biased.sample(rng)
        original = tuple(actions[span.start : span.start + span.length])
        if draw == span.member_index:
            rewritten = original
        else:
            rewritten = wm_pass.eqset.rewrite(span.member_index, draw, span.bindings)
        out.extend(rewritten)
        edits.append(
            EditRecord(
                pass_id=wm_pass.pass_id,
                start=span.start,
                length=span.length,
                original_index=span.member_index,
                replacement_index=draw,
                original_actions=original,
                rewritten_actions=rewritten,
            )
        )
        cursor = span.start + span.length
    out.extend(actions[cursor:])
    return tuple(out), edits


def watermark_trajectory(
    t: GreyBoxTrajectory,
    passes: Sequence[WatermarkPass],
    rng: random.Random,
) -> tuple[GreyBoxTrajectory, list[EditRecord]]:
    """Apply a user's passes in fixed order to one trajectory.

    Each pass scans the possibly already-rewritten sequence of its
    predecessors. Edit records come back with ``final_positions`` resolved
    against the returned trajectory.
    """
    if not t.actions:
        raise EmptyActions(f"trajectory {t.query_id!r} has no actions")
    actions: tuple[Action, ...] = t.actions
    edits: list[EditRecord] = []
    rewritten_ids: list[list[int]] = []
    for wm_pass in sorted(passes, key=lambda p: p.order_rank):
        actions, new_edits = apply_pass(actions, wm_pass, rng)
        edits.extend(new_edits)
        rewritten_ids.extend([id(a) for a in e.rewritten_actions] for e in new_edits)
    # actions spliced in by one pass may be displaced or replaced by a later
    # pass; resolve which of each edit's actions survived, and where
    position_of = {id(a): pos for pos, a in enumerate(actions)}
    for edit, ids in zip(edits, rewritten_ids):
        edit.final_positions = tuple(
            position_of[i] for i in ids if i in position_of
        )
    return replace(t, actions=actions), edits


def watermark_corpus(
    corpus: Iterable[GreyBoxTrajectory],
    passes: Sequence[WatermarkPass],
    seed: int,
    uid_hex: str | None = None,
    stamp_uid: bool = False,
) -> tuple[list[GreyBoxTrajectory], list[list[EditRecord]]]:
    """Watermark a whole corpus with per-trajectory derived RNG streams.

    The stream for each trajectory depends only on (seed, uid, query_id),
    so results are independent of processing order and safe to parallelize.
    """
    ordered = sorted(passes, key=lambda p: p.order_rank)
    out_trajs: list[GreyBoxTrajectory] = []
    out_edits: list[list[EditRecord]] = []
    for t in corpus:
        rng = derive_rng(seed, "inject", uid_hex or "", t.query_id)
        wm, edits = watermark_trajectory(t, ordered, rng)
        if stamp_uid and uid_hex is not None:
            wm = replace(wm, user_uid=uid_hex)
        out_trajs.append(wm)
        out_edits.append(edits)
    return out_trajs, out_edits


# ---------------------------------------------------------------------------
# edit-log persistence (ground truth for the attack bench)
# ---------------------------------------------------------------------------

def _action_json(a: Action) -> dict:
    return {"tool": a.tool, "args": {k: v for k, v in a.args}}


def edit_to_json(traj_index: int, query_id: str, edit: EditRecord) -> dict:
    return {
        "traj_index": traj_index,
        "query_id": query_id,
        "pass_id": edit.pass_id,
        "start": edit.start,
        "length": edit.length,
        "original_index": edit.original_index,
        "replacement_index": edit.replacement_index,
        "changed": edit.changed,
        "final_positions": list(edit.final_positions),
        "original_actions": [_action_json(a) for a in edit.original_actions],
        "rewritten_actions": [_action_json(a) for a in edit.rewritten_actions],
    }


def write_edits(
    path: str,
    corpus: Sequence[GreyBoxTrajectory],
    edits_by_traj: Sequence[Sequence[EditRecord]],
) -> int:
    """Write one JSON line per edit record; returns the line count."""
    count = 0
    with open(path, "w", encoding="utf-8") as handle:
        for idx, (traj, edits) in enumerate(zip(corpus, edits_by_traj)):
            for edit in edits:
                handle.write(
                    json.dumps(
                        edit_to_json(idx, traj.query_id, edit),
                        ensure_ascii=False,
                        separators=(",", ":"),
                    )
                )
                handle.write("\n")
                count += 1
    return count


def read_edit_positions(path: str) -> dict[int, set[int]]:
    """Load ground-truth watermark positions: traj_index -> changed indices.

    Only edits whose draw differed from the matched member count as true
    watermark positions; kept-original draws are invisible to an attacker.
    """
    positions: dict[int, set[int]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("changed"):
                positions.setdefault(obj["traj_index"], set()).update(
                    obj["final_positions"]
                )
    return positions


def changed_positions(
    edits_by_traj: Sequence[Sequence[EditRecord]],
) -> dict[int, set[int]]:
    """In-memory equivalent of ``read_edit_positions``."""
    positions: dict[int, set[int]] = {}
    for idx, edits in enumerate(edits_by_traj):
        marked = {p for e in edits if e.changed for p in e.final_positions}
        if marked:
            positions[idx] = marked
    return positions
