"""Watermark insertion: spans, draws, ordering, and ground truth."""

import math
import random

import pytest
from scipy import stats

from conftest import make_pass
from trajmark.equivalence import (
    ActionPattern,
    EquivalenceSet,
    Segment,
    estimate_natural_distribution,
)
from trajmark.errors import EmptyActions
from trajmark.injector import (
    apply_pass,
    changed_positions,
    scan_matches,
    watermark_corpus,
    watermark_trajectory,
)
from trajmark.registry import Registry, passes_for_uid, register_user
from trajmark.simkit.generator import generate_greybox_corpus
from trajmark.simkit.sandbox import segments_equivalent
from trajmark.trajectory import Action, GreyBoxTrajectory


def traj(actions, qid="q"):
    return GreyBoxTrajectory(qid, tuple(actions), "r")


def test_scan_matches_wraps_pass_id(ce_set):
    p = make_pass(ce_set, (0.6, 0.4), pass_id=7)
    spans = scan_matches(
        [Action.make("Files.Copy", {"src": "a", "dst": "b"}),
         Action.make("Files.Delete", {"path": "a"})],
        p,
    )
    assert len(spans) == 1
    assert spans[0].pass_id == 7
    assert spans[0].member_index == 1
    assert (spans[0].start, spans[0].length) == (0, 2)
    assert spans[0].bindings == {"src": "a", "dst": "b"}


def test_degenerate_draw_keeps_original(ce_set):
    # delta 50 pushes essentially all mass onto the target member
    p = make_pass(ce_set, (0.6, 0.4), target_index=0, delta=50.0)
    actions = (Action.make("Files.Move", {"src": "a", "dst": "b"}),)
    out, edits = apply_pass(actions, p, random.Random(0))
    assert out == actions
    assert len(edits) == 1
    assert edits[0].replacement_index == 0
    assert not edits[0].changed


def test_forced_swap_rewrites_span(ce_set):
    p = make_pass(ce_set, (0.6, 0.4), target_index=0, delta=50.0)
    actions = (
        Action.make("Files.Copy", {"src": "a", "dst": "b"}),
        Action.make("Files.Delete", {"path": "a"}),
    )
    out, edits = apply_pass(actions, p, random.Random(0))
    assert [a.tool for a in out] == ["Files.Move"]
    assert out[0].arg_map() == {"src": "a", "dst": "b"}
    assert edits[0].changed and edits[0].replacement_index == 0


def test_monte_carlo_replacement_frequency(ce_set):
    # natural (0.5, 0.5) at delta ln3 biases member 0 to exactly 0.75
    p = make_pass(ce_set, (0.5, 0.5), target_index=0, delta=math.log(3))
    assert p.biased.weights == pytest.approx((0.75, 0.25), abs=1e-12)
    rng = random.Random(7)
    actions = (Action.make("Files.Move", {"src": "a", "dst": "b"}),)
    hits = 0
    for _ in range(10000):
        _, edits = apply_pass(actions, p, rng)
        hits += edits[0].replacement_index == 0
    freq = hits / 10000
    assert 0.74 <= freq <= 0.76
    # the same draws must survive a two-sided binomial test at alpha 0.01
    assert stats.binomtest(hits, 10000, 0.75).pvalue > 0.01


def test_empty_pass_list_is_identity(ce_set):
    t = traj([Action.make("Files.Move", {"src": "a", "dst": "b"})])
    out, edits = watermark_trajectory(t, [], random.Random(0))
    assert out == t and edits == []


def test_injector_rejects_empty_trajectory():
    with pytest.raises(EmptyActions):
        watermark_trajectory(
            GreyBoxTrajectory("q", (), "r"), [], random.Random(0)
        )


def _order_fixture():
    """Pass A rewrites X.Do to Y.Do; pass B folds [Y.Do, Z.Fin] into W.All."""
    set_a = EquivalenceSet(
        "fix.vr", "VR",
        (Segment((ActionPattern("X.Do", ("k",)),)),
         Segment((ActionPattern("Y.Do", ("k",)),))),
    )
    set_b = EquivalenceSet(
        "fix.ce", "CE",
        (Segment((ActionPattern("Y.Do", ("k",)), ActionPattern("Z.Fin", ("k",)))),
         Segment((ActionPattern("W.All", ("k",)),))),
    )
    pass_a = make_pass(set_a, (0.5, 0.5), target_index=1, delta=50.0, pass_id=1)
    pass_b = make_pass(set_b, (0.5, 0.5), target_index=1, delta=50.0, pass_id=2)
    return pass_a, pass_b


def test_pass_order_changes_outcome():
    pass_a, pass_b = _order_fixture()
    t = traj([Action.make("X.Do", {"k": "v"}), Action.make("Z.Fin", {"k": "v"})])

    pass_a.order_rank, pass_b.order_rank = 1, 2
    out_ab, _ = watermark_trajectory(t, [pass_a, pass_b], random.Random(0))
    assert [a.tool for a in out_ab.actions] == ["W.All"]

    pass_a.order_rank, pass_b.order_rank = 2, 1
    out_ba, _ = watermark_trajectory(t, [pass_a, pass_b], random.Random(0))
    assert [a.tool for a in out_ba.actions] == ["Y.Do", "Z.Fin"]


def test_determinism_and_locality(data_domain, data_pool):
    corpus = generate_greybox_corpus(data_domain, 50, seed=321, id_prefix="d")
    reg = Registry("data", len(data_pool))
    user = register_user(reg, rng_seed=4)
    active = passes_for_uid(user.uid_hex, data_pool)
    wm1, edits1 = watermark_corpus(corpus, active, seed=99, uid_hex=user.uid_hex)
    wm2, edits2 = watermark_corpus(corpus, active, seed=99, uid_hex=user.uid_hex)
    assert wm1 == wm2
    assert [
        [(e.pass_id, e.start, e.replacement_index) for e in es] for es in edits1
    ] == [[(e.pass_id, e.start, e.replacement_index) for e in es] for es in edits2]
    original_ids = {id(a) for t in corpus for a in t.actions}
    for before, after, edits in zip(corpus, wm1, edits1):
        assert after.response == before.response
        assert after.query_id == before.query_id
        # actions outside every matched span are the original objects
        touched = {p for e in edits for p in e.final_positions}
        for i, action in enumerate(after.actions):
            if i not in touched:
                assert id(action) in original_ids
        if not edits:
            assert after.actions == before.actions


def test_final_positions_track_rewrites(ce_set):
    p = make_pass(ce_set, (0.6, 0.4), target_index=1, delta=50.0)
    t = traj(
        [Action.make("Other.Tool", {"k": 1}),
         Action.make("Files.Move", {"src": "a", "dst": "b"}),
         Action.make("Other.Tool", {"k": 2})]
    )
    out, edits = watermark_trajectory(t, [p], random.Random(1))
    assert [a.tool for a in out.actions] == [
        "Other.Tool", "Files.Copy", "Files.Delete", "Other.Tool"
    ]
    assert edits[0].changed
    assert edits[0].final_positions == (1, 2)
    assert changed_positions([edits]) == {0: {1, 2}}


def test_closed_loop_recovery_small_dense_corpus(mini_domain):
    """1,000 trajectories of the dense domain recover every biased target."""
    from trajmark.pool import build_pool

    passes, _ = build_pool(mini_domain, seed=11, calibration_size=3000)
    corpus = generate_greybox_corpus(mini_domain, 1000, seed=22, id_prefix="m")
    wm, _ = watermark_corpus(corpus, passes, seed=33, uid_hex="ff")
    for p in passes:
        estimated, count = estimate_natural_distribution(wm, p.eqset)
        assert count >= 2000
        assert estimated.l1_distance(p.biased) < 0.05, p.eqset.id


def test_semantic_preservation_of_edits(data_domain, data_pool):
    corpus = generate_greybox_corpus(data_domain, 120, seed=55, id_prefix="sp")
    reg = Registry("data", len(data_pool))
    user = register_user(reg, rng_seed=8)
    active = passes_for_uid(user.uid_hex, data_pool)
    _, edits_by_traj = watermark_corpus(corpus, active, seed=66, uid_hex=user.uid_hex)
    schemes = {p.pass_id: p.eqset.scheme for p in data_pool}
    checked = 0
    for edits in edits_by_traj:
        for edit in edits:
            if not edit.changed:
                continue
            env = {}
            for action in edit.original_actions + edit.rewritten_actions:
                for _, value in action.args:
                    if isinstance(value, str):
                        env[value] = f"data:{value}"
            assert segments_equivalent(
                edit.original_actions,
                edit.rewritten_actions,
                data_domain.sandbox,
                env,
                erase_ancillary=schemes[edit.pass_id] == "AE",
            ), (edit.pass_id, edit.original_actions, edit.rewritten_actions)
            checked += 1
    assert checked > 30
