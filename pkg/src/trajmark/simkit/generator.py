"""Victim-corpus generation from a domain spec.

Each trajectory instantiates one query template: filler positions become
concrete actions with fresh token arguments, equivalence slots draw a
member from the slot's natural distribution and instantiate it through the
set's canonical bindings. Thoughts and observations are synthesized with
sentinel markers so grey-box projection is meaningfully lossy and its
safety is mechanically checkable.
"""

from __future__ import annotations

import random
from typing import Callable, Sequence

from ..equivalence import Distribution, EquivalenceSet, match_segment
from ..seeds import derive_rng
from ..trajectory import Action, FullTrajectory, GreyBoxTrajectory, grey_box_view
from .domains import DomainSpec, Template

THOUGHT_MARKER = "[[HT:"
OBSERVATION_MARKER = "[[HO:"


def _token(rng: random.Random) -> str:
    return f"x{rng.getrandbits(32):08x}"


def _gen_value(gen: tuple, rng: random.Random):
    if gen[0] == "token":
        return _token(rng)
    if gen[0] == "lit":
        return gen[1]
    raise ValueError(f"unknown argument generator {gen!r}")


def instantiate_member(
    eqset: EquivalenceSet, member_index: int, rng: random.Random
) -> tuple[Action, ...]:
    """Concrete actions for one member, from fresh canonical bindings.

    Bindings are drawn for member 0's slot namespace and routed through the
    set's cross mapping, so every generated occurrence is rewritable by the
    injector no matter which member it instantiates.
    """
    base = eqset.members[0]
    bindings = {slot: _token(rng) for slot in sorted(base.slots())}
    return eqset.rewrite(0, member_index, bindings)


def _pick_template(domain: DomainSpec, rng: random.Random) -> Template:
    weights = [t.weight for t in domain.templates]
    return rng.choices(domain.templates, weights=weights, k=1)[0]


def generate_trajectory(
    domain: DomainSpec,
    template: Template,
    query_id: str,
    rng: random.Random,
    slot_dist: Callable[[str], Distribution] | None = None,
) -> FullTrajectory:
    """Instantiate one template into a full trajectory.

    ``slot_dist`` overrides the member distribution per set id; the default
    is the domain's configured natural distribution.
    """
    steps = []
    for item in template.items:
        if item.kind == "action":
            args = tuple((name, _gen_value(gen, rng)) for name, gen in item.args)
            actions: Sequence[Action] = (Action(item.tool, args),)
        else:
            eqset = domain.eqset(item.set_id)
            dist = slot_dist(item.set_id) if slot_dist else domain.natural[item.set_id]
            member = dist.sample(rng)
            actions = instantiate_member(eqset, member, rng)
        for action in actions:
            marker = _token(rng)
            steps.append(
                (
                    f"plan {action.tool} {THOUGHT_MARKER}{marker}]]",
                    action,
                    f"ok {action.tool} {OBSERVATION_MARKER}{marker}]]",
                )
            )
    return FullTrajectory(
        query_id=query_id,
        steps=tuple(steps),
        response=f"completed {template.id} for {query_id}",
    )


def generate_victim_corpus(
    domain: DomainSpec,
    n: int,
    seed: int,
    id_prefix: str = "q",
) -> list[FullTrajectory]:
    """Generate ``n`` full trajectories with per-trajectory derived RNG.

    Each trajectory's stream depends only on (seed, prefix, index), so
    generation is order-independent and safe to parallelize.
    """
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    corpus = []
    for idx in range(n):
        rng = derive_rng(seed, "gen", id_prefix, idx)
        template = _pick_template(domain, rng)
        corpus.append(
            generate_trajectory(domain, template, f"{id_prefix}{idx:06d}", rng)
        )
    return corpus


def generate_greybox_corpus(
    domain: DomainSpec,
    n: int,
    seed: int,
    id_prefix: str = "q",
    slot_dist: Callable[[str], Distribution] | None = None,
    template_weights: dict[str, float] | None = None,
) -> list[GreyBoxTrajectory]:
    """Generate a grey-box corpus directly (what a service would emit)."""
    if n < 1:
        raise ValueError("corpus size must be >= 1")
    templates = domain.templates
    weights = [
        template_weights.get(t.id, 0.0) if template_weights else t.weight
        for t in templates
    ]
    if template_weights and not any(weights):
        weights = [t.weight for t in templates]
    corpus = []
    for idx in range(n):
        rng = derive_rng(seed, "gen", id_prefix, idx)
        template = rng.choices(templates, weights=weights, k=1)[0]
        full = generate_trajectory(
            domain, template, f"{id_prefix}{idx:06d}", rng, slot_dist
        )
        corpus.append(grey_box_view(full))
    return corpus


def template_for_trajectory(
    domain: DomainSpec, traj: GreyBoxTrajectory
) -> str | None:
    """Recover which template produced a trajectory, if any.

    Walks each template's skeleton against the action sequence: filler
    positions must match tools exactly, slot positions must match one of
    the set's members (longest first). Watermark rewrites stay inside the
    slot's member space, so watermarked trajectories still resolve.
    """
    actions = traj.actions
    for template in domain.templates:
        pos = 0
        ok = True
        for item in template.items:
            if pos > len(actions):
                ok = False
                break
            if item.kind == "action":
                if pos >= len(actions) or actions[pos].tool != item.tool:
                    ok = False
                    break
                pos += 1
            else:
                eqset = domain.eqset(item.set_id)
                hit = None
                for m_idx in eqset._scan_order:
                    member = eqset.members[m_idx]
                    if match_segment(member, actions, pos) is not None:
                        hit = len(member)
                        break
                if hit is None:
                    ok = False
                    break
                pos += hit
        if ok and pos == len(actions):
            return template.id
    return None
