"""Shared fixtures: the builtin data domain/pool and a dense mini-domain."""

import pytest

from trajmark.equivalence import (
    ActionPattern,
    Distribution,
    EquivalenceSet,
    Lit,
    Segment,
    SlotRef,
    WatermarkPass,
)
from trajmark.pool import build_pool
from trajmark.simkit.domains import DomainSpec, Template, TemplateItem, builtin_domain
from trajmark.simkit.sandbox import SandboxSpec, ToolSpec


@pytest.fixture(scope="session")
def data_domain():
    return builtin_domain("data")


@pytest.fixture(scope="session")
def data_pool(data_domain):
    passes, report = build_pool(data_domain, seed=42)
    assert not report.rejected
    return passes


def file_tools() -> SandboxSpec:
    """Minimal file-store toolset: move vs. copy-then-delete plus a probe."""
    box = SandboxSpec()
    box.add(
        ToolSpec(
            "Files.Move", ("src", "dst"),
            (("read", ("arg", "src"), "v"),
             ("write", ("arg", "dst"), ("var", "v")),
             ("erase", ("arg", "src"))),
            ("var", "v"),
        )
    )
    box.add(
        ToolSpec(
            "Files.Copy", ("src", "dst"),
            (("read", ("arg", "src"), "v"),
             ("write", ("arg", "dst"), ("var", "v"))),
            ("var", "v"),
        )
    )
    box.add(ToolSpec("Files.Delete", ("path",), (("erase", ("arg", "path")),)))
    box.add(
        ToolSpec(
            "Files.Stat", ("path",), (("read", ("arg", "path"), "v"),),
            ("var", "v"), ancillary=True,
        )
    )
    return box


def move_eqset() -> EquivalenceSet:
    """Atomic move vs. copy-then-delete over the file toolset.

    The delete's ``path`` argument binds into the shared ``src`` slot, so a
    candidate pair only matches when it deletes what it copied.
    """
    atomic = Segment((ActionPattern("Files.Move", ("src", "dst")),))
    decomposed = Segment(
        (
            ActionPattern("Files.Copy", ("src", "dst")),
            ActionPattern("Files.Delete", (("path", "src"),)),
        )
    )
    return EquivalenceSet(
        id="test.ce.move", scheme="CE", members=(atomic, decomposed)
    )


def make_pass(
    eqset: EquivalenceSet,
    natural,
    target_index: int = 0,
    delta: float = 3.0,
    pass_id: int = 1,
    order_rank: int | None = None,
) -> WatermarkPass:
    return WatermarkPass(
        pass_id=pass_id,
        eqset=eqset,
        natural=Distribution(tuple(natural)),
        target_index=target_index,
        delta=delta,
        order_rank=pass_id if order_rank is None else order_rank,
    )


@pytest.fixture()
def file_sandbox():
    return file_tools()


@pytest.fixture()
def ce_set():
    return move_eqset()


def dense_domain() -> DomainSpec:
    """A tiny domain whose every trajectory hits each set three times.

    High per-trajectory density gives tight distribution estimates from
    small corpora, which the module-level closed-loop check needs.
    """
    box = SandboxSpec()
    sets = []
    natural = {}
    targets = {}
    for i, (maj, target) in enumerate([(0.7, 0), (0.6, 1), (0.75, 0)], start=1):
        key = ("derive", "concat", ("lit", f"dd{i}:"), ("arg", "k"))
        a = ToolSpec(f"DenseA_{i}.Put", ("k", "v"), (("write", key, ("arg", "v")),))
        b = ToolSpec(f"DenseB_{i}.Put", ("k", "v"), (("write", key, ("arg", "v")),))
        box.add(a)
        box.add(b)
        members = (
            Segment((ActionPattern(a.name, ("k", "v")),)),
            Segment((ActionPattern(b.name, ("k", "v")),)),
        )
        eqset = EquivalenceSet(f"dense.vr.{i}", "VR", members)
        sets.append(eqset)
        natural[eqset.id] = Distribution((maj, round(1 - maj, 10)))
        targets[eqset.id] = target
    box.add(ToolSpec("Plain_1.Note", ("msg",), (("note", ("arg", "msg")),)))
    items = []
    for _ in range(3):
        for eqset in sets:
            items.append(TemplateItem(kind="slot", set_id=eqset.id))
        items.append(
            TemplateItem(kind="action", tool="Plain_1.Note", args=(("msg", ("token",)),))
        )
    template = Template("dense-t01", tuple(items))
    return DomainSpec(
        name="dense",
        sandbox=box,
        eqsets=sets,
        natural=natural,
        targets=targets,
        templates=[template],
    )


@pytest.fixture(scope="session")
def mini_domain():
    return dense_domain()
