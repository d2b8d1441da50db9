"""Promotion state machine: exhaustive sequence check against an oracle."""

from __future__ import annotations

import itertools
import json

import pytest

from regionvqa.bench.items import BenchItem, ReviewVerdict
from regionvqa.bench.review import ReviewStore
from regionvqa.errors import StageError, VerdictConflictError

ANNOTATORS = ("ada", "bo", "cy")

# The verdict alphabet: every flag true, or exactly one flag false.
KINDS = {
    "all-true": (True, True, True),
    "valid-false": (False, True, True),
    "difficult-false": (True, False, True),
    "correct-false": (True, True, False),
}

ACTIONS = [(a, k) for a in ANNOTATORS for k in KINDS]


def oracle(sequence, quorum):
    """Reference semantics, written directly from the promotion rule.

    Returns (final status, verdict flags by annotator, conflicts), where a
    conflict marks an event submitted after the item left pending.
    """
    status = "pending"
    held: dict[str, tuple[bool, bool, bool]] = {}
    conflicts = []
    for position, (annotator, kind) in enumerate(sequence):
        if status != "pending":
            conflicts.append(position)
            continue
        flags = KINDS[kind]
        held[annotator] = flags
        if not all(flags):
            status = "rejected"
        elif sum(all(f) for f in held.values()) >= quorum:
            status = "promoted"
    return status, held, conflicts


def item_file(tmp_path, name="items.jsonl"):
    template = BenchItem(
        item_id="it",
        image_id="img",
        bbox=[0, 0, 10, 10],
        question="q",
        fmt="open",
        answer="a",
        options=None,
        dimension="counting",
        full_image="f.jpg",
        crop_image="c.jpg",
    )
    path = tmp_path / name
    path.write_text(json.dumps(template.to_dict()) + "\n")
    return path


def apply_sequence(store, sequence):
    conflicts = []
    for position, (annotator, kind) in enumerate(sequence):
        try:
            store.submit_verdict("it", annotator, *KINDS[kind])
        except VerdictConflictError:
            conflicts.append(position)
    return conflicts


@pytest.mark.parametrize("quorum", [2, 3])
def test_exhaustive_sequences_match_oracle(tmp_path, quorum):
    """Every verdict sequence of length <= 3 lands in the oracle's state.

    The alphabet crosses three annotators with {all-true, one-false-each},
    so replacement (same annotator twice) and quorum counting over distinct
    annotators are both exercised. Conflicts must also line up: once an item
    leaves pending, every later event is refused, which is monotonicity.
    """
    sequences = [
        seq for n in range(4) for seq in itertools.product(ACTIONS, repeat=n)
    ]
    assert len(sequences) == 1 + 12 + 144 + 1728

    for index, sequence in enumerate(sequences):
        path = item_file(tmp_path, f"s{quorum}_{index}.jsonl")
        store = ReviewStore(path, quorum=quorum)
        conflicts = apply_sequence(store, sequence)
        want_status, want_held, want_conflicts = oracle(sequence, quorum)

        item = store.get("it")
        assert item.status == want_status, (quorum, sequence)
        assert conflicts == want_conflicts, (quorum, sequence)
        held = {v.annotator_id: (v.valid, v.difficult, v.correct) for v in item.review}
        assert held == want_held, (quorum, sequence)
        assert len(item.review) == len(want_held), "one held verdict per annotator"


def test_promotion_needs_distinct_annotators(tmp_path):
    store = ReviewStore(item_file(tmp_path), quorum=3)
    for _ in range(5):
        store.submit_verdict("it", "ada", True, True, True)
    assert store.get("it").status == "pending", "replacement never double-counts"
    store.submit_verdict("it", "bo", True, True, True)
    store.submit_verdict("it", "cy", True, True, True)
    assert store.get("it").status == "promoted"


def test_rejection_is_immediate_and_final(tmp_path):
    store = ReviewStore(item_file(tmp_path), quorum=3)
    store.submit_verdict("it", "ada", True, True, True)
    store.submit_verdict("it", "bo", True, False, True)
    assert store.get("it").status == "rejected"
    with pytest.raises(VerdictConflictError, match="rejected"):
        store.submit_verdict("it", "cy", True, True, True)
    # The rejecting item keeps the full verdict history.
    assert [v.annotator_id for v in store.get("it").review] == ["ada", "bo"]


def test_replacement_updates_flags_in_place(tmp_path):
    store = ReviewStore(item_file(tmp_path), quorum=3)
    store.submit_verdict("it", "ada", True, True, True)
    first_ts = store.get("it").review[0].timestamp
    store.submit_verdict("it", "ada", True, True, True)
    assert len(store.get("it").review) == 1
    assert store.get("it").review[0].timestamp >= first_ts


def test_state_survives_restart(tmp_path):
    path = item_file(tmp_path)
    store = ReviewStore(path, quorum=2)
    store.submit_verdict("it", "ada", True, True, True)
    del store

    reloaded = ReviewStore(path, quorum=2)
    item = reloaded.get("it")
    assert item.status == "pending"
    assert [v.annotator_id for v in item.review] == ["ada"]
    reloaded.submit_verdict("it", "bo", True, True, True)
    assert reloaded.get("it").status == "promoted"

    final = ReviewStore(path, quorum=2)
    assert final.get("it").status == "promoted"
    with pytest.raises(VerdictConflictError):
        final.submit_verdict("it", "cy", True, True, True)


def test_promote_ready_sweep_after_quorum_change(tmp_path):
    path = item_file(tmp_path)
    store = ReviewStore(path, quorum=3)
    store.submit_verdict("it", "ada", True, True, True)
    store.submit_verdict("it", "bo", True, True, True)
    assert store.get("it").status == "pending"

    relaxed = ReviewStore(path, quorum=2)
    assert relaxed.promote_ready() == 1
    assert relaxed.get("it").status == "promoted"
    assert relaxed.promote_ready() == 0, "sweep is idempotent"


def test_unknown_item_and_missing_file(tmp_path):
    store = ReviewStore(item_file(tmp_path))
    with pytest.raises(KeyError):
        store.submit_verdict("ghost", "ada", True, True, True)
    with pytest.raises(StageError, match="not found"):
        ReviewStore(tmp_path / "absent.jsonl")


def test_paging_and_counts(tmp_path):
    rows = []
    for i in range(7):
        item = BenchItem(
            item_id=f"it{i}",
            image_id="img",
            bbox=[0, 0, 10, 10],
            question="q",
            fmt="open",
            answer="a",
            options=None,
            dimension="counting",
            full_image="f.jpg",
            crop_image="c.jpg",
        )
        rows.append(json.dumps(item.to_dict()))
    path = tmp_path / "items.jsonl"
    path.write_text("\n".join(rows) + "\n")

    store = ReviewStore(path, quorum=1)
    store.submit_verdict("it3", "ada", True, True, True)
    store.submit_verdict("it5", "ada", False, True, True)

    assert store.counts() == {"pending": 5, "promoted": 1, "rejected": 1}
    page, total = store.list_page("pending", page=1, page_size=3)
    assert total == 5
    assert [i.item_id for i in page] == ["it0", "it1", "it2"]
    page2, _ = store.list_page("pending", page=2, page_size=3)
    assert [i.item_id for i in page2] == ["it4", "it6"]
    empty, total = store.list_page("pending", page=3, page_size=3)
    assert empty == [] and total == 5


def test_verdict_round_trips_through_dict():
    verdict = ReviewVerdict("ada", True, False, True, 1723800000.0)
    assert ReviewVerdict.from_dict(verdict.to_dict()) == verdict
    assert not verdict.all_true()
