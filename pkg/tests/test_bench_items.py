"""Benchmark item assembly: format policy, MCQ options, dimensions, images."""

from __future__ import annotations

import pytest
from PIL import Image

from regionvqa.bench.items import (
    FLAGGED_DIMENSION,
    BenchItem,
    FormatPolicy,
    build_bench_item,
    classify_dimension,
    load_items,
    make_mcq,
    render_bench_images,
    save_items,
)
from regionvqa.client import ScriptedChatClient
from regionvqa.config import DIMENSIONS
from regionvqa.corpus import ImageRecord
from regionvqa.errors import StageError
from regionvqa.scorer import MCQ_LETTERS, McqGold


def bench_record(partition="bench") -> ImageRecord:
    return ImageRecord(
        image_id="img",
        path="corpus/img.png",
        width=300,
        height=200,
        source="corpus",
        content_hash="a" * 64,
        partition=partition,
    )


# -- format policy -----------------------------------------------------------


def test_format_policy_is_deterministic():
    ids = [f"img{i:04d}.b00.q0" for i in range(64)]
    first = [FormatPolicy().decide(i) for i in ids]
    second = [FormatPolicy(mcq_fraction=0.735).decide(i) for i in ids]
    assert first == second
    assert set(first) == {"mcq", "open"}


def test_format_policy_distribution():
    policy = FormatPolicy(mcq_fraction=0.735)
    n = 20_000
    mcq = sum(policy.decide(f"sample{i:05d}.q0") == "mcq" for i in range(n))
    assert abs(mcq / n - 0.735) < 0.01


def test_format_policy_extremes():
    assert FormatPolicy(mcq_fraction=0.0).decide("any") == "open"
    assert all(FormatPolicy(mcq_fraction=1.0).decide(f"i{k}") == "mcq" for k in range(50))


# -- mcq construction --------------------------------------------------------


def test_make_mcq_happy_path():
    client = ScriptedChatClient(['["blue", "green", "yellow"]'])
    result = make_mcq("What color is the mug?", "red", "item1", client)
    assert result is not None
    options, gold = result
    assert sorted(options) == ["blue", "green", "red", "yellow"]
    assert gold.text == "red"
    assert gold.letter == MCQ_LETTERS[options.index("red")]
    assert len(client.prompts) == 1
    assert "What color is the mug?" in client.prompts[0]


def test_make_mcq_shuffle_is_per_item_and_stable():
    def build(item_id):
        client = ScriptedChatClient(['["blue", "green", "yellow"]'])
        options, gold = make_mcq("q", "red", item_id, client)
        return options, gold

    first = build("itemA")
    assert build("itemA") == first, "same item id, same order"
    orders = {tuple(build(f"item{i}")[0]) for i in range(12)}
    assert len(orders) > 1, "different items shuffle differently"
    for i in range(12):
        options, gold = build(f"item{i}")
        assert gold.letter == MCQ_LETTERS[options.index("red")]


def test_make_mcq_collision_regenerates_once():
    client = ScriptedChatClient(
        ['["Red", "green", "yellow"]', '["blue", "green", "yellow"]']
    )
    options, gold = make_mcq("q", "red", "item1", client)
    assert "Red" not in options
    assert len(client.prompts) == 2
    assert "clearly different" in client.prompts[1]


def test_make_mcq_double_collision_falls_back_to_open():
    client = ScriptedChatClient(['["red", "b", "c"]', '["RED.", "b", "c"]'])
    assert make_mcq("q", "red", "item1", client) is None


def test_make_mcq_duplicate_distractors_collide():
    client = ScriptedChatClient(['["blue", "blue", "green"]', '["blue", "blue", "green"]'])
    assert make_mcq("q", "red", "item1", client) is None


def test_make_mcq_parse_failure_retried_in_place():
    client = ScriptedChatClient(["Here are some ideas!", '["blue", "green", "yellow"]'])
    result = make_mcq("q", "red", "item1", client)
    assert result is not None
    assert client.prompts[1].startswith("Respond with ONLY a JSON array")


def test_make_mcq_unparseable_twice_gives_none():
    client = ScriptedChatClient(["prose", "prose", "prose", "prose"])
    assert make_mcq("q", "red", "item1", client) is None


def test_make_mcq_short_list_rejected():
    client = ScriptedChatClient(['["only one"]', '["still", "short"]'])
    assert make_mcq("q", "red", "item1", client) is None


# -- dimension classification -------------------------------------------------


@pytest.mark.parametrize("dimension", DIMENSIONS)
def test_classifier_accepts_each_dimension(dimension):
    client = ScriptedChatClient([dimension])
    assert classify_dimension("q", None, client) == dimension


def test_classifier_tolerates_casing_and_trailing_period():
    client = ScriptedChatClient(["Counting."])
    assert classify_dimension("How many?", None, client) == "counting"


def test_classifier_takes_last_line():
    client = ScriptedChatClient(["Let me think.\nThe best label is:\nocr"])
    assert classify_dimension("q", None, client) == "ocr"


def test_classifier_retries_then_flags():
    client = ScriptedChatClient(["a poem about colors", "color"])
    assert classify_dimension("q", None, client) == "color"
    assert client.prompts[1].startswith("Respond with exactly one label word")

    hopeless = ScriptedChatClient(["nope", ""])
    assert classify_dimension("q", None, hopeless) == FLAGGED_DIMENSION


# -- image rendering and assembly ----------------------------------------------


@pytest.fixture()
def source_image(tmp_path):
    img = Image.new("RGB", (300, 200))
    for x in range(300):
        for y in range(200):
            img.putpixel((x, y), (x % 256, y % 256, (x + y) % 256))
    path = tmp_path / "scene.png"
    img.save(path)
    return path


def test_render_bench_images(source_image, tmp_path):
    bench_images = tmp_path / "bench" / "images"
    full, crop = render_bench_images(source_image, [40, 30, 90, 70], "it1", bench_images)
    assert (full, crop) == ("images/it1.full.jpg", "images/it1.crop.jpg")
    assert (bench_images / "it1.full.jpg").read_bytes() == source_image.read_bytes(), (
        "full view is a byte copy, no overlay, no re-encode"
    )
    with Image.open(bench_images / "it1.crop.jpg") as crop_img:
        assert crop_img.size == (100, 80), "2x the 50x40 region"


def test_build_bench_item_guards_partition(source_image, tmp_path):
    with pytest.raises(StageError, match="partition"):
        build_bench_item(
            bench_record(partition="train"), source_image, [0, 0, 20, 20],
            "q1", "q?", "a", "open", "counting", tmp_path,
        )


def test_build_bench_item_round_trip(source_image, tmp_path):
    item = build_bench_item(
        bench_record(), source_image, [40, 30, 90, 70],
        "img.b00.q0", "What is it?", "a mug", "open", "identification", tmp_path / "bench",
    )
    assert item.status == "pending" and item.review == []
    assert item.gold() == "a mug"

    mcq = build_bench_item(
        bench_record(), source_image, [40, 30, 90, 70],
        "img.b00.q1", "Which color?", "red", "mcq", "color", tmp_path / "bench",
        options=["blue", "red", "green", "grey"],
        gold=McqGold(letter="B", text="red"),
    )
    assert mcq.answer == {"letter": "B", "text": "red"}
    assert mcq.gold() == McqGold(letter="B", text="red")
    assert (tmp_path / "bench" / "images" / "img.b00.q1.crop.jpg").exists()


def test_build_mcq_item_requires_gold(source_image, tmp_path):
    with pytest.raises(StageError, match="gold"):
        build_bench_item(
            bench_record(), source_image, [0, 0, 20, 20],
            "q1", "q?", "red", "mcq", "color", tmp_path,
            options=["red", "b", "c", "d"], gold=None,
        )


def test_items_save_load_round_trip(source_image, tmp_path):
    items = [
        build_bench_item(
            bench_record(), source_image, [40, 30, 90, 70],
            f"img.b00.q{i}", "Q?", "ans", "open", "counting", tmp_path / "bench",
        )
        for i in (1, 0)
    ]
    path = tmp_path / "items.jsonl"
    save_items(path, items)
    loaded = load_items(path)
    assert [i.item_id for i in loaded] == ["img.b00.q0", "img.b00.q1"], "sorted by id"
    assert loaded[0] == items[1]
    assert all(isinstance(i, BenchItem) for i in loaded)
