import numpy as np
import pytest

from roundseg.core import (
    BinaryMask,
    Conversation,
    ImageGrid,
    RoundRecord,
    load_image_png,
    load_mask_png,
    parse_conversation,
    save_image_png,
    save_mask_png,
    serialize_conversation,
)
from roundseg.core.serial import quantize_intensities
from roundseg.errors import SchemaViolation


def _mask(seed: int) -> BinaryMask:
    rng = np.random.default_rng(seed)
    bits = rng.random((32, 32)) < 0.4
    bits[0, 0] = True
    return BinaryMask(bits)


def _conv() -> Conversation:
    rounds = (
        RoundRecord(
            index=1,
            query_text="Please segment the organ-A.",
            ref_round=0,
            scenario_type="direct",
            target_entity=0,
            gt_mask=_mask(1),
            answer_text="The organ-A is [SEG].",
            mask_ref="masks/a.png",
        ),
        RoundRecord(
            index=2,
            query_text="Segment the lesion inside the entity from round 1.",
            ref_round=1,
            scenario_type="organ_lesion",
            target_entity=1,
            gt_mask=_mask(2),
            answer_text="The lesion is [SEG].",
            mask_ref="masks/b.png",
        ),
    )
    return Conversation(
        conv_id="c0",
        image_ref="images/a.png",
        scene_ref="scenes/a.json",
        rounds=rounds,
        difficulty="regular",
    )


def test_roundtrip_identity():
    conv = _conv()
    line = serialize_conversation(conv)
    masks = {r.mask_ref: r.gt_mask for r in conv.rounds}
    back = parse_conversation(line, masks.__getitem__)
    assert back == conv
    assert serialize_conversation(back) == line


def test_invalid_ref_round_rejected():
    line = serialize_conversation(_conv())
    bad = line.replace('"ref_round":1', '"ref_round":2')
    masks = {r.mask_ref: r.gt_mask for r in _conv().rounds}
    with pytest.raises(SchemaViolation):
        parse_conversation(bad, masks.__getitem__)


def test_answer_needs_exactly_one_seg():
    with pytest.raises(SchemaViolation):
        RoundRecord(
            index=1,
            query_text="q",
            ref_round=0,
            scenario_type="direct",
            target_entity=0,
            gt_mask=_mask(3),
            answer_text="no token here",
        )
    with pytest.raises(SchemaViolation):
        RoundRecord(
            index=1,
            query_text="q",
            ref_round=0,
            scenario_type="direct",
            target_entity=0,
            gt_mask=_mask(3),
            answer_text="[SEG] twice [SEG]",
        )


def test_mask_png_roundtrip(tmp_path):
    mask = _mask(9)
    p = tmp_path / "m.png"
    save_mask_png(mask, p)
    assert load_mask_png(p) == mask


def test_image_png_roundtrip_after_quantization(tmp_path):
    rng = np.random.default_rng(4)
    img = ImageGrid(quantize_intensities(rng.random((32, 32))))
    p = tmp_path / "i.png"
    save_image_png(img, p)
    assert load_image_png(p) == img


def test_generated_sweep_roundtrips_byte_identical():
    # Serialize/parse/re-serialize many randomized conversations.
    rng = np.random.default_rng(17)
    for i in range(200):
        n = int(rng.integers(2, 9))
        rounds = []
        for k in range(1, n + 1):
            if k == 1:
                st, ref = "direct", 0
            else:
                st = ["organ_lesion", "hierarchy", "attribute", "spatial", "inferential"][
                    int(rng.integers(5))
                ]
                ref = int(rng.integers(1, k))
            rounds.append(
                RoundRecord(
                    index=k,
                    query_text=f"query {i}-{k} round {ref}",
                    ref_round=ref,
                    scenario_type=st,
                    target_entity=int(rng.integers(10)),
                    gt_mask=_mask(i * 10 + k),
                    answer_text="The thing is [SEG].",
                    mask_ref=f"masks/{i}_{k}.png",
                )
            )
        conv = Conversation(f"c{i}", "images/x.png", "scenes/x.json", tuple(rounds), "regular")
        line = serialize_conversation(conv)
        masks = {r.mask_ref: r.gt_mask for r in conv.rounds}
        back = parse_conversation(line, masks.__getitem__)
        assert serialize_conversation(back) == line
        assert back == conv
