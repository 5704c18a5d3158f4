import numpy as np
import pytest
import torch

from roundseg.core import BinaryMask, BoundingBox, ImageGrid
from roundseg.errors import ContextOverflow, EmptyMask, ShapeError
from roundseg.model import (
    ModelConfig,
    SegModel,
    build_assembly,
    build_vocabulary,
    load_model,
    save_model,
    tokenize,
)
from roundseg.model.network import binarize


def tiny_config(**kw) -> ModelConfig:
    base = dict(d_seg=32, backbone_channels=16, depth=2, heads=2, context_cap=256)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return SegModel(tiny_config()).eval()


def _image(side=64, seed=0):
    rng = np.random.default_rng(seed)
    return ImageGrid(rng.random((side, side)).astype(np.float32))


def test_tokenize_specials_and_words():
    toks = tokenize("The organ-a is [SEG].")
    assert toks == ["the", "organ-a", "is", "[SEG]", "."]
    assert tokenize("round 2") == ["round", "2"]


def test_vocabulary_covers_bank():
    vocab = build_vocabulary()
    assert vocab.tokens.count("[SEG]") == 1
    unk = vocab.id_of("[UNK]")
    for text in (
        "Segment the lesion inside the entity from round 3.",
        "The organ-b is [SEG].",
        "Mask the organ to the left of the round 2 target.",
    ):
        assert unk not in vocab.encode(text), text


def test_encode_image_shapes(model):
    f = model.encode_image(_image(64))
    assert f.shape == (16, 8, 8)
    with pytest.raises(ShapeError):
        model.image_encoder(torch.zeros(1, 1, 60, 60))


def test_zero_image_zero_final_layer(model):
    import copy

    m = copy.deepcopy(model)
    last = m.image_encoder.net[-1]
    torch.nn.init.zeros_(last.weight)
    torch.nn.init.zeros_(last.bias)
    f = m.encode_image(ImageGrid(np.zeros((64, 64), dtype=np.float32)))
    assert torch.all(f == 0)


def test_encode_image_deterministic(model):
    img = _image(64, 3)
    a = model.encode_image(img)
    b = model.encode_image(img)
    assert torch.equal(a, b)


def test_encode_crop_contract(model):
    img = _image(64, 1)
    bits = np.zeros((64, 64), dtype=bool)
    bits[10:30, 12:40] = True
    toks = model.encode_crop(img, BinaryMask(bits))
    assert toks.shape == (model.config.crop_tokens, model.config.d_seg)
    with pytest.raises(EmptyMask):
        model.encode_crop(img, BinaryMask(np.zeros((64, 64), dtype=bool)))
    # functional purity: same pixels elsewhere -> same tokens
    toks2 = model.encode_crop(_image(64, 1), BinaryMask(bits))
    assert torch.equal(toks, toks2)


def test_encode_crop_full_mask_equals_whole_image(model):
    img = _image(64, 2)
    full = BinaryMask(np.ones((64, 64), dtype=bool))
    toks = model.encode_crop(img, full)
    from roundseg.core.geometry import crop_to_box

    resampled = crop_to_box(img, BoundingBox(0, 0, 1, 1), model.config.crop_size)
    direct = model.crop_encoder(torch.from_numpy(np.array(resampled.pixels))[None, None])[0]
    assert torch.allclose(toks, direct)


def test_encode_bbox_affine(model):
    zero = model.encode_bbox(BoundingBox(0.25, 0.25, 0.75, 0.75))
    assert zero.shape == (1, model.config.d_seg)
    # affine identity: E(a) + E(b) - E(mid) == E(a + b - mid) for the linear map
    a = torch.tensor([[0.1, 0.2, 0.6, 0.7]])
    b = torch.tensor([[0.2, 0.1, 0.9, 0.8]])
    mid = torch.tensor([[0.15, 0.15, 0.75, 0.75]])
    lin = model.box_encoder
    lhs = lin(a) + lin(b) - lin(mid)
    rhs = lin(a + b - mid)
    assert torch.allclose(lhs, rhs, atol=1e-6)


def test_encode_bbox_jacobian_matches_weight(model):
    # central differences of the token w.r.t. the 4 inputs recover the weights
    x = torch.tensor([0.2, 0.3, 0.7, 0.9], dtype=torch.float64)
    lin = model.box_encoder.to(torch.float64)
    eps = 1e-6
    jac = torch.zeros(model.config.d_seg, 4, dtype=torch.float64)
    for j in range(4):
        hi, lo = x.clone(), x.clone()
        hi[j] += eps
        lo[j] -= eps
        jac[:, j] = (lin(hi) - lin(lo)) / (2 * eps)
    assert torch.allclose(jac, lin.weight.detach(), atol=1e-5)
    model.box_encoder.to(torch.float32)


def _assembly(model, image=None, with_ref=False, answer=None, history=None):
    cfg = model.config
    image = image or _image(64, 5)
    ref_crop = ref_box = None
    if with_ref:
        bits = np.zeros((64, 64), dtype=bool)
        bits[5:20, 5:25] = True
        from roundseg.model.assembly import masked_reference_crop

        ref_crop, ref_box = masked_reference_crop(image, BinaryMask(bits), cfg.crop_size)
    return build_assembly(
        cfg,
        image,
        "Please segment the organ-a.",
        round_index=1 if not history else len(history) + 1,
        history=history or [],
        ref_crop=ref_crop,
        ref_box=ref_box,
        answer_text=answer,
    )


def test_assembly_spans_and_nullref(model):
    asm = _assembly(model, answer="The organ-a is [SEG].")
    assert asm.crop is None and asm.box is None
    assert asm.spans["image"] == (0, 16)
    assert asm.spans["crop"] == (16, 20)
    assert asm.spans["box"] == (20, 21)
    assert asm.spans["history"][0] == asm.spans["history"][1] == 21
    lo, hi = asm.spans["answer"]
    assert hi - lo == len(model.config.vocab.encode("The organ-a is [SEG].")) + 1
    seg_pos = asm.seg_position(model.config.vocab.id_of("[SEG]"))
    assert lo <= seg_pos < hi


def test_assembly_history_permutation_keeps_query_span(model):
    history = [(1, "Please segment the organ-a.", "The organ-a is [SEG].")]
    asm1 = _assembly(model, history=history, answer="The lesion is [SEG].")
    # permute words inside the history segment: query span must not move
    h2 = [(1, "segment Please the organ-a.", "The organ-a is [SEG].")]
    asm2 = _assembly(model, history=h2, answer="The lesion is [SEG].")
    assert asm1.spans["query"] == asm2.spans["query"]
    assert asm1.spans["answer"] == asm2.spans["answer"]


def test_assembly_overflow_drops_oldest_pairs(model):
    cfg = tiny_config(context_cap=96)
    image = _image(64, 6)
    history = [(i, "Please segment the organ-a.", "The organ-a is [SEG].") for i in range(1, 7)]
    asm = build_assembly(cfg, image, "Outline the organ-b.", 7, history)
    assert asm.length <= cfg.context_cap - cfg.max_answer_tokens
    # the newest history and the query survive
    text = cfg.vocab.decode(asm.text_ids)
    assert "organ-b" in text
    hist_span = asm.spans["history"]
    assert hist_span[1] > hist_span[0]  # some history kept
    with pytest.raises(ContextOverflow):
        build_assembly(
            tiny_config(context_cap=30), image, "Outline the organ-b.", 1, []
        )


def test_forward_teacher_and_seg_state(model):
    asm = _assembly(model, answer="The organ-a is [SEG].")
    batch = model.collate([asm], teacher_forcing=True)
    logits, h_seg, f = model.forward_teacher(batch)
    assert logits.shape[0] == 1 and logits.shape[2] == model.config.vocab.size
    assert h_seg.shape == (1, model.config.d_seg)
    assert f.shape == (1, 16, 8, 8)
    assert int(batch["seg_pos"][0]) == asm.seg_position(model.config.vocab.id_of("[SEG]"))


def test_generate_deterministic(model):
    asm = _assembly(model)
    ids1, h1, f1 = model.generate(asm)
    ids2, h2, f2 = model.generate(asm)
    assert ids1 == ids2
    assert torch.equal(f1, f2)
    if h1 is not None:
        assert torch.equal(h1, h2)
    assert len(ids1) <= model.config.max_answer_tokens


@torch.no_grad()
def test_decode_mask_contract(model):
    img = _image(64, 7)
    f = model.encode_image(img)
    h = torch.randn(model.config.d_seg)
    probs = model.decode_mask(f, h)
    assert probs.shape == (64, 64)
    assert float(probs.min()) > 0.0 and float(probs.max()) < 1.0
    with pytest.raises(ShapeError):
        model.decode_mask(f[None, None], h)


def test_binarize_matches_elementwise_oracle():
    rng = np.random.default_rng(8)
    probs = rng.random((16, 16)).astype(np.float32)
    mask = binarize(torch.from_numpy(probs), 0.5)
    for r in range(16):
        for c in range(16):
            assert mask.bits[r, c] == (probs[r, c] > 0.5)
    assert binarize(torch.full((4, 4), 0.6)).area() == 16
    assert binarize(torch.full((4, 4), 0.4)).area() == 0


def test_checkpoint_roundtrip(tmp_path, model):
    p = tmp_path / "ck.pt"
    save_model(model, p)
    again = load_model(p)
    asm = _assembly(model)
    ids1, _, _ = model.generate(asm)
    ids2, _, _ = again.generate(asm)
    assert ids1 == ids2
    for (n1, p1), (n2, p2) in zip(model.state_dict().items(), again.state_dict().items()):
        assert n1 == n2
        assert torch.equal(p1, p2)
