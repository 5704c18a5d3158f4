"""The toy reference-conditioned segmentation network.

Data flow: a small conv backbone turns the image into a dense feature map f;
projected f patches, reference crop/box tokens, and text tokens feed a causal
transformer; the final-layer hidden state at the [SEG] token conditions a
conv mask decoder over f via per-channel scale/shift plus one cross-attention
block, upsampled back to image resolution with a sigmoid output.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import EmptyMask, ShapeError
from ..core.types import BinaryMask, BoundingBox, ImageGrid
from .assembly import PromptAssembly, masked_reference_crop
from .config import ModelConfig

_TYPE_IMAGE, _TYPE_CROP, _TYPE_BOX, _TYPE_HISTORY, _TYPE_CURRENT = range(5)


def _norm(ch: int) -> nn.GroupNorm:
    g = 8 if ch % 8 == 0 else 1
    return nn.GroupNorm(g, ch)


class _ResidualConv(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(ch, ch, 3, padding=1), _norm(ch), nn.GELU(), nn.Conv2d(ch, ch, 3, padding=1)
        )

    def forward(self, x):
        return x + self.net(x)


class ImageEncoder(nn.Module):
    """Strided conv stack producing (channels, H/stride, W/stride) features.

    Residual 3x3 blocks at intermediate strides grow the receptive field so a
    single feature cell can encode nearby shape boundaries.
    """

    def __init__(self, channels: int, stride: int):
        super().__init__()
        n_stages = int(round(math.log2(stride)))
        if 2**n_stages != stride:
            raise ShapeError(f"stride must be a power of two, got {stride}")
        self.stride = stride
        chs = [max(8, channels >> (n_stages - 1 - i)) for i in range(n_stages)]
        layers: list[nn.Module] = []
        prev = 1
        for i, ch in enumerate(chs):
            layers += [nn.Conv2d(prev, ch, 3, stride=2, padding=1), _norm(ch), nn.GELU()]
            if i >= n_stages - 2:
                layers += [_ResidualConv(ch)]
            prev = ch
        layers += [_ResidualConv(prev), nn.Conv2d(prev, channels, 3, padding=1)]
        self.net = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.stride or x.shape[-2] % self.stride:
            raise ShapeError(f"image dims {tuple(x.shape[-2:])} not divisible by stride {self.stride}")
        return self.net(x)


class CropEncoder(nn.Module):
    """Masked reference crop -> k tokens of width d."""

    def __init__(self, d: int, k: int, crop_size: int):
        super().__init__()
        side = int(round(math.sqrt(k)))
        if side * side != k:
            raise ShapeError(f"crop token count must be square, got {k}")
        self.side = side
        self.net = nn.Sequential(
            nn.Conv2d(1, 32, 3, stride=2, padding=1), _norm(32), nn.GELU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), _norm(64), nn.GELU(),
            nn.Conv2d(64, 128, 3, stride=2, padding=1), _norm(128), nn.GELU(),
        )
        self.proj = nn.Linear(128, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.net(x)
        z = F.adaptive_avg_pool2d(z, self.side)
        z = z.flatten(2).transpose(1, 2)  # (B, k, 128)
        return self.proj(z)


class SelfAttention(nn.Module):
    def __init__(self, d: int, heads: int):
        super().__init__()
        self.heads = heads
        self.dh = d // heads
        self.qkv = nn.Linear(d, 3 * d)
        self.proj = nn.Linear(d, d)

    def forward(self, x, attn_mask=None, past_kv=None):
        B, L, D = x.shape
        qkv = self.qkv(x).view(B, L, 3, self.heads, self.dh).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        if past_kv is not None:
            k = torch.cat([past_kv[0], k], dim=2)
            v = torch.cat([past_kv[1], v], dim=2)
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        out = out.transpose(1, 2).reshape(B, L, D)
        return self.proj(out), (k, v)


class Block(nn.Module):
    def __init__(self, d: int, heads: int, mlp_ratio: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(d)
        self.attn = SelfAttention(d, heads)
        self.ln2 = nn.LayerNorm(d)
        self.mlp = nn.Sequential(nn.Linear(d, mlp_ratio * d), nn.GELU(), nn.Linear(mlp_ratio * d, d))

    def forward(self, x, attn_mask=None, past_kv=None):
        a, kv = self.attn(self.ln1(x), attn_mask, past_kv)
        x = x + a
        x = x + self.mlp(self.ln2(x))
        return x, kv


class MaskDecoder(nn.Module):
    """Condition f on h (FiLM + one cross-attention block), then upsample."""

    N_COND = 8

    def __init__(self, channels: int, d: int, stride: int):
        super().__init__()
        c = channels
        self.film = nn.Linear(d, 2 * c)
        self.cond = nn.Linear(d, self.N_COND * c)
        self.q_proj = nn.Linear(c, c)
        self.k_proj = nn.Linear(c, c)
        self.v_proj = nn.Linear(c, c)
        self.o_proj = nn.Linear(c, c)
        self.refine = _ResidualConv(c)
        ups: list[nn.Module] = []
        prev = c
        for _ in range(int(round(math.log2(stride)))):
            nxt = max(16, int(prev * 0.75))
            ups += [
                nn.ConvTranspose2d(prev, nxt, 4, stride=2, padding=1),
                _norm(nxt),
                nn.GELU(),
                nn.Conv2d(nxt, nxt, 3, padding=1),
                nn.GELU(),
            ]
            prev = nxt
        self.ups = nn.Sequential(*ups)
        self.head = nn.Conv2d(prev, 1, 1)
        # start from a low foreground prior so small masks are reachable
        nn.init.constant_(self.head.bias, -2.0)

    def forward(self, f: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        if f.ndim != 4 or h.ndim != 2 or f.shape[0] != h.shape[0]:
            raise ShapeError(f"decoder got f {tuple(f.shape)} and h {tuple(h.shape)}")
        B, c, gh, gw = f.shape
        scale, shift = self.film(h).chunk(2, dim=-1)
        x = f * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]
        tokens = x.flatten(2).transpose(1, 2)  # (B, gh*gw, c)
        cond = self.cond(h).view(B, self.N_COND, c)
        q = self.q_proj(tokens)
        k = self.k_proj(cond)
        v = self.v_proj(cond)
        att = torch.softmax(q @ k.transpose(1, 2) / math.sqrt(c), dim=-1) @ v
        tokens = tokens + self.o_proj(att)
        x = tokens.transpose(1, 2).view(B, c, gh, gw)
        x = self.refine(x)
        return torch.sigmoid(self.head(self.ups(x)))


class SegModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.d_seg
        v = config.vocab.size
        self.tok_emb = nn.Embedding(v, d)
        self.pos_emb = nn.Embedding(config.context_cap, d)
        self.type_emb = nn.Embedding(5, d)
        self.image_encoder = ImageEncoder(config.backbone_channels, config.stride)
        self.token_proj = nn.Conv2d(
            config.backbone_channels, d, config.token_pool, stride=config.token_pool
        )
        self.crop_encoder = CropEncoder(d, config.crop_tokens, config.crop_size)
        self.box_encoder = nn.Linear(4, d)
        self.blocks = nn.ModuleList(
            [Block(d, config.heads, config.mlp_ratio) for _ in range(config.depth)]
        )
        self.ln_f = nn.LayerNorm(d)
        self.lm_head = nn.Linear(d, v, bias=False)
        self.decoder = MaskDecoder(config.backbone_channels, d, config.stride)
        for emb in (self.tok_emb, self.pos_emb, self.type_emb):
            nn.init.normal_(emb.weight, std=0.02)
        self._seg_id = config.vocab.id_of("[SEG]")
        self._eos_id = config.vocab.id_of("[EOS]")
        self._pad_id = config.vocab.id_of("[PAD]")
        self._null_id = config.vocab.id_of("[NULLREF]")

    # ---------- public encoders ----------

    @property
    def dtype(self) -> torch.dtype:
        return self.tok_emb.weight.dtype

    def encode_image(self, image: ImageGrid) -> torch.Tensor:
        """Dense feature map f of shape (channels, H/stride, W/stride)."""
        x = torch.from_numpy(np.array(image.pixels)).to(self.dtype)
        return self.image_encoder(x[None, None])[0]

    def encode_crop(self, image: ImageGrid, ref_mask: BinaryMask) -> torch.Tensor:
        """k reference tokens for the masked crop of `ref_mask`."""
        if ref_mask.is_empty():
            raise EmptyMask("reference mask is empty")
        crop, _ = masked_reference_crop(image, ref_mask, self.config.crop_size)
        x = torch.from_numpy(crop).to(self.dtype)
        return self.crop_encoder(x[None, None])[0]

    def encode_bbox(self, box: BoundingBox) -> torch.Tensor:
        x = torch.tensor(box.as_tuple(), dtype=self.dtype)
        return self.box_encoder(x[None])

    # ---------- batching ----------

    def collate(self, assemblies: list[PromptAssembly], teacher_forcing: bool) -> dict:
        """Stack assemblies into right-padded tensors."""
        n_prefix = assemblies[0].n_prefix
        if any(a.n_prefix != n_prefix for a in assemblies):
            raise ShapeError("assemblies in a batch must share the prefix layout")
        B = len(assemblies)
        S = self.config.crop_size
        lt = max(len(a.text_ids) for a in assemblies)
        images = torch.stack(
            [torch.from_numpy(np.array(a.image)) for a in assemblies]
        ).to(self.dtype)[:, None]
        crops = torch.zeros(B, 1, S, S, dtype=self.dtype)
        boxes = torch.zeros(B, 4, dtype=self.dtype)
        ref_valid = torch.zeros(B, dtype=torch.bool)
        text = torch.full((B, lt), self._pad_id, dtype=torch.long)
        text_type = torch.full((B, lt), _TYPE_CURRENT, dtype=torch.long)
        text_len = torch.zeros(B, dtype=torch.long)
        for i, a in enumerate(assemblies):
            if a.crop is not None:
                crops[i, 0] = torch.from_numpy(a.crop).to(self.dtype)
                boxes[i] = torch.from_numpy(a.box).to(self.dtype)
                ref_valid[i] = True
            ids = torch.tensor(a.text_ids, dtype=torch.long)
            text[i, : len(ids)] = ids
            text_len[i] = len(ids)
            h0, h1 = a.spans["history"]
            text_type[i, : h1 - h0] = _TYPE_HISTORY
        batch = {
            "images": images,
            "crops": crops,
            "boxes": boxes,
            "ref_valid": ref_valid,
            "text": text,
            "text_type": text_type,
            "text_len": text_len,
            "n_prefix": n_prefix,
        }
        if teacher_forcing:
            target = torch.full((B, n_prefix + lt), -100, dtype=torch.long)
            seg_pos = torch.zeros(B, dtype=torch.long)
            for i, a in enumerate(assemblies):
                lo, hi = a.spans["answer"]
                if hi <= lo:
                    raise ShapeError("teacher forcing needs answers in every assembly")
                ids = a.text_ids[lo - a.n_prefix : hi - a.n_prefix]
                target[i, lo:hi] = torch.tensor(ids, dtype=torch.long)
                seg_pos[i] = a.seg_position(self._seg_id)
            batch["target"] = target
            batch["seg_pos"] = seg_pos
        return batch

    def _embed(self, batch: dict) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Returns (embeddings (B,L,D), key_valid (B,L), f (B,c,gh,gw))."""
        images = batch["images"]
        B = images.shape[0]
        f = batch["f"] if batch.get("f") is not None else self.image_encoder(images)
        img_tok = self.token_proj(f).flatten(2).transpose(1, 2)  # (B, Ni, D)
        crop_tok = self.crop_encoder(batch["crops"])  # (B, k, D)
        box_tok = self.box_encoder(batch["boxes"])[:, None, :]  # (B, 1, D)
        null = self.tok_emb(torch.tensor(self._null_id))
        valid = batch["ref_valid"][:, None, None].to(self.dtype)
        crop_tok = crop_tok * valid + null * (1 - valid)
        box_tok = box_tok * valid + null * (1 - valid)
        text_emb = self.tok_emb(batch["text"])
        x = torch.cat([img_tok, crop_tok, box_tok, text_emb], dim=1)
        L = x.shape[1]
        if L > self.config.context_cap:
            raise ShapeError(f"sequence length {L} exceeds context cap")
        n_prefix = batch["n_prefix"]
        ni = img_tok.shape[1]
        type_ids = torch.empty(B, L, dtype=torch.long)
        type_ids[:, :ni] = _TYPE_IMAGE
        type_ids[:, ni : ni + self.config.crop_tokens] = _TYPE_CROP
        type_ids[:, ni + self.config.crop_tokens : n_prefix] = _TYPE_BOX
        type_ids[:, n_prefix:] = batch["text_type"]
        pos = torch.arange(L)
        x = x + self.pos_emb(pos)[None] + self.type_emb(type_ids)
        key_valid = torch.arange(L)[None] < (n_prefix + batch["text_len"])[:, None]
        return x, key_valid, f

    def _run_blocks(self, x, attn_mask, pasts=None, collect=False):
        new_pasts = []
        for i, blk in enumerate(self.blocks):
            x, kv = blk(x, attn_mask, None if pasts is None else pasts[i])
            if collect:
                new_pasts.append(kv)
        return self.ln_f(x), new_pasts

    def forward_teacher(self, batch: dict):
        """Full teacher-forced pass.

        Returns (logits (B,L,V), h_seg (B,D), f). Loss handling lives in the
        training module.
        """
        x, key_valid, f = self._embed(batch)
        B, L, _ = x.shape
        causal = torch.tril(torch.ones(L, L, dtype=torch.bool))
        mask = causal[None, None] & key_valid[:, None, None, :]
        h, _ = self._run_blocks(x, mask)
        logits = self.lm_head(h)
        idx = batch["seg_pos"]
        h_seg = h[torch.arange(B), idx]
        return logits, h_seg, f

    # ---------- generation ----------

    @torch.no_grad()
    def generate_batch(self, assemblies: list[PromptAssembly], f: Optional[torch.Tensor] = None):
        """Greedy lockstep decoding for a batch of prompts.

        `f` optionally supplies precomputed dense features (B, c, gh, gw);
        sessions cache them so the backbone runs once per image.
        Returns (answers: list[list[int]], h_seg: (B, D) with zeros where no
        [SEG] was produced, seg_found: (B,) bool, f: (B, c, gh, gw)).
        """
        batch = self.collate(assemblies, teacher_forcing=False)
        if f is not None:
            batch["f"] = f
        x, key_valid, f = self._embed(batch)
        B, L0, D = x.shape
        causal = torch.tril(torch.ones(L0, L0, dtype=torch.bool))
        mask = causal[None, None] & key_valid[:, None, None, :]
        h, pasts = self._run_blocks(x, mask, pasts=None, collect=True)
        cur_len = batch["n_prefix"] + batch["text_len"]  # true lengths
        last_h = h[torch.arange(B), cur_len - 1]
        next_ids = self.lm_head(last_h).argmax(dim=-1)

        answers = [[] for _ in range(B)]
        alive = torch.ones(B, dtype=torch.bool)
        h_seg = torch.zeros(B, D, dtype=h.dtype)
        seg_found = torch.zeros(B, dtype=torch.bool)
        key_valid = key_valid.clone()

        for step in range(self.config.max_answer_tokens):
            feed = torch.where(alive, next_ids, torch.full_like(next_ids, self._pad_id))
            for i in range(B):
                if alive[i]:
                    answers[i].append(int(feed[i]))
            alive = alive & (feed != self._eos_id)
            if not alive.any() and not (feed == self._seg_id).any():
                break
            pos = cur_len + step  # true position of the fed token
            tok = self.tok_emb(feed)[:, None, :]
            tok = tok + self.pos_emb(pos.clamp(max=self.config.context_cap - 1))[:, None, :]
            tok = tok + self.type_emb(torch.tensor(_TYPE_CURRENT))
            key_valid = torch.cat([key_valid, (feed != self._pad_id)[:, None]], dim=1)
            step_mask = key_valid[:, None, None, :]
            h, pasts = self._run_blocks(tok, step_mask, pasts=pasts, collect=True)
            h_step = h[:, 0]
            grab = (feed == self._seg_id) & ~seg_found
            if grab.any():
                h_seg[grab] = h_step[grab]
                seg_found |= grab
            next_ids = self.lm_head(h_step).argmax(dim=-1)
            if not alive.any():
                break

        for i in range(B):
            if answers[i] and answers[i][-1] == self._eos_id:
                answers[i] = answers[i][:-1]
        return answers, h_seg, seg_found, f

    @torch.no_grad()
    def generate(self, assembly: PromptAssembly):
        """Single-prompt greedy decode; bit-exact reference path."""
        answers, h_seg, seg_found, f = self.generate_batch([assembly])
        h = h_seg[0] if bool(seg_found[0]) else None
        return answers[0], h, f[0]

    @torch.no_grad()
    def generate_with_features(self, assembly: PromptAssembly, f: torch.Tensor):
        """Single-prompt decode reusing a session's cached feature map."""
        answers, h_seg, seg_found, fb = self.generate_batch([assembly], f=f[None])
        h = h_seg[0] if bool(seg_found[0]) else None
        return answers[0], h, fb[0]

    # ---------- mask decoding ----------

    def decode_mask(self, f: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
        """Probability map(s) in (0,1) at image resolution."""
        single = f.ndim == 3
        if single:
            f = f[None]
            h = h[None]
        out = self.decoder(f, h)
        return out[0, 0] if single else out[:, 0]


def binarize(prob_map: torch.Tensor | np.ndarray, threshold: float = 0.5) -> BinaryMask:
    """Pixel set iff probability strictly exceeds `threshold`."""
    if isinstance(prob_map, torch.Tensor):
        prob_map = prob_map.detach().cpu().numpy()
    return BinaryMask(prob_map > threshold)
