"""Byte-level tokenizer over a 261-symbol vocabulary.

Token ids 0..255 are the raw byte values themselves; five special tokens
follow. Sequences are framed as [CLS] content... [SEP] [PAD]*, padded or
truncated to an exact target length. Masking for masked-byte pretraining
is a pure function of an explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyInput

NUM_BYTES = 256
CLS_ID = 256
SEP_ID = 257
PAD_ID = 258
UNK_ID = 259
MASK_ID = 260
VOCAB_SIZE = 261

SPECIAL_IDS = frozenset({CLS_ID, SEP_ID, PAD_ID, UNK_ID, MASK_ID})


@dataclass(frozen=True)
class TokenSequence:
    """A fixed-length encoded sequence.

    ids[0] is always CLS, the last non-PAD id is SEP, and PADs are
    contiguous at the tail. raw_len records the byte count before
    truncation.
    """

    ids: tuple[int, ...]
    attention_mask: tuple[bool, ...]
    raw_len: int

    @property
    def content_len(self) -> int:
        return sum(1 for i in self.ids if i < NUM_BYTES)

    def content_positions(self) -> tuple[int, ...]:
        return tuple(p for p, i in enumerate(self.ids) if i < NUM_BYTES)


@dataclass(frozen=True)
class MaskPlan:
    """Which positions were masked, what they held, and how each was hidden.

    used_mask_token[k] is True when position k was replaced by [MASK],
    False when it was replaced by a random byte id.
    """

    positions: tuple[int, ...]
    originals: tuple[int, ...]
    used_mask_token: tuple[bool, ...]

    def __len__(self) -> int:
        return len(self.positions)


def encode(data: bytes, max_len: int) -> TokenSequence:
    """Encode raw bytes as [CLS] b0 b1 ... [SEP] [PAD]*, exactly max_len long.

    Content beyond max_len - 2 bytes is truncated.
    """
    if max_len < 3:
        raise ValueError(f"max_len must be >= 3, got {max_len}")
    if len(data) == 0:
        raise EmptyInput("cannot encode an empty byte string")
    content = data[: max_len - 2]
    ids = [CLS_ID] + list(content) + [SEP_ID]
    n_pad = max_len - len(ids)
    ids.extend([PAD_ID] * n_pad)
    mask = [True] * (len(content) + 2) + [False] * n_pad
    return TokenSequence(ids=tuple(ids), attention_mask=tuple(mask), raw_len=len(data))


def decode(seq: TokenSequence) -> bytes:
    """Inverse of encode up to truncation: the content bytes, in order."""
    return bytes(i for i in seq.ids if i < NUM_BYTES)


def _mask_count(p_mask: float, content_len: int) -> int:
    # round-half-up, floored at one so short sequences still train
    return max(1, int(np.floor(p_mask * content_len + 0.5)))


def apply_mlm_mask(
    seq: TokenSequence, p_mask: float, p_replace: float, seed: int
) -> tuple[TokenSequence, MaskPlan]:
    """Hide a fraction of content bytes for reconstruction training.

    Exactly max(1, round(p_mask * content_len)) distinct content positions
    are altered. Each becomes [MASK] with probability p_replace, otherwise
    a uniformly random byte id (special ids are never drawn). CLS/SEP/PAD
    positions are never selected. Identical arguments give identical
    output.
    """
    if not 0.0 < p_mask <= 1.0:
        raise ValueError(f"p_mask must be in (0, 1], got {p_mask}")
    if not 0.0 <= p_replace <= 1.0:
        raise ValueError(f"p_replace must be in [0, 1], got {p_replace}")
    positions = seq.content_positions()
    if not positions:
        raise ValueError("sequence has no content tokens to mask")

    rng = np.random.default_rng(seed)
    count = _mask_count(p_mask, len(positions))
    chosen = np.sort(rng.choice(len(positions), size=count, replace=False))
    chosen_positions = tuple(positions[i] for i in chosen)

    new_ids = list(seq.ids)
    originals = []
    used_mask = []
    for pos in chosen_positions:
        originals.append(seq.ids[pos])
        if rng.random() < p_replace:
            new_ids[pos] = MASK_ID
            used_mask.append(True)
        else:
            new_ids[pos] = int(rng.integers(0, NUM_BYTES))
            used_mask.append(False)

    masked_seq = TokenSequence(
        ids=tuple(new_ids), attention_mask=seq.attention_mask, raw_len=seq.raw_len
    )
    plan = MaskPlan(
        positions=chosen_positions,
        originals=tuple(originals),
        used_mask_token=tuple(used_mask),
    )
    return masked_seq, plan
