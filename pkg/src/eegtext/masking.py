"""Training-time masking: random text masks, EEG masks with a compulsory
sentence-level mask, overall-ratio accounting, and learned-vector replacement.

Natural masks (missing source features) are data, not choices; training
masks are drawn here and never overlap them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import RESERVED_TOKENS
from .errors import DegenerateSampleError, ShapeError
from .tensor import Tensor

FORCED_SENTENCE = "forced_sentence"
RANDOM_ALL = "random_all"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass
class MaskPlan:
    """Per-sample mask decisions for one (EEG, text) pair."""

    text_masked: np.ndarray  # bool per text token (specials included, never flagged)
    eeg_masked: np.ndarray  # bool per feature token, length N+1
    eeg_natural: np.ndarray  # bool, from the data
    text_ratio: float
    eeg_ratio: float
    strategy: str
    seed: int

    def __post_init__(self):
        if (self.eeg_masked & self.eeg_natural).any():
            raise DegenerateSampleError("training mask overlaps a naturally missing position")
        if not self.text_masked.any() or not self.eeg_masked.any():
            raise DegenerateSampleError("mask plan must flag at least one position per modality")


def mask_text(token_ids, ratio: float, seed) -> np.ndarray:
    """Flag round(ratio * content-count) content positions, at least one.

    Special tokens (ids < 5) are never flagged.
    """
    if not 0.0 < ratio <= 1.0:
        raise ShapeError(f"mask_text: ratio must be in (0, 1], got {ratio}")
    ids = np.asarray(token_ids, dtype=np.int64)
    content = np.flatnonzero(ids >= len(RESERVED_TOKENS))
    if content.size == 0:
        raise DegenerateSampleError("mask_text: sequence has no content tokens")
    count = max(1, _round_half_up(ratio * content.size))
    rng = np.random.default_rng(seed)
    chosen = rng.choice(content, size=count, replace=False)
    flags = np.zeros(ids.size, dtype=bool)
    flags[chosen] = True
    return flags


def mask_eeg(natural_flags, ratio: float, strategy: str, seed) -> np.ndarray:
    """Flag EEG feature tokens for reconstruction.

    forced_sentence: the sentence position (last) is always flagged and
    round(ratio * present-word-count) present word positions join it.
    random_all: the sentence position competes like any other candidate and
    round(ratio * (present words + 1)) candidates are flagged (at least one).
    """
    if not 0.0 <= ratio <= 1.0:
        raise ShapeError(f"mask_eeg: ratio must be in [0, 1], got {ratio}")
    natural = np.asarray(natural_flags, dtype=bool)
    n_plus_1 = natural.size
    present_words = np.flatnonzero(~natural[:-1])
    if present_words.size == 0:
        raise DegenerateSampleError("mask_eeg: no present word-level features")
    rng = np.random.default_rng(seed)
    flags = np.zeros(n_plus_1, dtype=bool)

    if strategy == FORCED_SENTENCE:
        flags[-1] = True
        count = _round_half_up(ratio * present_words.size)
        if count > 0:
            flags[rng.choice(present_words, size=count, replace=False)] = True
        return flags

    if strategy == RANDOM_ALL:
        candidates = np.concatenate([present_words, [n_plus_1 - 1]])
        count = max(1, _round_half_up(ratio * candidates.size))
        flags[rng.choice(candidates, size=count, replace=False)] = True
        return flags

    raise ShapeError(f"mask_eeg: unknown strategy {strategy!r}")


def overall_mask_ratio(nmr: float, train_ratio: float) -> float:
    """Total masked fraction: natural masks plus training masks of the rest."""
    if not (0.0 <= nmr <= 1.0 and 0.0 <= train_ratio <= 1.0):
        raise ShapeError(f"overall_mask_ratio: arguments outside [0, 1]: {nmr}, {train_ratio}")
    return nmr + (1.0 - nmr) * train_ratio


def build_mask_plan(token_ids, natural_flags, text_ratio, eeg_ratio, strategy, seed) -> MaskPlan:
    text = mask_text(token_ids, text_ratio, (seed, 0))
    eeg = mask_eeg(natural_flags, eeg_ratio, strategy, (seed, 1))
    return MaskPlan(
        text_masked=text,
        eeg_masked=eeg,
        eeg_natural=np.asarray(natural_flags, dtype=bool),
        text_ratio=text_ratio,
        eeg_ratio=eeg_ratio,
        strategy=strategy,
        seed=seed,
    )


def apply_mask_replacements(embeddings: Tensor, flags, mask_vector: Tensor) -> Tensor:
    """Replace flagged rows with the single shared trainable mask vector."""
    flags = np.asarray(flags, dtype=bool)
    t, d = embeddings.shape
    if flags.shape != (t,):
        raise ShapeError(f"apply_mask_replacements: {flags.shape} flags vs {t} rows")
    if mask_vector.shape != (d,):
        raise ShapeError(f"apply_mask_replacements: mask vector width {mask_vector.shape} vs embeddings width {d}")
    if not flags.any():
        return embeddings
    keep = Tensor(np.where(flags, 0.0, 1.0)[:, None].astype(embeddings.dtype) * np.ones((1, d), dtype=embeddings.dtype))
    put = Tensor(flags[:, None].astype(embeddings.dtype))
    return T.add(T.mul(embeddings, keep), T.matmul(put, T.reshape(mask_vector, (1, d))))
