"""Reading-corpus data model, synthetic generation, splitting, and disk IO.

A dataset is a list of (EEG sequence, token sequence) pairs over a shared
vocabulary. Word-level feature vectors can be naturally missing (no fixation
was recorded); those entries are stored as None and tracked separately from
any training-time masking. On disk a dataset is a JSON-lines manifest plus
one little-endian binary feature file per sentence reading.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

PAD, BOS, EOS, UNK, MASK = 0, 1, 2, 3, 4
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>", "<mask>")

FEATURE_MAGIC = b"EEGF"
FEATURE_VERSION = 1


class Vocabulary:
    """Bijective token-string <-> id map with fixed reserved ids 0..4."""

    def __init__(self, content_tokens):
        self._tokens = list(RESERVED_TOKENS)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        for tok in content_tokens:
            if tok in self._ids:
                raise DataError(f"duplicate or reserved token in vocabulary: {tok!r}")
            self._ids[tok] = len(self._tokens)
            self._tokens.append(tok)

    def __len__(self):
        return len(self._tokens)

    def id_of(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens) -> list:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids) -> list:
        return [self._tokens[i] for i in ids]

    @property
    def content_ids(self) -> range:
        return range(len(RESERVED_TOKENS), len(self._tokens))


@dataclass
class EEGSequence:
    """Word-level feature rows (None where naturally missing) + sentence row."""

    word_features: list  # list[np.ndarray | None], float32 rows
    sentence_feature: np.ndarray
    subject_id: str
    sentence_id: str

    @property
    def n_words(self) -> int:
        return len(self.word_features)

    def natural_mask(self) -> np.ndarray:
        """True where the word-level feature is missing; sentence row appended as False."""
        flags = np.array([f is None for f in self.word_features] + [False], dtype=bool)
        return flags


@dataclass
class EEGTextPair:
    eeg: EEGSequence
    tokens: list  # content token ids, aligned 1:1 with word_features

    def __post_init__(self):
        if len(self.tokens) != self.eeg.n_words:
            raise DataError(
                f"token/feature length mismatch for {self.eeg.sentence_id}: "
                f"{len(self.tokens)} tokens vs {self.eeg.n_words} feature rows"
            )


@dataclass
class Dataset:
    vocab: Vocabulary
    pairs: list
    feature_dim: int

    def __len__(self):
        return len(self.pairs)

    def subjects(self) -> list:
        seen = {}
        for p in self.pairs:
            seen.setdefault(p.eeg.subject_id, None)
        return list(seen)


@dataclass
class DatasetStats:
    missing_pairs: int
    total_word_tokens: int

    @property
    def nmr(self) -> float:
        return self.missing_pairs / self.total_word_tokens

    @property
    def nmr_percent(self) -> float:
        return 100.0 * self.nmr


def build_input_sequence(pair: EEGTextPair, feature_dim: int):
    """Feature-token matrix [(N+1) x dim] with the sentence row last.

    Missing word rows are zero-filled; the returned natural flags mark them.
    """
    rows = []
    for f in pair.eeg.word_features:
        rows.append(np.zeros(feature_dim, dtype=np.float32) if f is None else f)
    rows.append(pair.eeg.sentence_feature)
    return np.stack(rows).astype(np.float64), pair.eeg.natural_mask()


def compute_nmr(dataset: Dataset) -> DatasetStats:
    if not dataset.pairs:
        raise DataError("compute_nmr: empty dataset")
    missing = sum(sum(1 for f in p.eeg.word_features if f is None) for p in dataset.pairs)
    total = sum(p.eeg.n_words for p in dataset.pairs)
    return DatasetStats(missing_pairs=missing, total_word_tokens=total)


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

SUBJECT_OFFSET_SIGMA = 0.1


@dataclass
class SyntheticConfig:
    n_subjects: int = 2
    n_sentences: int = 32  # distinct sentences, read by every subject
    vocab_size: int = 256
    len_range: tuple = (4, 8)
    feature_dim: int = 32
    noise_sigma: float = 0.02
    target_nmr: float = 0.1
    seed: int = 0


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Deterministic text-evoked feature corpus.

    Each content token owns a fixed Gaussian prototype; a word reading is
    prototype + subject offset + noise, independently dropped with
    probability target_nmr. The sentence row is the mean of all word
    prototypes (dropped ones included) + noise, so it summarizes the whole
    sentence even when word rows are missing.
    """
    if config.vocab_size < 10:
        raise ConfigError(f"vocab_size must be >= 10, got {config.vocab_size}")
    if config.feature_dim < 8:
        raise ConfigError(f"feature_dim must be >= 8, got {config.feature_dim}")

    rng = np.random.default_rng(config.seed)
    n_content = config.vocab_size - len(RESERVED_TOKENS)
    vocab = Vocabulary(f"w{i:03d}" for i in range(n_content))

    prototypes = rng.standard_normal((n_content, config.feature_dim))
    offsets = SUBJECT_OFFSET_SIGMA * rng.standard_normal((config.n_subjects, config.feature_dim))

    lo, hi = config.len_range
    sentences = []
    for s in range(config.n_sentences):
        length = int(rng.integers(lo, hi + 1))
        ids = rng.integers(0, n_content, size=length)
        sentences.append([int(i) + len(RESERVED_TOKENS) for i in ids])

    pairs = []
    for subj in range(config.n_subjects):
        subject_id = f"sub{subj:02d}"
        for s, token_ids in enumerate(sentences):
            protos = prototypes[[t - len(RESERVED_TOKENS) for t in token_ids]]
            words = []
            for row in protos:
                feat = row + offsets[subj] + config.noise_sigma * rng.standard_normal(config.feature_dim)
                dropped = rng.random() < config.target_nmr
                words.append(None if dropped else feat.astype(np.float32))
            sent = protos.mean(axis=0) + config.noise_sigma * rng.standard_normal(config.feature_dim)
            eeg = EEGSequence(
                word_features=words,
                sentence_feature=sent.astype(np.float32),
                subject_id=subject_id,
                sentence_id=f"s{s:04d}",
            )
            pairs.append(EEGTextPair(eeg=eeg, tokens=list(token_ids)))
    return Dataset(vocab=vocab, pairs=pairs, feature_dim=config.feature_dim)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

@dataclass
class SplitPlan:
    mode: str = "per_subject_811"  # or "loso"
    seed: int = 0


@dataclass
class Split:
    train: list
    val: list
    test: list


@dataclass
class Fold:
    held_out_subject: str
    train: list
    test: list


def make_split(dataset: Dataset, plan: SplitPlan):
    """8:1:1 per subject (floor rounding, remainder to train), or LOSO folds."""
    by_subject = {}
    for i, p in enumerate(dataset.pairs):
        by_subject.setdefault(p.eeg.subject_id, []).append(i)

    if plan.mode == "per_subject_811":
        rng = np.random.default_rng(plan.seed)
        train, val, test = [], [], []
        for subject in sorted(by_subject):
            idx = list(by_subject[subject])
            if len(idx) < 10:
                raise ConfigError(f"subject {subject} has {len(idx)} sentences; 8:1:1 needs >= 10")
            rng.shuffle(idx)
            n = len(idx)
            n_side = n // 10
            test.extend(idx[:n_side])
            val.extend(idx[n_side : 2 * n_side])
            train.extend(idx[2 * n_side :])
        return Split(train=sorted(train), val=sorted(val), test=sorted(test))

    if plan.mode == "loso":
        if len(by_subject) < 2:
            raise ConfigError(f"leave-one-subject-out needs >= 2 subjects, got {len(by_subject)}")
        folds = []
        for subject in sorted(by_subject):
            test = sorted(by_subject[subject])
            train = sorted(i for s, idx in by_subject.items() if s != subject for i in idx)
            folds.append(Fold(held_out_subject=subject, train=train, test=test))
        return folds

    raise ConfigError(f"unknown split mode {plan.mode!r}")


# ---------------------------------------------------------------------------
# disk format
# ---------------------------------------------------------------------------

def _feature_matrix(pair: EEGTextPair, feature_dim: int) -> np.ndarray:
    rows, _ = build_input_sequence(pair, feature_dim)
    return rows.astype("<f4")


def write_feature_file(path: Path, matrix: np.ndarray):
    rows, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<III", FEATURE_VERSION, rows, dim))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_feature_file(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {FEATURE_MAGIC!r}")
    version, rows, dim = struct.unpack("<III", raw[4:16])
    if version != FEATURE_VERSION:
        raise DataError(f"{path}: unsupported feature-file version {version}")
    payload = np.frombuffer(raw[16:], dtype="<f4")
    if payload.size != rows * dim:
        raise DataError(f"{path}: payload holds {payload.size} floats, header promises {rows * dim}")
    return payload.reshape(rows, dim)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write manifest.jsonl + features/*.eegf; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for pair in dataset.pairs:
            rel = f"features/{pair.eeg.subject_id}_{pair.eeg.sentence_id}.eegf"
            write_feature_file(out_dir / rel, _feature_matrix(pair, dataset.feature_dim))
            record = {
                "sentence_id": pair.eeg.sentence_id,
                "subject_id": pair.eeg.subject_id,
                "tokens": dataset.vocab.decode(pair.tokens),
                "feature_file": rel,
                "present_flags": [0 if f is None else 1 for f in pair.eeg.word_features],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    return manifest


def load_manifest(path, feature_dim: int | None = None) -> Dataset:
    """Parse and validate a manifest; every problem gets its own diagnostic."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    base = path.parent

    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            records.append((lineno, rec))
    if not records:
        raise DataError(f"{path}: manifest is empty")

    token_strings = sorted({t for _, rec in records for t in rec.get("tokens", [])})
    vocab = Vocabulary(token_strings)

    pairs = []
    dim = feature_dim
    for lineno, rec in records:
        where = f"{path}:{lineno}"
        tokens = rec.get("tokens", [])
        flags = rec.get("present_flags", [])
        if len(tokens) == 0:
            raise DataError(f"{where}: empty sentence (no tokens)")
        if len(flags) != len(tokens):
            raise DataError(f"{where}: alignment error: {len(tokens)} tokens vs {len(flags)} present flags")
        feat_path = base / rec["feature_file"]
        if not feat_path.exists():
            raise DataError(f"{where}: dangling feature file reference {rec['feature_file']!r}")
        matrix = read_feature_file(feat_path)
        if dim is None:
            dim = matrix.shape[1]
        if matrix.shape[1] != dim:
            raise DataError(
                f"{where}: dimension error in {rec['feature_file']!r}: expected dim {dim}, found {matrix.shape[1]}"
            )
        if matrix.shape[0] != len(tokens) + 1:
            raise DataError(
                f"{where}: alignment error: {len(tokens)} tokens vs {matrix.shape[0]} feature rows (need tokens+1)"
            )
        words = [matrix[i].copy() if flags[i] else None for i in range(len(tokens))]
        eeg = EEGSequence(
            word_features=words,
            sentence_feature=matrix[-1].copy(),
            subject_id=rec["subject_id"],
            sentence_id=rec["sentence_id"],
        )
        pairs.append(EEGTextPair(eeg=eeg, tokens=vocab.encode(tokens)))
    return Dataset(vocab=vocab, pairs=pairs, feature_dim=dim)
