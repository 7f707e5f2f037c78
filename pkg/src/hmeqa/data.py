"""Sample records, the synthetic flagged-slot recall task, JSONL I/O and batching.

Flagged-slot recall: every frame carries one symbol per stream, one-hot encoded
in the appearance and motion feature rows. The question names a stream and a
frame position; the answer is that stream's symbol at that position.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, VocabularyError

PAD, QUERY, APPEARANCE, MOTION, SEP = "<pad>", "QUERY", "APPEARANCE", "MOTION", "SEP"
FAMILIES = ("open", "mc")


def synthetic_vocab(n_frames=8, n_symbols=10):
    """Token list; index 0 is the padding token."""
    return ([PAD, QUERY, APPEARANCE, MOTION, SEP]
            + [f"P{i}" for i in range(n_frames)]
            + [f"A{k}" for k in range(n_symbols)])


@dataclass
class SampleRecord:
    id: str
    appearance: np.ndarray  # (N_v, D_app)
    motion: np.ndarray  # (N_v, D_mot)
    question: list
    task: str = "open"
    answer: int = None
    candidates: list = field(default=None)
    positive: int = None

    def to_json(self):
        d = {
            "id": self.id,
            "task": self.task,
            "appearance": self.appearance.tolist(),
            "motion": self.motion.tolist(),
            "question": [int(t) for t in self.question],
            "answer": None if self.answer is None else int(self.answer),
        }
        if self.task == "mc":
            d["candidates"] = [[int(t) for t in c] for c in self.candidates]
            d["positive"] = int(self.positive)
        return d

    @classmethod
    def from_json(cls, d):
        try:
            rec = cls(
                id=str(d["id"]),
                appearance=np.asarray(d["appearance"], dtype=np.float64),
                motion=np.asarray(d["motion"], dtype=np.float64),
                question=[int(t) for t in d["question"]],
                task=d.get("task", "open"),
                answer=d.get("answer"),
                candidates=d.get("candidates"),
                positive=d.get("positive"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ContractError(f"malformed sample record: {e}") from e
        rec.check()
        return rec

    def check(self, vocab_size=None):
        if self.appearance.ndim != 2 or self.motion.ndim != 2:
            raise ContractError(f"sample {self.id}: feature arrays must be 2-D")
        if self.appearance.shape[0] != self.motion.shape[0] or self.appearance.shape[0] < 1:
            raise ContractError(f"sample {self.id}: appearance and motion frame counts differ")
        if not self.question:
            raise ContractError(f"sample {self.id}: empty question")
        if self.task not in FAMILIES:
            raise ContractError(f"sample {self.id}: unknown task {self.task!r}")
        if self.task == "mc":
            if not self.candidates or self.positive is None or not 0 <= self.positive < len(self.candidates):
                raise ContractError(f"sample {self.id}: bad candidates/positive")
        elif self.answer is None:
            raise ContractError(f"sample {self.id}: open-ended sample without answer")
        if vocab_size is not None:
            tokens = list(self.question) + [t for c in (self.candidates or []) for t in c]
            if min(tokens) < 0 or max(tokens) >= vocab_size:
                raise VocabularyError(f"sample {self.id}: token id outside vocabulary of size {vocab_size}")


def generate_synthetic(family, count, seed, n_frames=8, n_symbols=10, num_choices=4):
    """Deterministic flagged-slot recall dataset.

    Args:
        family: ``"open"`` (answer is a class in ``[0, n_symbols)``) or
            ``"mc"`` (``num_choices`` candidate answer words, one correct).
        count: number of samples.
        seed: generator seed; equal seeds give byte-identical datasets.
    """
    if family not in FAMILIES:
        raise ConfigError(f"unknown task family {family!r}; expected one of {FAMILIES}")
    if family == "mc" and not 2 <= num_choices <= n_symbols:
        raise ConfigError("num_choices must lie in [2, n_symbols]")
    vocab = {tok: i for i, tok in enumerate(synthetic_vocab(n_frames, n_symbols))}
    rng = np.random.default_rng(seed)
    eye = np.eye(n_symbols)
    records = []
    for k in range(count):
        a = rng.integers(0, n_symbols, size=n_frames)
        m = rng.integers(0, n_symbols, size=n_frames)
        stream = int(rng.integers(0, 2))
        pos = int(rng.integers(0, n_frames))
        answer = int((a if stream == 0 else m)[pos])
        question = [vocab[QUERY], vocab[APPEARANCE if stream == 0 else MOTION], vocab[f"P{pos}"]]
        rec = SampleRecord(id=f"s{k:05d}", appearance=eye[a], motion=eye[m], question=question,
                           task=family, answer=answer)
        if family == "mc":
            wrong = rng.choice([s for s in range(n_symbols) if s != answer], size=num_choices - 1, replace=False)
            positive = int(rng.integers(0, num_choices))
            symbols = list(wrong)
            symbols.insert(positive, answer)
            rec.candidates = [[vocab[f"A{int(s)}"]] for s in symbols]
            rec.positive = positive
        records.append(rec)
    return records


def dumps_jsonl(records):
    return "".join(json.dumps(r.to_json(), sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_jsonl(records))


def read_jsonl(path, vocab_size=None):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise ContractError(f"{path}:{lineno}: invalid JSON: {e}") from e
            rec = SampleRecord.from_json(d)
            rec.check(vocab_size)
            records.append(rec)
    return records


def split(records, val_fraction, seed):
    """Seeded train/validation split."""
    n = len(records)
    n_val = int(round(n * val_fraction))
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    val_idx = set(order[:n_val].tolist())
    train = [r for i, r in enumerate(records) if i not in val_idx]
    val = [r for i, r in enumerate(records) if i in val_idx]
    return train, val


@dataclass
class Batch:
    ids: list
    appearance: np.ndarray  # (B, N_v, D_app)
    motion: np.ndarray
    v_len: np.ndarray  # (B,)
    tokens: np.ndarray  # (B, N_q) or (B * K, N_q) for multiple choice
    q_len: np.ndarray
    task: str
    labels: np.ndarray = None  # (B,) open-ended classes
    positive: np.ndarray = None  # (B,) multiple-choice positive indices
    num_choices: int = 1

    def __len__(self):
        return len(self.ids)


def _pad_tokens(seqs):
    n = max(len(s) for s in seqs)
    out = np.zeros((len(seqs), n), dtype=np.intp)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out, np.array([len(s) for s in seqs], dtype=np.intp)


def collate(records, sep_id=4):
    """Stack records into padded arrays.

    Multiple-choice records expand into one token row per candidate,
    ``question + [SEP] + candidate``, grouped by sample.
    """
    if not records:
        raise ContractError("cannot collate an empty batch")
    task = records[0].task
    if any(r.task != task for r in records):
        raise ContractError("a batch must not mix task kinds")
    n_v = max(r.appearance.shape[0] for r in records)
    B = len(records)
    app = np.zeros((B, n_v, records[0].appearance.shape[1]))
    mot = np.zeros((B, n_v, records[0].motion.shape[1]))
    for i, r in enumerate(records):
        app[i, :r.appearance.shape[0]] = r.appearance
        mot[i, :r.motion.shape[0]] = r.motion
    v_len = np.array([r.appearance.shape[0] for r in records], dtype=np.intp)
    if task == "mc":
        k = len(records[0].candidates)
        if any(len(r.candidates) != k for r in records):
            raise ContractError("all multiple-choice samples in a batch need the same candidate count")
        seqs = [list(r.question) + [sep_id] + list(c) for r in records for c in r.candidates]
        tokens, q_len = _pad_tokens(seqs)
        return Batch([r.id for r in records], app, mot, v_len, tokens, q_len, task,
                     labels=np.array([r.answer if r.answer is not None else -1 for r in records]),
                     positive=np.array([r.positive for r in records], dtype=np.intp), num_choices=k)
    tokens, q_len = _pad_tokens([r.question for r in records])
    return Batch([r.id for r in records], app, mot, v_len, tokens, q_len, task,
                 labels=np.array([r.answer for r in records], dtype=np.intp))
