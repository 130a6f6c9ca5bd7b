"""Seeded synthetic corpora.

Documents are built from blocks. Clean blocks repeat sentences drawn from
a small template pool and become nearly free to predict once learned;
noisy blocks interleave random lowercase spans, which stay expensive. The
mix gives per-window losses that vary along a document.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from skim.corpus import SEP, encode

WORDS = (
    "the river city light market stone paper garden window morning north road "
    "teacher music winter harbor signal letter bridge forest engine quiet green "
    "small old bright across under after before every never often slowly carries "
    "builds opens finds keeps turns holds follows reads writes watches remembers"
).split()

LETTERS = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz", dtype=np.uint8)
ALNUM = np.frombuffer(b"abcdefghijklmnopqrstuvwxyz0123456789", dtype=np.uint8)


@dataclass(frozen=True)
class SynthSettings:
    n_docs: int = 64
    min_len: int = 4000
    max_len: int = 12000
    template_pool: int = 16
    block_len: int = 512
    noisy_fraction: float = 0.3
    noise_rate: float = 0.7
    span_min: int = 8
    span_max: int = 40

    @classmethod
    def from_config(cls, cfg) -> "SynthSettings":
        return cls(**{f: cfg[f"synth.{f}"] for f in cls.__dataclass_fields__})


def make_templates(rng: np.random.Generator, n: int) -> list[str]:
    out = []
    for _ in range(n):
        words = rng.choice(WORDS, size=int(rng.integers(6, 12)))
        sentence = " ".join(words)
        out.append(sentence[0].upper() + sentence[1:] + ". ")
    return out


def _random_span(rng, lo, hi, alphabet=LETTERS) -> str:
    return rng.choice(alphabet, size=int(rng.integers(lo, hi + 1))).tobytes().decode("ascii")


def synth_text(rng, templates, length: int, s: SynthSettings) -> str:
    parts: list[str] = []
    size = 0
    while size < length:
        noisy = rng.random() < s.noisy_fraction
        block = 0
        while block < s.block_len:
            if noisy and rng.random() < s.noise_rate:
                piece = _random_span(rng, s.span_min, s.span_max) + " "
            else:
                piece = templates[int(rng.integers(len(templates)))]
            parts.append(piece)
            block += len(piece)
        size += block
    return "".join(parts)[:length]


def synthetic_texts(settings: SynthSettings, seed: int) -> list[str]:
    rng = np.random.default_rng(seed)
    templates = make_templates(rng, settings.template_pool)
    return [
        synth_text(rng, templates, int(rng.integers(settings.min_len, settings.max_len + 1)), settings)
        for _ in range(settings.n_docs)
    ]


def write_jsonl(records, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return path


def write_corpus(settings: SynthSettings, seed: int, path) -> Path:
    return write_jsonl(({"text": t} for t in synthetic_texts(settings, seed)), path)


# -- synthetic long-context QA --------------------------------------------------

@dataclass
class QAExample:
    question: str
    passages: list[str]
    answer: str
    answer_positions: list[int]

    @property
    def question_tokens(self) -> np.ndarray:
        return encode(self.question)

    @property
    def answer_tokens(self) -> np.ndarray:
        return encode(self.answer)

    @property
    def evidence_tokens(self) -> np.ndarray:
        """Passages joined with SEP."""
        parts = []
        for i, p in enumerate(self.passages):
            if i:
                parts.append(np.array([SEP], dtype=encode("").dtype))
            parts.append(encode(p))
        return np.concatenate(parts)

    def to_record(self) -> dict:
        return {"question": self.question, "evidence": self.passages, "answer": self.answer,
                "answer_positions": self.answer_positions}

    @classmethod
    def from_record(cls, rec: dict) -> "QAExample":
        evidence = rec["evidence"]
        if isinstance(evidence, str):
            evidence = [evidence]
        positions = rec.get("answer_positions")
        if positions is None:
            positions = [i for i, p in enumerate(evidence) if rec["answer"] in p]
        return cls(rec["question"], list(evidence), rec["answer"], list(positions))


@dataclass(frozen=True)
class QASettings:
    n_examples: int = 200
    distractors: int = 40
    answer_passages: int = 3
    min_evidence: int = 8192
    entity_len: int = 6
    answer_len: int = 4

    @classmethod
    def from_config(cls, cfg) -> "QASettings":
        return cls(**{f: cfg[f"qa.{f}"] for f in cls.__dataclass_fields__})


def qa_examples(settings: QASettings, synth: SynthSettings, seed: int) -> list[QAExample]:
    rng = np.random.default_rng(seed)
    templates = make_templates(rng, synth.template_pool)
    n_passages = settings.distractors + settings.answer_passages
    # separators count toward evidence length
    passage_len = math.ceil(max(0, settings.min_evidence - (n_passages - 1)) / max(1, settings.distractors))
    out = []
    for _ in range(settings.n_examples):
        entity = _random_span(rng, settings.entity_len, settings.entity_len)
        answer = _random_span(rng, settings.answer_len, settings.answer_len, ALNUM)
        passages = [synth_text(rng, templates, passage_len, synth) for _ in range(settings.distractors)]
        positions = sorted(int(i) for i in rng.choice(n_passages, size=settings.answer_passages, replace=False))
        for pos in positions:
            passages.insert(pos, f"The key for {entity} is {answer}.")
        ex = QAExample(f"What is the key for {entity}?", passages, answer, positions)
        assert all(answer in ex.passages[p] for p in positions)
        out.append(ex)
    return out


def write_qa(examples, path) -> Path:
    return write_jsonl((ex.to_record() for ex in examples), path)


def read_qa(path) -> list[QAExample]:
    with open(path, encoding="utf-8") as fh:
        return [QAExample.from_record(json.loads(line)) for line in fh if line.strip()]
