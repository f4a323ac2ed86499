"""Benchmark workload: a fixed, checksummed sequence of templated prompts.

The suite file is newline-delimited JSON. The first line is a header
``{"checksum", "generation_seed", "version"}``; every following line is one
prompt ``{"category", "id", "length_class", "target_tokens", "text"}``.
The checksum is the SHA-256 of the canonical serialization of the prompt
lines only (sorted keys, UTF-8, one record per line, trailing newline).
"""

from __future__ import annotations

import hashlib
import json
import os
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import IO

from .errors import ConfigError, IntegrityError, ParseError

SUITE_VERSION = "1"

CATEGORIES = ("technical", "creative", "educational", "business")
LENGTH_CLASSES = ("short", "long")
TARGET_TOKENS = {"short": 2048, "long": 8192}

DEFAULT_TEMPLATES: dict[str, list[str]] = {
    "technical": [
        "Explain how {topic} works and describe its main components",
        "Write a step-by-step technical guide to implementing {topic}",
        "Compare the trade-offs of different approaches to {topic}",
        "Describe common failure modes in {topic} and how to debug them",
    ],
    "creative": [
        "Write a short story in which {topic} plays a central role",
        "Compose a poem inspired by {topic}",
        "Invent a fictional world shaped by {topic} and describe daily life there",
        "Write a dialogue between two characters who disagree about {topic}",
    ],
    "educational": [
        "Provide a thorough explanation of {topic}",
        "Design a lesson plan that introduces students to {topic}",
        "Summarize the history and key ideas of {topic}",
        "Create a set of practice questions with answers about {topic}",
    ],
    "business": [
        "Draft a business plan for a startup focused on {topic}",
        "Write a market analysis report about {topic}",
        "Prepare an executive briefing on the risks and opportunities of {topic}",
        "Outline a go-to-market strategy for a product built around {topic}",
    ],
}

DEFAULT_TOPICS: dict[str, list[str]] = {
    "technical": [
        "distributed databases",
        "compiler optimization",
        "container orchestration",
        "public key cryptography",
        "GPU memory hierarchies",
        "network congestion control",
    ],
    "creative": [
        "a lighthouse keeper",
        "a city without electricity",
        "an old violin",
        "migrating birds",
        "a forgotten library",
        "the last day of summer",
    ],
    "educational": [
        "advanced mathematics",
        "photosynthesis",
        "the French Revolution",
        "plate tectonics",
        "probability theory",
        "the human immune system",
    ],
    "business": [
        "renewable energy storage",
        "subscription software",
        "urban logistics",
        "plant-based food",
        "remote team management",
        "supply chain resilience",
    ],
}


@dataclass(frozen=True)
class PromptSpec:
    id: int
    category: str
    length_class: str
    target_tokens: int
    text: str

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "length_class": self.length_class,
            "target_tokens": self.target_tokens,
            "text": self.text,
        }


@dataclass(frozen=True)
class BenchmarkSuite:
    version: str
    generation_seed: int
    prompts: tuple[PromptSpec, ...]
    checksum: str = field(default="")

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if not self.checksum:
            object.__setattr__(self, "checksum", suite_checksum(self.prompts))

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)


def render_prompt(template: str, topic: str) -> str:
    return template.format(topic=topic)


def _length_class(index: int) -> str:
    # Alternates within each block of four and flips between blocks, so every
    # category sees both classes and the split stays balanced.
    return LENGTH_CLASSES[(index + index // 4) % 2]


def generate_suite(
    template_config: Mapping[str, Sequence[str]] | None = None,
    seed: int = 7,
    count: int = 100,
    topics: Mapping[str, Sequence[str]] | None = None,
) -> BenchmarkSuite:
    """Instantiate ``count`` prompts from category templates.

    Categories are assigned round-robin in ``CATEGORIES`` order and length
    classes alternate so both classes are equally represented. Template and
    topic choices are drawn from ``random.Random(seed)``, so the result is a
    pure function of the arguments.
    """
    template_config = DEFAULT_TEMPLATES if template_config is None else template_config
    topics = DEFAULT_TOPICS if topics is None else topics
    if count < len(CATEGORIES):
        raise ConfigError(f"count must be at least {len(CATEGORIES)}, got {count}")
    for category in CATEGORIES:
        if not template_config.get(category):
            raise ConfigError(f"no templates configured for category {category!r}")
        if not topics.get(category):
            raise ConfigError(f"no topics configured for category {category!r}")

    rng = random.Random(seed)
    prompts = []
    for i in range(count):
        category = CATEGORIES[i % len(CATEGORIES)]
        length_class = _length_class(i)
        template = rng.choice(list(template_config[category]))
        topic = rng.choice(list(topics[category]))
        prompts.append(
            PromptSpec(
                id=i,
                category=category,
                length_class=length_class,
                target_tokens=TARGET_TOKENS[length_class],
                text=render_prompt(template, topic),
            )
        )
    return BenchmarkSuite(version=SUITE_VERSION, generation_seed=seed, prompts=tuple(prompts))


def _canonical_line(record: Mapping) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def serialize_prompts(prompts: Sequence[PromptSpec]) -> bytes:
    return "".join(_canonical_line(p.to_dict()) + "\n" for p in prompts).encode("utf-8")


def suite_checksum(prompts: Sequence[PromptSpec]) -> str:
    return hashlib.sha256(serialize_prompts(prompts)).hexdigest()


def serialize_suite(suite: BenchmarkSuite) -> bytes:
    header = {
        "checksum": suite.checksum,
        "generation_seed": suite.generation_seed,
        "version": suite.version,
    }
    return (_canonical_line(header) + "\n").encode("utf-8") + serialize_prompts(suite.prompts)


def _prompt_from_record(record: dict, line: int) -> PromptSpec:
    try:
        prompt = PromptSpec(
            id=record["id"],
            category=record["category"],
            length_class=record["length_class"],
            target_tokens=record["target_tokens"],
            text=record["text"],
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed prompt record: {exc}", line) from None
    if not isinstance(prompt.id, int) or isinstance(prompt.id, bool) or prompt.id < 0:
        raise ParseError(f"invalid prompt id {prompt.id!r}", line)
    if prompt.category not in CATEGORIES:
        raise ParseError(f"unknown category {prompt.category!r}", line)
    if prompt.length_class not in LENGTH_CLASSES:
        raise ParseError(f"unknown length class {prompt.length_class!r}", line)
    if prompt.target_tokens != TARGET_TOKENS[prompt.length_class]:
        raise ParseError(
            f"target_tokens {prompt.target_tokens} does not match length class {prompt.length_class}",
            line,
        )
    if not isinstance(prompt.text, str) or not prompt.text:
        raise ParseError("prompt text is empty", line)
    return prompt


def load_suite(source: bytes | IO[bytes] | IO[str] | str | os.PathLike) -> BenchmarkSuite:
    """Parse a suite file and verify its checksum and invariants.

    ``source`` may be raw bytes, a binary or text stream, or a filesystem path.
    """
    if isinstance(source, bytes):
        data = source
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
        if isinstance(data, str):
            data = data.encode("utf-8")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"suite file is not valid UTF-8: {exc}") from None

    lines = text.splitlines()
    if not lines:
        raise ParseError("suite file is empty", 1)

    def parse(lineno: int, raw: str) -> dict:
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(record, dict):
            raise ParseError("record is not an object", lineno)
        return record

    header = parse(1, lines[0])
    for key in ("checksum", "generation_seed", "version"):
        if key not in header:
            raise ParseError(f"header missing {key!r}", 1)

    prompts: list[PromptSpec] = []
    seen: set[int] = set()
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        prompt = _prompt_from_record(parse(lineno, raw), lineno)
        if prompt.id in seen:
            raise ParseError(f"duplicate prompt id {prompt.id}", lineno)
        seen.add(prompt.id)
        prompts.append(prompt)

    if [p.id for p in prompts] != list(range(len(prompts))):
        raise ParseError("prompt ids must form the contiguous range 0..N-1 in order")

    actual = suite_checksum(prompts)
    if actual != header["checksum"]:
        raise IntegrityError(f"checksum mismatch: header {header['checksum']}, content {actual}")
    return BenchmarkSuite(
        version=str(header["version"]),
        generation_seed=int(header["generation_seed"]),
        prompts=tuple(prompts),
        checksum=actual,
    )


def coverage(suite: BenchmarkSuite) -> set[tuple[str, str]]:
    """Return the set of (category, length_class) pairs present in ``suite``."""
    return {(p.category, p.length_class) for p in suite.prompts}
