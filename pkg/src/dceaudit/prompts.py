"""Prompt rendering for choice sets and strict parsing of agent replies.

Template files are plain text in two parts separated by a line holding only
``---``. The first part is the per-case block, with ``{{CASE_NO}}`` (1-based)
and ``{{BULLETS}}`` placeholders; the second is the prompt body containing
``{{CASES}}``. Case blocks are joined with a blank line. A single trailing
newline at the end of the file is ignored.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .schema import AttributeSchema, ChoiceSet, SchemaError

DEFAULT_TEMPLATE_NAME = "immigrant_prompt.txt"
CLOSING_SENTENCE = "Respond with one word only."
_SEPARATOR = "\n---\n"
_TRAILING_PUNCT = ".,!;:"


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    case_block_format: str
    instruction_text: str
    preamble: str = ""

    def __post_init__(self):
        if "{{BULLETS}}" not in self.case_block_format:
            raise TemplateError("case block format lacks {{BULLETS}}")
        # the closing sentence may be wrapped across lines
        if CLOSING_SENTENCE not in " ".join(self.instruction_text.split()):
            raise TemplateError(f"instruction text must contain {CLOSING_SENTENCE!r}")

    @classmethod
    def from_text(cls, text: str) -> "PromptTemplate":
        if text.endswith("\n"):
            text = text[:-1]
        if _SEPARATOR not in text:
            raise TemplateError("template needs a '---' line between case block and body")
        case_fmt, body = text.split(_SEPARATOR, 1)
        if body.count("{{CASES}}") != 1:
            raise TemplateError("template body must contain {{CASES}} exactly once")
        pre, post = body.split("{{CASES}}")
        return cls(case_block_format=case_fmt, instruction_text=post, preamble=pre)

    def to_text(self) -> str:
        return (self.case_block_format + _SEPARATOR + self.preamble + "{{CASES}}"
                + self.instruction_text + "\n")

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


def load_template(path: str | Path | None = None) -> PromptTemplate:
    if path is None:
        text = resources.files("dceaudit.data").joinpath(DEFAULT_TEMPLATE_NAME).read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return PromptTemplate.from_text(text)


def render_prompt(choice_set: ChoiceSet, schema: AttributeSchema, template: PromptTemplate) -> str:
    blocks = []
    for k, profile in enumerate(choice_set.profiles, start=1):
        if len(profile.assignment) != len(schema.attributes):
            raise SchemaError(f"profile {k} of set {choice_set.id} does not cover every attribute")
        profile.validate(schema)
        bullets = "".join(
            f"- {attr.prompt_label}: {attr.levels[i]}\n"
            for attr, i in zip(schema.attributes, profile.assignment)
        )
        blocks.append(template.case_block_format
                      .replace("{{CASE_NO}}", str(k))
                      .replace("{{BULLETS}}", bullets))
    return template.preamble + "\n".join(blocks) + template.instruction_text


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ParsedChoice:
    set_id: int
    chosen_index: Optional[int]
    raw_text: str
    normalized_text: str

    @property
    def effective(self) -> bool:
        return self.chosen_index is not None

    def to_json(self) -> dict:
        return {"set_id": self.set_id, "raw_text": self.raw_text, "chosen_index": self.chosen_index}


def normalize_reply(raw: str) -> str:
    """Trim, drop trailing ``.,!;:`` and case-fold."""
    text = raw.strip()
    while text and (text[-1] in _TRAILING_PUNCT or text[-1].isspace()):
        text = text[:-1]
    return text.casefold()


_CASE_RE = re.compile(r"case ([0-9]+)")


def parse_choice(raw: str, j_profiles: int, set_id: int = -1) -> ParsedChoice:
    """Map a reply to a 0-based profile index.

    Only an exact ``case k`` (after normalization) is accepted; anything else,
    including longer sentences that mention a case, is ineffective.
    """
    norm = normalize_reply(raw)
    m = _CASE_RE.fullmatch(norm)
    chosen = None
    if m:
        k = int(m.group(1))
        if 1 <= k <= j_profiles and m.group(1) == str(k):
            chosen = k - 1
    return ParsedChoice(set_id=set_id, chosen_index=chosen, raw_text=raw, normalized_text=norm)


def effective_response_rate(records: Sequence[ParsedChoice]) -> float:
    if not records:
        raise ValueError("no records")
    return sum(r.chosen_index is not None for r in records) / len(records)


def write_parsed(records: Iterable[ParsedChoice], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), ensure_ascii=False) + "\n")
