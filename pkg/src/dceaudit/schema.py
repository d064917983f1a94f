"""Attribute/level vocabulary and the profile and choice-set value types.

Levels are addressed by 0-based index everywhere inside the package and by
verbatim text at file boundaries. The last level listed for an attribute is
its reference level: it carries no dummy column in the design matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

DEFAULT_SCHEMA_NAME = "immigrant_dce.schema.json"


class SchemaError(ValueError):
    """Raised for malformed schema files and invalid profiles/choice sets."""


@dataclass(frozen=True)
class Attribute:
    name: str
    levels: tuple[str, ...]
    prompt_label: str = ""

    def __post_init__(self):
        if not self.name:
            raise SchemaError("attribute name must be non-empty")
        if not self.prompt_label:
            object.__setattr__(self, "prompt_label", self.name)
        object.__setattr__(self, "levels", tuple(self.levels))
        if len(self.levels) < 2:
            raise SchemaError(f"attribute {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise SchemaError(f"attribute {self.name!r} has duplicate level texts")
        if any(not lv for lv in self.levels):
            raise SchemaError(f"attribute {self.name!r} has an empty level text")

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def reference_index(self) -> int:
        return len(self.levels) - 1

    def level_index(self, text: str) -> int:
        try:
            return self.levels.index(text)
        except ValueError:
            raise SchemaError(f"{text!r} is not a level of {self.name!r}") from None


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes of a choice experiment.

    Immutable; safe to share across threads.
    """

    attributes: tuple[Attribute, ...]
    version: str = "unversioned"
    _by_name: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise SchemaError("schema has no attributes")
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate attribute names")
        object.__setattr__(self, "_by_name", {a.name: a for a in self.attributes})

    def __getitem__(self, name: str) -> Attribute:
        try:
            return self._by_name[name]
        except KeyError:
            raise SchemaError(f"unknown attribute {name!r}") from None

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    @property
    def n_levels_total(self) -> int:
        return sum(a.n_levels for a in self.attributes)

    @property
    def n_parameters(self) -> int:
        """Number of dummy-coded coefficients (non-reference levels)."""
        return sum(a.n_levels - 1 for a in self.attributes)

    def parameter_labels(self) -> list[tuple[str, str]]:
        """(attribute, level) for every non-reference level, in column order."""
        return [(a.name, lv) for a in self.attributes for lv in a.levels[:-1]]

    def column_blocks(self) -> dict[str, slice]:
        """Column slice of each attribute's dummy block."""
        blocks, start = {}, 0
        for a in self.attributes:
            blocks[a.name] = slice(start, start + a.n_levels - 1)
            start += a.n_levels - 1
        return blocks

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "attributes": [
                {"name": a.name, "prompt_label": a.prompt_label, "levels": list(a.levels)}
                for a in self.attributes
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributeSchema":
        try:
            raw_attrs = data["attributes"]
            attrs = [
                Attribute(
                    name=item["name"],
                    levels=tuple(item["levels"]),
                    prompt_label=item.get("prompt_label") or item["name"],
                )
                for item in raw_attrs
            ]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema: {exc}") from exc
        return cls(tuple(attrs), version=str(data.get("version", "unversioned")))


def load_schema(path: str | Path | None = None) -> AttributeSchema:
    """Load and validate a schema file; ``None`` loads the bundled immigrant DCE."""
    if path is None:
        text = resources.files("dceaudit.data").joinpath(DEFAULT_SCHEMA_NAME).read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"cannot parse schema file: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("schema file must hold a JSON object")
    return AttributeSchema.from_dict(data)


def save_schema(schema: AttributeSchema, path: str | Path) -> None:
    Path(path).write_text(json.dumps(schema.to_dict(), indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def reference_level(schema: AttributeSchema, attribute_name: str) -> int:
    return schema[attribute_name].reference_index


@dataclass(frozen=True)
class Profile:
    """One alternative: a level index for every schema attribute."""

    assignment: tuple[int, ...]

    @classmethod
    def from_mapping(cls, schema: AttributeSchema, mapping: Mapping[str, int]) -> "Profile":
        missing = [n for n in schema.names if n not in mapping]
        if missing:
            raise SchemaError(f"profile is missing attributes: {missing}")
        extra = set(mapping) - set(schema.names)
        if extra:
            raise SchemaError(f"profile has unknown attributes: {sorted(extra)}")
        prof = cls(tuple(int(mapping[n]) for n in schema.names))
        prof.validate(schema)
        return prof

    @classmethod
    def from_texts(cls, schema: AttributeSchema, texts: Mapping[str, str]) -> "Profile":
        idx = {}
        for name, text in texts.items():
            idx[name] = schema[name].level_index(text)
        return cls.from_mapping(schema, idx)

    def validate(self, schema: AttributeSchema) -> None:
        if len(self.assignment) != len(schema.attributes):
            raise SchemaError("profile length does not match schema")
        for a, i in zip(schema.attributes, self.assignment):
            if not 0 <= i < a.n_levels:
                raise SchemaError(f"level index {i} out of range for {a.name!r}")

    def as_mapping(self, schema: AttributeSchema) -> dict[str, int]:
        return dict(zip(schema.names, self.assignment))

    def as_texts(self, schema: AttributeSchema) -> dict[str, str]:
        return {a.name: a.levels[i] for a, i in zip(schema.attributes, self.assignment)}


@dataclass(frozen=True)
class ChoiceSet:
    id: int
    profiles: tuple[Profile, ...]

    def __post_init__(self):
        object.__setattr__(self, "profiles", tuple(self.profiles))
        if self.id < 0:
            raise SchemaError("choice set id must be non-negative")
        if len(self.profiles) < 2:
            raise SchemaError("a choice set needs at least 2 profiles")
        if len(set(self.profiles)) != len(self.profiles):
            raise SchemaError(f"choice set {self.id} contains identical profiles")

    @property
    def j_profiles(self) -> int:
        return len(self.profiles)

    def validate(self, schema: AttributeSchema) -> None:
        for p in self.profiles:
            p.validate(schema)


def profiles_from_texts(schema: AttributeSchema, items: Sequence[Mapping[str, str]]) -> tuple[Profile, ...]:
    return tuple(Profile.from_texts(schema, t) for t in items)
