"""Randomized choice-set generation and design diagnostics."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import AttributeSchema, ChoiceSet, Profile, SchemaError

GENERATOR_NAME = "numpy.random.PCG64"


@dataclass(frozen=True)
class DesignSpec:
    n_sets: int = 10_000
    j_profiles: int = 2
    seed: int = 0
    schema_ref: str = ""

    def __post_init__(self):
        if self.n_sets < 1:
            raise ValueError("n_sets must be >= 1")
        if self.j_profiles < 2:
            raise ValueError("j_profiles must be >= 2")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def generate_design(schema: AttributeSchema, spec: DesignSpec) -> list[ChoiceSet]:
    """Draw ``spec.n_sets`` choice sets of uniformly random profiles.

    Each attribute level is sampled independently and uniformly. A set in
    which any two profiles coincide is discarded and redrawn as a whole, so
    the output depends only on (schema, spec).
    """
    n_levels = np.array([a.n_levels for a in schema.attributes], dtype=np.int64)
    space = int(np.prod(n_levels.astype(object)))
    if space < spec.j_profiles:
        raise SchemaError(
            f"schema admits only {space} distinct profiles, cannot fill sets of {spec.j_profiles}")

    rng = np.random.Generator(np.random.PCG64(spec.seed))
    out = []
    for set_id in range(spec.n_sets):
        while True:
            draw = rng.integers(0, n_levels, size=(spec.j_profiles, len(n_levels)))
            rows = {tuple(r) for r in draw.tolist()}
            if len(rows) == spec.j_profiles:
                break
        profiles = tuple(Profile(tuple(r)) for r in draw.tolist())
        out.append(ChoiceSet(set_id, profiles))
    return out


@dataclass
class DiagnosticsSummary:
    n_sets: int
    # overlap_histogram[k] = number of sets in which all profiles share the
    # same level on exactly k attributes
    overlap_histogram: list[int]
    # per-attribute count of sets with a shared level on that attribute
    overlap_by_attribute: dict[str, int]
    level_frequencies: dict[str, list[int]]

    def to_dict(self) -> dict:
        return asdict(self)


def design_diagnostics(design: Sequence[ChoiceSet], schema: AttributeSchema) -> DiagnosticsSummary:
    if not design:
        raise ValueError("design is empty")
    n_attr = len(schema.attributes)
    arr = np.array([[p.assignment for p in cs.profiles] for cs in design])  # (S, J, A)
    same = np.all(arr == arr[:, :1, :], axis=1)  # (S, A)
    k = same.sum(axis=1)
    hist = np.bincount(k, minlength=n_attr + 1)
    freqs = {}
    for a_idx, a in enumerate(schema.attributes):
        freqs[a.name] = np.bincount(arr[:, :, a_idx].ravel(), minlength=a.n_levels).tolist()
    return DiagnosticsSummary(
        n_sets=len(design),
        overlap_histogram=hist.tolist(),
        overlap_by_attribute={a.name: int(same[:, i].sum()) for i, a in enumerate(schema.attributes)},
        level_frequencies=freqs,
    )


def choice_set_to_json(cs: ChoiceSet, schema: AttributeSchema) -> dict:
    return {"id": cs.id, "profiles": [p.as_texts(schema) for p in cs.profiles]}


def choice_set_from_json(obj: dict, schema: AttributeSchema) -> ChoiceSet:
    profiles = tuple(Profile.from_texts(schema, p) for p in obj["profiles"])
    return ChoiceSet(int(obj["id"]), profiles)


def dumps_design(design: Iterable[ChoiceSet], schema: AttributeSchema) -> str:
    lines = [json.dumps(choice_set_to_json(cs, schema), ensure_ascii=False) for cs in design]
    return "".join(line + "\n" for line in lines)


def write_design(design: Iterable[ChoiceSet], schema: AttributeSchema, path: str | Path) -> None:
    Path(path).write_text(dumps_design(design, schema), encoding="utf-8")


def read_design(path: str | Path, schema: AttributeSchema) -> list[ChoiceSet]:
    design = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                design.append(choice_set_from_json(json.loads(line), schema))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad design line ({exc})") from exc
    ids = [cs.id for cs in design]
    if len(set(ids)) != len(ids):
        raise SchemaError(f"{path}: duplicate choice-set ids")
    return design


def design_manifest(spec: DesignSpec, schema: AttributeSchema, design_text: str | None = None) -> dict:
    schema_blob = json.dumps(schema.to_dict(), sort_keys=True).encode()
    man = {
        "generator": GENERATOR_NAME,
        "numpy_version": np.__version__,
        "seed": spec.seed,
        "n_sets": spec.n_sets,
        "j_profiles": spec.j_profiles,
        "schema_version": schema.version,
        "schema_sha256": hashlib.sha256(schema_blob).hexdigest(),
    }
    if design_text is not None:
        man["design_sha256"] = hashlib.sha256(design_text.encode()).hexdigest()
    return man
