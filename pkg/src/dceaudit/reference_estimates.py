"""Published MNL estimates for the immigrant DCE.

Three choosers were fitted on the bundled schema: human survey respondents,
``gpt-3.5-turbo-1106`` and ``gpt-4-turbo-2024-04-09``. Rows follow the
schema's column order (non-reference levels, attribute by attribute) and hold
(short label, estimate, standard error) rounded to two decimals.
"""

from __future__ import annotations

import numpy as np

from .schema import AttributeSchema

SHORT_LABELS = [
    "male",
    "4th grade", "8th grade", "high school", "two-year college", "college degree", "graduate degree",
    "broken English", "tried English but unable", "used interpreter",
    "Germany", "France", "Mexico", "Philippines", "Poland", "China", "Sudan", "Somalia", "Iraq",
    "waiter", "child care provider", "gardener", "financial analyst", "construction worker",
    "teacher", "computer programmer", "nurse", "research scientist", "doctor",
    "1-2 years", "3-5 years", "5+ years",
    "contract with employer", "interviews with employer", "no plans to look for work",
    "seek better job", "escape persecution",
    "once as tourist", "many times as tourist", "six months with family", "once w/o authorization",
]

# (estimate, SE) per row of SHORT_LABELS
_HUMAN = [
    (-0.13, 0.04),
    (0.16, 0.07), (0.28, 0.07), (0.60, 0.07), (0.80, 0.08), (0.92, 0.08), (0.89, 0.08),
    (-0.33, 0.06), (-0.70, 0.06), (-0.84, 0.06),
    (0.20, 0.09), (0.10, 0.09), (0.03, 0.09), (0.09, 0.09), (0.14, 0.09), (-0.14, 0.09),
    (-0.32, 0.09), (-0.28, 0.09), (-0.63, 0.09),
    (0.00, 0.08), (0.09, 0.08), (0.09, 0.08), (0.23, 0.12), (0.19, 0.08),
    (0.34, 0.08), (0.34, 0.12), (0.43, 0.08), (0.60, 0.12), (0.74, 0.12),
    (0.35, 0.06), (0.56, 0.06), (0.59, 0.06),
    (0.61, 0.06), (0.11, 0.06), (-0.86, 0.06),
    (-0.20, 0.04), (0.23, 0.07),
    (0.26, 0.06), (0.29, 0.06), (0.39, 0.06), (-0.59, 0.06),
]
_GPT35 = [
    (-0.34, 0.04),
    (0.47, 0.08), (1.04, 0.08), (1.61, 0.09), (1.74, 0.09), (2.22, 0.09), (2.21, 0.09),
    (-2.34, 0.07), (-3.14, 0.08), (-2.01, 0.07),
    (0.46, 0.10), (0.28, 0.10), (-0.11, 0.10), (-0.03, 0.10), (0.33, 0.10), (-0.01, 0.10),
    (-0.07, 0.10), (-0.18, 0.10), (-0.09, 0.10),
    (0.39, 0.10), (0.88, 0.10), (0.08, 0.10), (1.74, 0.11), (0.45, 0.10),
    (1.43, 0.11), (1.90, 0.11), (1.61, 0.11), (2.08, 0.11), (1.95, 0.11),
    (1.61, 0.07), (2.14, 0.07), (2.64, 0.08),
    (2.37, 0.07), (-0.20, 0.06), (-0.94, 0.06),
    (-0.40, 0.05), (-0.13, 0.05),
    (0.46, 0.07), (0.69, 0.07), (0.77, 0.07), (-0.73, 0.07),
]
_GPT4 = [
    (-0.52, 0.05),
    (0.23, 0.10), (0.95, 0.10), (1.70, 0.10), (1.91, 0.10), (2.41, 0.11), (2.45, 0.11),
    (-1.87, 0.08), (-2.91, 0.09), (-1.96, 0.08),
    (0.28, 0.12), (-0.07, 0.12), (-0.25, 0.12), (0.17, 0.11), (0.34, 0.12), (-0.03, 0.12),
    (0.31, 0.12), (0.13, 0.11), (0.36, 0.12),
    (0.00, 0.12), (0.55, 0.12), (-0.02, 0.12), (2.14, 0.13), (0.41, 0.12),
    (1.69, 0.13), (2.55, 0.13), (2.03, 0.13), (2.66, 0.13), (2.68, 0.13),
    (1.70, 0.08), (2.20, 0.09), (2.48, 0.09),
    (4.39, 0.12), (0.33, 0.07), (-1.40, 0.08),
    (-1.24, 0.07), (0.31, 0.06),
    (0.14, 0.08), (0.53, 0.08), (0.00, 0.08), (-3.80, 0.11),
]

CHOOSERS = {"human": _HUMAN, "gpt-3.5": _GPT35, "gpt-4": _GPT4}


def estimates(chooser: str) -> np.ndarray:
    """Coefficient vector for ``chooser`` in schema column order."""
    try:
        rows = CHOOSERS[chooser]
    except KeyError:
        raise KeyError(f"unknown chooser {chooser!r}; expected one of {sorted(CHOOSERS)}") from None
    return np.array([est for est, _ in rows])


def standard_errors(chooser: str) -> np.ndarray:
    return np.array([se for _, se in CHOOSERS[chooser]])


def estimates_by_level(chooser: str, schema: AttributeSchema) -> dict[str, dict[str, float]]:
    """Nest the coefficient vector as {attribute: {level text: value}}."""
    labels = schema.parameter_labels()
    if len(labels) != len(SHORT_LABELS):
        raise ValueError("reference estimates only apply to the immigrant DCE schema")
    out: dict[str, dict[str, float]] = {}
    for (attr, level), value in zip(labels, estimates(chooser)):
        out.setdefault(attr, {})[level] = float(value)
    return out
