"""Bound-satisfaction records shared by the constants, Poisson and path checks.

A :class:`BoundEntry` compares one empirical left-hand side (with Monte Carlo
standard error where applicable) against a theoretical right-hand side.  An
entry is *satisfied* when ``lhs - 2*se <= rhs``; informational entries
(``rhs`` known only up to an unspecified constant) carry ``satisfied=None``
and never fail a report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


def fmt(x):
    """17-significant-digit decimal rendering used in all delimited output."""
    if isinstance(x, bool):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


@dataclass
class BoundEntry:
    name: str
    lhs: float
    rhs: float | None
    se: float = 0.0
    satisfied: bool | None = None
    note: str = ""

    @classmethod
    def check(cls, name, lhs, rhs, se=0.0, rel_tol=0.0, note=""):
        ok = lhs - 2.0 * se <= rhs * (1.0 + rel_tol)
        return cls(name, lhs, rhs, se=se, satisfied=ok, note=note)

    @classmethod
    def info(cls, name, lhs, rhs, se=0.0, note=""):
        return cls(name, lhs, rhs, se=se, satisfied=None, note=note)

    @classmethod
    def skipped(cls, name, reason):
        return cls(name, math.nan, None, satisfied=None, note=f"skipped: {reason}")

    @property
    def slack(self):
        """rhs/lhs; inf when the left-hand side vanishes."""
        if self.rhs is None or math.isnan(self.lhs):
            return math.nan
        if self.lhs <= 0.0:
            return math.inf
        return self.rhs / self.lhs


@dataclass
class BoundReport:
    entries: list[BoundEntry] = field(default_factory=list)

    def add(self, entry):
        self.entries.append(entry)
        return entry

    def violated(self):
        return [e for e in self.entries if e.satisfied is False]

    @property
    def all_satisfied(self):
        return not self.violated()

    def to_csv_rows(self):
        rows = [("name", "lhs", "se", "rhs", "slack", "satisfied")]
        for e in self.entries:
            sat = "" if e.satisfied is None else ("true" if e.satisfied else "false")
            rows.append((e.name, fmt(e.lhs), fmt(e.se), fmt(e.rhs), fmt(e.slack), sat))
        return rows

    def to_summary(self):
        """Key: value block per entry, blocks separated by blank lines."""
        blocks = []
        for e in self.entries:
            lines = [
                f"name: {e.name}",
                f"lhs: {fmt(e.lhs)}",
                f"se: {fmt(e.se)}",
                f"rhs: {fmt(e.rhs)}",
                f"slack: {fmt(e.slack)}",
                f"satisfied: {'' if e.satisfied is None else ('true' if e.satisfied else 'false')}",
            ]
            if e.note:
                lines.append(f"note: {e.note}")
            blocks.append("\n".join(lines))
        return "\n\n".join(blocks) + "\n"
