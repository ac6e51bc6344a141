"""Measured-vs-allowed audit records shared by the pipeline modules."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class AuditLine:
    """One checked claim: a measured quantity against its allowed bound."""

    claim: str
    measured: float
    allowed: float
    passed: bool
    note: str = ""

    def as_row(self) -> dict:
        return {
            "claim": self.claim,
            "measured": self.measured,
            "allowed": self.allowed,
            "pass": self.passed,
            "note": self.note,
        }


def check_le(claim: str, measured: float, allowed: float, note: str = "") -> AuditLine:
    return AuditLine(claim, float(measured), float(allowed), bool(measured <= allowed), note)


def check_ge(claim: str, measured: float, allowed: float, note: str = "") -> AuditLine:
    return AuditLine(claim, float(measured), float(allowed), bool(measured >= allowed), note)


@dataclass
class AuditSet:
    """Ordered collection of audit lines with convenience accessors."""

    lines: list = field(default_factory=list)

    def add(self, line: AuditLine) -> AuditLine:
        self.lines.append(line)
        return line

    def le(self, claim, measured, allowed, note=""):
        return self.add(check_le(claim, measured, allowed, note))

    def ge(self, claim, measured, allowed, note=""):
        return self.add(check_ge(claim, measured, allowed, note))

    def __getitem__(self, claim: str) -> AuditLine:
        for line in self.lines:
            if line.claim == claim:
                return line
        raise KeyError(claim)

    def all_pass(self) -> bool:
        return all(line.passed for line in self.lines)

    def as_rows(self) -> list[dict]:
        return [line.as_row() for line in self.lines]
