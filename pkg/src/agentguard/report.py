"""Machine-readable audit report printed by every CLI check."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from agentguard import __version__
from agentguard.taxonomy import label_decision

__all__ = ["REPORT_FORMAT", "REPORT_VERSION", "AuditReport", "CheckResult"]

REPORT_FORMAT = "agentguard-report"
REPORT_VERSION = 1


@dataclass(frozen=True)
class CheckResult:
    check: str
    verdict: str
    reason: str | None = None
    surface: str | None = None
    stage: str | None = None
    detail: str = ""

    @classmethod
    def labelled(cls, check: str, verdict: str, reason: Enum | None, detail: str = "") -> CheckResult:
        """Build a result, attaching taxonomy labels when there is a reason."""
        if reason is None:
            return cls(check, verdict, None, None, None, detail)
        surface, stage = label_decision(reason)
        return cls(check, verdict, reason.value, surface, stage, detail)

    def to_dict(self) -> dict[str, Any]:
        return {
            "check": self.check,
            "verdict": self.verdict,
            "reason": self.reason,
            "surface": self.surface,
            "stage": self.stage,
            "detail": self.detail,
        }


@dataclass
class AuditReport:
    checks: list[CheckResult] = field(default_factory=list)
    tool_version: str = __version__

    def add(self, result: CheckResult) -> None:
        self.checks.append(result)

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "tool_version": self.tool_version,
            "checks": [c.to_dict() for c in self.checks],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
