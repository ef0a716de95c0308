import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from .contracts import VerificationError
from .structures import CheckReport

logger = logging.getLogger(__name__)


@dataclass
class AuditEntry:
    name: str
    value: Any
    rule: str
    passed: bool
    message: str = ""


class InvariantAudit:
    """
    Collects numeric rules and check reports for one run and decides the
    verdict. Nothing raises until `raise_if_failed`.
    """

    def __init__(self, label: str = "verify"):
        self.label = label
        self.entries: List[AuditEntry] = []

    def check(
        self,
        name: str,
        value: Any,
        *,
        min: Optional[float] = None,
        max: Optional[float] = None,
        eq: Any = None,
        message: Optional[str] = None,
    ) -> bool:
        violation = None
        rule_parts = []
        if min is not None:
            rule_parts.append(f">= {min:g}")
        if max is not None:
            rule_parts.append(f"<= {max:g}")
        if eq is not None:
            rule_parts.append(f"== {eq}")

        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
            v = float(value)
            if not np.isfinite(v) and (min is not None or max is not None):
                violation = f"Value {v} is not finite"
            elif min is not None and v < min:
                violation = f"Value {v:.6g} < min {min:g}"
            elif max is not None and v > max:
                violation = f"Value {v:.6g} > max {max:g}"
        if violation is None and eq is not None and value != eq:
            violation = f"Value {value} != {eq}"

        entry = AuditEntry(name, value, " and ".join(rule_parts), violation is None, message or violation or "")
        self.entries.append(entry)
        if violation:
            logger.warning(f"[{self.label}] {name}: {entry.message}")
        return entry.passed

    def record(self, report: CheckReport) -> bool:
        message = "" if report.passed else f"{report.violations} violation(s): {_summary(report.details)}"
        self.entries.append(AuditEntry(report.name, report.violations, "no violations", report.passed, message))
        if not report.passed:
            logger.warning(f"[{self.label}] {report.name}: {message}")
        return report.passed

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def failures(self) -> List[AuditEntry]:
        return [e for e in self.entries if not e.passed]

    def rows(self) -> List[Dict[str, Any]]:
        return [
            {"check": e.name, "value": e.value, "rule": e.rule, "passed": e.passed, "message": e.message}
            for e in self.entries
        ]

    def raise_if_failed(self) -> None:
        if not self.passed:
            names = ", ".join(e.name for e in self.failures)
            raise VerificationError(f"{len(self.failures)} invariant check(s) failed: {names}", self.failures)


def _summary(details: Dict[str, Any]) -> str:
    parts = []
    for key, value in details.items():
        if isinstance(value, (float, np.floating)):
            parts.append(f"{key}={float(value):.4g}")
        elif isinstance(value, (int, bool, str, np.integer)):
            parts.append(f"{key}={value}")
    return ", ".join(parts)
