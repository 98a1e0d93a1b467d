"""Machine-readable rejection feedback returned to planners."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass

from ..isa import ConflictKey
from ..trace_model import ServiceRef


class RejectCode(enum.Enum):
    MISSING_CAPABILITY = "missing_capability"
    OUT_OF_SCOPE = "out_of_scope"
    IRREVERSIBLE_EFFECT = "irreversible_effect"
    CONFLICT = "conflict"
    RATE_LIMITED = "rate_limited"
    PRECONDITION_FAILED = "precondition_failed"
    SCHEMA_ERROR = "schema_error"


_BREAK_GLASS_SUFFIX = " requires break_glass"
_PATTERN = re.compile(r"^REJECT: ([a-z_]+)\((.*)\)((?: requires break_glass)?)$", re.DOTALL)


@dataclass(frozen=True)
class RejectionFeedback:
    code: RejectCode
    detail: str

    def render(self) -> str:
        suffix = _BREAK_GLASS_SUFFIX if self.code is RejectCode.IRREVERSIBLE_EFFECT else ""
        return f"REJECT: {self.code.value}({self.detail}){suffix}"

    __str__ = render

    @classmethod
    def parse(cls, text: str) -> "RejectionFeedback":
        m = _PATTERN.match(text)
        if m is None:
            raise ValueError(f"not a rejection string: {text!r}")
        code = RejectCode(m.group(1))
        if bool(m.group(3)) != (code is RejectCode.IRREVERSIBLE_EFFECT):
            raise ValueError(f"malformed break_glass suffix in {text!r}")
        return cls(code, m.group(2))

    # -- constructors for each rejection kind --

    @classmethod
    def missing_capability(cls, verb: str, target: ServiceRef) -> "RejectionFeedback":
        return cls(RejectCode.MISSING_CAPABILITY, f'"{verb}:svc/{target.name}"')

    @classmethod
    def out_of_scope(cls, target: ServiceRef) -> "RejectionFeedback":
        return cls(RejectCode.OUT_OF_SCOPE, f'"svc/{target.name}" not in recovery_group')

    @classmethod
    def irreversible_effect(cls, kind: str) -> "RejectionFeedback":
        return cls(RejectCode.IRREVERSIBLE_EFFECT, f'"{kind}"')

    @classmethod
    def conflict(cls, key: ConflictKey, txn_id: str) -> "RejectionFeedback":
        return cls(RejectCode.CONFLICT, f'resource="{key.resource}", txn="{txn_id}"')

    @classmethod
    def rate_limited(cls, namespace: str, limit: int, window_s: float) -> "RejectionFeedback":
        return cls(RejectCode.RATE_LIMITED, f'namespace="{namespace}", limit={limit}/{window_s:g}s')

    @classmethod
    def precondition_failed(cls, description: str) -> "RejectionFeedback":
        return cls(RejectCode.PRECONDITION_FAILED, json.dumps(description))

    @classmethod
    def schema_error(cls, message: str) -> "RejectionFeedback":
        return cls(RejectCode.SCHEMA_ERROR, json.dumps(message))

    def subject_name(self) -> str | None:
        """Service name quoted in scope/capability feedback, if any."""
        m = re.search(r'svc/([^"]+)"', self.detail)
        return m.group(1) if m else None
