"""Logic controller: dependency rules between blocks, validation, runtime
resolution and enumeration of the valid design space.

Rules are plain data so new ones can be added without touching the
validator.
"""
from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

from .domain import (
    ACK_VALUES,
    AGGREGATE_VALUES,
    BACKOFF_VALUES,
    BOOL_VALUES,
    CW_VALUES,
    DEFAULT_PAYLOAD_BYTES,
    FRAGMENT_VALUES,
    RATE_VALUES,
    Ack,
    Backoff,
    BlockConfig,
)


class InvalidConfigError(ValueError):
    """A configuration violates one or more dependency rules."""

    def __init__(self, report: "ValidationReport"):
        self.report = report
        super().__init__("; ".join(msg for _, msg in report.violations))


class RuleKind(str, enum.Enum):
    STRONG = "Strong"
    CONDITIONAL = "Conditional"
    MUTUAL_EXCLUSION = "MutualExclusion"


@dataclass(frozen=True)
class DependencyRule:
    """``Strong(A->B)``: selecting A requires B, never the reverse.

    ``check`` returns True when the config satisfies the rule.
    Conditional rules never reject; they only change runtime behaviour
    (see :func:`resolve_runtime`).
    """

    kind: RuleKind
    source: str
    target: str
    description: str
    check: Callable[[BlockConfig], bool] = field(compare=False, repr=False)
    explain: Callable[[BlockConfig], str] = field(compare=False, repr=False, default=None)

    @property
    def name(self) -> str:
        arrow = "<-" if self.kind is RuleKind.CONDITIONAL else "->"
        if self.kind is RuleKind.MUTUAL_EXCLUSION:
            return f"{self.kind.value}({self.source},{self.target})"
        return f"{self.kind.value}({self.source}{arrow}{self.target})"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "source": self.source,
            "target": self.target,
            "description": self.description,
        }


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "violations": [{"rule": r.name, "message": m} for r, m in self.violations],
        }


class NavSource(str, enum.Enum):
    RTS_CTS_DURATION = "RtsCtsDuration"
    FRAME_DURATION_FIELD = "FrameDurationField"


class EffectiveBackoff(str, enum.Enum):
    FIXED = "Fixed"
    BEB = "BEB"
    EIED = "EIED"


@dataclass(frozen=True)
class ResolvedRuntime:
    nav_source: NavSource
    effective_cw_min: int
    effective_backoff: EffectiveBackoff
    effective_payload_bytes: int
    carrier_sense: bool
    rts_cts: bool
    ack: bool
    fragmentation: bool
    aggregation: bool
    rate_mbps: int


def _backoff_needs_ack(c: BlockConfig) -> bool:
    return c.backoff is Backoff.NONE or c.ack is Ack.IMMEDIATE


def _frag_agg_exclusive(c: BlockConfig) -> bool:
    return c.fragmentation is None or c.aggregation is None


BACKOFF_REQUIRES_ACK = DependencyRule(
    RuleKind.STRONG,
    "Backoff",
    "ACK",
    "a backoff algorithm (BEB/EIED) needs ACK feedback to detect failures",
    _backoff_needs_ack,
    lambda c: f"backoff={c.backoff.value} requires ack=ImmediateAck, got ack={c.ack.value}",
)

FRAG_AGG_EXCLUSIVE = DependencyRule(
    RuleKind.MUTUAL_EXCLUSION,
    "Fragmentation",
    "Aggregation",
    "at most one frame-size modifier may be active",
    _frag_agg_exclusive,
    lambda c: f"fragmentation={c.fragmentation} and aggregation={c.aggregation} are both active",
)

NAV_FROM_RTS_CTS = DependencyRule(
    RuleKind.CONDITIONAL,
    "NAV",
    "RTS/CTS",
    "NAV comes from the RTS/CTS Duration field when RTS/CTS is selected, "
    "otherwise from the Duration/ID field of data frames",
    lambda c: True,
)


def builtin_rules() -> list:
    return [BACKOFF_REQUIRES_ACK, FRAG_AGG_EXCLUSIVE, NAV_FROM_RTS_CTS]


def validate(config: BlockConfig, rules: Optional[Iterable[DependencyRule]] = None) -> ValidationReport:
    if rules is None:
        rules = builtin_rules()
    violations = []
    for rule in rules:
        if not rule.check(config):
            msg = rule.explain(config) if rule.explain else rule.description
            violations.append((rule, f"{rule.name}: {msg}"))
    return ValidationReport(tuple(violations))


def require_valid(config: BlockConfig, rules=None) -> BlockConfig:
    report = validate(config, rules)
    if not report.valid:
        raise InvalidConfigError(report)
    return config


def resolve_runtime(config: BlockConfig, rules=None) -> ResolvedRuntime:
    """Turn a valid config into the concrete behaviour the simulator runs."""
    require_valid(config, rules)
    if config.fragmentation is not None:
        payload = config.fragmentation
    elif config.aggregation is not None:
        payload = config.aggregation
    else:
        payload = DEFAULT_PAYLOAD_BYTES
    backoff = {
        Backoff.NONE: EffectiveBackoff.FIXED,
        Backoff.BEB: EffectiveBackoff.BEB,
        Backoff.EIED: EffectiveBackoff.EIED,
    }[config.backoff]
    return ResolvedRuntime(
        nav_source=NavSource.RTS_CTS_DURATION if config.rts_cts else NavSource.FRAME_DURATION_FIELD,
        effective_cw_min=config.cw_min,
        effective_backoff=backoff,
        effective_payload_bytes=payload,
        carrier_sense=config.carrier_sense,
        rts_cts=config.rts_cts,
        ack=config.ack is Ack.IMMEDIATE,
        fragmentation=config.fragmentation is not None,
        aggregation=config.aggregation is not None,
        rate_mbps=config.data_rate_mbps,
    )


def all_configs() -> list:
    """Unconstrained cross product, lexicographic over the field domains."""
    return [
        BlockConfig(*combo)
        for combo in itertools.product(
            BACKOFF_VALUES,
            ACK_VALUES,
            FRAGMENT_VALUES,
            AGGREGATE_VALUES,
            BOOL_VALUES,
            CW_VALUES,
            BOOL_VALUES,
            RATE_VALUES,
        )
    ]


def enumerate_valid(rules: Optional[Iterable[DependencyRule]] = None) -> list:
    """Every config passing ``rules``, in stable lexicographic order.

    ``rules=None`` means the builtin rules; pass ``[]`` for the full cross
    product.
    """
    rules = builtin_rules() if rules is None else list(rules)
    # rule equality ignores the predicate, so key on the predicate too
    key = tuple((rule, rule.check) for rule in rules)
    return list(_enumerate_cached(key))


@lru_cache(maxsize=8)
def _enumerate_cached(key: tuple) -> tuple:
    rules = [rule for rule, _ in key]
    return tuple(c for c in all_configs() if validate(c, rules).valid)


def action_space_fingerprint(actions: Iterable[BlockConfig]) -> str:
    digest = hashlib.sha256()
    for cfg in actions:
        digest.update(cfg.label().encode())
        digest.update(b"\n")
    return digest.hexdigest()


def rules_to_json(rules=None) -> list:
    return [r.to_dict() for r in (builtin_rules() if rules is None else rules)]
