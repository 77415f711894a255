from .model import (
    Binding,
    CountAgg,
    CurrentTimestamp,
    Duration,
    FieldPath,
    FieldRef,
    Literal,
    PatternDef,
    Predicate,
    SelectItem,
    StarOf,
    print_pattern,
    validate_pattern,
)
from .parser import parse_pattern, parse_patterns

__all__ = [
    "Binding",
    "CountAgg",
    "CurrentTimestamp",
    "Duration",
    "FieldPath",
    "FieldRef",
    "Literal",
    "PatternDef",
    "Predicate",
    "SelectItem",
    "StarOf",
    "parse_pattern",
    "parse_patterns",
    "print_pattern",
    "validate_pattern",
]
