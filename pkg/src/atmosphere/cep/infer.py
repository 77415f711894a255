"""Deploy-time plumbing shared by the engine, the oracle and the config loader:
output schema inference and static predicate type checking."""

from __future__ import annotations

from ..errors import DeploymentError
from ..events import EventSchema, SchemaRegistry
from ..patterns import (
    Binding,
    CountAgg,
    CurrentTimestamp,
    FieldPath,
    FieldRef,
    Literal,
    PatternDef,
    StarOf,
)

_NUMERIC = ("number", "integer")


def _binding_for(pattern: PatternDef, alias: str) -> Binding:
    for binding in pattern.bindings:
        if binding.alias == alias:
            return binding
    raise DeploymentError(f"pattern {pattern.name!r}: unknown alias {alias!r}")


def _field_type(pattern: PatternDef, registry: SchemaRegistry, path: FieldPath) -> str:
    stream = _binding_for(pattern, path.alias).stream
    schema = registry.get(stream)
    if path.field not in schema.fields:
        raise DeploymentError(
            f"pattern {pattern.name!r}: stream {stream!r} has no field {path.field!r}"
        )
    return schema.fields[path.field]


def infer_output_schema(pattern: PatternDef, registry: SchemaRegistry) -> EventSchema:
    """Derive the schema of ``insert_into`` from the select list."""
    fields: dict[str, str] = {}

    def put(name: str, ftype: str) -> None:
        if name in fields:
            raise DeploymentError(
                f"pattern {pattern.name!r}: output field {name!r} defined twice"
            )
        fields[name] = ftype

    for item in pattern.select:
        if isinstance(item, CurrentTimestamp):
            put(item.as_name, "integer")
        elif isinstance(item, CountAgg):
            _field_type(pattern, registry, item.path)  # field must exist
            put(item.as_name, "integer")
        elif isinstance(item, FieldRef):
            put(item.as_name, _field_type(pattern, registry, item.path))
        elif isinstance(item, StarOf):
            stream = _binding_for(pattern, item.alias).stream
            for name, ftype in registry.get(stream).fields.items():
                put(name, ftype)
    return EventSchema(pattern.insert_into, fields)


def check_predicate_types(pattern: PatternDef, registry: SchemaRegistry) -> None:
    """Static type check so mismatches fail at deploy time, not mid-stream."""
    for binding in pattern.bindings:
        for pred in binding.predicates:
            lhs_type = _field_type(pattern, registry, pred.lhs)
            if isinstance(pred.rhs, FieldPath):
                rhs_type = _field_type(pattern, registry, pred.rhs)
            else:
                rhs_type = _literal_type(pattern, pred.rhs)
            numeric = lhs_type in _NUMERIC and rhs_type in _NUMERIC
            if not numeric and lhs_type != rhs_type:
                raise DeploymentError(
                    f"pattern {pattern.name!r}: cannot compare {lhs_type} "
                    f"{pred.lhs} with {rhs_type} operand"
                )
            if pred.op in ("<", "<=", ">", ">=") and not numeric:
                raise DeploymentError(
                    f"pattern {pattern.name!r}: ordering operator {pred.op!r} "
                    f"requires numeric operands ({pred.lhs})"
                )


def _literal_type(pattern: PatternDef, literal: Literal) -> str:
    value = literal.value
    if value is None:
        raise DeploymentError(f"pattern {pattern.name!r}: cannot compare with null")
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    return "string"


def register_output_schema(pattern: PatternDef, registry: SchemaRegistry) -> EventSchema:
    """Register (or verify, for an already-known stream) the inferred schema."""
    inferred = infer_output_schema(pattern, registry)
    if pattern.insert_into in registry:
        existing = registry.get(pattern.insert_into)
        if existing.fields != inferred.fields:
            raise DeploymentError(
                f"pattern {pattern.name!r}: stream {pattern.insert_into!r} already "
                f"has an incompatible schema"
            )
        return existing
    registry.register(inferred)
    return inferred
