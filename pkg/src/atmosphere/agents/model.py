"""Agent-side data model: ACL messages and wire framing, declarative rules,
agent specifications, stimuli and effects.

Rules are configuration data (trigger -> guard -> actions), not code, so a
whole scenario stays declarative. Field maps in actions may interpolate
``$value`` (the trigger value), ``$attr.<name>`` and ``$state.<name>``.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field

from ..errors import ConfigError, GatewayError, PayloadError
from ..events import IDENT_RE
from .exprs import guard_references, parse_guard

BROADCAST = "broadcast"
GATEWAY_ADDRESS = "$gateway"
PERFORMATIVES = ("INFORM", "REQUEST")


@dataclass(frozen=True)
class AclMessage:
    performative: str
    sender: str
    receivers: tuple  # of agent/service ids, or the BROADCAST marker string
    content: dict
    sent_at: int

    def __post_init__(self):
        if self.performative not in PERFORMATIVES:
            raise GatewayError(f"unknown performative {self.performative!r}")
        if self.receivers != BROADCAST and (
            not isinstance(self.receivers, tuple) or not self.receivers
        ):
            raise GatewayError("receivers must be non-empty unless broadcast")

    @property
    def stream(self) -> str | None:
        value = self.content.get("stream")
        return value if isinstance(value, str) else None


def encode_acl(message: AclMessage) -> bytes:
    doc = {
        "performative": message.performative,
        "sender": message.sender,
        "receivers": BROADCAST if message.receivers == BROADCAST else list(message.receivers),
        "content": message.content,
        "sent_at": message.sent_at,
    }
    body = json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def decode_acl_body(body: bytes) -> AclMessage:
    try:
        doc = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise PayloadError(f"malformed ACL frame: {exc}") from None
    if not isinstance(doc, dict):
        raise PayloadError("ACL frame must be a JSON object")
    try:
        receivers = doc["receivers"]
        receivers = BROADCAST if receivers == BROADCAST else tuple(receivers)
        return AclMessage(
            performative=doc["performative"],
            sender=doc["sender"],
            receivers=receivers,
            content=doc["content"],
            sent_at=int(doc["sent_at"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise PayloadError(f"bad ACL frame: {exc}") from None


class AclFrameDecoder:
    """Incremental decoder for the 4-byte big-endian length-prefixed framing."""

    def __init__(self):
        self._buffer = bytearray()

    def feed(self, data: bytes) -> list[AclMessage]:
        self._buffer.extend(data)
        out = []
        while len(self._buffer) >= 4:
            (length,) = struct.unpack_from(">I", self._buffer, 0)
            if len(self._buffer) < 4 + length:
                break
            body = bytes(self._buffer[4 : 4 + length])
            del self._buffer[: 4 + length]
            out.append(decode_acl_body(body))
        return out


# -- triggers ---------------------------------------------------------------


@dataclass(frozen=True)
class SensorTrigger:
    sensor: str


@dataclass(frozen=True)
class MessageTrigger:
    stream: str


@dataclass(frozen=True)
class TimerTrigger:
    period_ms: int


Trigger = SensorTrigger | MessageTrigger | TimerTrigger


# -- actions ------------------------------------------------------------------


@dataclass(frozen=True)
class BroadcastAction:
    stream: str
    fields: dict


@dataclass(frozen=True)
class SendAction:
    receivers: tuple
    stream: str
    fields: dict


@dataclass(frozen=True)
class ActuateAction:
    actuator: str
    value: object


@dataclass(frozen=True)
class PublishFogAction:
    topic: str
    stream: str
    fields: dict


@dataclass(frozen=True)
class SetStateAction:
    var: str
    expr: object  # parsed guard-language expression
    expr_text: str = ""


@dataclass(frozen=True)
class LogAction:
    template: str


Action = (
    BroadcastAction
    | SendAction
    | ActuateAction
    | PublishFogAction
    | SetStateAction
    | LogAction
)


@dataclass(frozen=True)
class Rule:
    id: str
    trigger: Trigger
    guard: object | None  # parsed expression
    actions: tuple
    guard_text: str | None = None


@dataclass(frozen=True)
class AgentSpec:
    id: str
    attributes: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)
    sensors: tuple = ()
    actuators: dict = field(default_factory=dict)  # name -> initial value
    rules: tuple = ()


# -- stimuli -----------------------------------------------------------------


@dataclass(frozen=True)
class SensorSample:
    sensor: str
    value: object
    at: int


@dataclass(frozen=True)
class TimerFire:
    rule_id: str
    count: int
    at: int


Stimulus = SensorSample | TimerFire | AclMessage


# -- effects -------------------------------------------------------------------


@dataclass(frozen=True)
class Actuation:
    agent_id: str
    actuator: str
    value: object


@dataclass(frozen=True)
class OutboundAcl:
    message: AclMessage


@dataclass(frozen=True)
class FogPublish:
    topic: str
    stream: str
    fields: dict
    at: int


@dataclass(frozen=True)
class StateChange:
    agent_id: str
    var: str
    value: object


@dataclass(frozen=True)
class LogLine:
    agent_id: str
    text: str


@dataclass(frozen=True)
class RuleError:
    agent_id: str
    rule_id: str
    message: str


Effect = Actuation | OutboundAcl | FogPublish | StateChange | LogLine | RuleError


# -- config parsing ------------------------------------------------------------

_INTERP_RE = re.compile(r"\$(value|attr\.[A-Za-z_][A-Za-z0-9_]*|state\.[A-Za-z_][A-Za-z0-9_]*)")


def parse_trigger(doc: dict, path: str) -> Trigger:
    kind = doc.get("kind")
    if kind == "sensor":
        return SensorTrigger(sensor=_req_str(doc, "sensor", path))
    if kind == "message":
        return MessageTrigger(stream=_req_str(doc, "stream", path))
    if kind == "timer":
        period = doc.get("period_ms")
        if not isinstance(period, int) or period <= 0:
            raise ConfigError("timer trigger needs a positive period_ms", path)
        return TimerTrigger(period_ms=period)
    raise ConfigError(f"unknown trigger kind {kind!r}", path)


def parse_action(doc: dict, path: str) -> Action:
    kind = doc.get("kind")
    if kind == "broadcast":
        return BroadcastAction(
            stream=_req_str(doc, "stream", path), fields=dict(doc.get("fields", {}))
        )
    if kind == "send":
        receivers = doc.get("receivers")
        if not isinstance(receivers, list) or not receivers:
            raise ConfigError("send action needs a non-empty receivers list", path)
        return SendAction(
            receivers=tuple(receivers),
            stream=_req_str(doc, "stream", path),
            fields=dict(doc.get("fields", {})),
        )
    if kind == "actuate":
        if "value" not in doc:
            raise ConfigError("actuate action needs a value", path)
        return ActuateAction(actuator=_req_str(doc, "actuator", path), value=doc["value"])
    if kind == "publish_fog":
        return PublishFogAction(
            topic=_req_str(doc, "topic", path),
            stream=_req_str(doc, "stream", path),
            fields=dict(doc.get("fields", {})),
        )
    if kind == "set_state":
        expr_text = _req_str(doc, "expr", path)
        return SetStateAction(
            var=_req_str(doc, "var", path),
            expr=parse_guard(expr_text),
            expr_text=expr_text,
        )
    if kind == "log":
        return LogAction(template=_req_str(doc, "template", path))
    raise ConfigError(f"unknown action kind {kind!r}", path)


def parse_rule(doc: dict, path: str) -> Rule:
    rule_id = _req_str(doc, "id", path)
    trigger = parse_trigger(doc.get("trigger", {}), f"{path}/trigger")
    guard_text = doc.get("guard")
    guard = None
    if guard_text is not None:
        if not isinstance(guard_text, str):
            raise ConfigError("guard must be a string expression", f"{path}/guard")
        guard = parse_guard(guard_text)
    actions_doc = doc.get("actions")
    if not isinstance(actions_doc, list) or not actions_doc:
        raise ConfigError("rule needs a non-empty actions list", f"{path}/actions")
    actions = tuple(
        parse_action(a, f"{path}/actions/{i}") for i, a in enumerate(actions_doc)
    )
    return Rule(id=rule_id, trigger=trigger, guard=guard, actions=actions, guard_text=guard_text)


def parse_agent_spec(doc: dict, path: str) -> AgentSpec:
    agent_id = _req_str(doc, "id", path)
    rules_doc = doc.get("rules", [])
    if not isinstance(rules_doc, list):
        raise ConfigError("rules must be a list", f"{path}/rules")
    spec = AgentSpec(
        id=agent_id,
        attributes=dict(doc.get("attributes", {})),
        state=dict(doc.get("state", {})),
        sensors=tuple(doc.get("sensors", [])),
        actuators=dict(doc.get("actuators", {})),
        rules=tuple(parse_rule(r, f"{path}/rules/{i}") for i, r in enumerate(rules_doc)),
    )
    validate_agent_spec(spec, path)
    return spec


def validate_agent_spec(spec: AgentSpec, path: str = "") -> None:
    if not IDENT_RE.match(spec.id.replace(".", "_")):
        raise ConfigError(f"invalid agent id {spec.id!r}", path)
    for i, rule in enumerate(spec.rules):
        rule_path = f"{path}/rules/{i}"
        if isinstance(rule.trigger, SensorTrigger) and rule.trigger.sensor not in spec.sensors:
            raise ConfigError(
                f"rule {rule.id!r} triggers on undeclared sensor {rule.trigger.sensor!r}",
                rule_path,
            )
        if rule.guard is not None:
            _check_refs(guard_references(rule.guard), spec, rule.id, rule_path)
        for action in rule.actions:
            if isinstance(action, ActuateAction) and action.actuator not in spec.actuators:
                raise ConfigError(
                    f"rule {rule.id!r} actuates undeclared actuator {action.actuator!r}",
                    rule_path,
                )
            if isinstance(action, SetStateAction):
                if action.var not in spec.state:
                    raise ConfigError(
                        f"rule {rule.id!r} sets undeclared state var {action.var!r}",
                        rule_path,
                    )
                _check_refs(guard_references(action.expr), spec, rule.id, rule_path)
            for template_field in _template_fields(action):
                ref = template_field[1:]
                if ref.startswith("attr.") and ref[5:] not in spec.attributes:
                    raise ConfigError(
                        f"rule {rule.id!r} interpolates unknown {ref!r}", rule_path
                    )
                if ref.startswith("state.") and ref[6:] not in spec.state:
                    raise ConfigError(
                        f"rule {rule.id!r} interpolates unknown {ref!r}", rule_path
                    )


def _check_refs(refs, spec: AgentSpec, rule_id: str, path: str) -> None:
    for scope, name in refs:
        if scope == "state" and name not in spec.state:
            raise ConfigError(
                f"rule {rule_id!r} references undeclared state.{name}", path
            )
        if scope == "attr" and name not in spec.attributes:
            raise ConfigError(
                f"rule {rule_id!r} references undeclared attr.{name}", path
            )


def _template_fields(action: Action):
    if isinstance(action, (BroadcastAction, SendAction, PublishFogAction)):
        return [v for v in action.fields.values() if isinstance(v, str) and v.startswith("$")]
    if isinstance(action, ActuateAction):
        value = action.value
        return [value] if isinstance(value, str) and value.startswith("$") else []
    if isinstance(action, LogAction):
        return ["$" + m for m in _INTERP_RE.findall(action.template)]
    return []


def _req_str(doc: dict, key: str, path: str) -> str:
    value = doc.get(key)
    if not isinstance(value, str) or not value:
        raise ConfigError(f"missing or invalid {key!r}", path)
    return value


def rule_to_config(rule: Rule) -> dict:
    """Inverse of :func:`parse_rule`, used to ship rules inside messages."""
    trigger: dict
    if isinstance(rule.trigger, SensorTrigger):
        trigger = {"kind": "sensor", "sensor": rule.trigger.sensor}
    elif isinstance(rule.trigger, MessageTrigger):
        trigger = {"kind": "message", "stream": rule.trigger.stream}
    else:
        trigger = {"kind": "timer", "period_ms": rule.trigger.period_ms}
    actions = []
    for action in rule.actions:
        if isinstance(action, BroadcastAction):
            actions.append({"kind": "broadcast", "stream": action.stream, "fields": action.fields})
        elif isinstance(action, SendAction):
            actions.append(
                {
                    "kind": "send",
                    "receivers": list(action.receivers),
                    "stream": action.stream,
                    "fields": action.fields,
                }
            )
        elif isinstance(action, ActuateAction):
            actions.append({"kind": "actuate", "actuator": action.actuator, "value": action.value})
        elif isinstance(action, PublishFogAction):
            actions.append(
                {
                    "kind": "publish_fog",
                    "topic": action.topic,
                    "stream": action.stream,
                    "fields": action.fields,
                }
            )
        elif isinstance(action, SetStateAction):
            actions.append({"kind": "set_state", "var": action.var, "expr": action.expr_text})
        elif isinstance(action, LogAction):
            actions.append({"kind": "log", "template": action.template})
    doc = {"id": rule.id, "trigger": trigger, "actions": actions}
    if rule.guard_text is not None:
        doc["guard"] = rule.guard_text
    return doc
