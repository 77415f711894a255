from .agent import Agent, RULE_UPDATE_STREAM
from .exprs import eval_expr, eval_guard, parse_guard
from .gateway import (
    GatewayClient,
    GatewayRegistry,
    GatewayServer,
    REGISTER_STREAM,
    UNDELIVERABLE_STREAM,
)
from .model import (
    AclFrameDecoder,
    AclMessage,
    Actuation,
    AgentSpec,
    BROADCAST,
    Effect,
    FogPublish,
    GATEWAY_ADDRESS,
    LogLine,
    OutboundAcl,
    Rule,
    RuleError,
    SensorSample,
    StateChange,
    TimerFire,
    decode_acl_body,
    encode_acl,
    parse_agent_spec,
    parse_rule,
    rule_to_config,
)

__all__ = [
    "Agent",
    "AgentSpec",
    "AclMessage",
    "AclFrameDecoder",
    "BROADCAST",
    "GATEWAY_ADDRESS",
    "REGISTER_STREAM",
    "RULE_UPDATE_STREAM",
    "UNDELIVERABLE_STREAM",
    "GatewayRegistry",
    "GatewayServer",
    "GatewayClient",
    "Rule",
    "Effect",
    "Actuation",
    "OutboundAcl",
    "FogPublish",
    "StateChange",
    "LogLine",
    "RuleError",
    "SensorSample",
    "TimerFire",
    "encode_acl",
    "decode_acl_body",
    "parse_agent_spec",
    "parse_rule",
    "rule_to_config",
    "parse_guard",
    "eval_guard",
    "eval_expr",
]
