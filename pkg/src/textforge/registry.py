"""Component registry and the declarative task config parser.

Components register under a (kind, name) pair with a typed field schema;
configs select components with single-key objects {"name": {params}} so the
chosen variant is always explicit. Defaults live on the schema, which makes
every default introspectable and keeps parsing code free of magic values.
"""

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (DuplicateRegistration, MalformedDocument, SchemaViolation,
                     UnknownComponent)

KINDS = (
    "task",
    "featurizer",
    "data_handler",
    "model",
    "embedding",
    "representation",
    "decoder",
    "output",
    "optimizer",
    "trainer",
    "exporter",
)

INT = "int"
FLOAT = "float"
BOOL = "bool"
STRING = "string"
ENUM = "enum"
LIST_INT = "list_int"
LIST_STRING = "list_string"
COMPONENT = "component"

_FIELD_TYPES = (INT, FLOAT, BOOL, STRING, ENUM, LIST_INT, LIST_STRING, COMPONENT)

# sentinel: the field has no default and must appear in the config
REQUIRED = object()


@dataclass(frozen=True)
class Field:
    name: str
    ftype: str
    default: object = REQUIRED
    choices: tuple = ()      # ENUM only
    child_kind: str = ""     # COMPONENT only: the registry kind to pick from

    def __post_init__(self):
        if self.ftype not in _FIELD_TYPES:
            raise ValueError("unknown field type %r" % self.ftype)
        if self.ftype == ENUM and not self.choices:
            raise ValueError("enum field %r needs choices" % self.name)
        if self.ftype == COMPONENT and not self.child_kind:
            raise ValueError("component field %r needs child_kind" % self.name)


@dataclass(frozen=True)
class Registration:
    kind: str
    name: str
    schema: tuple
    factory: Optional[Callable] = None

    def field_map(self):
        return {f.name: f for f in self.schema}


class Registry:
    """Immutable-after-startup catalog of (kind, name) -> Registration."""

    def __init__(self):
        self._table = {}

    def register(self, kind: str, name: str, schema, factory=None) -> Registration:
        if kind not in KINDS:
            raise ValueError("unknown component kind %r" % kind)
        key = (kind, name)
        if key in self._table:
            raise DuplicateRegistration("component (%s, %s) already registered" % key)
        reg = Registration(kind, name, tuple(schema), factory)
        self._table[key] = reg
        return reg

    def get(self, kind: str, name: str) -> Registration:
        try:
            return self._table[(kind, name)]
        except KeyError:
            raise UnknownComponent("no %s component named %r" % (kind, name))

    def names(self, kind: str):
        return sorted(n for k, n in self._table if k == kind)


GLOBAL = Registry()


def register_component(kind, name, schema, factory=None):
    return GLOBAL.register(kind, name, schema, factory)


@dataclass
class ComponentConfig:
    """A selected component plus its fully resolved parameter values."""
    kind: str
    name: str
    params: dict

    def child(self, field_name: str) -> "ComponentConfig":
        return self.params[field_name]

    def __eq__(self, other):
        return (isinstance(other, ComponentConfig)
                and self.kind == other.kind
                and self.name == other.name
                and self.params == other.params)


@dataclass
class TaskConfig:
    root: ComponentConfig

    @property
    def task_kind(self):
        return self.root.name

    def __eq__(self, other):
        return isinstance(other, TaskConfig) and self.root == other.root


def _type_error(path, expected, value):
    return SchemaViolation("%s: expected %s, got %r" % (path, expected, value))


def _check_scalar(f: Field, value, path):
    if f.ftype == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _type_error(path, "int", value)
        return value
    if f.ftype == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _type_error(path, "float", value)
        return float(value)
    if f.ftype == BOOL:
        if not isinstance(value, bool):
            raise _type_error(path, "bool", value)
        return value
    if f.ftype == STRING:
        if not isinstance(value, str):
            raise _type_error(path, "string", value)
        return value
    if f.ftype == ENUM:
        if not isinstance(value, str):
            raise _type_error(path, "enum string", value)
        if value not in f.choices:
            raise SchemaViolation("%s: %r is not one of %s" % (path, value, list(f.choices)))
        return value
    if f.ftype == LIST_INT:
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, int)
                                              for v in value):
            raise _type_error(path, "list of int", value)
        return list(value)
    if f.ftype == LIST_STRING:
        if not isinstance(value, list) or any(not isinstance(v, str) for v in value):
            raise _type_error(path, "list of string", value)
        return list(value)
    raise AssertionError(f.ftype)


def _resolve_component(registry, kind, raw, path):
    """raw must be a single-key {"name": {params}} object."""
    if not isinstance(raw, dict) or len(raw) != 1:
        raise SchemaViolation("%s: component selection must be a single-key object" % path)
    (name, params), = raw.items()
    if not isinstance(params, dict):
        raise SchemaViolation("%s.%s: component params must be an object" % (path, name))
    reg = registry.get(kind, name)
    fields = reg.field_map()
    here = "%s.%s" % (path, name) if path else name

    unknown = set(params) - set(fields)
    if unknown:
        raise SchemaViolation("%s: unknown keys %s" % (here, sorted(unknown)))

    resolved = {}
    for f in reg.schema:
        if f.name in params:
            value = params[f.name]
        elif f.default is not REQUIRED:
            value = f.default
        else:
            raise SchemaViolation("%s: missing required field %r" % (here, f.name))
        if f.ftype == COMPONENT:
            resolved[f.name] = _resolve_component(registry, f.child_kind, value,
                                                  "%s.%s" % (here, f.name))
        else:
            resolved[f.name] = _check_scalar(f, value, "%s.%s" % (here, f.name))
    return ComponentConfig(kind, name, resolved)


def parse_task_config(text: str, registry: Registry = None) -> TaskConfig:
    """Parse and validate a JSON task config document."""
    registry = registry or GLOBAL
    if not text or not text.strip():
        raise MalformedDocument("empty config document")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument("config is not valid JSON: %s" % exc)
    if not isinstance(doc, dict) or set(doc) != {"task"}:
        raise MalformedDocument("config root must be an object with the single key \"task\"")
    root = _resolve_component(registry, "task", doc["task"], "task")
    return TaskConfig(root)


def _component_to_raw(cfg: ComponentConfig):
    params = {}
    for key, value in cfg.params.items():
        params[key] = _component_to_raw(value) if isinstance(value, ComponentConfig) else value
    return {cfg.name: params}


def serialize_task_config(config: TaskConfig) -> str:
    """Canonical JSON for a TaskConfig; parse(serialize(c)) == c."""
    doc = {"task": _component_to_raw(config.root)}
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"
