"""Command vocabulary of the platform protocol.

Each command has a fixed argument shape and declares where its e-doc
type comes from: carried in the arguments (`args`), resolved from a
stored document id (`resolved`), or no type dimension at all. Builders
here produce the `<args>` element a client sends; the platform parses
the same shapes back.
"""

from __future__ import annotations

from dataclasses import dataclass

from .xmlcore import XNode, elem, find_one, find_text

TYPE_FROM_ARGS = "args"
TYPE_FROM_DOC = "resolved"
TYPE_NONE = "none"


@dataclass(frozen=True)
class CommandSpec:
    name: str
    type_source: str
    state_changing: bool
    admin: bool = False


_SPECS = (
    CommandSpec("CreateEdoc", TYPE_FROM_ARGS, False),
    CommandSpec("StoreEdoc", TYPE_FROM_ARGS, True),
    CommandSpec("GetEdoc", TYPE_FROM_DOC, False),
    CommandSpec("SearchEdocs", TYPE_FROM_ARGS, False),
    CommandSpec("SetAttribute", TYPE_FROM_DOC, True),
    CommandSpec("RevokeEdoc", TYPE_FROM_DOC, True),
    CommandSpec("ValidateEdoc", TYPE_FROM_ARGS, False),
    CommandSpec("CounterSign", TYPE_FROM_DOC, True),
    CommandSpec("GetDefinition", TYPE_FROM_ARGS, False),
    CommandSpec("Acknowledge", TYPE_FROM_DOC, False),
    CommandSpec("PutDefinition", TYPE_FROM_ARGS, True, admin=True),
    CommandSpec("SetRoleMap", TYPE_NONE, True, admin=True),
    CommandSpec("PortControl", TYPE_NONE, True, admin=True),
    CommandSpec("GetLog", TYPE_NONE, False, admin=True),
)

COMMANDS: dict[str, CommandSpec] = {s.name: s for s in _SPECS}

ADMIN_COMMANDS = frozenset(s.name for s in _SPECS if s.admin)
USER_COMMANDS = frozenset(s.name for s in _SPECS if not s.admin)

# Response status codes. OK means success; everything else is an error family.
OK = "OK"
DENIED_COMMAND = "DENIED_COMMAND"
DENIED_DOCTYPE = "DENIED_DOCTYPE"
DENIED_PORT = "DENIED_PORT"
BAD_SIGNATURE = "BAD_SIGNATURE"
UNKNOWN_ROLE = "UNKNOWN_ROLE"
REPLAY = "REPLAY"
REPLAY_SUSPECT = "REPLAY_SUSPECT"
DUPLICATE = "DUPLICATE"
INVALID_DOC = "INVALID_DOC"
UNKNOWN_TYPE = "UNKNOWN_TYPE"
UNKNOWN_ATTRIBUTE = "UNKNOWN_ATTRIBUTE"
NOT_FOUND = "NOT_FOUND"
STATIC_ATTRIBUTE = "STATIC_ATTRIBUTE"
ILLEGAL_TRANSITION = "ILLEGAL_TRANSITION"
VERSION_EXISTS = "VERSION_EXISTS"
CANNOT_STOP_ADMIN = "CANNOT_STOP_ADMIN"
BAD_REQUEST = "BAD_REQUEST"
INTERNAL = "INTERNAL"


def create_edoc_args(type_id: str, version: int, fields: dict[str, str]) -> XNode:
    return elem(
        "args",
        children=[
            elem("typeId", text=type_id),
            elem("version", text=str(version)),
            elem(
                "fields",
                children=[
                    elem("field", children=[elem("path", text=p), elem("value", text=v)])
                    for p, v in sorted(fields.items())
                ],
            ),
        ],
    )


def store_edoc_args(edoc_element: XNode) -> XNode:
    return elem("args", children=[edoc_element])


def get_edoc_args(doc_id: str) -> XNode:
    return elem("args", children=[elem("docId", text=doc_id)])


def search_args(type_id: str, attrs=(), fields=()) -> XNode:
    where = []
    for name, value in attrs:
        where.append(elem("attr", children=[elem("name", text=name), elem("value", text=value)]))
    for path, value in fields:
        where.append(elem("field", children=[elem("path", text=path), elem("value", text=value)]))
    return elem(
        "args",
        children=[elem("typeId", text=type_id), elem("where", children=where)],
    )


def set_attribute_args(doc_id: str, name: str, value: str) -> XNode:
    return elem(
        "args",
        children=[
            elem("docId", text=doc_id),
            elem("name", text=name),
            elem("value", text=value),
        ],
    )


def revoke_args(doc_id: str, reason: str) -> XNode:
    return elem("args", children=[elem("docId", text=doc_id), elem("reason", text=reason)])


def validate_args(doc_id: str | None = None, edoc_element: XNode | None = None, at: str | None = None) -> XNode:
    kids: list[XNode] = []
    if doc_id is not None:
        kids.append(elem("docId", text=doc_id))
    if edoc_element is not None:
        kids.append(edoc_element)
    if at is not None:
        kids.append(elem("at", text=at))
    return elem("args", children=kids)


def counter_sign_args(doc_id: str) -> XNode:
    return elem("args", children=[elem("docId", text=doc_id)])


def get_definition_args(type_id: str, version: int | None = None) -> XNode:
    kids = [elem("typeId", text=type_id)]
    if version is not None:
        kids.append(elem("version", text=str(version)))
    return elem("args", children=kids)


def acknowledge_args(doc_id: str) -> XNode:
    return elem("args", children=[elem("docId", text=doc_id)])


def put_definition_args(bundle_element: XNode) -> XNode:
    return elem("args", children=[bundle_element])


def set_role_map_args(rolemap_element: XNode) -> XNode:
    return elem("args", children=[rolemap_element])


def port_control_args(port: str, action: str) -> XNode:
    return elem("args", children=[elem("port", text=port), elem("action", text=action)])


def get_log_args(from_seq: int | None = None, to_seq: int | None = None) -> XNode:
    kids = []
    if from_seq is not None:
        kids.append(elem("from", text=str(from_seq)))
    if to_seq is not None:
        kids.append(elem("to", text=str(to_seq)))
    return elem("args", children=kids)


def doc_type_from_args(name: str, args: XNode) -> str | None:
    """E-doc type named directly by the arguments, when the command has one."""
    spec = COMMANDS.get(name)
    if spec is None or spec.type_source != TYPE_FROM_ARGS:
        return None
    direct = find_text(args, "args/typeId")
    if direct:
        return direct
    edoc_el = find_one(args, "args/edoc")
    if edoc_el is not None:
        return find_text(edoc_el, "edoc/header/typeId")
    bundle_el = find_one(args, "args/bundle")
    if bundle_el is not None:
        return find_text(bundle_el, "bundle/typedef/typeId")
    return None


def arg_doc_id(args: XNode) -> str | None:
    return find_text(args, "args/docId")
