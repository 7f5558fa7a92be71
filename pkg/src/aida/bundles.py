"""Definition bundles: the per-type package of structure definition,
display mapping, processing rules, transition table and attribute seeds.

On disk a bundle is a directory of four canonical-XML files
(`typedef.xml`, `display.xml`, `rules.xml` when present, `meta.xml`);
on the wire it travels as a single `<bundle>` element. `def_digest`
binds e-docs to the exact typedef that shaped them, `bundle_digest`
covers the whole package.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .edoc import (
    ProcessingRules,
    TransitionTable,
    check_rules,
    rules_from_element,
    rules_to_element,
)
from .wysiwys import DisplayMapping, check_mapping, mapping_from_element, mapping_to_element
from .xmlcore import (
    TypeDef,
    XNode,
    a_canon,
    elem,
    element_text,
    find_one,
    find_text,
    parse,
    typedef_digest,
    typedef_from_element,
    typedef_to_element,
)


class BundleError(Exception):
    pass


@dataclass(frozen=True)
class DefinitionBundle:
    typedef: TypeDef
    display: DisplayMapping
    rules: ProcessingRules | None
    transitions: TransitionTable
    initial_dynamic: tuple[tuple[str, str], ...]
    static_attrs: tuple[tuple[str, str], ...]
    validity_paths: tuple[str, str] | None

    @property
    def type_id(self) -> str:
        return self.typedef.type_id

    @property
    def version(self) -> int:
        return self.typedef.version

    @property
    def def_digest(self) -> str:
        return typedef_digest(self.typedef)

    @property
    def initial_status(self) -> str:
        return dict(self.initial_dynamic).get("status", "")


def check_bundle(bundle: DefinitionBundle) -> None:
    """Internal consistency; cross-type rule coverage is checked by the
    repository once the output definition is known."""
    bundle.typedef.check()
    check_mapping(bundle.display, bundle.typedef)
    if bundle.rules is not None and bundle.rules.input_type != bundle.type_id:
        raise BundleError("bundled rules do not take this type as input")
    if "status" not in dict(bundle.initial_dynamic):
        raise BundleError("bundle must seed a dynamic status attribute")
    if bundle.initial_status not in bundle.transitions.states():
        raise BundleError(
            f"initial status {bundle.initial_status!r} unknown to the transition table"
        )
    if bundle.validity_paths is not None:
        for path in bundle.validity_paths:
            spec = bundle.typedef.elements.get(path)
            if spec is None or not spec.text_allowed:
                raise BundleError(f"validity path {path!r} is not a text field")


def _meta_element(bundle: DefinitionBundle) -> XNode:
    def entries(pairs):
        return [elem("entry", attrs=[("name", k)], text=v) for k, v in pairs]

    kids = [
        elem("typeId", text=bundle.type_id),
        elem("version", text=str(bundle.version)),
        elem(
            "transitions",
            children=[
                elem("t", children=[elem("from", text=a), elem("to", text=b)])
                for a, b in sorted(bundle.transitions.edges)
            ],
        ),
        elem("static", children=entries(bundle.static_attrs)),
        elem("dynamic", children=entries(bundle.initial_dynamic)),
    ]
    if bundle.validity_paths is not None:
        kids.append(
            elem(
                "validity",
                children=[
                    elem("notBeforePath", text=bundle.validity_paths[0]),
                    elem("notAfterPath", text=bundle.validity_paths[1]),
                ],
            )
        )
    return elem("meta", children=kids)


def _meta_parts(root: XNode):
    transitions = frozenset(
        (find_text(t, "t/from") or "", find_text(t, "t/to") or "")
        for t in (find_one(root, "meta/transitions") or elem("x")).children
        if t.kind == "element"
    )

    def entries(name):
        container = find_one(root, f"meta/{name}")
        return tuple(
            (dict(c.attrs)["name"], element_text(c))
            for c in (container.children if container else ())
            if c.kind == "element"
        )

    validity_el = find_one(root, "meta/validity")
    validity = None
    if validity_el is not None:
        validity = (
            find_text(root, "meta/validity/notBeforePath") or "",
            find_text(root, "meta/validity/notAfterPath") or "",
        )
    return TransitionTable(transitions), entries("dynamic"), entries("static"), validity


def bundle_to_element(bundle: DefinitionBundle) -> XNode:
    kids = [typedef_to_element(bundle.typedef), mapping_to_element(bundle.display)]
    if bundle.rules is not None:
        kids.append(rules_to_element(bundle.rules))
    kids.append(_meta_element(bundle))
    return elem("bundle", children=kids)


def bundle_from_element(root: XNode) -> DefinitionBundle:
    if root.name != "bundle":
        raise BundleError("not a bundle element")
    parts = {c.name: c for c in root.children if c.kind == "element"}
    if "typedef" not in parts or "display" not in parts or "meta" not in parts:
        raise BundleError("bundle is missing typedef, display or meta")
    transitions, dynamic, static, validity = _meta_parts(parts["meta"])
    bundle = DefinitionBundle(
        typedef=typedef_from_element(parts["typedef"]),
        display=mapping_from_element(parts["display"]),
        rules=rules_from_element(parts["rules"]) if "rules" in parts else None,
        transitions=transitions,
        initial_dynamic=dynamic,
        static_attrs=static,
        validity_paths=validity,
    )
    check_bundle(bundle)
    return bundle


def bundle_digest(bundle: DefinitionBundle) -> str:
    h = hashlib.sha256()
    h.update(a_canon(typedef_to_element(bundle.typedef)))
    h.update(a_canon(mapping_to_element(bundle.display)))
    if bundle.rules is not None:
        h.update(a_canon(rules_to_element(bundle.rules)))
    h.update(a_canon(_meta_element(bundle)))
    return h.hexdigest()


def save_bundle(directory, bundle: DefinitionBundle) -> None:
    check_bundle(bundle)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "typedef.xml").write_bytes(a_canon(typedef_to_element(bundle.typedef)))
    (directory / "display.xml").write_bytes(a_canon(mapping_to_element(bundle.display)))
    if bundle.rules is not None:
        (directory / "rules.xml").write_bytes(a_canon(rules_to_element(bundle.rules)))
    (directory / "meta.xml").write_bytes(a_canon(_meta_element(bundle)))


def load_bundle(directory) -> DefinitionBundle:
    directory = Path(directory)
    typedef = typedef_from_element(parse((directory / "typedef.xml").read_bytes()))
    display = mapping_from_element(parse((directory / "display.xml").read_bytes()))
    rules = None
    if (directory / "rules.xml").exists():
        rules = rules_from_element(parse((directory / "rules.xml").read_bytes()))
    transitions, dynamic, static, validity = _meta_parts(
        parse((directory / "meta.xml").read_bytes())
    )
    bundle = DefinitionBundle(
        typedef=typedef,
        display=display,
        rules=rules,
        transitions=transitions,
        initial_dynamic=dynamic,
        static_attrs=static,
        validity_paths=validity,
    )
    check_bundle(bundle)
    return bundle


class DefinitionRepository:
    """In-memory view of registered bundles keyed by (typeId, version)."""

    def __init__(self):
        self._bundles: dict[tuple[str, int], DefinitionBundle] = {}

    def put(self, bundle: DefinitionBundle) -> None:
        check_bundle(bundle)
        key = (bundle.type_id, bundle.version)
        if key in self._bundles:
            raise BundleError(f"definition {key} already registered")
        if bundle.rules is not None:
            out = self.latest(bundle.rules.output_type)
            if out is not None:
                check_rules(bundle.rules, bundle.typedef, out.typedef)
        self._bundles[key] = bundle

    def get(self, type_id: str, version: int) -> DefinitionBundle | None:
        return self._bundles.get((type_id, version))

    def latest(self, type_id: str) -> DefinitionBundle | None:
        versions = [v for t, v in self._bundles if t == type_id]
        return self._bundles[(type_id, max(versions))] if versions else None

    def types(self) -> tuple[tuple[str, int], ...]:
        return tuple(sorted(self._bundles))
