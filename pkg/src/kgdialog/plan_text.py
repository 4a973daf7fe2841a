"""Canonical one-line text form of query plans.

The text form is a function-call tree using store labels, e.g.::

    Count(Lookup(obj, flows_through, India, river))
    ThresholdFilter(Group(river, By(flows_through, subj, country)), atleast, 2)
    Verify((flows_through, India, Ganga), (flows_through, India, Mekong))

Labels that are not plain identifiers are double-quoted.  Parsing happens
in two steps: the text becomes a symbolic node tree (``SNode``), which is
then bound against a store.  Symbolic trees may contain slot markers such
as ``⟨entity:1⟩``; these are what question templates store and rewrite.
``parse_plan(print_plan(p, store), store) == p`` holds for every plan.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union as TUnion

from . import query_algebra as qa
from .kg_store import KgStore, Tuple

SLOT_OPEN = "⟨"   # ⟨
SLOT_CLOSE = "⟩"  # ⟩

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class PlanTextError(ValueError):
    """Unparseable plan text or unresolved slot."""


@dataclass(frozen=True)
class Slot:
    """An unbound slot marker inside a symbolic plan."""

    name: str

    def __str__(self) -> str:
        return f"{SLOT_OPEN}{self.name}{SLOT_CLOSE}"


Atom = TUnion[str, int, Slot]


@dataclass(frozen=True)
class SNode:
    """Symbolic plan node: a call name plus atom/child arguments."""

    name: str
    args: tuple["SNode | Atom | tuple[Atom, ...]", ...]


# argument kind signatures per node name; "*x" means repeated
_SIGNATURES: dict[str, tuple[str, ...]] = {
    "Lookup": ("keyword", "relation", "entity", "type"),
    "Union": ("expr", "expr"),
    "Intersection": ("expr", "expr"),
    "Difference": ("expr", "expr"),
    "TypeUnion": ("*expr",),
    "By": ("relation", "keyword", "type"),
    "Group": ("type", "*expr"),
    "Retrieve": ("expr",),
    "Count": ("expr",),
    "Verify": ("*fact",),
    "ArgOpt": ("expr", "keyword"),
    "ThresholdFilter": ("expr", "keyword", "number"),
    "CountOverThreshold": ("expr", "keyword", "number"),
    "Comparative": ("expr", "entity", "keyword"),
    "CountOverComparative": ("expr", "entity", "keyword"),
}


# -- tokenizing / parsing -------------------------------------------------------


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens: list[tuple[str, str]] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif ch in "(),":
            tokens.append((ch, ch))
            i += 1
        elif ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    j += 1
                out.append(text[j])
                j += 1
            if j >= n:
                raise PlanTextError(f"unterminated quote in plan text: {text!r}")
            tokens.append(("quoted", "".join(out)))
            i = j + 1
        elif ch == SLOT_OPEN:
            j = text.find(SLOT_CLOSE, i + 1)
            if j < 0:
                raise PlanTextError(f"unterminated slot marker in plan text: {text!r}")
            tokens.append(("slot", text[i + 1 : j]))
            i = j + 1
        else:
            m = re.match(r"[^\s(),\"]+", text[i:])
            assert m is not None
            tokens.append(("atom", m.group(0)))
            i += m.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str]], text: str):
        self.tokens = tokens
        self.pos = 0
        self.text = text

    def peek(self) -> tuple[str, str] | None:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def take(self, kind: str | None = None) -> tuple[str, str]:
        tok = self.peek()
        if tok is None:
            raise PlanTextError(f"unexpected end of plan text: {self.text!r}")
        if kind is not None and tok[0] != kind:
            raise PlanTextError(f"expected {kind!r}, got {tok[1]!r} in {self.text!r}")
        self.pos += 1
        return tok

    def parse_node(self) -> SNode:
        kind, name = self.take("atom")
        if name not in _SIGNATURES:
            raise PlanTextError(f"unknown plan node {name!r} in {self.text!r}")
        self.take("(")
        args: list = []
        if self.peek() and self.peek()[0] != ")":
            args.append(self.parse_arg())
            while self.peek() and self.peek()[0] == ",":
                self.take(",")
                args.append(self.parse_arg())
        self.take(")")
        return SNode(name, tuple(args))

    def parse_arg(self):
        tok = self.peek()
        if tok is None:
            raise PlanTextError(f"unexpected end of plan text: {self.text!r}")
        if tok[0] == "(":  # a (rel, subj, obj) fact
            self.take("(")
            atoms = [self.parse_atom()]
            while self.peek() and self.peek()[0] == ",":
                self.take(",")
                atoms.append(self.parse_atom())
            self.take(")")
            if len(atoms) != 3:
                raise PlanTextError(f"facts need 3 elements, got {len(atoms)}")
            return tuple(atoms)
        if tok[0] == "atom" and tok[1] in _SIGNATURES:
            nxt = self.tokens[self.pos + 1] if self.pos + 1 < len(self.tokens) else None
            if nxt and nxt[0] == "(":
                return self.parse_node()
        return self.parse_atom()

    def parse_atom(self) -> Atom:
        kind, value = self.take()
        if kind == "quoted":
            return value
        if kind == "slot":
            return Slot(value)
        if kind == "atom":
            if re.fullmatch(r"-?[0-9]+", value):
                return int(value)
            return value
        raise PlanTextError(f"unexpected token {value!r} in {self.text!r}")


def parse_symbolic(text: str) -> SNode:
    """Parse plan text into a symbolic tree, slot markers allowed."""
    parser = _Parser(_tokenize(text), text)
    node = parser.parse_node()
    if parser.peek() is not None:
        raise PlanTextError(f"trailing tokens after plan in {text!r}")
    return node


# -- binding a symbolic tree against a store -------------------------------------


def bind(
    node: SNode,
    store: KgStore,
    bindings: Mapping[str, int | str] | None = None,
) -> qa.QueryPlan:
    """Turn a symbolic tree into an executable plan.

    Slot markers are looked up in ``bindings``; a bound value may be an id
    (used as-is) or a label (resolved in the slot position's namespace).
    Unresolved slots raise :class:`PlanTextError` naming the slot.
    """
    plan = _bind_node(node, store, bindings or {})
    if not isinstance(
        plan,
        (
            qa.Retrieve,
            qa.Verify,
            qa.Count,
            qa.ArgOpt,
            qa.ThresholdFilter,
            qa.CountOverThreshold,
            qa.Comparative,
            qa.CountOverComparative,
        ),
    ):
        raise PlanTextError(f"{node.name} is not a top-level plan")
    return plan


def parse_plan(text: str, store: KgStore, bindings: Mapping[str, int | str] | None = None) -> qa.QueryPlan:
    """Parse canonical plan text and bind it against the store."""
    return bind(parse_symbolic(text), store, bindings)


def _atom_value(atom, store: KgStore, kind: str, bindings: Mapping[str, int | str]):
    if isinstance(atom, Slot):
        if atom.name not in bindings:
            raise PlanTextError(f"unresolved slot {atom}")
        atom = bindings[atom.name]
    if kind == "number":
        if isinstance(atom, bool) or not isinstance(atom, int):
            raise PlanTextError(f"expected a number, got {atom!r}")
        return atom
    if kind == "keyword":
        if not isinstance(atom, str):
            raise PlanTextError(f"expected a keyword, got {atom!r}")
        return atom
    if isinstance(atom, int):
        return atom
    if not isinstance(atom, str):
        raise PlanTextError(f"expected a label or id, got {atom!r}")
    if kind == "relation":
        return store.relation_id(atom)
    if kind == "entity":
        return store.entity_id(atom)
    if kind == "type":
        return store.type_id(atom)
    raise PlanTextError(f"unknown atom kind {kind!r}")


def _bind_node(node: SNode, store: KgStore, bindings: Mapping[str, int | str]):
    sig = _SIGNATURES[node.name]
    fixed = [k for k in sig if not k.startswith("*")]
    star = next((k[1:] for k in sig if k.startswith("*")), None)
    if star is None and len(node.args) != len(fixed):
        raise PlanTextError(
            f"{node.name} takes {len(fixed)} arguments, got {len(node.args)}"
        )
    if star is not None and len(node.args) < len(fixed):
        raise PlanTextError(f"{node.name} takes at least {len(fixed)} arguments")

    def atom(i: int, kind: str):
        return _atom_value(node.args[i], store, kind, bindings)

    def child(i: int):
        arg = node.args[i]
        if not isinstance(arg, SNode):
            raise PlanTextError(f"{node.name} argument {i + 1} must be a subtree")
        return _bind_node(arg, store, bindings)

    name = node.name
    if name == "Lookup":
        return qa.Lookup(atom(0, "keyword"), atom(1, "relation"), atom(2, "entity"), atom(3, "type"))
    if name in ("Union", "Intersection", "Difference"):
        cls = {"Union": qa.Union, "Intersection": qa.Intersection, "Difference": qa.Difference}[name]
        return cls(child(0), child(1))
    if name == "TypeUnion":
        branches = tuple(child(i) for i in range(len(node.args)))
        if not all(isinstance(b, qa.Lookup) for b in branches):
            raise PlanTextError("TypeUnion branches must be Lookups")
        return qa.TypeUnion(branches)
    if name == "By":
        return qa.Counted(atom(0, "relation"), atom(1, "keyword"), atom(2, "type"))
    if name == "Group":
        counted = tuple(child(i) for i in range(1, len(node.args)))
        if not all(isinstance(c, qa.Counted) for c in counted):
            raise PlanTextError("Group legs must be By(...) entries")
        return qa.GroupSpec(atom(0, "type"), counted)
    if name == "Retrieve":
        return qa.Retrieve(child(0))
    if name == "Count":
        return qa.Count(child(0))
    if name == "Verify":
        facts = []
        for i, arg in enumerate(node.args):
            if not isinstance(arg, tuple):
                raise PlanTextError("Verify arguments must be (rel, subj, obj) facts")
            r = _atom_value(arg[0], store, "relation", bindings)
            s = _atom_value(arg[1], store, "entity", bindings)
            o = _atom_value(arg[2], store, "entity", bindings)
            facts.append(Tuple(r, s, o))
        return qa.Verify(tuple(facts))
    if name == "ArgOpt":
        return qa.ArgOpt(child(0), atom(1, "keyword"))
    if name == "ThresholdFilter":
        return qa.ThresholdFilter(child(0), atom(1, "keyword"), atom(2, "number"))
    if name == "CountOverThreshold":
        return qa.CountOverThreshold(child(0), atom(1, "keyword"), atom(2, "number"))
    if name == "Comparative":
        return qa.Comparative(child(0), atom(1, "entity"), atom(2, "keyword"))
    if name == "CountOverComparative":
        return qa.CountOverComparative(child(0), atom(1, "entity"), atom(2, "keyword"))
    raise PlanTextError(f"unknown plan node {name!r}")


# -- printing ------------------------------------------------------------------


def _quote(label: str) -> str:
    if _IDENT.fullmatch(label):
        return label
    escaped = label.replace("\\", "\\\\").replace('"', '\\"')
    return f'"{escaped}"'


def print_plan(plan: qa.QueryPlan, store: KgStore) -> str:
    """Canonical text of an executable plan, using store labels."""
    return _print_concrete(plan, store)


def _print_concrete(node, store: KgStore) -> str:
    ent = lambda e: _quote(store.entity_label(e))
    rel = lambda r: _quote(store.relation_label(r))
    typ = lambda t: _quote(store.type_label(t))

    if isinstance(node, qa.Lookup):
        return f"Lookup({node.direction}, {rel(node.relation)}, {ent(node.anchor)}, {typ(node.result_type)})"
    if isinstance(node, (qa.Union, qa.Intersection, qa.Difference)):
        name = type(node).__name__
        return f"{name}({_print_concrete(node.a, store)}, {_print_concrete(node.b, store)})"
    if isinstance(node, qa.TypeUnion):
        inner = ", ".join(_print_concrete(b, store) for b in node.branches)
        return f"TypeUnion({inner})"
    if isinstance(node, qa.Counted):
        return f"By({rel(node.relation)}, {node.direction}, {typ(node.counted_type)})"
    if isinstance(node, qa.GroupSpec):
        legs = ", ".join(_print_concrete(c, store) for c in node.counted)
        return f"Group({typ(node.group_type)}, {legs})"
    if isinstance(node, qa.Retrieve):
        return f"Retrieve({_print_concrete(node.expr, store)})"
    if isinstance(node, qa.Count):
        return f"Count({_print_concrete(node.expr, store)})"
    if isinstance(node, qa.Verify):
        facts = ", ".join(
            f"({rel(f.relation)}, {ent(f.subject)}, {ent(f.object)})" for f in node.facts
        )
        return f"Verify({facts})"
    if isinstance(node, qa.ArgOpt):
        return f"ArgOpt({_print_concrete(node.group, store)}, {node.direction})"
    if isinstance(node, qa.ThresholdFilter):
        return f"ThresholdFilter({_print_concrete(node.group, store)}, {node.comparator}, {node.n})"
    if isinstance(node, qa.CountOverThreshold):
        return f"CountOverThreshold({_print_concrete(node.group, store)}, {node.comparator}, {node.n})"
    if isinstance(node, qa.Comparative):
        return f"Comparative({_print_concrete(node.group, store)}, {ent(node.reference)}, {node.direction})"
    if isinstance(node, qa.CountOverComparative):
        return f"CountOverComparative({_print_concrete(node.group, store)}, {ent(node.reference)}, {node.direction})"
    raise PlanTextError(f"cannot print {type(node).__name__}")


def print_symbolic(node: SNode) -> str:
    """Text of a symbolic tree, slot markers preserved."""
    parts = []
    for arg in node.args:
        if isinstance(arg, SNode):
            parts.append(print_symbolic(arg))
        elif isinstance(arg, tuple):
            parts.append("(" + ", ".join(_print_atom(a) for a in arg) + ")")
        else:
            parts.append(_print_atom(arg))
    return f"{node.name}({', '.join(parts)})"


def _print_atom(atom: Atom) -> str:
    if isinstance(atom, Slot):
        return str(atom)
    if isinstance(atom, int):
        return str(atom)
    return _quote(atom)


def slots_of(node: SNode) -> frozenset[str]:
    """Names of all slot markers in a symbolic tree."""
    out: set[str] = set()

    def walk(n) -> None:
        if isinstance(n, SNode):
            for a in n.args:
                walk(a)
        elif isinstance(n, tuple):
            for a in n:
                walk(a)
        elif isinstance(n, Slot):
            out.add(n.name)

    walk(node)
    return frozenset(out)


def rewrite_atoms(node: SNode, fn) -> SNode:
    """Structurally copy a symbolic tree, mapping every atom through ``fn``."""

    def walk(n):
        if isinstance(n, SNode):
            return SNode(n.name, tuple(walk(a) for a in n.args))
        if isinstance(n, tuple):
            return tuple(fn(a) for a in n)
        return fn(n)

    return walk(node)
