"""Question templates: typed slots, instantiation, and question transforms.

A template couples surface strings (with ``⟨slot⟩`` markers) to a symbolic
plan schema.  Templates are authored per relation with the relation and
type slots pre-bound in ``fixed``; entity slots are filled at
instantiation time.  Transforms mechanically derive complex templates
(counting, logical combinations, thresholds, arg-min/max, comparatives,
multi-type unions) from simple ones.

Surface markers may carry a ``+pl`` modifier (``⟨subject_type+pl⟩``) that
pluralizes the bound label; transforms use it for the phrases they build.
Authored surfaces instead ship explicit singular/plural variants.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from . import plan_text, query_algebra as qa
from .kg_store import KgStore
from .plan_text import SLOT_CLOSE, SLOT_OPEN, SNode, Slot
from .text import pluralize

OBJECT_BASED = "object_based"
SUBJECT_BASED = "subject_based"

_MARKER = re.compile(re.escape(SLOT_OPEN) + r"([^" + SLOT_CLOSE + r"]+)" + re.escape(SLOT_CLOSE))

_CONJUNCTIONS = {"and": "and", "or": "or", "but_not": "but not"}
_LOGICAL_NODES = {"and": "Intersection", "or": "Union", "but_not": "Difference"}
_COMPARATOR_PHRASES = {
    "atleast": "atleast",
    "atmost": "atmost",
    "equal": "exactly",
    "approx": "approximately",
}


class TemplateError(ValueError):
    """Malformed template, unresolved slot, or binding type mismatch."""


def slot_kind(name: str) -> str:
    """Classify a slot name: entity, number, relation or type."""
    if name.startswith("entity"):
        return "entity"
    if name == "n" or name.startswith("n:"):
        return "number"
    if "relation" in name:
        return "relation"
    if "type" in name:
        return "type"
    raise TemplateError(f"cannot classify slot {name!r}")


@dataclass(frozen=True)
class QuestionTemplate:
    id: str
    direction: str
    paraphrase_group: str
    surface: Mapping[str, str]  # "singular" required, "plural" optional
    plan_schema: SNode
    fixed: Mapping[str, int | str] = field(default_factory=dict)
    slot_types: Mapping[str, str] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.plan_schema.name

    def surface_variant(self, number: str) -> str:
        return self.surface.get(number) or self.surface["singular"]

    def plan_slots(self) -> frozenset[str]:
        return plan_text.slots_of(self.plan_schema)

    def free_slots(self) -> list[str]:
        """Plan slots not pre-bound, in sorted order."""
        return sorted(self.plan_slots() - set(self.fixed))

    def anchor_slot(self) -> str | None:
        """Slot name anchoring the root lookup, if there is one."""
        expr = _root_expr(self.plan_schema)
        if expr is None:
            return None
        if expr.name == "Lookup" and isinstance(expr.args[2], Slot):
            return expr.args[2].name
        if expr.name == "TypeUnion":
            first = expr.args[0]
            if isinstance(first, SNode) and isinstance(first.args[2], Slot):
                return first.args[2].name
        return None


@dataclass(frozen=True)
class Instantiation:
    template_id: str
    bindings: Mapping[str, int | str]
    question: str
    plan: qa.QueryPlan
    answer: qa.AnswerSet
    number: str = "singular"


@dataclass(frozen=True)
class Rejection:
    template_id: str
    reason: str  # empty_answer | answer_cap


# -- loading / validation --------------------------------------------------------


def load_templates(path: str | Path) -> list[QuestionTemplate]:
    """Read a json-lines template file; validates every record."""
    out: list[QuestionTemplate] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TemplateError(f"{path}:{lineno}: bad json ({exc})") from None
            out.append(template_from_record(record, where=f"{path}:{lineno}"))
    out.sort(key=lambda t: t.id)
    return out


def template_from_record(record: Mapping, where: str = "<record>") -> QuestionTemplate:
    try:
        schema = plan_text.parse_symbolic(record["plan_schema"])
        template = QuestionTemplate(
            id=record["id"],
            direction=record["direction"],
            paraphrase_group=record.get("paraphrase_group", record["id"]),
            surface=_surface_variants(record["surface"]),
            plan_schema=schema,
            fixed=dict(record.get("fixed", {})),
            slot_types=dict(record.get("slot_types", {})),
        )
    except KeyError as exc:
        raise TemplateError(f"{where}: missing field {exc}") from None
    validate_template(template, where)
    return template


def _surface_variants(surface) -> dict[str, str]:
    """Surfaces may be a {number form: text} object or a [singular, plural]
    array; a bare string is taken as the singular form."""
    if isinstance(surface, str):
        return {"singular": surface}
    if isinstance(surface, Mapping):
        return dict(surface)
    variants = list(surface)
    if not variants:
        raise TemplateError("surface list may not be empty")
    out = {"singular": variants[0]}
    if len(variants) > 1:
        out["plural"] = variants[1]
    return out


def validate_template(t: QuestionTemplate, where: str = "") -> None:
    ctx = f"{where}: template {t.id}" if where else f"template {t.id}"
    if t.direction not in (OBJECT_BASED, SUBJECT_BASED):
        raise TemplateError(f"{ctx}: unknown direction {t.direction!r}")
    if "singular" not in t.surface:
        raise TemplateError(f"{ctx}: surface needs at least a singular variant")
    plan_slots = t.plan_slots()
    for name in plan_slots:
        slot_kind(name)  # raises on unclassifiable slots
    for variant, text_ in t.surface.items():
        for name in surface_slots(text_):
            if slot_kind(name) == "entity" and name not in plan_slots:
                raise TemplateError(
                    f"{ctx}: surface slot {SLOT_OPEN}{name}{SLOT_CLOSE} not in plan schema"
                )
    expr = _root_expr(t.plan_schema)
    if expr is not None and expr.name == "Lookup" and isinstance(expr.args[0], str):
        want = qa.OBJ if t.direction == OBJECT_BASED else qa.SUBJ
        if expr.args[0] != want:
            raise TemplateError(
                f"{ctx}: direction {t.direction} conflicts with lookup direction {expr.args[0]}"
            )


def surface_slots(text_: str) -> list[str]:
    """Slot names referenced by a surface string (``+pl`` modifier stripped)."""
    return [m.split("+", 1)[0] for m in _MARKER.findall(text_)]


def _root_expr(schema: SNode) -> SNode | None:
    if schema.name in ("Retrieve", "Count") and isinstance(schema.args[0], SNode):
        return schema.args[0]
    return None


# -- instantiation ----------------------------------------------------------------


def instantiate(
    store: KgStore,
    template: QuestionTemplate,
    bindings: Mapping[str, int | str],
    answer_cap: int = 1000,
    number: str = "singular",
    include_zero_groups: bool = True,
) -> Instantiation | Rejection:
    """Bind a template, execute its plan and render the question.

    Returns a :class:`Rejection` when the answer is empty or reaches
    ``answer_cap``; raises :class:`TemplateError` on binding type
    mismatches.
    """
    merged: dict[str, int | str] = {**template.fixed, **bindings}
    _type_check(store, template, merged)
    try:
        plan = plan_text.bind(template.plan_schema, store, merged)
    except plan_text.PlanTextError as exc:
        raise TemplateError(f"template {template.id}: {exc}") from None
    answer = qa.execute(store, plan, include_zero_groups=include_zero_groups)

    if isinstance(answer, qa.Entities):
        if not answer.members:
            return Rejection(template.id, "empty_answer")
        if len(answer.members) >= answer_cap:
            return Rejection(template.id, "answer_cap")
    if isinstance(answer, qa.Booleans) and not answer.values:
        return Rejection(template.id, "empty_answer")

    question = render_question(store, template, merged, number=number)
    return Instantiation(
        template_id=template.id,
        bindings=dict(merged),
        question=question,
        plan=plan,
        answer=answer,
        number=number,
    )


def _type_check(store: KgStore, template: QuestionTemplate, merged: Mapping[str, int | str]) -> None:
    declared = dict(template.slot_types)
    anchor = template.anchor_slot()
    if anchor is not None and anchor not in declared:
        declared[anchor] = (
            "subject_type" if template.direction == OBJECT_BASED else "object_type"
        )
    for slot, type_ref in declared.items():
        if slot not in merged:
            continue
        expected = _resolve_type(store, type_ref, merged)
        if expected is None:
            continue
        entity = _resolve_entity(store, merged[slot])
        if not store.has_type(entity, expected):
            raise TemplateError(
                f"template {template.id}: binding {slot}={merged[slot]!r} is not of type "
                f"{store.type_label(expected)!r}"
            )


def _resolve_type(store: KgStore, type_ref: str, merged: Mapping[str, int | str]) -> int | None:
    if type_ref in merged:
        value = merged[type_ref]
        return value if isinstance(value, int) else store.type_id(value)
    try:
        return store.type_id(type_ref)
    except Exception:
        return None


def _resolve_entity(store: KgStore, value: int | str) -> int:
    return value if isinstance(value, int) else store.entity_id(value)


def anchor_type(store: KgStore, template: QuestionTemplate) -> int | None:
    """Type id the anchor slot binding must have, if determinable."""
    anchor = template.anchor_slot()
    if anchor is None:
        return None
    ref = template.slot_types.get(anchor) or (
        "subject_type" if template.direction == OBJECT_BASED else "object_type"
    )
    return _resolve_type(store, ref, template.fixed)


def slot_expected_type(store: KgStore, template: QuestionTemplate, slot: str) -> int | None:
    """Type id declared for any entity slot, if determinable."""
    ref = template.slot_types.get(slot)
    if ref is None:
        if slot == template.anchor_slot():
            return anchor_type(store, template)
        return None
    return _resolve_type(store, ref, template.fixed)


def render_question(
    store: KgStore,
    template: QuestionTemplate,
    merged: Mapping[str, int | str],
    number: str = "singular",
    mention_overrides: Mapping[str, str] | None = None,
) -> str:
    """Substitute slot labels into a surface variant.

    ``mention_overrides`` replaces a slot's rendering verbatim (used for
    coreference mentions like "that river").  The result must contain no
    marker; a leftover marker is an authoring error.
    """
    overrides = mention_overrides or {}

    def sub(m: re.Match) -> str:
        raw = m.group(1)
        name, _, modifier = raw.partition("+")
        if name in overrides:
            return overrides[name]
        if name not in merged:
            raise TemplateError(f"template {template.id}: unbound surface slot {SLOT_OPEN}{raw}{SLOT_CLOSE}")
        label = _slot_label(store, name, merged[name])
        return pluralize(label) if modifier == "pl" else label

    rendered = _MARKER.sub(sub, template.surface_variant(number))
    if SLOT_OPEN in rendered:
        raise TemplateError(f"template {template.id}: unresolved marker in {rendered!r}")
    return rendered


def _slot_label(store: KgStore, name: str, value: int | str) -> str:
    kind = slot_kind(name)
    if kind == "number":
        return str(value)
    if isinstance(value, str):
        return value
    if kind == "entity":
        return store.entity_label(value)
    if kind == "relation":
        return store.relation_label(value)
    return store.type_label(value)


# -- transforms --------------------------------------------------------------------


def transform_to_count(template: QuestionTemplate) -> QuestionTemplate:
    """Turn a "Which ..." template into its "How many ..." counting form."""
    base = template.surface_variant("plural")
    if not base.startswith("Which "):
        raise TemplateError(f"template {template.id}: counting transform needs a Which-question")
    schema = template.plan_schema
    wrap = {"Retrieve": "Count", "ThresholdFilter": "CountOverThreshold", "Comparative": "CountOverComparative"}
    if schema.name not in wrap:
        raise TemplateError(f"template {template.id}: cannot count a {schema.name} plan")
    new_schema = (
        SNode("Count", schema.args) if schema.name == "Retrieve" else SNode(wrap[schema.name], schema.args)
    )
    return replace(
        template,
        id=template.id + "#count",
        paraphrase_group=template.paraphrase_group + "#count",
        surface={"singular": "How many " + base[len("Which ") :]},
        plan_schema=new_schema,
    )


def transform_logical(
    template: QuestionTemplate, op: str, extra_binding: int | str
) -> QuestionTemplate:
    """Add a second anchor under and/or/but_not ("... India and China ?")."""
    if op not in _LOGICAL_NODES:
        raise TemplateError(f"unknown logical op {op!r}")
    lookup = _require_lookup(template)
    anchor = template.anchor_slot()
    if anchor is None:
        raise TemplateError(f"template {template.id}: logical transform needs a slot anchor")
    new_slot = _next_entity_slot(template)
    second = SNode("Lookup", (lookup.args[0], lookup.args[1], Slot(new_slot), lookup.args[3]))
    new_expr = SNode(_LOGICAL_NODES[op], (lookup, second))

    marker = f"{SLOT_OPEN}{anchor}{SLOT_CLOSE}"
    addition = f"{marker} {_CONJUNCTIONS[op]} {SLOT_OPEN}{new_slot}{SLOT_CLOSE}"
    surface = {
        variant: text_.replace(marker, addition, 1)
        for variant, text_ in template.surface.items()
        if marker in text_
    }
    if not surface:
        raise TemplateError(f"template {template.id}: surface never mentions the anchor")

    slot_types = dict(template.slot_types)
    if anchor in slot_types:
        slot_types[new_slot] = slot_types[anchor]
    return replace(
        template,
        id=f"{template.id}#{op}",
        paraphrase_group=f"{template.paraphrase_group}#{op}",
        surface=surface,
        plan_schema=SNode("Retrieve", (new_expr,)),
        fixed={**template.fixed, new_slot: extra_binding},
        slot_types=slot_types,
    )


def transform_add_type(
    template: QuestionTemplate, extra_relation: int | str, extra_type: int | str
) -> QuestionTemplate:
    """Extend a single-lookup template with a second result type leg
    ("Which rivers and cities ...")."""
    lookup = _require_lookup(template)
    type_slot = "object_type" if template.direction == OBJECT_BASED else "subject_type"
    rel2, type2 = "relation2", type_slot + "2"
    second = SNode("Lookup", (lookup.args[0], Slot(rel2), lookup.args[2], Slot(type2)))
    new_expr = SNode("TypeUnion", (lookup, second))

    marker = f"{SLOT_OPEN}{type_slot}{SLOT_CLOSE}"
    marker_pl = f"{SLOT_OPEN}{type_slot}+pl{SLOT_CLOSE}"
    surface: dict[str, str] = {}
    for variant, text_ in template.surface.items():
        for old, pl in ((marker_pl, True), (marker + "s", True), (marker, False)):
            if old in text_:
                new_marker = f"{SLOT_OPEN}{type2}{'+pl' if pl else ''}{SLOT_CLOSE}"
                surface[variant] = text_.replace(old, f"{old} and {new_marker}", 1)
                break
    if not surface:
        raise TemplateError(f"template {template.id}: surface never mentions {marker}")

    return replace(
        template,
        id=template.id + "#multitype",
        paraphrase_group=template.paraphrase_group + "#multitype",
        surface=surface,
        plan_schema=SNode("Retrieve", (new_expr,)),
        fixed={**template.fixed, rel2: extra_relation, type2: extra_type},
    )


def transform_threshold(template: QuestionTemplate, comparator: str, n: int) -> QuestionTemplate:
    """Group form asking which result entities reach a counted threshold."""
    if comparator not in _COMPARATOR_PHRASES:
        raise TemplateError(f"unknown comparator {comparator!r}")
    group, pieces = _derive_group(template)
    phrase = _COMPARATOR_PHRASES[comparator]
    if pieces["multi"]:
        surface = (
            f"Which {pieces['group_pl']} have {phrase} {SLOT_OPEN}n{SLOT_CLOSE} "
            f"{pieces['counted_list_pl']} combined ?"
        )
    else:
        base = template.surface_variant("plural")
        counted = pieces["counted_pl"] if n != 1 else pieces["counted_sg"]
        surface = _swap_anchor(
            template, base, f"{phrase} {SLOT_OPEN}n{SLOT_CLOSE} {counted}"
        )
    return replace(
        template,
        id=f"{template.id}#th_{comparator}_{n}",
        paraphrase_group=f"{template.paraphrase_group}#th_{comparator}",
        surface={"singular": surface},
        plan_schema=SNode("ThresholdFilter", (group, comparator, Slot("n"))),
        fixed={**template.fixed, "n": n},
    )


def transform_argopt(template: QuestionTemplate, direction: str) -> QuestionTemplate:
    """Group form asking for the arg-min/arg-max result entity."""
    if direction not in qa.OPT_DIRECTIONS:
        raise TemplateError(f"unknown opt direction {direction!r}")
    group, pieces = _derive_group(template)
    superlative = "maximum" if direction == "max" else "minimum"
    if pieces["multi"]:
        surface = (
            f"Which {pieces['group_sg']} has {superlative} number of "
            f"{pieces['counted_list_pl']} combined ?"
        )
    else:
        base = template.surface_variant("singular")
        surface = _swap_anchor(template, base, f"{superlative} number of {pieces['counted_pl']}")
    return replace(
        template,
        id=f"{template.id}#argopt_{direction}",
        paraphrase_group=f"{template.paraphrase_group}#argopt_{direction}",
        surface={"singular": surface},
        plan_schema=SNode("ArgOpt", (group, direction)),
    )


def transform_comparative(
    template: QuestionTemplate, direction: str, reference: int | str
) -> QuestionTemplate:
    """Group form comparing counted totals against a reference entity."""
    if direction not in qa.CMP_DIRECTIONS:
        raise TemplateError(f"unknown comparative direction {direction!r}")
    group, pieces = _derive_group(template)
    ref_slot = "entity:ref"
    ref_marker = f"{SLOT_OPEN}{ref_slot}{SLOT_CLOSE}"
    if pieces["multi"]:
        surface = (
            f"Which {pieces['group_pl']} have {direction} "
            f"{pieces['counted_list_pl']} than {ref_marker} ?"
        )
    else:
        base = template.surface_variant("plural")
        surface = _swap_anchor(
            template, base, f"{direction} number of {pieces['counted_pl']} than {ref_marker}"
        )
    slot_types = dict(template.slot_types)
    slot_types[ref_slot] = pieces["group_type_ref"]
    return replace(
        template,
        id=f"{template.id}#cmp_{direction}",
        paraphrase_group=f"{template.paraphrase_group}#cmp_{direction}",
        surface={"singular": surface},
        plan_schema=SNode("Comparative", (group, Slot(ref_slot), direction)),
        fixed={**template.fixed, ref_slot: reference},
        slot_types=slot_types,
    )


def transform_multi_relation(
    template_a: QuestionTemplate, template_b: QuestionTemplate, op: str
) -> QuestionTemplate:
    """Combine two single-lookup templates over a shared anchor slot.

    The second template's non-anchor slots are renamed with a ``_b``
    suffix; its surface loses the "Which ⟨type⟩s" prefix and is appended
    under the chosen conjunction.
    """
    if op not in _LOGICAL_NODES:
        raise TemplateError(f"unknown logical op {op!r}")
    lookup_a = _require_lookup(template_a)
    lookup_b = _require_lookup(template_b)
    anchor_a = template_a.anchor_slot()
    anchor_b = template_b.anchor_slot()
    if anchor_a is None or anchor_b is None:
        raise TemplateError("multi-relation combination needs slot anchors on both sides")

    def rename(name: str) -> str:
        return anchor_a if name == anchor_b else name + "_b"

    lookup_b = plan_text.rewrite_atoms(
        lookup_b, lambda a: Slot(rename(a.name)) if isinstance(a, Slot) else a
    )
    new_expr = SNode(_LOGICAL_NODES[op], (lookup_a, lookup_b))

    b_text = template_b.surface_variant("plural")
    type_slot_b = "object_type" if template_b.direction == OBJECT_BASED else "subject_type"
    prefix = re.compile(
        r"^Which\s+"
        + re.escape(SLOT_OPEN)
        + re.escape(type_slot_b)
        + r"(?:\+pl)?"
        + re.escape(SLOT_CLOSE)
        + r"s?\s+"
    )
    if not prefix.search(b_text):
        raise TemplateError(f"template {template_b.id}: cannot strip Which-prefix for combination")
    remainder = prefix.sub("", b_text)
    remainder = _MARKER.sub(
        lambda m: f"{SLOT_OPEN}{rename(m.group(1).split('+')[0])}"
        + ("+" + m.group(1).split("+", 1)[1] if "+" in m.group(1) else "")
        + SLOT_CLOSE,
        remainder,
    )
    a_text = template_a.surface_variant("plural").rstrip()
    a_text = a_text[:-1].rstrip() if a_text.endswith("?") else a_text
    surface = f"{a_text} {_CONJUNCTIONS[op]} {remainder}"

    fixed = dict(template_a.fixed)
    slot_types = dict(template_a.slot_types)
    for k, v in template_b.fixed.items():
        fixed.setdefault(rename(k), v)
    for k, v in template_b.slot_types.items():
        slot_types.setdefault(rename(k), v)
    return QuestionTemplate(
        id=f"{template_a.id}+{template_b.id}#{op}",
        direction=template_a.direction,
        paraphrase_group=f"{template_a.paraphrase_group}+{template_b.paraphrase_group}#{op}",
        surface={"singular": surface},
        plan_schema=SNode("Retrieve", (new_expr,)),
        fixed=fixed,
        slot_types=slot_types,
    )


def _require_lookup(template: QuestionTemplate) -> SNode:
    expr = _root_expr(template.plan_schema)
    if expr is None or expr.name != "Lookup" or template.plan_schema.name != "Retrieve":
        raise TemplateError(
            f"template {template.id}: transform needs a Retrieve(Lookup(...)) schema"
        )
    return expr


def _next_entity_slot(template: QuestionTemplate) -> str:
    taken = {s for s in template.plan_slots() if slot_kind(s) == "entity"}
    k = 2
    while f"entity:{k}" in taken:
        k += 1
    return f"entity:{k}"


def _swap_anchor(template: QuestionTemplate, base: str, replacement: str) -> str:
    anchor = template.anchor_slot()
    if anchor is None:
        raise TemplateError(f"template {template.id}: transform needs a slot anchor")
    marker = f"{SLOT_OPEN}{anchor}{SLOT_CLOSE}"
    if marker not in base:
        raise TemplateError(f"template {template.id}: surface never mentions the anchor")
    return base.replace(marker, replacement, 1)


def _surface_token(atom, plural: bool) -> str:
    """Render a schema type atom into a transform-built surface."""
    if isinstance(atom, Slot):
        return f"{SLOT_OPEN}{atom.name}{'+pl' if plural else ''}{SLOT_CLOSE}"
    return pluralize(str(atom)) if plural else str(atom)


def _derive_group(template: QuestionTemplate) -> tuple[SNode, dict]:
    """Group schema for threshold/argopt/comparative transforms.

    Single-lookup templates group over the result type and count anchors;
    multi-type templates group over the anchor's type and count the union
    of the branch types.
    """
    expr = _root_expr(template.plan_schema)
    if expr is None or template.plan_schema.name != "Retrieve":
        raise TemplateError(f"template {template.id}: group transform needs a Retrieve schema")
    anchor_type_atom = _anchor_type_atom(template)

    if expr.name == "Lookup":
        direction, rel, _anchor, result_type = expr.args
        flipped = qa.SUBJ if direction == qa.OBJ else qa.OBJ
        group = SNode("Group", (result_type, SNode("By", (rel, flipped, anchor_type_atom))))
        return group, {
            "multi": False,
            "counted_pl": _surface_token(anchor_type_atom, plural=True),
            "counted_sg": _surface_token(anchor_type_atom, plural=False),
            "group_type_ref": _type_ref(result_type),
        }
    if expr.name == "TypeUnion":
        legs = []
        counted_tokens = []
        for branch in expr.args:
            direction, rel, _anchor, result_type = branch.args
            legs.append(SNode("By", (rel, direction, result_type)))
            counted_tokens.append(_surface_token(result_type, plural=True))
        group = SNode("Group", (anchor_type_atom, *legs))
        listing = (
            " and ".join(counted_tokens)
            if len(counted_tokens) <= 2
            else ", ".join(counted_tokens[:-1]) + " and " + counted_tokens[-1]
        )
        return group, {
            "multi": True,
            "counted_list_pl": listing,
            "group_sg": _surface_token(anchor_type_atom, plural=False),
            "group_pl": _surface_token(anchor_type_atom, plural=True),
            "group_type_ref": _type_ref(anchor_type_atom),
        }
    raise TemplateError(f"template {template.id}: group transform needs a lookup schema")


def _anchor_type_atom(template: QuestionTemplate):
    name = "subject_type" if template.direction == OBJECT_BASED else "object_type"
    if name in template.fixed or name in _all_surface_and_plan_slots(template):
        return Slot(name)
    anchor = template.anchor_slot()
    literal = template.slot_types.get(anchor or "", None)
    if literal is not None:
        return literal
    raise TemplateError(f"template {template.id}: cannot determine the anchor's type")


def _type_ref(atom) -> str:
    return atom.name if isinstance(atom, Slot) else str(atom)


def _all_surface_and_plan_slots(template: QuestionTemplate) -> set[str]:
    slots = set(template.plan_slots())
    for text_ in template.surface.values():
        slots.update(surface_slots(text_))
    return slots


# -- pathology filters ---------------------------------------------------------------


def plan_type_labels(store: KgStore, plan: qa.QueryPlan) -> set[str]:
    """Labels of every type a plan mentions."""
    out: set[str] = set()

    def walk_expr(expr) -> None:
        if isinstance(expr, qa.Lookup):
            out.add(store.type_label(expr.result_type))
        elif isinstance(expr, (qa.Union, qa.Intersection, qa.Difference)):
            walk_expr(expr.a)
            walk_expr(expr.b)
        elif isinstance(expr, qa.TypeUnion):
            for b in expr.branches:
                out.add(store.type_label(b.result_type))

    if isinstance(plan, (qa.Retrieve, qa.Count)):
        walk_expr(plan.expr)
    elif not isinstance(plan, qa.Verify):
        out.add(store.type_label(plan.group.group_type))
        for c in plan.group.counted:
            out.add(store.type_label(c.counted_type))
    return out


def _peer_type_pairs(store: KgStore, plan: qa.QueryPlan) -> set[frozenset[str]]:
    """Unordered label pairs of types combined as peers in the plan."""
    groups: list[list[str]] = []

    def walk_expr(expr) -> None:
        if isinstance(expr, qa.TypeUnion):
            groups.append([store.type_label(b.result_type) for b in expr.branches])
        elif isinstance(expr, (qa.Union, qa.Intersection, qa.Difference)):
            walk_expr(expr.a)
            walk_expr(expr.b)

    if isinstance(plan, (qa.Retrieve, qa.Count)):
        walk_expr(plan.expr)
    elif not isinstance(plan, qa.Verify):
        if len(plan.group.counted) >= 2:
            groups.append([store.type_label(c.counted_type) for c in plan.group.counted])
    pairs: set[frozenset[str]] = set()
    for labels in groups:
        for i, a in enumerate(labels):
            for b in labels[i + 1 :]:
                pairs.add(frozenset((a, b)))
    return pairs


def pathology_filter(
    store: KgStore,
    inst: Instantiation,
    generic_relations: Iterable[str] = (),
    peer_type_blocklist: Iterable[tuple[str, str]] = (),
) -> str | None:
    """Reject instantiations with known-unnatural shapes.

    Returns None to accept, otherwise one of "label_overlap" (a relation
    label repeats a bound type label), "generic_predicate" (relation is
    configured as too generic) or "peer_block" (a configured unnatural
    type pairing).
    """
    relations = {store.relation_label(r) for r in qa.plan_relations(inst.plan)}
    types = plan_type_labels(store, inst.plan)
    if any(r.lower() == t.lower() for r in relations for t in types):
        return "label_overlap"
    generic = {g.lower() for g in generic_relations}
    if any(r.lower() in generic for r in relations):
        return "generic_predicate"
    blocked = {frozenset((a.lower(), b.lower())) for a, b in peer_type_blocklist}
    pairs = {
        frozenset(x.lower() for x in pair) for pair in _peer_type_pairs(store, inst.plan)
    }
    if pairs & blocked:
        return "peer_block"
    return None
