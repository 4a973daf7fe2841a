"""Sequential dialog synthesis over a tuple store.

Chains instantiated questions into a coherent dialog: every question after
the first shares an entity or a relation with the immediately preceding
question, coreferent mentions ("that river") resolve against the previous
turn pair, ambiguous mentions open a clarification exchange, and oversized
answers trigger a negotiation sub-dialog.  Generation is fully driven by a
seeded RNG, so identical inputs give byte-identical dialogs.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Sequence

from . import query_algebra as qa, templates as tpl
from .config import RunConfig
from .kg_store import KgStore
from .text import number_words


class DialogError(ValueError):
    pass


class TurnState(str, Enum):
    SIMPLE_Q = "SimpleQ"
    COREFERENCE_Q = "CoreferenceQ"
    ELLIPSIS_Q = "EllipsisQ"
    LOGICAL_Q = "LogicalQ"
    QUANTITATIVE_COUNT_Q = "QuantitativeCountQ"
    QUANTITATIVE_ARGOPT_Q = "QuantitativeArgOptQ"
    QUANTITATIVE_THRESHOLD_Q = "QuantitativeThresholdQ"
    COMPARATIVE_Q = "ComparativeQ"
    COMPARATIVE_COUNT_Q = "ComparativeCountQ"
    BOOLEAN_Q = "BooleanQ"
    CLARIFICATION_Q = "ClarificationQ"
    CLARIFICATION_A = "ClarificationA"
    LARGE_ANSWER_NEGOTIATION = "LargeAnswerNegotiation"
    RESPONSE = "Response"


QUESTION_STATES = frozenset(
    {
        TurnState.SIMPLE_Q,
        TurnState.COREFERENCE_Q,
        TurnState.ELLIPSIS_Q,
        TurnState.LOGICAL_Q,
        TurnState.QUANTITATIVE_COUNT_Q,
        TurnState.QUANTITATIVE_ARGOPT_Q,
        TurnState.QUANTITATIVE_THRESHOLD_Q,
        TurnState.COMPARATIVE_Q,
        TurnState.COMPARATIVE_COUNT_Q,
        TurnState.BOOLEAN_Q,
    }
)

TRANSFORM_KINDS = (
    "direct",
    "coreference",
    "ellipsis",
    "logical",
    "count",
    "argopt",
    "threshold",
    "comparative",
    "boolean",
)

_ELLIPSIS_BANK = (
    "And what about {entity}?",
    "And how about {entity}?",
    "And also tell me about {entity}?",
)

NEGOTIATION_PROMPT = "The answer count is {n}. Do you want to see all possibilities?"
NEGOTIATION_DECLINE = "No, show only a few of them"
CLARIFICATION_PROMPT = "Did you mean {entity} ?"
CLARIFICATION_NO = "No, I meant {entity}. Could you tell me the answer for that?"
CLARIFICATION_YES = "Yes."


@dataclass(frozen=True)
class DialogTurn:
    speaker: str  # "user" | "system"
    state: TurnState
    utterance: str
    entities: tuple[int, ...] = ()
    plan: qa.QueryPlan | None = None
    answer: qa.AnswerSet | None = None


@dataclass(frozen=True)
class PendingClarification:
    mention: str
    mention_type: int
    candidates: tuple[int, ...]
    intended: int
    template: tpl.QuestionTemplate
    bindings: Mapping[str, int | str]
    state: TurnState


@dataclass(frozen=True)
class DialogContext:
    """Linking state carried between turn pairs.

    ``salience`` lists entities from the previous turn pair, most recent
    first (answer entities as rendered, then question entities).
    """

    salience: tuple[int, ...] = ()
    last_relations: frozenset[int] = frozenset()
    last_answer: qa.AnswerSet | None = None
    last_question_entities: tuple[int, ...] = ()
    last_answer_entities: tuple[int, ...] = ()
    last_template: tpl.QuestionTemplate | None = None
    last_retrieve_template: tpl.QuestionTemplate | None = None
    last_bindings: Mapping[str, int | str] = field(default_factory=dict)
    last_plan: qa.QueryPlan | None = None
    pending: PendingClarification | None = None


@dataclass(frozen=True)
class Ambiguous:
    candidates: tuple[int, ...]


@dataclass(frozen=True)
class RenderedResponse:
    utterance: str
    entities: tuple[int, ...]
    followups: tuple[DialogTurn, ...] = ()


# -- response rendering -----------------------------------------------------------


def render_response(
    store: KgStore,
    answer: qa.AnswerSet,
    display_limit: int = 10,
    sample_size: int = 10,
    rng: random.Random | None = None,
    words: bool = False,
) -> RenderedResponse:
    """Render an answer set into a system utterance.

    Entity answers up to ``display_limit`` are comma-joined labels; larger
    ones become a count sentence plus a negotiation pair whose system turn
    lists a seeded sample.  Counts render as numerals (or number words when
    ``words`` is set), booleans as YES/NO with a trailing "respectively"
    when several facts were asked at once.
    """
    if isinstance(answer, qa.Entities):
        members = sorted(answer.members)
        if len(members) <= display_limit:
            return RenderedResponse(_labels(store, members), tuple(members))
        rng = rng or random.Random(0)
        sample = sorted(rng.sample(members, sample_size))
        followups = (
            DialogTurn("user", TurnState.LARGE_ANSWER_NEGOTIATION, NEGOTIATION_DECLINE),
            DialogTurn(
                "system",
                TurnState.RESPONSE,
                _labels(store, sample),
                tuple(sample),
                None,
                answer,
            ),
        )
        return RenderedResponse(
            NEGOTIATION_PROMPT.format(n=len(members)), tuple(sample), followups
        )
    if isinstance(answer, qa.Counts):
        return RenderedResponse(_render_counts(store, answer, words), ())
    if isinstance(answer, qa.Booleans):
        tokens = ["YES" if v else "NO" for v in answer.values]
        if len(tokens) == 1:
            return RenderedResponse(tokens[0], ())
        joined = ", ".join(tokens[:-1]) + " and " + tokens[-1]
        return RenderedResponse(f"{joined} respectively", ())
    raise DialogError(f"cannot render {type(answer).__name__}")


def _labels(store: KgStore, entities: Sequence[int]) -> str:
    return ", ".join(store.entity_label(e) for e in entities)


def _render_counts(store: KgStore, answer: qa.Counts, words: bool) -> str:
    def num(n: int) -> str:
        return number_words(n) if words else str(n)

    if len(answer.counts) == 1 and answer.counts[0][0] is None:
        return num(answer.counts[0][1])
    parts = []
    for ty, n in answer.counts:
        label = store.type_label(ty) if ty is not None else ""
        if label:
            label = label if n == 1 else _plural(label)
            parts.append(f"{num(n)} {label}")
        else:
            parts.append(num(n))
    return " and ".join(parts)


def _plural(label: str) -> str:
    from .text import pluralize

    return pluralize(label)


# -- coreference ---------------------------------------------------------------------


def resolve_coreference(
    store: KgStore, context: DialogContext, mention: str
) -> int | Ambiguous:
    """Resolve "that ⟨type⟩" against the previous turn pair.

    Unique if exactly one salient entity carries the mentioned type;
    otherwise ambiguous with the type-compatible candidates from the last
    system response.  No candidate at all is an error: the generator must
    never emit such a mention.
    """
    label = mention.strip()
    if label.lower().startswith("that "):
        label = label[5:].strip()
    ty = store.type_id(label)
    matches = [e for e in context.salience if store.has_type(e, ty)]
    if not matches:
        raise DialogError(f"no antecedent for mention {mention!r}")
    if len(matches) == 1:
        return matches[0]
    from_answer = [e for e in context.last_answer_entities if store.has_type(e, ty)]
    candidates = from_answer if len(from_answer) >= 2 else matches
    return Ambiguous(tuple(dict.fromkeys(candidates)))


# -- question construction helpers ------------------------------------------------------


def _question_entities(inst: tpl.Instantiation, store: KgStore) -> tuple[int, ...]:
    out: list[int] = []
    for slot in sorted(inst.bindings):
        if tpl.slot_kind(slot) != "entity":
            continue
        value = inst.bindings[slot]
        out.append(value if isinstance(value, int) else store.entity_id(value))
    return tuple(dict.fromkeys(out))


def _linked(
    store: KgStore, context: DialogContext, plan: qa.QueryPlan, entities: Sequence[int]
) -> bool:
    prev_entities = set(context.salience)
    if prev_entities & (set(entities) | set(qa.plan_entities(plan))):
        return True
    return bool(context.last_relations & qa.plan_relations(plan))


@dataclass(frozen=True)
class _Question:
    state: TurnState
    instantiation: tpl.Instantiation
    template: tpl.QuestionTemplate
    ambiguous: PendingClarification | None = None
    retrieve_base: tpl.QuestionTemplate | None = None


def _respond_turns(
    store: KgStore,
    question: _Question,
    rng: random.Random,
    config: RunConfig,
) -> tuple[list[DialogTurn], DialogContext]:
    inst = question.instantiation
    user_entities = _question_entities(inst, store)
    user_turn = DialogTurn(
        "user", question.state, inst.question, user_entities, inst.plan, None
    )
    rendered = render_response(
        store,
        inst.answer,
        display_limit=config.display_limit,
        sample_size=config.sample_size,
        rng=rng,
        words=config.number_words,
    )
    system_turn = DialogTurn(
        "system", TurnState.RESPONSE, rendered.utterance, rendered.entities, inst.plan, inst.answer
    )
    turns = [user_turn, system_turn, *rendered.followups]
    context = DialogContext(
        salience=tuple(dict.fromkeys((*rendered.entities, *user_entities))),
        last_relations=qa.plan_relations(inst.plan),
        last_answer=inst.answer,
        last_question_entities=user_entities,
        last_answer_entities=rendered.entities,
        last_template=question.template,
        last_retrieve_template=question.retrieve_base,
        last_bindings=inst.bindings,
        last_plan=inst.plan,
    )
    return turns, context


# -- dialog entry points ------------------------------------------------------------------


def start_dialog(
    store: KgStore,
    templates: Sequence[tpl.QuestionTemplate],
    seed: int | random.Random,
    config: RunConfig | None = None,
) -> tuple[list[DialogTurn], DialogContext]:
    """Open a dialog with a fully specified direct question and its answer."""
    config = config or RunConfig()
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    candidates = []
    for t in templates:
        if t.kind != "Retrieve" or t.anchor_slot() is None:
            continue
        ty = tpl.anchor_type(store, t)
        if ty is None:
            continue
        for anchor in sorted(store.entities_of_type(ty)):
            candidates.append((t, anchor))
    rng.shuffle(candidates)
    for t, anchor in candidates:
        built = _try_instantiate(store, t, {t.anchor_slot(): anchor}, config, number="plural")
        if built is None:
            continue
        question = _Question(TurnState.SIMPLE_Q, built, t, retrieve_base=t)
        return _respond_turns(store, question, rng, config)
    raise DialogError("no template is instantiable over this store")


def next_turn(
    store: KgStore,
    templates: Sequence[tpl.QuestionTemplate],
    context: DialogContext,
    rng: random.Random,
    config: RunConfig | None = None,
) -> tuple[list[DialogTurn], DialogContext] | None:
    """Produce the next linked question (and its system turn, unless the
    question is ambiguous and opens a clarification).

    Returns None when nothing linkable can be built, signalling the end of
    the dialog.
    """
    config = config or RunConfig()
    if context.pending is not None:
        raise DialogError("clarification pending; call clarification_exchange first")
    builders = {
        "direct": _build_direct,
        "coreference": _build_coreference,
        "ellipsis": _build_ellipsis,
        "logical": _build_logical,
        "count": _build_count,
        "argopt": _build_argopt,
        "threshold": _build_threshold,
        "comparative": _build_comparative,
        "boolean": _build_boolean,
    }
    kinds = [k for k in TRANSFORM_KINDS if _applicable(k, context, templates)]
    while kinds:
        weights = [config.transition_weights.get(k, 1.0) for k in kinds]
        kind = rng.choices(kinds, weights=weights, k=1)[0]
        question = builders[kind](store, templates, context, rng, config)
        if question is None:
            kinds.remove(kind)
            continue
        if question.ambiguous is not None:
            inst = question.instantiation
            user_turn = DialogTurn("user", question.state, inst.question, (), None, None)
            return [user_turn], replace(context, pending=question.ambiguous)
        entities = _question_entities(question.instantiation, store)
        if not _linked(store, context, question.instantiation.plan, entities):
            kinds.remove(kind)
            continue
        return _respond_turns(store, question, rng, config)
    return None


def clarification_exchange(
    store: KgStore,
    context: DialogContext,
    intended: int | None = None,
    rng: random.Random | None = None,
    config: RunConfig | None = None,
) -> tuple[list[DialogTurn], DialogContext]:
    """Complete a pending ambiguous mention: system guess, user correction
    (or confirmation), then the answer for the intended entity."""
    config = config or RunConfig()
    rng = rng or random.Random(0)
    pending = context.pending
    if pending is None:
        raise DialogError("no clarification pending")
    intended = pending.intended if intended is None else intended
    if intended not in pending.candidates:
        raise DialogError(
            f"intended entity {intended} is not among candidates {pending.candidates}"
        )
    guess = rng.choice(sorted(pending.candidates))
    clarify_q = DialogTurn(
        "system",
        TurnState.CLARIFICATION_Q,
        CLARIFICATION_PROMPT.format(entity=store.entity_label(guess)),
        (guess,),
    )
    if guess == intended:
        answer_text = CLARIFICATION_YES
    else:
        answer_text = CLARIFICATION_NO.format(entity=store.entity_label(intended))

    bindings = dict(pending.bindings)
    anchor_slot = pending.template.anchor_slot()
    if anchor_slot is not None:
        bindings[anchor_slot] = intended
    built = tpl.instantiate(
        store,
        pending.template,
        bindings,
        answer_cap=config.answer_cap,
        number="plural",
        include_zero_groups=config.include_zero_groups,
    )
    if isinstance(built, tpl.Rejection):
        # the generator validates its own intended candidate up front, so
        # this only triggers for caller-overridden candidates whose
        # question has no presentable answer
        raise DialogError(f"clarified question not answerable: {built.reason}")
    clarify_a = DialogTurn(
        "user", TurnState.CLARIFICATION_A, answer_text, (intended,), built.plan, None
    )
    rendered = render_response(
        store,
        built.answer,
        display_limit=config.display_limit,
        sample_size=config.sample_size,
        rng=rng,
        words=config.number_words,
    )
    response = DialogTurn(
        "system", TurnState.RESPONSE, rendered.utterance, rendered.entities, built.plan, built.answer
    )
    turns = [clarify_q, clarify_a, response, *rendered.followups]
    user_entities = _question_entities(built, store)
    new_context = DialogContext(
        salience=tuple(dict.fromkeys((*rendered.entities, *user_entities))),
        last_relations=qa.plan_relations(built.plan),
        last_answer=built.answer,
        last_question_entities=user_entities,
        last_answer_entities=rendered.entities,
        last_template=pending.template,
        last_retrieve_template=pending.template if pending.template.kind == "Retrieve" else None,
        last_bindings=built.bindings,
        last_plan=built.plan,
    )
    return turns, new_context


def generate_dialog(
    store: KgStore,
    templates: Sequence[tpl.QuestionTemplate],
    seed: int,
    config: RunConfig | None = None,
) -> list[DialogTurn]:
    """Generate one complete dialog; deterministic per seed."""
    config = config or RunConfig()
    rng = random.Random(seed)
    turns, context = start_dialog(store, templates, rng, config)
    n_questions = rng.randint(config.min_questions, config.max_questions)
    for _ in range(n_questions - 1):
        step = next_turn(store, templates, context, rng, config)
        if step is None:
            break
        new_turns, context = step
        turns.extend(new_turns)
        if context.pending is not None:
            new_turns, context = clarification_exchange(store, context, None, rng, config)
            turns.extend(new_turns)
    return turns


# -- kind applicability -----------------------------------------------------------------


def _applicable(kind: str, context: DialogContext, templates) -> bool:
    if kind == "direct":
        return True
    if kind in ("coreference",):
        return bool(context.salience)
    if kind == "boolean":
        return any(t.kind == "Verify" for t in templates)
    if kind == "ellipsis":
        return context.last_template is not None
    return context.last_retrieve_template is not None


# -- per-kind builders --------------------------------------------------------------------


def _try_instantiate(
    store: KgStore,
    template: tpl.QuestionTemplate,
    bindings: Mapping[str, int | str],
    config: RunConfig,
    number: str = "plural",
) -> tpl.Instantiation | None:
    try:
        built = tpl.instantiate(
            store,
            template,
            bindings,
            answer_cap=config.answer_cap,
            number=number,
            include_zero_groups=config.include_zero_groups,
        )
    except (tpl.TemplateError, qa.PlanError):
        return None
    if isinstance(built, tpl.Rejection):
        return None
    if (
        tpl.pathology_filter(
            store,
            built,
            config.generic_relations,
            [tuple(p) for p in config.peer_type_blocklist],
        )
        is not None
    ):
        return None
    return built


def _simple_templates(store, templates):
    out = []
    for t in templates:
        if t.kind != "Retrieve" or t.anchor_slot() is None:
            continue
        if len(t.free_slots()) != 1 or t.free_slots() != [t.anchor_slot()]:
            continue
        ty = tpl.anchor_type(store, t)
        if ty is not None:
            out.append((t, ty))
    return out


def _build_direct(store, templates, context, rng, config):
    candidates = []
    for t, ty in _simple_templates(store, templates):
        rel = _template_relation(store, t)
        for anchor in sorted(store.entities_of_type(ty)):
            if anchor in context.salience or (rel is not None and rel in context.last_relations):
                candidates.append((t, anchor))
    rng.shuffle(candidates)
    for t, anchor in candidates:
        built = _try_instantiate(store, t, {t.anchor_slot(): anchor}, config)
        if built is not None:
            return _Question(TurnState.SIMPLE_Q, built, t, retrieve_base=t)
    return None


def _build_coreference(store, templates, context, rng, config):
    ambiguous_ok = rng.random() < config.ambiguity_rate
    salience_types: dict[int, list[int]] = {}
    for e in context.salience:
        for ty in store.types_of(e):
            salience_types.setdefault(ty, []).append(e)

    if ambiguous_ok:
        built = _build_ambiguous(store, templates, context, rng, config)
        if built is not None:
            return built

    candidates = []
    for t, ty in _simple_templates(store, templates):
        holders = salience_types.get(ty, [])
        if len(holders) == 1:
            candidates.append((t, ty, holders[0]))
    rng.shuffle(candidates)
    for t, ty, anchor in candidates:
        built = _try_instantiate(store, t, {t.anchor_slot(): anchor}, config)
        if built is None:
            continue
        mention = f"that {store.type_label(ty)}"
        question = tpl.render_question(
            store,
            t,
            built.bindings,
            number=built.number,
            mention_overrides={t.anchor_slot(): mention},
        )
        built = replace(built, question=question)
        return _Question(TurnState.COREFERENCE_Q, built, t, retrieve_base=t)
    return None


def _build_ambiguous(store, templates, context, rng, config):
    answer_types: dict[int, list[int]] = {}
    for e in context.last_answer_entities:
        for ty in store.types_of(e):
            answer_types.setdefault(ty, []).append(e)
    candidates = []
    for t, ty in _simple_templates(store, templates):
        holders = answer_types.get(ty, [])
        if len(holders) >= 2:
            candidates.append((t, ty, holders))
    rng.shuffle(candidates)
    for t, ty, holders in candidates:
        intended = rng.choice(sorted(holders))
        bindings = {t.anchor_slot(): intended}
        built = _try_instantiate(store, t, bindings, config)
        if built is None:
            continue
        mention = f"that {store.type_label(ty)}"
        question = tpl.render_question(
            store,
            t,
            built.bindings,
            number=built.number,
            mention_overrides={t.anchor_slot(): mention},
        )
        built = replace(built, question=question)
        pending = PendingClarification(
            mention=mention,
            mention_type=ty,
            candidates=tuple(dict.fromkeys(holders)),
            intended=intended,
            template=t,
            bindings=dict(built.bindings),
            state=TurnState.COREFERENCE_Q,
        )
        return _Question(TurnState.COREFERENCE_Q, built, t, ambiguous=pending, retrieve_base=t)
    return None


def _build_ellipsis(store, templates, context, rng, config):
    t = context.last_template
    if t is None or t.anchor_slot() is None:
        return None
    anchor_slot = t.anchor_slot()
    old = context.last_bindings.get(anchor_slot)
    ty = tpl.anchor_type(store, t)
    if ty is None:
        return None
    old_id = old if isinstance(old, int) else (store.entity_id(old) if old else None)
    swaps = [e for e in sorted(store.entities_of_type(ty)) if e != old_id]
    rng.shuffle(swaps)
    pattern = rng.choice(_ELLIPSIS_BANK)
    for anchor in swaps:
        built = _try_instantiate(store, t, {**context.last_bindings, anchor_slot: anchor}, config)
        if built is None:
            continue
        built = replace(
            built, question=pattern.format(entity=store.entity_label(anchor))
        )
        base = context.last_retrieve_template
        return _Question(TurnState.ELLIPSIS_Q, built, t, retrieve_base=base)
    return None


def _build_logical(store, templates, context, rng, config):
    base = context.last_retrieve_template
    if base is None:
        return None
    anchor_slot = base.anchor_slot()
    if anchor_slot is None:
        return None
    anchor = context.last_bindings.get(anchor_slot)
    if anchor is None:
        return None
    anchor_id = anchor if isinstance(anchor, int) else store.entity_id(anchor)
    ty = tpl.anchor_type(store, base)
    if ty is None:
        return None
    others = [e for e in sorted(store.entities_of_type(ty)) if e != anchor_id]
    ops = ["and", "or", "but_not"]
    candidates = [(op, e) for op in ops for e in others]
    rng.shuffle(candidates)
    for op, extra in candidates:
        try:
            derived = tpl.transform_logical(base, op, extra)
        except tpl.TemplateError:
            return None
        built = _try_instantiate(store, derived, {anchor_slot: anchor_id}, config)
        if built is not None:
            return _Question(TurnState.LOGICAL_Q, built, derived, retrieve_base=base)
    return None


def _build_count(store, templates, context, rng, config):
    base = context.last_retrieve_template
    if base is None:
        return None
    try:
        derived = tpl.transform_to_count(base)
    except tpl.TemplateError:
        return None
    anchor_slot = base.anchor_slot()
    anchors: list[int | str] = []
    if anchor_slot is not None:
        ty = tpl.anchor_type(store, base)
        anchors = sorted(store.entities_of_type(ty)) if ty is not None else []
        rng.shuffle(anchors)
        old = context.last_bindings.get(anchor_slot)
        if old is not None:
            anchors.insert(0, old)
    else:
        anchors = [None]
    for anchor in anchors:
        bindings = {} if anchor is None else {anchor_slot: anchor}
        built = _try_instantiate(store, derived, {**context.last_bindings, **bindings}, config)
        if built is not None:
            return _Question(TurnState.QUANTITATIVE_COUNT_Q, built, derived, retrieve_base=base)
    return None


def _build_argopt(store, templates, context, rng, config):
    base = context.last_retrieve_template
    if base is None:
        return None
    direction = rng.choice(["max", "min"])
    try:
        derived = tpl.transform_argopt(base, direction)
    except tpl.TemplateError:
        return None
    built = _try_instantiate(store, derived, dict(context.last_bindings), config)
    if built is None:
        return None
    return _Question(TurnState.QUANTITATIVE_ARGOPT_Q, built, derived, retrieve_base=base)


def _build_threshold(store, templates, context, rng, config):
    base = context.last_retrieve_template
    if base is None:
        return None
    counting = rng.random() < 0.5
    candidates = [(cmp_, n) for cmp_ in qa.COMPARATORS for n in (1, 2, 3, 4)]
    rng.shuffle(candidates)
    for cmp_, n in candidates:
        try:
            derived = tpl.transform_threshold(base, cmp_, n)
            if counting:
                derived = tpl.transform_to_count(derived)
        except tpl.TemplateError:
            return None
        built = _try_instantiate(store, derived, dict(context.last_bindings), config)
        if built is not None:
            return _Question(
                TurnState.QUANTITATIVE_THRESHOLD_Q, built, derived, retrieve_base=base
            )
    return None


def _build_comparative(store, templates, context, rng, config):
    base = context.last_retrieve_template
    if base is None:
        return None
    counting = rng.random() < 0.5
    try:
        probe = tpl.transform_comparative(base, "more", 0)
    except tpl.TemplateError:
        return None
    group_ty = tpl.slot_expected_type(store, probe, "entity:ref")
    if group_ty is None:
        return None
    refs = sorted(store.entities_of_type(group_ty))
    candidates = [(d, ref) for d in qa.CMP_DIRECTIONS for ref in refs]
    rng.shuffle(candidates)
    for direction, ref in candidates:
        try:
            derived = tpl.transform_comparative(base, direction, ref)
            if counting:
                derived = tpl.transform_to_count(derived)
        except tpl.TemplateError:
            return None
        built = _try_instantiate(store, derived, dict(context.last_bindings), config)
        if built is not None:
            state = (
                TurnState.COMPARATIVE_COUNT_Q if counting else TurnState.COMPARATIVE_Q
            )
            return _Question(state, built, derived, retrieve_base=base)
    return None


def _build_boolean(store, templates, context, rng, config):
    verifies = [t for t in templates if t.kind == "Verify"]
    rng.shuffle(verifies)
    for t in verifies:
        slots = t.free_slots()
        bindings: dict[str, int | str] = {}
        ok = True
        for slot in slots:
            ty = tpl.slot_expected_type(store, t, slot)
            if ty is None:
                ok = False
                break
            pool = sorted(store.entities_of_type(ty))
            if not pool:
                ok = False
                break
            preferred = [e for e in context.salience if store.has_type(e, ty)]
            taken = set(v for v in bindings.values() if isinstance(v, int))
            preferred = [e for e in preferred if e not in taken]
            pool = [e for e in pool if e not in taken] or pool
            bindings[slot] = rng.choice(preferred) if preferred else rng.choice(pool)
        if not ok:
            continue
        rel = _template_relation(store, t)
        linked = (rel is not None and rel in context.last_relations) or any(
            v in context.salience for v in bindings.values() if isinstance(v, int)
        )
        if not linked:
            continue
        built = _try_instantiate(store, t, bindings, config)
        if built is not None:
            return _Question(TurnState.BOOLEAN_Q, built, t, retrieve_base=context.last_retrieve_template)
    return None


def _template_relation(store: KgStore, t: tpl.QuestionTemplate) -> int | None:
    value = t.fixed.get("relation")
    if value is None:
        return None
    return value if isinstance(value, int) else store.relation_id(value)
