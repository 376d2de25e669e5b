"""Generation-based expansion.

Candidate entity names are compiled into a tokenized prefix trie; a beam
search constrained to trie paths then guarantees every generated entity
is a real candidate. Generated entities are scored by how strongly the
language model links them to the seed entities (geometric mean of
continuation token probabilities, so long seed names are not penalized),
selected iteratively over rounds, and finally re-ranked against the
negative seeds by the same segmented scheme the retrieval pipeline uses.
"""
from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Mapping, Sequence

from .classgen import Query
from .corpus import Corpus
from .errors import UsageError
from .retrieval import RankedEntry, RankedList, segmented_rerank

log = logging.getLogger(__name__)

END_TOKEN = "</s>"  # closes an entity at a terminal trie node

DEFAULT_PER_ROUND_GENERATE = 20
DEFAULT_SELECT_COUNT = 5

SIMILAR_PROMPT = "{entity} is similar to"
GENERATE_PROMPT = (
    "These entities share a semantic class: {e1}, {e2}, {e3}. "
    "Another entity of the same class is"
)


class TrieNode:
    __slots__ = ("children", "entity_id")

    def __init__(self):
        self.children: dict[str, TrieNode] = {}
        self.entity_id: str | None = None


@dataclass
class EntityTrie:
    """Prefix trie over candidate-entity tokenizations.

    Every root-to-terminal path spells exactly one candidate's token
    sequence. When two entities tokenize identically the terminal keeps
    the smaller entity id and the clash is recorded in ``collisions``.
    """

    root: TrieNode
    tokenizer: Callable[[str], list[str]]
    terminal_count: int
    leaf_count: int
    collisions: tuple[tuple[str, str], ...] = ()  # (kept_id, dropped_id)

    def node_for(self, prefix_tokens: Sequence[str]) -> TrieNode:
        node = self.root
        for tok in prefix_tokens:
            if tok not in node.children:
                raise UsageError(f"prefix {list(prefix_tokens)!r} is not a valid trie path")
            node = node.children[tok]
        return node

    def accepts(self, text: str) -> bool:
        try:
            return self.node_for(self.tokenizer(text)).entity_id is not None
        except UsageError:
            return False


def build_trie(vocab: Mapping[str, str] | Iterable[str], tokenizer: Callable[[str], list[str]]) -> EntityTrie:
    """Compile entity names into a trie.

    ``vocab`` maps entity id to display name; a bare iterable of names is
    accepted for fixtures, with the name doubling as the id.
    """
    if not isinstance(vocab, Mapping):
        vocab = {name: name for name in vocab}
    if not vocab:
        raise UsageError("candidate vocabulary is empty")
    root = TrieNode()
    collisions: list[tuple[str, str]] = []
    terminals = 0
    for eid in sorted(vocab):
        tokens = tokenizer(vocab[eid])
        if not tokens:
            raise UsageError(f"entity {eid!r} tokenizes to an empty sequence")
        if END_TOKEN in tokens:
            raise UsageError(f"entity {eid!r} tokenizes onto the reserved end marker")
        node = root
        for tok in tokens:
            node = node.children.setdefault(tok, TrieNode())
        if node.entity_id is not None:
            collisions.append((node.entity_id, eid))  # sorted iteration: kept id is smaller
            continue
        node.entity_id = eid
        terminals += 1

    def leaves(node: TrieNode) -> int:
        if not node.children:
            return 1
        return sum(leaves(child) for child in node.children.values())

    return EntityTrie(
        root=root,
        tokenizer=tokenizer,
        terminal_count=terminals,
        leaf_count=leaves(root),
        collisions=tuple(collisions),
    )


def allowed_next(trie: EntityTrie, prefix_tokens: Sequence[str]) -> set[str]:
    """Tokens that may follow the prefix: the cursor's children, plus the
    end marker when the cursor itself completes an entity."""
    node = trie.node_for(prefix_tokens)
    out = set(node.children)
    if node.entity_id is not None:
        out.add(END_TOKEN)
    return out


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[str, ...]
    logprob: float
    finished: bool = False


def constrained_beam_search(
    lm,
    prompt: str,
    trie: EntityTrie,
    width: int,
    max_entities: int,
) -> list[tuple[str, float]]:
    """Beam search whose per-step choices are restricted to trie paths.

    Every emitted entity is therefore a member of the candidate
    vocabulary. A hypothesis finishes by selecting the end marker at a
    terminal node; that final step's logprob is part of the path score so
    entities that are prefixes of longer entities compete fairly. With
    ``width`` at least the trie's leaf count no hypothesis is ever
    pruned, making the result an exact enumeration ranking.
    """
    if width < 1:
        raise UsageError(f"beam width must be >= 1, got {width}")
    prompt_tokens = tuple(trie.tokenizer(prompt))
    beam: list[BeamHypothesis] = [BeamHypothesis(tokens=(), logprob=0.0)]
    finished: list[tuple[str, float]] = []
    while beam:
        successors: list[BeamHypothesis] = []
        for hyp in beam:
            allowed = sorted(allowed_next(trie, hyp.tokens))
            logprobs = lm.next_token_logprobs(list(prompt_tokens + hyp.tokens), allowed)
            for tok in allowed:
                if tok not in logprobs:
                    continue
                nxt = BeamHypothesis(
                    tokens=hyp.tokens + (tok,),
                    logprob=hyp.logprob + logprobs[tok],
                    finished=tok == END_TOKEN,
                )
                if nxt.finished:
                    eid = trie.node_for(hyp.tokens).entity_id
                    finished.append((eid, nxt.logprob))
                else:
                    successors.append(nxt)
        successors.sort(key=lambda h: (-h.logprob, h.tokens))
        beam = successors[:width]
    finished.sort(key=lambda pair: (-pair[1], pair[0]))
    return finished[:max_entities]


def gen_similarity_score(lm, entity_name: str, seed_names: Sequence[str]) -> float:
    """Mean over seeds of the per-token geometric mean probability of the
    seed name continuing "{entity} is similar to"."""
    if not seed_names:
        raise UsageError("need at least one seed name to score against")
    prefix = SIMILAR_PROMPT.format(entity=entity_name)
    total = 0.0
    for seed in seed_names:
        logprob, token_count = lm.score_continuation(prefix, seed)
        if token_count < 1:
            raise UsageError(f"seed {seed!r} scored over zero tokens")
        total += math.exp(logprob / token_count)
    return total / len(seed_names)


# --- iterative expansion ------------------------------------------------------

@dataclass(frozen=True)
class ExpandedEntity:
    entity_id: str
    score: float
    round_entered: int


@dataclass(frozen=True)
class ExpansionState:
    query: Query
    expanded: tuple[ExpandedEntity, ...] = ()
    round: int = 0

    def expanded_ids(self) -> list[str]:
        return [e.entity_id for e in self.expanded]


def _prompt_entities(state: ExpansionState, rng: random.Random) -> list[str]:
    """Round 1 samples 3 positive seeds; later rounds mix 2 positive
    seeds with 1 already-expanded entity (falling back to seeds while
    nothing is expanded yet)."""
    pos = list(state.query.pos_seeds)
    if state.round == 0 or not state.expanded:
        return rng.sample(pos, 3)
    picked = rng.sample(pos, 2)
    picked.append(rng.choice(state.expanded_ids()))
    return picked


def build_generate_prompt(names: Sequence[str], cot_prefix: str = "") -> str:
    if len(names) != 3:
        raise UsageError(f"generation prompt takes exactly 3 entities, got {len(names)}")
    prompt = GENERATE_PROMPT.format(e1=names[0], e2=names[1], e3=names[2])
    return cot_prefix + prompt if cot_prefix else prompt


def expansion_round(
    state: ExpansionState,
    lm,
    trie: EntityTrie,
    rng: random.Random,
    corpus: Corpus,
    per_round_generate: int = DEFAULT_PER_ROUND_GENERATE,
    select_count: int = DEFAULT_SELECT_COUNT,
    beam_width: int | None = None,
    cot_prefix: str = "",
) -> ExpansionState:
    """One generate-score-select round; returns the advanced state.

    Seeds and already-expanded entities are never re-appended. An empty
    generation leaves the expansion unchanged (the round still counts).
    """
    if per_round_generate < 1 or select_count < 1:
        raise UsageError("per-round generation and selection counts must be >= 1")
    prompt_ids = _prompt_entities(state, rng)
    prompt = build_generate_prompt([corpus.name_of(e) for e in prompt_ids], cot_prefix)
    width = beam_width if beam_width is not None else per_round_generate
    generated = constrained_beam_search(lm, prompt, trie, width=width, max_entities=per_round_generate)
    excluded = set(state.query.all_seeds) | set(state.expanded_ids())
    candidates = [eid for eid, _ in generated if eid not in excluded]
    if not candidates:
        log.warning("round %d generated no new entities", state.round + 1)
        return replace(state, round=state.round + 1)
    pos_names = [corpus.name_of(e) for e in state.query.pos_seeds]
    scored = [(eid, gen_similarity_score(lm, corpus.name_of(eid), pos_names)) for eid in candidates]
    scored.sort(key=lambda pair: (-pair[1], pair[0]))
    picked = tuple(
        ExpandedEntity(eid, score, state.round + 1) for eid, score in scored[:select_count]
    )
    return replace(state, expanded=state.expanded + picked, round=state.round + 1)


def run_genexpan(
    corpus: Corpus,
    query: Query,
    lm,
    trie: EntityTrie,
    rounds: int,
    k: int,
    segment_length: int,
    per_round_generate: int = DEFAULT_PER_ROUND_GENERATE,
    select_count: int = DEFAULT_SELECT_COUNT,
    beam_width: int | None = None,
    seed: int = 0,
    cot_prefix: str = "",
    rerank: bool = True,
) -> RankedList:
    """Iterative generation then negative-seed re-ranking.

    The pre-rerank order is round of entry first (earlier rounds suffered
    less drift), seed-similarity score second. Re-ranking reuses the
    retrieval pipeline's segmented scheme with negative scores computed
    by the generative similarity measure.
    """
    if rounds < 1:
        raise UsageError(f"rounds must be >= 1, got {rounds}")
    if k < 1:
        raise UsageError(f"K must be >= 1, got {k}")
    rng = random.Random(seed)
    state = ExpansionState(query=query)
    for _ in range(rounds):
        state = expansion_round(
            state, lm, trie, rng, corpus,
            per_round_generate=per_round_generate,
            select_count=select_count,
            beam_width=beam_width,
            cot_prefix=cot_prefix,
        )
    entries = tuple(RankedEntry(e.entity_id, e.score) for e in state.expanded[:k])
    ranked = RankedList(entries)
    if not rerank or not entries:
        return ranked
    neg_names = [corpus.name_of(e) for e in query.neg_seeds]
    neg_scores = {e.id: gen_similarity_score(lm, corpus.name_of(e.id), neg_names) for e in ranked}
    return segmented_rerank(ranked, neg_scores, segment_length)


# --- chain-of-thought augmentation -------------------------------------------

COT_MODES = ("class_name", "class_pos_attrs", "class_pos_neg_attrs")

_COT_CLASS_PROMPT = (
    "Entities: {pos}. Name the fine-grained semantic class they share. "
    "Reply in the form: Class: <name>"
)
_COT_POS_PROMPT = (
    "Entities: {pos}. Name their shared class and the attribute values "
    "they have in common. Reply in the form: "
    "Class: <name> | Attr: <attribute>=<value>, ..."
)
_COT_NEG_PROMPT = (
    "Entities: {pos}. Excluded entities: {neg}. Name the shared class, "
    "the attribute values the entities have in common, and the attribute "
    "values of the excluded entities. Reply in the form: "
    "Class: <name> | Attr: <attribute>=<value>, ... | NegAttr: <attribute>=<value>, ..."
)


@dataclass(frozen=True)
class CotContext:
    class_name: str = ""
    pos_attrs: tuple[str, ...] = ()
    neg_attrs: tuple[str, ...] = ()

    def is_empty(self) -> bool:
        return not (self.class_name or self.pos_attrs or self.neg_attrs)

    def prompt_prefix(self) -> str:
        """Text prepended to the generation prompt."""
        if self.is_empty():
            return ""
        parts = []
        if self.class_name:
            parts.append(f"The class is {self.class_name}.")
        if self.pos_attrs:
            parts.append(f"Shared attributes: {', '.join(self.pos_attrs)}.")
        if self.neg_attrs:
            parts.append(f"Excluded attributes: {', '.join(self.neg_attrs)}.")
        return " ".join(parts) + " "


@dataclass(frozen=True)
class CotRecord:
    mode: str
    prompt: str
    reply: str
    context: CotContext

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "prompt": self.prompt,
            "reply": self.reply,
            "parsed": {
                "class_name": self.context.class_name,
                "pos_attrs": list(self.context.pos_attrs),
                "neg_attrs": list(self.context.neg_attrs),
            },
        }


_ATTR_RE = re.compile(r"^\S+=\S.*$")


def parse_cot_reply(reply: str) -> CotContext:
    """Parse ``Class: X | Attr: a=v, b=w | NegAttr: c=u`` shaped replies.

    Anything that does not fit yields an empty context so the pipeline
    can degrade to plain generation.
    """
    class_name = ""
    pos_attrs: list[str] = []
    neg_attrs: list[str] = []
    for segment in reply.split("|"):
        segment = segment.strip()
        if ":" not in segment:
            continue
        key, _, value = segment.partition(":")
        key, value = key.strip().lower(), value.strip()
        if key == "class" and value:
            class_name = value
        elif key in ("attr", "negattr"):
            items = [a.strip() for a in re.split(r"[,;]", value) if a.strip()]
            items = [a for a in items if _ATTR_RE.match(a)]
            (pos_attrs if key == "attr" else neg_attrs).extend(items)
    return CotContext(class_name=class_name, pos_attrs=tuple(pos_attrs), neg_attrs=tuple(neg_attrs))


def cot_augment(
    lm,
    pos_seed_names: Sequence[str],
    neg_seed_names: Sequence[str] | None,
    mode: str,
    max_tokens: int = 64,
) -> CotRecord:
    """Ask the model to articulate the class before expanding it.

    The parsed reply feeds :meth:`CotContext.prompt_prefix`; an
    unparseable reply degrades to an empty context with a warning.
    """
    if mode not in COT_MODES:
        raise UsageError(f"unknown reasoning mode {mode!r}; pick one of {COT_MODES}")
    pos = ", ".join(pos_seed_names)
    if mode == "class_name":
        prompt = _COT_CLASS_PROMPT.format(pos=pos)
    elif mode == "class_pos_attrs":
        prompt = _COT_POS_PROMPT.format(pos=pos)
    else:
        neg = ", ".join(neg_seed_names or ())
        prompt = _COT_NEG_PROMPT.format(pos=pos, neg=neg)
    reply = lm.complete(prompt, max_tokens=max_tokens)
    context = parse_cot_reply(reply)
    if mode == "class_name":
        context = CotContext(class_name=context.class_name)
    elif mode == "class_pos_attrs":
        context = CotContext(class_name=context.class_name, pos_attrs=context.pos_attrs)
    if context.is_empty():
        log.warning("reasoning reply %r could not be parsed; continuing without it", reply[:80])
    return CotRecord(mode=mode, prompt=prompt, reply=reply, context=context)
