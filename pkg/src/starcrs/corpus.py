"""Synthetic conversational-recommendation corpus with planted preference
structure, plus JSONL ingestion and context truncation.

The generator plants signal so that learning is verifiable and each input
pathway is separately testable:

* every conversation opens with a persona turn naming a primary genre (and
  an actor as a distractor), and a secondary genre arrives later as an
  on-screen tap recorded only as an entity mention; each conversation then
  carries two primary-genre targets and one secondary-genre target, so
  ranking learns a strong tier and a weak tier;
* items fall into four content profiles controlling where their genre can
  be observed: ``rich`` (graph edge + description summary + fixed-position
  header block), ``text`` (summary only), ``graph`` (edge only) and
  ``visual`` (header block only, placed before the text encoder's
  256-token tail window so only the page renderer sees it);
* description text depends only on (genre, profile) and graph identity
  features are shared per entity type, so no pathway can key on item
  identity: dropping a pathway removes exactly the genre evidence of the
  items that rely on it, which then fall below the secondary tier.

Dialogue token counts are steered into a fixed window so the recommendation
context budget (256) keeps the persona turn while the shorter response
context budget drops it, leaving the rendered-dialogue pathway as the only
in-model route to the persona during response generation.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .encoders import SEP, Vocabulary, tokenize, words_of
from .errors import ConfigError, EmptyInputError, ParseError
from .kg import EntityDescription, KnowledgeGraph

log = logging.getLogger(__name__)

SEEKER = "seeker"
RECOMMENDER = "recommender"
SPEAKERS = (SEEKER, RECOMMENDER)

REL_GENRE = 0
REL_ACTOR = 1
REL_RELATED = 2
RELATION_NAMES = {REL_GENRE: "has_genre", REL_ACTOR: "has_actor",
                  REL_RELATED: "similar_to"}

GENRE_WORDS = ("noir", "comedy", "horror", "drama", "scifi", "romance",
               "thriller", "western")
ACTOR_WORDS = ("marlowe", "quinn", "vega", "osei", "lindqvist", "tanaka",
               "moreau", "petrov", "alvarez", "okafor", "byrne", "castell",
               "novak", "ferreira", "sandoval", "kowalski")
ADJ_WORDS = ("crimson", "silent", "broken", "golden", "hollow", "velvet",
             "savage", "winter", "electric", "paper", "iron", "lunar",
             "scarlet", "frozen", "wild", "amber")

# per-slot content profile, cycled over an item's slot within its genre
PROFILE_PATTERN = ("rich", "rich", "text", "text", "text", "graph",
                   "visual", "visual")

FILLER_WORDS = (
    "well", "anyway", "honestly", "lately", "mostly", "perhaps", "again",
    "evening", "weekend", "couch", "popcorn", "screen", "light", "rain",
    "quiet", "busy", "work", "friends", "dinner", "coffee", "music",
    "walking", "reading", "sleepy", "tired", "happy", "curious", "free",
    "time", "plans", "nothing", "something", "watching", "talking",
    "thinking", "maybe", "surely", "often", "rarely", "always", "never",
    "yesterday", "tomorrow", "tonight", "soon", "later", "early", "slow",
    "fast", "long", "short", "new", "old", "good", "fine", "nice", "plain",
    "simple", "small", "big",
)

PERSONA_HEADS = (
    "hi i am in the mood for {g} movies tonight maybe a {g} story with {a} in it",
    "hello i really love {g} films especially {g} ones starring {a}",
    "hey my favorite kind of movie is {g} i watch {g} titles with {a} all the time",
)

ACK_LINES = (
    "sure let me think about that for a moment",
    "okay got it give me a second to look around",
    "alright i hear you let me check my list first",
)

MID_SEEKER_LINES = (
    "also i prefer something not too heavy with a steady pace and a decent cast",
    "oh and ideally nothing too long since i have an early start tomorrow",
    "by the way subtitles are fine and older releases are fine too",
)

FINAL_SEEKER_BASE = "so with all that said what would you suggest for me to watch"

RESPONSE_TEMPLATES = (
    "you said you love {g} movies so i picked {name} for you it is a solid {g} choice enjoy the show",
    "since {g} films are your thing my pick is {name} a dependable {g} title you should enjoy",
    "given your taste for {g} stories i would go with {name} it delivers exactly the {g} mood you want",
)

# fixed noise paragraph shared by every description; repeated to length
NOISE_SENTENCES = (
    "the archive copy was inspected last season and the reel remains in "
    "acceptable condition for regular screening",
    "distribution records list several regional releases along with a "
    "modest run of festival showings in the usual circuit",
    "the catalog entry was revised twice and the current notes replace all "
    "earlier summaries kept on file",
    "viewers can find the usual assortment of production trivia in the "
    "appendix including shooting locations and schedule notes",
    "the restoration team logged routine cleanup work on sound and color "
    "with no major defects reported",
)

_TARGET_CTX_MIN = 205
_TARGET_CTX_MAX = 245


@dataclass
class Utterance:
    speaker: str
    text: str
    entity_mentions: list = field(default_factory=list)

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ConfigError(f"unknown speaker {self.speaker!r}")


@dataclass
class Conversation:
    id: str
    turns: list
    target_items: list = field(default_factory=list)
    split: str = "train"

    def __post_init__(self):
        if not self.turns:
            raise ConfigError(f"conversation {self.id} has no turns")
        if self.split not in ("train", "valid", "test"):
            raise ConfigError(f"conversation {self.id}: bad split {self.split!r}")

    def context_turns(self):
        """All turns before the final recommender response."""
        if len(self.turns) >= 2 and self.turns[-1].speaker == RECOMMENDER:
            return self.turns[:-1]
        return self.turns

    def response_text(self):
        if self.turns[-1].speaker == RECOMMENDER:
            return self.turns[-1].text
        return ""


@dataclass
class SynthConfig:
    num_items: int = 64
    num_genres: int = 8
    num_actors: int = 16
    num_conversations: int = 500
    min_turns: int = 4
    max_turns: int = 8
    seed: int = 0

    def __post_init__(self):
        problems = []
        for name in ("num_items", "num_genres", "num_actors",
                     "num_conversations", "min_turns", "max_turns"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.num_genres > len(GENRE_WORDS):
            problems.append(f"at most {len(GENRE_WORDS)} genres supported")
        if self.num_genres < 2:
            problems.append("need at least two genres for the secondary tier")
        if self.num_actors > len(ACTOR_WORDS):
            problems.append(f"at most {len(ACTOR_WORDS)} actors supported")
        if self.num_items < self.num_genres:
            problems.append("need at least one item per genre")
        if self.min_turns < 4 or self.max_turns < self.min_turns:
            problems.append("turn range must satisfy 4 <= min <= max")
        if problems:
            raise ConfigError(problems)

    @property
    def n_entities(self):
        return self.num_items + self.num_genres + self.num_actors

    def genre_entity(self, g: int) -> int:
        return self.num_items + g

    def actor_entity(self, a: int) -> int:
        return self.num_items + self.num_genres + a


def item_genre(item_id: int, cfg: SynthConfig) -> int:
    """Round-robin genre index for an item."""
    return item_id % cfg.num_genres


def _slot(item_id: int, cfg: SynthConfig) -> int:
    return item_id // cfg.num_genres


def item_profile(item_id: int, cfg: SynthConfig) -> str:
    """Which pathways can observe this item's genre: rich/text/graph/visual."""
    return PROFILE_PATTERN[_slot(item_id, cfg) % len(PROFILE_PATTERN)]


def item_name(item_id: int, cfg: SynthConfig) -> str:
    return f"{ADJ_WORDS[item_id % len(ADJ_WORDS)]} x{item_id:02d}"


def split_of_id(conv_id: str) -> str:
    """Seed-stable 80/10/10 split from a hash of the conversation id."""
    h = int.from_bytes(hashlib.sha256(conv_id.encode("utf-8")).digest()[:8],
                       "big")
    bucket = h % 10
    if bucket < 8:
        return "train"
    return "valid" if bucket == 8 else "test"


def _filler(rng, n: int) -> str:
    idx = rng.integers(0, len(FILLER_WORDS), size=max(n, 0))
    return " ".join(FILLER_WORDS[i] for i in idx)


def _noise_paragraph(n_tokens: int, start: int = 0) -> str:
    """Deterministic filler prose of exactly n_tokens words."""
    out = []
    k = start
    while len(out) < n_tokens:
        out.extend(NOISE_SENTENCES[k % len(NOISE_SENTENCES)].split())
        k += 1
    return " ".join(out[:n_tokens])


def _item_description(item_id: int, cfg: SynthConfig) -> str:
    """Item page text, a function of (genre, profile) only.

    Word budget: 74 header + 14 bridge + 130 noise + 120 section + ~28
    summary, so the text encoder's 256-token tail starts after the header
    and only the page renderer sees the header block. The review section
    is genre-dense because the pooled text features average the whole
    window; a sparse mention would vanish into the pool."""
    g = GENRE_WORDS[item_genre(item_id, cfg)]
    profile = item_profile(item_id, cfg)

    if profile in ("rich", "visual"):
        header = "related titles " + f"{g} feature " * 36
    else:
        header = "related titles " + "general listing " * 36
    bridge = ("catalog entry with routine archive notes and the usual "
              "screening remarks kept on file")
    noise = _noise_paragraph(130, start=PROFILE_PATTERN.index(profile))
    if profile in ("rich", "text"):
        section = f"a {g} film with {g} pacing and a {g} finale " * 12
        summary = (f"summary a {g} tale through and through this {g} film "
                   f"delivers the {g} mood its fans expect and lands one "
                   f"more {g} twist before the end credits roll")
    else:
        section = "a film with steady pacing and a well earned finale " * 12
        summary = ("summary a quiet film for a calm evening it moves along "
                   "at its own pace keeps its cards close and ends right "
                   "on time without any fuss at all")
    return " ".join([header.strip(), bridge, noise, section.strip(), summary])


def _build_graph(cfg: SynthConfig, item_actor) -> KnowledgeGraph:
    triples = []
    for i in range(cfg.num_items):
        profile = item_profile(i, cfg)
        if profile in ("rich", "graph"):
            ge = cfg.genre_entity(item_genre(i, cfg))
            triples.append((i, REL_GENRE, ge))
            triples.append((ge, REL_GENRE, i))
        ae = cfg.actor_entity(item_actor[i])
        triples.append((i, REL_ACTOR, ae))
        triples.append((ae, REL_ACTOR, i))
    # pair up the two rich slots of each genre when both exist
    for g in range(cfg.num_genres):
        a, b = g, g + cfg.num_genres
        if b < cfg.num_items and item_profile(a, cfg) == "rich" \
                and item_profile(b, cfg) == "rich":
            triples.append((a, REL_RELATED, b))
            triples.append((b, REL_RELATED, a))
    # identity rows: one shared row for items, one per genre hub, one
    # shared row for actors, so the graph view cannot memorize item ids
    groups = ([0] * cfg.num_items
              + [1 + g for g in range(cfg.num_genres)]
              + [1 + cfg.num_genres] * cfg.num_actors)
    graph = KnowledgeGraph(n_entities=cfg.n_entities, triples=triples,
                           feature_groups=groups)
    graph.mark_items(range(cfg.num_items))
    return graph


def _ctx_token_count(turns) -> int:
    # mirror truncate_context: separator + speaker tag + words, per turn
    return sum(2 + len(words_of(t.text)) for t in turns)


def _conversation(k: int, cfg: SynthConfig, rng, by_genre) -> Conversation:
    conv_id = f"synth-{k:04d}"
    split = split_of_id(conv_id)
    g = int(rng.integers(0, cfg.num_genres))
    # secondary genre is a distinct on-screen tap; its word never enters
    # the dialogue text, only the mention annotation
    g2 = int((g + 1 + rng.integers(0, cfg.num_genres - 1)) % cfg.num_genres)
    # two primary-genre targets and one secondary-genre target: rank
    # training then sees the strong tier twice per conversation and the
    # weak tier once, every conversation
    pool = by_genre[g]
    take = min(2, len(pool))
    prim = [int(pool[j])
            for j in rng.choice(len(pool), size=take, replace=False)]
    sec_pool = by_genre[g2]
    sec = int(sec_pool[rng.integers(0, len(sec_pool))])
    targets = prim + [sec]
    actor = int(rng.integers(0, cfg.num_actors))
    gw, aw = GENRE_WORDS[g], ACTOR_WORDS[actor]

    head = PERSONA_HEADS[rng.integers(0, len(PERSONA_HEADS))].format(g=gw, a=aw)
    n_pairs = int(rng.integers(cfg.min_turns // 2, cfg.max_turns // 2 + 1))
    turns = [Utterance(SEEKER, head + " " + _filler(rng, 70 + int(rng.integers(0, 16))),
                       [cfg.genre_entity(g), cfg.actor_entity(actor)])]
    for _ in range(n_pairs - 2):
        turns.append(Utterance(RECOMMENDER,
                               ACK_LINES[rng.integers(0, len(ACK_LINES))], []))
        turns.append(Utterance(SEEKER,
                               MID_SEEKER_LINES[rng.integers(0, len(MID_SEEKER_LINES))], []))
    turns.append(Utterance(RECOMMENDER,
                           ACK_LINES[rng.integers(0, len(ACK_LINES))], []))
    turns.append(Utterance(SEEKER, FINAL_SEEKER_BASE,
                           [cfg.genre_entity(g2)]))

    # steer the context token total into the window that keeps the persona
    # inside the 256-token budget but outside the shorter response budget
    target_total = int(rng.integers(_TARGET_CTX_MIN, _TARGET_CTX_MAX + 1))
    have = _ctx_token_count(turns)
    pad = target_total - have
    if pad > 0:
        turns[-1] = Utterance(SEEKER,
                              FINAL_SEEKER_BASE + " " + _filler(rng, pad),
                              [cfg.genre_entity(g2)])
    else:
        # long middles: trim the opening turn's filler instead
        t0_words = turns[0].text.split()
        keep = max(len(t0_words) + pad, len(head.split()) + 8)
        turns[0] = Utterance(SEEKER, " ".join(t0_words[:keep]),
                             turns[0].entity_mentions)

    # responses always voice the primary genre; reading it back requires
    # the rendered-dialogue pathway once the 160-token budget drops it
    resp = RESPONSE_TEMPLATES[rng.integers(0, len(RESPONSE_TEMPLATES))].format(
        g=gw, name=item_name(targets[0], cfg))
    turns.append(Utterance(RECOMMENDER, resp,
                           targets + [cfg.genre_entity(g)]))
    return Conversation(conv_id, turns, targets, split)


def generate_synthetic(cfg: SynthConfig):
    """Build (conversations, graph, descriptions) from a seeded config."""
    rng = np.random.default_rng(cfg.seed)
    item_actor = [int(rng.integers(0, cfg.num_actors))
                  for _ in range(cfg.num_items)]
    graph = _build_graph(cfg, item_actor)

    descriptions = {}
    for i in range(cfg.num_items):
        descriptions[i] = EntityDescription(
            i, item_name(i, cfg), _item_description(i, cfg))
    for g in range(cfg.num_genres):
        e = cfg.genre_entity(g)
        descriptions[e] = EntityDescription(
            e, GENRE_WORDS[g],
            f"{GENRE_WORDS[g]} collection page listing every {GENRE_WORDS[g]} "
            f"title in the catalog with screening notes")
    for a in range(cfg.num_actors):
        e = cfg.actor_entity(a)
        descriptions[e] = EntityDescription(
            e, ACTOR_WORDS[a],
            f"profile page for {ACTOR_WORDS[a]} with a short filmography "
            f"and appearance notes")

    by_genre = {g: [] for g in range(cfg.num_genres)}
    for i in range(cfg.num_items):
        by_genre[item_genre(i, cfg)].append(i)

    convs = [_conversation(k, cfg, rng, by_genre)
             for k in range(cfg.num_conversations)]
    log.info("generated %d conversations, %d entities, %d triples",
             len(convs), cfg.n_entities, len(graph.triples))
    return convs, graph, descriptions


def save_corpus(convs, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in convs:
            fh.write(json.dumps({
                "id": c.id,
                "turns": [{"speaker": t.speaker, "text": t.text,
                           "entities": list(t.entity_mentions)}
                          for t in c.turns],
                "targets": list(c.target_items),
                "split": c.split,
            }) + "\n")


def load_corpus(path, graph: KnowledgeGraph | None = None) -> list:
    """Read JSONL conversations; validate entity ids against a graph."""
    convs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(path, line_no, f"bad JSON: {e.msg}") from e
            try:
                turns = [Utterance(t["speaker"], t["text"],
                                   [int(x) for x in t.get("entities", [])])
                         for t in obj["turns"]]
                conv = Conversation(str(obj["id"]), turns,
                                    [int(x) for x in obj.get("targets", [])],
                                    obj.get("split", "train"))
            except (KeyError, TypeError, ConfigError) as e:
                raise ParseError(path, line_no, f"bad conversation: {e}") from e
            if graph is not None:
                bad = sorted({e for t in conv.turns for e in t.entity_mentions
                              if not 0 <= e < graph.n_entities})
                bad += sorted({t for t in conv.target_items
                               if t not in graph.items})
                if bad:
                    raise ParseError(
                        path, line_no,
                        f"conversation {conv.id}: unknown entity ids {bad}")
            convs.append(conv)
    if not convs:
        log.warning("corpus file %s is empty", path)
    return convs


def truncate_context(conv, vocab: Vocabulary, max_tokens: int) -> list:
    """Token ids for a dialogue context: turns oldest to newest, each as
    [separator, speaker tag, words...], then a pure tail cut to max_tokens.
    Utterance boundaries are not respected by the cut."""
    if max_tokens < 1:
        raise ConfigError(f"max_tokens must be >= 1, got {max_tokens}")
    turns = conv.turns if isinstance(conv, Conversation) else list(conv)
    ids = []
    for t in turns:
        ids.append(SEP)
        ids.extend(tokenize(t.speaker, vocab))
        ids.extend(tokenize(t.text, vocab))
    return ids[-max_tokens:]


def dialogue_text(turns) -> str:
    """Plain-text rendering of a dialogue, one speaker-tagged line per turn."""
    return "\n".join(f"{t.speaker}: {t.text}" for t in turns)


def detect_entity_mentions(text: str, descriptions) -> list:
    """Entity ids whose names appear as contiguous words of the text.

    Used to ground free-form utterances (the live service) the same way the
    generator grounds synthetic turns."""
    words = text.lower().split()
    found = set()
    for eid, desc in descriptions.items():
        name = desc.name.lower().split()
        if not name:
            continue
        span = len(name)
        for i in range(len(words) - span + 1):
            if words[i: i + span] == name:
                found.add(eid)
                break
    return sorted(found)


def corpus_texts(convs, descriptions) -> list:
    """Every text the vocabulary must cover, speaker tags included."""
    texts = [" ".join(SPEAKERS)]
    for c in convs:
        texts.extend(t.text for t in c.turns)
    texts.extend(d.description for d in descriptions.values())
    texts.extend(d.name for d in descriptions.values())
    return texts


def split_corpus(convs):
    """(train, valid, test) sublists in corpus order."""
    out = {"train": [], "valid": [], "test": []}
    for c in convs:
        out[c.split].append(c)
    return out["train"], out["valid"], out["test"]


def persona_probe_recall10(convs, cfg: SynthConfig, steps: int = 200,
                           lr: float = 0.5) -> float:
    """Corpus sanity gate: softmax regression from the persona genre one-hot
    to the target item, fit and scored on the train split. Verifies the
    planted signal is linearly extractable before any model run."""
    train, _, _ = split_corpus(convs)
    rows = []
    for c in train:
        gs = [e - cfg.num_items for e in c.turns[0].entity_mentions
              if cfg.num_items <= e < cfg.num_items + cfg.num_genres]
        if gs and c.target_items:
            rows.append((gs[0], c.target_items[0]))
    if not rows:
        raise EmptyInputError("no usable training conversations for the probe")
    X = np.zeros((len(rows), cfg.num_genres))
    y = np.array([t for _, t in rows])
    for i, (g, _) in enumerate(rows):
        X[i, g] = 1.0
    W = np.zeros((cfg.num_genres, cfg.num_items))
    for _ in range(steps):
        z = X @ W
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(len(y)), y] -= 1.0
        W -= lr * (X.T @ p) / len(y)
    scores = X @ W
    hits = 0
    for i, t in enumerate(y):
        top10 = np.argsort(-scores[i], kind="stable")[:10]
        hits += int(t in top10)
    return hits / len(y)
