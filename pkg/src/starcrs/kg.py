"""Knowledge-graph storage and the relational entity pathway.

Triples live in TSV (head, relation, tail as integer ids); descriptions in
JSON Lines. The relational layer sums W_r h_j + b_r over each entity's
outgoing neighbors per relation, optionally adds a dedicated self-relation
(so isolated entities keep a signal), applies ReLU, and entity embeddings
average the layer outputs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, embedding, scatter_sum
from .errors import ParseError, ShapeMismatchError

log = logging.getLogger(__name__)


@dataclass
class EntityDescription:
    entity_id: int
    name: str
    description: str


@dataclass
class KnowledgeGraph:
    n_entities: int
    triples: list
    items: set = field(default_factory=set)
    # optional entity -> identity-feature row; lets entities share an
    # identity vector so the graph view carries relational signal only
    feature_groups: list = None
    relations: list = field(init=False)
    adjacency: dict = field(init=False)
    _edges: dict = field(init=False, repr=False)

    def __post_init__(self):
        if self.feature_groups is not None:
            self.feature_groups = [int(g) for g in self.feature_groups]
            if len(self.feature_groups) != self.n_entities:
                raise ParseError(
                    "<groups>", 0,
                    f"feature_groups has {len(self.feature_groups)} entries "
                    f"for {self.n_entities} entities")
            if any(g < 0 for g in self.feature_groups):
                raise ParseError("<groups>", 0, "negative feature group id")
        seen = set()
        deduped = []
        for h, r, t in self.triples:
            if h >= self.n_entities or t >= self.n_entities or h < 0 or t < 0:
                raise ParseError("<triples>", 0,
                                 f"triple ({h},{r},{t}) references unknown entity")
            if (h, r, t) not in seen:
                seen.add((h, r, t))
                deduped.append((h, r, t))
        self.triples = deduped
        self.relations = sorted({r for _, r, _ in deduped})
        adjacency = {}
        for h, r, t in deduped:
            adjacency.setdefault((h, r), []).append(t)
        self.adjacency = adjacency
        self._edges = {}
        for rel in self.relations:
            heads = np.array([h for h, r, _ in deduped if r == rel], dtype=np.int64)
            tails = np.array([t for h, r, t in deduped if r == rel], dtype=np.int64)
            self._edges[rel] = (heads, tails)

    def edges(self, relation: int):
        """(heads, tails) arrays for one relation, in triple order."""
        return self._edges[relation]

    def neighbors(self, entity: int, relation: int) -> list:
        return self.adjacency.get((entity, relation), [])

    def mark_items(self, ids) -> None:
        bad = [i for i in ids if not (0 <= i < self.n_entities)]
        if bad:
            raise ParseError("<items>", 0, f"item ids outside entity range: {bad[:5]}")
        self.items = set(int(i) for i in ids)


def load_triples(path, n_entities: int | None = None) -> KnowledgeGraph:
    """Read TSV triples; ids are registered on first sight.

    ``n_entities`` widens the entity range for isolated entities that appear
    only in the descriptions file.
    """
    triples = []
    max_id = -1
    items_meta = None
    groups_meta = None
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                tag, _, rest = line.partition("\t")
                try:
                    if tag == "#items":
                        items_meta = [int(x) for x in rest.split(",") if x]
                    elif tag == "#groups":
                        groups_meta = [int(x) for x in rest.split(",") if x]
                except ValueError:
                    raise ParseError(str(path), line_no,
                                     f"non-integer id in {tag} header")
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(str(path), line_no,
                                 f"expected 3 tab-separated fields, got {len(parts)}")
            try:
                h, r, t = (int(p) for p in parts)
            except ValueError:
                raise ParseError(str(path), line_no, f"non-integer field in {parts}")
            triples.append((h, r, t))
            max_id = max(max_id, h, t)
    count = max_id + 1
    if items_meta:
        count = max(count, max(items_meta) + 1)
    if groups_meta:
        count = max(count, len(groups_meta))
    if n_entities is not None:
        count = max(count, n_entities)
    graph = KnowledgeGraph(n_entities=count, triples=triples,
                           feature_groups=groups_meta)
    if items_meta:
        graph.mark_items(items_meta)
    log.info("loaded %d triples (%d unique), %d entities, %d relations from %s",
             len(triples), len(graph.triples), graph.n_entities,
             len(graph.relations), path)
    return graph


def save_triples(graph: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if graph.items:
            fh.write("#items\t" + ",".join(str(i) for i in sorted(graph.items))
                     + "\n")
        if graph.feature_groups is not None:
            fh.write("#groups\t" + ",".join(str(g) for g in graph.feature_groups)
                     + "\n")
        for h, r, t in graph.triples:
            fh.write(f"{h}\t{r}\t{t}\n")


def load_descriptions(path) -> dict:
    """JSON Lines -> {entity_id: EntityDescription}; duplicate ids last-wins."""
    import json

    out = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                eid = int(rec["entity_id"])
                desc = EntityDescription(eid, str(rec["name"]), str(rec["description"]))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(str(path), line_no, f"bad description record: {exc}")
            if eid in out:
                log.warning("%s:%d: duplicate description for entity %d, keeping last",
                            path, line_no, eid)
            out[eid] = desc
    return out


def save_descriptions(descs: dict, path) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for eid in sorted(descs):
            d = descs[eid]
            fh.write(json.dumps({"entity_id": d.entity_id, "name": d.name,
                                 "description": d.description}) + "\n")


def description_text(descs: dict, entity_id: int, fallback_name: str = "") -> str:
    """Description for an entity, falling back to its name when absent."""
    d = descs.get(entity_id)
    if d is not None and d.description:
        return d.description
    if d is not None:
        return d.name
    return fallback_name or f"entity {entity_id}"


@dataclass
class RgcnParams:
    d_kg: int
    num_layers: int
    include_self: bool
    normalize: bool
    tree: dict
    feature_ids: np.ndarray | None = None


def init_rgcn(rng: np.random.Generator, n_entities: int, relations, d_kg: int = 32,
              num_layers: int = 1, include_self: bool = True, normalize: bool = False,
              feature_ids=None, dtype=np.float32) -> RgcnParams:
    """``feature_ids`` maps each entity to a shared identity row; without it
    every entity gets its own row."""
    def wb():
        return {
            "W": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_kg),
                                   size=(d_kg, d_kg)).astype(dtype), requires_grad=True),
            "b": Tensor(np.zeros(d_kg, dtype=dtype), requires_grad=True),
        }

    if feature_ids is not None:
        feature_ids = np.asarray(feature_ids, dtype=np.int64)
        if feature_ids.shape != (n_entities,):
            raise ShapeMismatchError(
                f"feature_ids shape {feature_ids.shape} for {n_entities} entities")
        if feature_ids.min() < 0:
            raise ShapeMismatchError("negative feature id")
        n_rows = int(feature_ids.max()) + 1
    else:
        n_rows = n_entities

    layers = []
    for _ in range(num_layers):
        layers.append({"rel": {int(r): wb() for r in relations}, "self": wb()})
    tree = {
        "base": Tensor(rng.normal(0.0, 1.0, size=(n_rows, d_kg)).astype(dtype),
                       requires_grad=True),
        "layers": layers,
    }
    return RgcnParams(d_kg, num_layers, include_self, normalize, tree, feature_ids)


def rgcn_layer(graph: KnowledgeGraph, H: Tensor, layer: dict,
               include_self: bool = True, normalize: bool = False) -> Tensor:
    """One relational message-passing layer over the whole entity set."""
    n = graph.n_entities
    if H.shape[0] != n:
        raise ShapeMismatchError(
            f"H has {H.shape[0]} rows but graph has {n} entities")
    total = None
    for rel in graph.relations:
        p = layer["rel"].get(rel)
        if p is None:
            raise ShapeMismatchError(f"layer has no parameters for relation {rel}")
        heads, tails = graph.edges(rel)
        if len(heads) == 0:
            continue
        messages = H @ p["W"] + p["b"]
        summed = scatter_sum(messages, tails, heads, n)
        if normalize:
            deg = np.bincount(heads, minlength=n).astype(H.dtype)
            summed = summed * Tensor((1.0 / np.maximum(deg, 1.0))[:, None])
        total = summed if total is None else total + summed
    if include_self:
        s = layer["self"]
        self_term = H @ s["W"] + s["b"]
        total = self_term if total is None else total + self_term
    if total is None:
        total = H * 0.0
    return total.relu()


def kg_entity_embeddings(graph: KnowledgeGraph, params: RgcnParams) -> Tensor:
    """Average of the relational layer outputs, starting from the base table."""
    h = params.tree["base"]
    if params.feature_ids is not None:
        if len(params.feature_ids) != graph.n_entities:
            raise ShapeMismatchError(
                f"feature_ids covers {len(params.feature_ids)} entities, "
                f"graph has {graph.n_entities}")
        h = embedding(h, params.feature_ids)
    outs = []
    for layer in params.tree["layers"]:
        h = rgcn_layer(graph, h, layer,
                       include_self=params.include_self, normalize=params.normalize)
        outs.append(h)
    acc = outs[0]
    for o in outs[1:]:
        acc = acc + o
    return acc * (1.0 / len(outs))
