"""Knowledge graph storage, hierarchy closure and per-class triplet masks.

Relation index 0 is always the inclusion relation ``instanceOf``: a triple
``(h, 0, t)`` reads "h is a sub-category / instance of t".
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

INCLUSION = "instanceOf"
ENTITY_KINDS = ("category", "element")


class KGError(ValueError):
    """Raised for malformed or inconsistent knowledge graphs."""


Triple = tuple[int, int, int]


@dataclass(frozen=True)
class KnowledgeGraph:
    entities: tuple[str, ...]
    kinds: tuple[str, ...]
    relations: tuple[str, ...]
    triples: tuple[Triple, ...]
    closed: bool = False
    _entity_index: dict = field(default=None, compare=False, repr=False)
    _relation_index: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_entity_index", {n: i for i, n in enumerate(self.entities)})
        object.__setattr__(self, "_relation_index", {n: i for i, n in enumerate(self.relations)})

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        """Number of relations including the inclusion relation (N_r + 1)."""
        return len(self.relations)

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_index[name]
        except KeyError:
            raise KGError(f"dangling reference: unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_index[name]
        except KeyError:
            raise KGError(f"dangling reference: unknown relation {name!r}") from None

    def triple_set(self) -> frozenset[Triple]:
        return frozenset(self.triples)

    def named_triples(self) -> list[tuple[str, str, str]]:
        return [(self.entities[h], self.relations[r], self.entities[t]) for h, r, t in self.triples]

    def entities_of_kind(self, kind: str) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == kind]

    def without_relations(self, names: Iterable[str]) -> "KnowledgeGraph":
        """Copy of the graph with every triple of the named relations removed.

        The relation ids stay in place so mask/table shapes are unchanged.
        """
        drop = {self.relation_id(n) for n in names}
        if 0 in drop:
            raise KGError("the inclusion relation cannot be excluded")
        kept = tuple(t for t in self.triples if t[1] not in drop)
        return replace(self, triples=kept, closed=False)

    # -- serialization -----------------------------------------------------

    def registry_text(self) -> str:
        lines = [f"entity\t{n}\t{k}" for n, k in zip(self.entities, self.kinds)]
        lines += [f"relation\t{n}" for n in self.relations]
        return "\n".join(lines) + "\n"

    def triples_text(self) -> str:
        lines = ["\t".join(t) for t in self.named_triples()]
        return "\n".join(lines) + "\n"


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if line.strip():
            yield lineno, line


def parse_registry(registry_text: str) -> tuple[list[str], list[str], list[str]]:
    entities, kinds, relations = [], [], []
    for lineno, line in _data_lines(registry_text):
        parts = [p.strip() for p in line.split("\t")]
        if parts[0] == "entity" and len(parts) == 3:
            if parts[2] not in ENTITY_KINDS:
                raise KGError(f"registry line {lineno}: unknown entity kind {parts[2]!r}")
            entities.append(parts[1])
            kinds.append(parts[2])
        elif parts[0] == "relation" and len(parts) == 2:
            relations.append(parts[1])
        else:
            raise KGError(f"registry line {lineno}: malformed line {raw_repr(line)}")
    for label, names in (("entity", entities), ("relation", relations)):
        dupes = [n for n, c in Counter(names).items() if c > 1]
        if dupes:
            raise KGError(f"duplicate {label} name(s): {', '.join(sorted(dupes))}")
    if INCLUSION not in relations:
        raise KGError(f"registry must define the {INCLUSION!r} relation")
    # instanceOf is pinned to id 0; the others keep their registry order
    relations = [INCLUSION] + [r for r in relations if r != INCLUSION]
    return entities, kinds, relations


def raw_repr(line: str) -> str:
    return repr(line if len(line) < 60 else line[:57] + "...")


def load_kg(triples_text: str, registry_text: str) -> KnowledgeGraph:
    """Parse a tab-separated triple file against an entity/relation registry."""
    entities, kinds, relations = parse_registry(registry_text)
    ent = {n: i for i, n in enumerate(entities)}
    rel = {n: i for i, n in enumerate(relations)}
    triples = []
    for lineno, line in _data_lines(triples_text):
        parts = [p.strip() for p in line.split("\t")]
        if len(parts) != 3 or not all(parts):
            raise KGError(f"triples line {lineno}: malformed line {raw_repr(line)}")
        h, r, t = parts
        for name, table in ((h, ent), (r, rel), (t, ent)):
            if name not in table:
                raise KGError(f"triples line {lineno}: dangling reference {name!r}")
        triples.append((ent[h], rel[r], ent[t]))
    kg = KnowledgeGraph(tuple(entities), tuple(kinds), tuple(relations), tuple(triples))
    cycle = find_inclusion_cycle(kg)
    if cycle:
        raise KGError("inclusion cycle: " + " -> ".join(kg.entities[i] for i in cycle))
    return kg


def load_kg_files(triples_path, registry_path) -> KnowledgeGraph:
    with open(triples_path, encoding="utf-8") as f:
        triples_text = f.read()
    with open(registry_path, encoding="utf-8") as f:
        registry_text = f.read()
    return load_kg(triples_text, registry_text)


def _parents(kg: KnowledgeGraph) -> list[set[int]]:
    parents = [set() for _ in kg.entities]
    for h, r, t in kg.triples:
        if r == 0 and 0 <= h < len(parents) and 0 <= t < len(parents):
            parents[h].add(t)
    return parents


def find_inclusion_cycle(kg: KnowledgeGraph) -> list[int] | None:
    """Return one cycle of inclusion edges as a node list, or None."""
    parents = _parents(kg)
    state = [0] * kg.num_entities  # 0 new, 1 on stack, 2 done
    for root in range(kg.num_entities):
        if state[root]:
            continue
        stack = [(root, iter(sorted(parents[root])))]
        path = [root]
        state[root] = 1
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                state[node] = 2
                stack.pop()
                path.pop()
            elif state[nxt] == 1:
                return path[path.index(nxt):] + [nxt]
            elif state[nxt] == 0:
                state[nxt] = 1
                stack.append((nxt, iter(sorted(parents[nxt]))))
                path.append(nxt)
    return None


def ancestors(kg: KnowledgeGraph) -> list[frozenset[int]]:
    """Strict ancestors of every entity along inclusion edges."""
    if find_inclusion_cycle(kg):
        raise KGError("inclusion cycle detected")
    parents = _parents(kg)
    memo: dict[int, frozenset[int]] = {}

    def visit(n: int) -> frozenset[int]:
        if n not in memo:
            acc = set()
            for p in parents[n]:
                acc.add(p)
                acc |= visit(p)
            memo[n] = frozenset(acc)
        return memo[n]

    return [visit(n) for n in range(kg.num_entities)]


def hierarchy_closure(kg: KnowledgeGraph) -> KnowledgeGraph:
    """Materialize transitive inclusion and downward inheritance of associations."""
    anc = ancestors(kg)
    descendants = [set() for _ in kg.entities]
    for n, ups in enumerate(anc):
        for a in ups:
            descendants[a].add(n)

    seen = set()
    out: list[Triple] = []

    def add(t: Triple):
        if t not in seen:
            seen.add(t)
            out.append(t)

    for t in kg.triples:
        add(t)
    for n, ups in enumerate(anc):
        for a in sorted(ups):
            add((n, 0, a))
    for h, r, t in kg.triples:
        if r == 0:
            continue
        for d in sorted(descendants[h]):
            add((d, r, t))
    return replace(kg, triples=tuple(out), closed=True)


@dataclass(frozen=True)
class MaskTensor:
    bits: np.ndarray  # (num_relations, num_entities), uint8
    class_label: int

    @property
    def num_positive(self) -> int:
        return int(self.bits.sum())

    @property
    def num_negative(self) -> int:
        return int(self.bits.size - self.bits.sum())

    def positives(self) -> list[tuple[int, int]]:
        return [tuple(map(int, p)) for p in np.argwhere(self.bits)]


def build_mask(kg_closed: KnowledgeGraph, class_map: Mapping[int, int], y: int) -> MaskTensor:
    """Positive/negative triplet mask for class ``y`` under the closed-world assumption."""
    if not kg_closed.closed:
        raise KGError("graph not closed: call hierarchy_closure first")
    if y not in class_map:
        raise KGError(f"unmapped class {y!r}")
    node = class_map[y]
    bits = np.zeros((kg_closed.num_relations, kg_closed.num_entities), dtype=np.uint8)
    for h, r, t in kg_closed.triples:
        if h == node:
            bits[r, t] = 1
    bits[0, node] = 1
    if bits.all():
        raise KGError(f"mask for class {y} has no negative triplets")
    bits.setflags(write=False)
    return MaskTensor(bits, y)


def build_masks(kg_closed: KnowledgeGraph, class_map: Mapping[int, int]) -> dict[int, MaskTensor]:
    return {y: build_mask(kg_closed, class_map, y) for y in class_map}


def node_mask(kg_closed: KnowledgeGraph, node: int) -> MaskTensor:
    """Mask for an image whose label is the entity ``node`` itself (element images)."""
    return build_mask(kg_closed, {node: node}, node)


@dataclass
class Diagnostics:
    findings: list[tuple[str, str]] = field(default_factory=list)

    @property
    def errors(self) -> list[str]:
        return [m for level, m in self.findings if level == "error"]

    @property
    def warnings(self) -> list[str]:
        return [m for level, m in self.findings if level == "warning"]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self):
        return len(self.findings)

    def as_text(self) -> str:
        if not self.findings:
            return "ok: no findings\n"
        return "".join(f"{level}: {msg}\n" for level, msg in self.findings)


def validate_kg(kg: KnowledgeGraph) -> Diagnostics:
    """Read-only consistency report; never raises."""
    report = Diagnostics()
    n_ent, n_rel = len(kg.entities), len(kg.relations)
    for label, names in (("entity", kg.entities), ("relation", kg.relations)):
        for name, count in sorted(Counter(names).items()):
            if count > 1:
                report.findings.append(("error", f"duplicate {label} name {name!r}"))
    if not kg.relations or kg.relations[0] != INCLUSION:
        report.findings.append(("error", f"relation 0 must be {INCLUSION!r}"))

    valid = []
    for tr in kg.triples:
        h, r, t = tr
        if not (0 <= h < n_ent and 0 <= t < n_ent and 0 <= r < n_rel):
            report.findings.append(("error", f"dangling id in triple {tr}"))
        else:
            valid.append(tr)
            if r == 0 and h == t:
                report.findings.append(("error", f"self-inclusion of {kg.entities[h]!r}"))
    for tr, count in Counter(valid).items():
        if count > 1:
            h, r, t = tr
            report.findings.append(
                ("error", f"duplicate triple ({kg.entities[h]}, {kg.relations[r]}, {kg.entities[t]}) x{count}")
            )
    try:
        cycle = find_inclusion_cycle(replace(kg, triples=tuple(valid)))
    except Exception as exc:  # diagnostics must not raise
        report.findings.append(("error", f"cycle check failed: {exc}"))
        cycle = None
    if cycle:
        report.findings.append(("error", "inclusion cycle: " + " -> ".join(kg.entities[i] for i in cycle)))

    touched = {h for h, _, _ in valid} | {t for _, _, t in valid}
    for i, name in enumerate(kg.entities):
        if i not in touched:
            report.findings.append(("warning", f"isolated entity {name!r}"))
    return report
