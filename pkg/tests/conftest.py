import itertools

import numpy as np
import pytest

from kgv.kg import load_kg

TOY_REGISTRY = """\
entity\tRoadSign\tcategory
entity\tWarning\tcategory
entity\tDanger\tcategory
entity\tTriangle\telement
entity\tRed\telement
relation\tinstanceOf
relation\thasShape
relation\thasBorderColor
"""

TOY_TRIPLES = """\
# toy road-sign hierarchy
Danger\tinstanceOf\tWarning
Warning\tinstanceOf\tRoadSign
Warning\thasShape\tTriangle
Warning\thasBorderColor\tRed
"""


@pytest.fixture
def toy_kg():
    return load_kg(TOY_TRIPLES, TOY_REGISTRY)


def random_dag_text(rng, n_entities: int, n_relations: int, p_edge: float = 0.15, n_assoc: int = 10):
    """Registry and triple text of a random KG whose inclusion edges point from higher to lower index."""
    names = [f"E{i}" for i in range(n_entities)]
    rels = ["instanceOf"] + [f"rel{i}" for i in range(1, n_relations)]
    order = rng.permutation(n_entities)  # hide the topological order from the implementation
    lines = []
    for a, b in itertools.combinations(range(n_entities), 2):
        if rng.uniform() < p_edge:
            lines.append((names[order[b]], "instanceOf", names[order[a]]))
    if n_relations > 1:
        for _ in range(n_assoc):
            h, t = rng.integers(0, n_entities, 2)
            lines.append((names[h], rels[int(rng.integers(1, n_relations))], names[t]))
    lines = list(dict.fromkeys(lines))
    registry = "".join(f"entity\t{n}\t{'category' if i % 3 else 'element'}\n" for i, n in enumerate(names))
    registry += "".join(f"relation\t{r}\n" for r in rels)
    return "".join("\t".join(t) + "\n" for t in lines), registry


def brute_force_closure(kg):
    """Fixed-point iteration of the two closure rules on a dense boolean tensor."""
    n, r = kg.num_entities, kg.num_relations
    T = np.zeros((r, n, n), dtype=bool)
    for h, rel, t in kg.triples:
        T[rel, h, t] = True
    while True:
        inc = T[0]
        new = T.copy()
        new[0] |= (inc.astype(int) @ inc.astype(int)) > 0
        for rel in range(1, r):
            # descendant d of h (d -> h in inclusion) inherits (h, rel, t)
            new[rel] |= (inc.astype(int) @ T[rel].astype(int)) > 0
        if (new == T).all():
            return T
        T = new


def brute_force_mask(kg_closed, node):
    """Two-case membership test of every (relation, entity) pair."""
    triples = set(kg_closed.triples)
    out = np.zeros((kg_closed.num_relations, kg_closed.num_entities), dtype=np.uint8)
    for i in range(kg_closed.num_relations):
        for j in range(kg_closed.num_entities):
            out[i, j] = (node, i, j) in triples or (i == 0 and j == node)
    return out


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
