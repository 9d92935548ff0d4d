"""Tour of the benchmark knowledge graph: closure, masks and diagnostics.

Run: python3 demos/knowledge_graph_tour.py
"""

from kgv.kg import build_mask, hierarchy_closure, validate_kg
from kgv.synth import benchmark_kg, class_entity, load_spec

bench = load_spec()
kg = benchmark_kg(bench)
closed = hierarchy_closure(kg)
print(f"{kg.num_entities} entities, {kg.num_relations} relations")
print(f"{len(kg.triples)} asserted triples, {len(closed.triples)} after closure")
print(validate_kg(kg).as_text(), end="")

# every class gets a positive set built from its own node and everything it inherits
node = closed.entity_id(class_entity("Danger", "A"))
mask = build_mask(closed, {0: node}, 0)
print(f"\nDanger@A: {mask.num_positive} positive triplets out of {mask.bits.size}")
for rel, ent in mask.positives():
    print(f"  {closed.relations[rel]:>18}  {closed.entities[ent]}")
