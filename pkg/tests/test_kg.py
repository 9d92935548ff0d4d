import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import TOY_REGISTRY, TOY_TRIPLES, brute_force_closure, brute_force_mask, random_dag_text
from kgv.kg import (
    KGError,
    ancestors,
    build_mask,
    build_masks,
    hierarchy_closure,
    load_kg,
    load_kg_files,
    node_mask,
    validate_kg,
)


def named(kg):
    return set(kg.named_triples())


class TestLoad:
    def test_toy_graph(self, toy_kg):
        assert toy_kg.num_entities == 5
        assert toy_kg.num_relations == 3
        assert len(toy_kg.triples) == 4
        assert not toy_kg.closed
        assert toy_kg.relation_id("instanceOf") == 0

    def test_instance_of_gets_id_zero(self):
        reg = "relation\thasShape\nrelation\tinstanceOf\nentity\tA\tcategory\nentity\tB\tcategory\n"
        kg = load_kg("A\tinstanceOf\tB\n", reg)
        assert kg.relations[0] == "instanceOf"
        assert kg.triples == ((0, 0, 1),)

    def test_dangling_reference(self):
        with pytest.raises(KGError, match="dangling reference"):
            load_kg("Ghost\tinstanceOf\tRoadSign\n", TOY_REGISTRY)

    def test_inclusion_cycle(self):
        reg = "entity\tA\tcategory\nentity\tB\tcategory\nrelation\tinstanceOf\n"
        with pytest.raises(KGError, match="inclusion cycle"):
            load_kg("A\tinstanceOf\tB\nB\tinstanceOf\tA\n", reg)

    def test_long_cycle(self):
        reg = "".join(f"entity\tN{i}\tcategory\n" for i in range(4)) + "relation\tinstanceOf\n"
        text = "".join(f"N{i}\tinstanceOf\tN{(i + 1) % 4}\n" for i in range(4))
        with pytest.raises(KGError, match="inclusion cycle"):
            load_kg(text, reg)

    @pytest.mark.parametrize("line", ["A\tinstanceOf", "A instanceOf B", "A\t\tB", "A\tinstanceOf\tB\tC"])
    def test_malformed_lines(self, line):
        reg = "entity\tA\tcategory\nentity\tB\tcategory\nrelation\tinstanceOf\n"
        with pytest.raises(KGError, match="malformed line"):
            load_kg(line + "\n", reg)

    def test_duplicate_names(self):
        with pytest.raises(KGError, match="duplicate"):
            load_kg("", TOY_REGISTRY + "entity\tRed\telement\n")

    def test_registry_needs_instance_of(self):
        with pytest.raises(KGError, match="instanceOf"):
            load_kg("", "entity\tA\tcategory\nrelation\thasShape\n")

    def test_unknown_kind(self):
        with pytest.raises(KGError, match="kind"):
            load_kg("", "entity\tA\tthing\nrelation\tinstanceOf\n")

    def test_files_and_text_round_trip(self, tmp_path, toy_kg):
        (tmp_path / "t.tsv").write_text(toy_kg.triples_text())
        (tmp_path / "r.tsv").write_text(toy_kg.registry_text())
        again = load_kg_files(tmp_path / "t.tsv", tmp_path / "r.tsv")
        assert again == toy_kg


class TestClosure:
    def test_toy_closure(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        assert closed.closed
        added = named(closed) - named(toy_kg)
        assert added == {("Danger", "instanceOf", "RoadSign"), ("Danger", "hasShape", "Triangle"),
                         ("Danger", "hasBorderColor", "Red")}
        assert len(closed.triples) == 7

    def test_no_inclusion_is_identity(self):
        reg = "entity\tA\tcategory\nentity\tB\telement\nrelation\tinstanceOf\nrelation\thasShape\n"
        kg = load_kg("A\thasShape\tB\n", reg)
        assert named(hierarchy_closure(kg)) == named(kg)

    def test_idempotent(self, toy_kg):
        once = hierarchy_closure(toy_kg)
        assert hierarchy_closure(once).triples == once.triples

    def test_inheritance_is_downward_only(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        assert ("RoadSign", "hasShape", "Triangle") not in named(closed)

    def test_duplicates_removed(self):
        kg = load_kg(TOY_TRIPLES + TOY_TRIPLES, TOY_REGISTRY)
        assert len(kg.triples) == 8
        assert len(hierarchy_closure(kg).triples) == 7

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(1, 4))
    def test_matches_fixed_point_oracle(self, seed, n, r):
        rng = np.random.default_rng(seed)
        kg = load_kg(*random_dag_text(rng, n, r))
        closed = hierarchy_closure(kg)
        oracle = brute_force_closure(kg)
        got = np.zeros_like(oracle)
        for h, rel, t in closed.triples:
            got[rel, h, t] = True
        assert (got == oracle).all()
        assert len(set(closed.triples)) == len(closed.triples)

    def test_ancestors(self, toy_kg):
        anc = ancestors(toy_kg)
        names = {toy_kg.entities[i]: {toy_kg.entities[a] for a in s} for i, s in enumerate(anc)}
        assert names["Danger"] == {"Warning", "RoadSign"}
        assert names["RoadSign"] == set()


class TestMask:
    def test_toy_danger(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        e = closed.entity_id
        m = build_mask(closed, {0: e("Danger")}, 0)
        expected = {(0, e("Danger")), (0, e("Warning")), (0, e("RoadSign")), (1, e("Triangle")), (2, e("Red"))}
        assert set(m.positives()) == expected
        assert m.bits.shape == (3, 5)
        assert m.num_positive == 5 and m.num_negative == 10
        assert (m.bits == brute_force_mask(closed, e("Danger"))).all()

    def test_root_has_single_positive(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        root = closed.entity_id("RoadSign")
        m = build_mask(closed, {3: root}, 3)
        assert m.positives() == [(0, root)]
        assert m.class_label == 3

    def test_unmapped_class(self, toy_kg):
        with pytest.raises(KGError, match="unmapped class"):
            build_mask(hierarchy_closure(toy_kg), {0: 2}, 5)

    def test_requires_closed_graph(self, toy_kg):
        with pytest.raises(KGError, match="not closed"):
            build_mask(toy_kg, {0: 2}, 0)

    def test_per_class_masks_and_element_masks(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        masks = build_masks(closed, {0: 2, 1: 1})
        assert set(masks) == {0, 1}
        red = closed.entity_id("Red")
        assert node_mask(closed, red).positives() == [(0, red)]

    def test_bits_are_read_only(self, toy_kg):
        m = build_mask(hierarchy_closure(toy_kg), {0: 2}, 0)
        with pytest.raises(ValueError):
            m.bits[0, 0] = 1

    def test_randomized_dags(self):
        rng = np.random.default_rng(1234)
        for _ in range(50):
            kg = load_kg(*random_dag_text(rng, int(rng.integers(2, 31)), int(rng.integers(1, 5))))
            closed = hierarchy_closure(kg)
            for node in range(closed.num_entities):
                bits = brute_force_mask(closed, node)
                if bits.all():
                    continue
                assert (build_mask(closed, {0: node}, 0).bits == bits).all()

    def test_monotone_under_hierarchy(self, toy_kg):
        closed = hierarchy_closure(toy_kg)
        anc = ancestors(closed)
        for child in range(closed.num_entities):
            for parent in anc[child]:
                mc = node_mask(closed, child).bits[0]
                mp = node_mask(closed, parent).bits[0]
                restricted = np.zeros_like(mp)
                restricted[list(anc[parent])] = mp[list(anc[parent])]
                assert ((mc | restricted) == mc).all()


class TestValidate:
    def test_clean_graph(self, toy_kg):
        diag = validate_kg(toy_kg)
        assert len(diag) == 0 and diag.ok
        assert "no findings" in diag.as_text()

    def test_duplicate_triple(self):
        kg = load_kg(TOY_TRIPLES + "Warning\thasShape\tTriangle\n", TOY_REGISTRY)
        diag = validate_kg(kg)
        assert len(diag.errors) == 1 and "duplicate" in diag.errors[0]

    def test_isolated_entity(self):
        kg = load_kg(TOY_TRIPLES, TOY_REGISTRY + "entity\tLonely\tcategory\n")
        diag = validate_kg(kg)
        assert diag.ok
        assert diag.warnings == ["isolated entity 'Lonely'"]

    def test_never_raises_on_broken_graph(self, toy_kg):
        from dataclasses import replace

        broken = replace(toy_kg, triples=toy_kg.triples + ((9, 0, 1), (1, 0, 1), (1, 0, 2)))
        diag = validate_kg(broken)
        text = diag.as_text()
        assert "dangling" in text and "self-inclusion" in text and "cycle" in text

    def test_without_relations_keeps_ids(self, toy_kg):
        kg = toy_kg.without_relations(["hasShape"])
        assert kg.relations == toy_kg.relations
        assert all(r != 1 for _, r, _ in kg.triples)
        with pytest.raises(KGError):
            toy_kg.without_relations(["instanceOf"])
