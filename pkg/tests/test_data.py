"""Split protocols: exact counts, zero leakage, determinism, file round-trips."""
import json

import numpy as np
import pytest

from tailkit.data import (
    SplitBundle,
    SplitError,
    cold_start_remove,
    edge_split_inductive,
    edge_split_transductive,
    label_split,
    load_dataset,
    make_classification_bundle,
    make_link_bundle,
    make_recsys_bundle,
    node_split,
    recsys_split,
    save_edge_list,
    save_features,
    save_labels,
)
from tailkit.generators import generate_bipartite, generate_scale_free
from tailkit.graph import GraphError, LabelSet, build_graph


def pair_set(edges):
    return {(int(u), int(v)) for u, v in np.asarray(edges).reshape(-1, 2)}


def random_graph(n, p, seed, features=False):
    rng = np.random.default_rng(seed)
    upper = np.triu(rng.random((n, n)) < p, k=1)
    edges = np.argwhere(upper)
    feats = rng.standard_normal((n, 3)) if features else None
    return build_graph(edges, n, features=feats)


# ---------------------------------------------------------------------------
# node_split
# ---------------------------------------------------------------------------

class TestNodeSplit:
    def test_new_node_count_is_floor(self):
        g = random_graph(103, 0.1, seed=0)
        ns = node_split(g, new_fraction=0.05, seed=1)
        assert ns.v_new.size == 5  # floor(0.05 * 103)
        assert ns.v_train.size == 98

    def test_edge_conservation(self):
        g = random_graph(80, 0.1, seed=2)
        ns = node_split(g, 0.1, seed=3)
        total = ns.train_graph.num_edges + len(ns.cross_edges) + len(ns.new_new_edges)
        assert total == g.num_edges
        combined = (
            pair_set(ns.train_graph.edges) | pair_set(ns.cross_edges) | pair_set(ns.new_new_edges)
        )
        assert combined == pair_set(g.edges)

    def test_train_graph_isolates_new_nodes(self):
        g = random_graph(60, 0.15, seed=4)
        ns = node_split(g, 0.1, seed=5)
        assert ns.train_graph.num_nodes == g.num_nodes
        degs = ns.train_graph.degrees()
        assert (degs[ns.v_new] == 0).all()

    def test_cross_edges_touch_exactly_one_new_node(self):
        g = random_graph(60, 0.15, seed=6)
        ns = node_split(g, 0.1, seed=7)
        new = set(ns.v_new.tolist())
        for u, v in ns.cross_edges:
            assert (int(u) in new) != (int(v) in new)
        for u, v in ns.new_new_edges:
            assert int(u) in new and int(v) in new

    def test_deterministic_and_seed_sensitive(self):
        g = random_graph(100, 0.1, seed=8)
        a = node_split(g, 0.1, seed=9)
        b = node_split(g, 0.1, seed=9)
        c = node_split(g, 0.1, seed=10)
        assert np.array_equal(a.v_new, b.v_new)
        assert not np.array_equal(a.v_new, c.v_new)

    def test_zero_fraction_keeps_everything(self):
        g = random_graph(30, 0.2, seed=11)
        ns = node_split(g, 0.0, seed=0)
        assert ns.v_new.size == 0
        assert ns.train_graph.num_edges == g.num_edges

    def test_invalid_fraction(self):
        g = random_graph(10, 0.3, seed=12)
        with pytest.raises(SplitError):
            node_split(g, 1.0, seed=0)


# ---------------------------------------------------------------------------
# label_split
# ---------------------------------------------------------------------------

class TestLabelSplit:
    def test_canonical_counts(self):
        nodes = np.arange(1000)
        train, val, unlabeled = label_split(nodes, 0.10, seed=0)
        assert (train.size, val.size, unlabeled.size) == (50, 50, 900)

    def test_odd_labeled_count_favors_train(self):
        nodes = np.arange(70)
        train, val, _ = label_split(nodes, 0.10, seed=1)  # 7 labeled
        assert (train.size, val.size) == (4, 3)

    def test_partition_of_input(self):
        nodes = np.arange(41) * 3  # non-contiguous ids
        train, val, unlabeled = label_split(nodes, 0.25, seed=2)
        merged = np.sort(np.concatenate([train, val, unlabeled]))
        assert np.array_equal(merged, np.sort(nodes))
        assert not (set(train) & set(val))

    def test_deterministic(self):
        nodes = np.arange(100)
        a = label_split(nodes, 0.2, seed=3)
        b = label_split(nodes, 0.2, seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_invalid_fraction(self):
        with pytest.raises(SplitError):
            label_split(np.arange(10), 0.0, seed=0)


# ---------------------------------------------------------------------------
# edge splits
# ---------------------------------------------------------------------------

class TestEdgeSplitTransductive:
    def test_exact_counts(self):
        g = random_graph(40, 0.3, seed=20)
        e = g.num_edges
        train_graph, val, test = edge_split_transductive(g, (0.5, 0.2, 0.3), seed=0)
        assert train_graph.num_edges == int(np.floor(0.5 * e))
        assert len(val) == int(np.floor(0.2 * e))
        assert len(test) == e - train_graph.num_edges - len(val)

    def test_remainder_goes_to_test(self):
        edges = [(i, i + 1) for i in range(7)]
        g = build_graph(edges, 8)
        train_graph, val, test = edge_split_transductive(g, (0.5, 0.2, 0.3), seed=1)
        assert (train_graph.num_edges, len(val), len(test)) == (3, 1, 3)

    def test_zero_leakage_partition(self):
        g = random_graph(50, 0.2, seed=21)
        train_graph, val, test = edge_split_transductive(g, seed=2)
        parts = [pair_set(train_graph.edges), pair_set(val), pair_set(test)]
        assert parts[0] | parts[1] | parts[2] == pair_set(g.edges)
        assert not parts[0] & parts[1]
        assert not parts[0] & parts[2]
        assert not parts[1] & parts[2]

    def test_node_universe_preserved(self):
        g = random_graph(50, 0.2, seed=22)
        train_graph, _, _ = edge_split_transductive(g, seed=3)
        assert train_graph.num_nodes == g.num_nodes

    def test_bad_ratios(self):
        g = random_graph(10, 0.3, seed=23)
        with pytest.raises(SplitError):
            edge_split_transductive(g, (0.5, 0.2), seed=0)
        with pytest.raises(SplitError):
            edge_split_transductive(g, (0.6, 0.3, 0.3), seed=0)


class TestEdgeSplitInductive:
    def test_four_edges_give_two_and_two(self):
        edges = [(0, 9), (1, 9), (2, 9), (3, 9)]
        inp, ev = edge_split_inductive(edges, [9], ratio=0.5, seed=0)
        assert (len(inp), len(ev)) == (2, 2)

    def test_odd_count_rounds_input_down(self):
        edges = [(0, 9), (1, 9), (2, 9)]
        inp, ev = edge_split_inductive(edges, [9], ratio=0.5, seed=0)
        assert (len(inp), len(ev)) == (1, 2)

    def test_per_node_not_global(self):
        # two new nodes with 3 edges each: global floor would give 3, per-node gives 1+1
        edges = [(0, 10), (1, 10), (2, 10), (0, 11), (1, 11), (2, 11)]
        inp, ev = edge_split_inductive(edges, [10, 11], ratio=0.5, seed=1)
        assert len(inp) == 2
        owners_in = [max(u, v) for u, v in inp]
        assert sorted(owners_in) == [10, 11]

    def test_partition_and_determinism(self):
        rng = np.random.default_rng(2)
        new_nodes = [20, 21, 22]
        edges = [(int(rng.integers(0, 20)), n) for n in new_nodes for _ in range(5)]
        edges = list({tuple(sorted(e)) for e in edges})
        a_inp, a_ev = edge_split_inductive(edges, new_nodes, 0.5, seed=3)
        b_inp, b_ev = edge_split_inductive(edges, new_nodes, 0.5, seed=3)
        assert pair_set(a_inp) == pair_set(b_inp)
        assert pair_set(a_inp) | pair_set(a_ev) == pair_set(np.asarray(edges))
        assert not pair_set(a_inp) & pair_set(a_ev)
        assert pair_set(b_ev) == pair_set(a_ev)

    def test_new_new_edge_owned_by_lower_id(self):
        # (10, 11) joins node 10's pool: with ratio 1.0 every edge of each
        # owner becomes input, so ownership only shows in the per-node counts.
        edges = [(10, 11), (0, 10), (1, 10), (0, 11)]
        inp, ev = edge_split_inductive(edges, [10, 11], ratio=0.5, seed=4)
        # node 10 owns 3 edges -> 1 input; node 11 owns 1 edge -> 0 input
        assert len(inp) == 1
        u, v = inp[0]
        assert 10 in (u, v)

    def test_edge_without_new_node_rejected(self):
        with pytest.raises(SplitError):
            edge_split_inductive([(0, 1)], [5], 0.5, seed=0)

    def test_empty_edges(self):
        inp, ev = edge_split_inductive(np.empty((0, 2)), [1], 0.5, seed=0)
        assert inp.size == 0 and ev.size == 0


class TestColdStartRemove:
    def test_ratio_point_nine_leaves_one_of_ten(self):
        edges = [(i, 50) for i in range(10)]
        kept = cold_start_remove(edges, [50], 0.9, seed=0)
        assert len(kept) == 1

    def test_ratio_point_three_leaves_seven_of_ten(self):
        edges = [(i, 50) for i in range(10)]
        kept = cold_start_remove(edges, [50], 0.3, seed=0)
        assert len(kept) == 7

    def test_kept_count_monotone_in_ratio(self):
        edges = [(i, 50) for i in range(10)] + [(i, 51) for i in range(7)]
        counts = [
            len(cold_start_remove(edges, [50, 51], r, seed=1))
            for r in (0.0, 0.3, 0.6, 0.9, 1.0)
        ]
        assert counts[0] == 17
        assert counts[-1] == 0
        assert all(a >= b for a, b in zip(counts, counts[1:]))

    def test_kept_edges_are_subset(self):
        edges = [(i, 50) for i in range(10)]
        kept = cold_start_remove(edges, [50], 0.6, seed=2)
        assert pair_set(kept) <= pair_set(np.asarray(edges))

    def test_per_node_removal(self):
        edges = [(i, 50) for i in range(4)] + [(i, 51) for i in range(2)]
        kept = cold_start_remove(edges, [50, 51], 0.5, seed=3)
        owners = [max(u, v) for u, v in kept]
        assert sorted(owners) == [50, 50, 51]


class TestRecsysSplit:
    def test_counts_and_bipartite_required(self):
        g = generate_bipartite(30, 40, seed=0)
        e = g.num_edges
        train_graph, val, test = recsys_split(g, seed=1)
        assert train_graph.num_edges == int(np.floor(0.10 * e))
        assert len(val) == int(np.floor(0.05 * e))
        assert train_graph.num_edges + len(val) + len(test) == e
        plain = random_graph(10, 0.3, seed=1)
        with pytest.raises(SplitError):
            recsys_split(plain, seed=0)


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------

class TestClassificationBundle:
    def build(self, seed=0):
        graph, labels = generate_scale_free(200, 3, seed=5)
        return graph, make_classification_bundle(graph, labels, seed=seed)

    def test_label_partition_of_v_train(self):
        _, b = self.build()
        ls = b.label_set
        merged = np.sort(
            np.concatenate([ls.train_labeled, ls.validation, ls.unlabeled])
        )
        assert np.array_equal(merged, b.v_train)
        assert set(ls.train_labeled.tolist()).isdisjoint(b.v_new.tolist())

    def test_sizes(self):
        _, b = self.build()
        assert b.v_new.size == 10  # floor(0.05 * 200)
        labeled = int(np.floor(0.10 * 190))
        assert b.label_set.train_labeled.size == labeled - labeled // 2
        assert b.label_set.validation.size == labeled // 2

    def test_cold_variants_shrink(self):
        _, b = self.build()
        sizes = [b.cold_input_edges[r].shape[0] for r in (0.3, 0.6, 0.9)]
        assert sizes[0] >= sizes[1] >= sizes[2]
        for r in (0.3, 0.6, 0.9):
            assert pair_set(b.cold_input_edges[r]) <= pair_set(b.new_input_edges)

    def test_inference_graphs(self):
        graph, b = self.build()
        trans = b.inference_graph("transductive")
        assert trans is b.train_graph
        ind = b.inference_graph("inductive")
        assert pair_set(ind.edges) == pair_set(graph.edges)
        cold = b.inference_graph("inductive-cold", 0.9)
        assert pair_set(cold.edges) == pair_set(b.train_graph.edges) | pair_set(
            b.cold_input_edges[0.9]
        )
        with pytest.raises(SplitError):
            b.inference_graph("inductive-cold", 0.5)
        with pytest.raises(SplitError):
            b.inference_graph("extrapolative")

    def test_deterministic(self):
        _, a = self.build(seed=7)
        _, b = self.build(seed=7)
        assert np.array_equal(a.v_new, b.v_new)
        assert np.array_equal(a.label_set.train_labeled, b.label_set.train_labeled)
        assert pair_set(a.cold_input_edges[0.6]) == pair_set(b.cold_input_edges[0.6])


class TestLinkBundle:
    def build(self, seed=0):
        graph = random_graph(120, 0.08, seed=30, features=True)
        return graph, make_link_bundle(graph, seed=seed)

    def test_full_partition_no_leakage(self):
        graph, b = self.build()
        parts = [
            pair_set(b.train_graph.edges),
            pair_set(b.trans_val_edges),
            pair_set(b.trans_test_edges),
            pair_set(b.new_input_edges),
            pair_set(b.new_test_edges),
        ]
        union = set()
        for p in parts:
            assert not union & p
            union |= p
        assert union == pair_set(graph.edges)

    def test_transductive_counts_on_induced_graph(self):
        graph, b = self.build()
        induced = (
            b.train_graph.num_edges + len(b.trans_val_edges) + len(b.trans_test_edges)
        )
        assert b.train_graph.num_edges == int(np.floor(0.5 * induced))
        assert len(b.trans_val_edges) == int(np.floor(0.2 * induced))

    def test_new_edges_touch_new_nodes(self):
        _, b = self.build()
        new = set(b.v_new.tolist())
        for u, v in np.concatenate([b.new_input_edges, b.new_test_edges]):
            assert int(u) in new or int(v) in new

    def test_inference_graph_features_preserved(self):
        graph, b = self.build()
        ind = b.inference_graph("inductive")
        assert np.array_equal(ind.features, graph.features)


class TestRecsysBundle:
    def test_fields_and_no_inductive(self):
        g = generate_bipartite(25, 30, seed=2)
        b = make_recsys_bundle(g, seed=0)
        assert b.task == "recsys"
        assert b.v_new.size == 0
        assert b.trans_test_edges is not None
        with pytest.raises(SplitError):
            b.inference_graph("inductive")

    def test_train_graph_keeps_partition(self):
        g = generate_bipartite(25, 30, seed=3)
        b = make_recsys_bundle(g, seed=1)
        assert b.train_graph.bipartite == (25, 30)


class TestBundleSerialization:
    @pytest.mark.parametrize("task", ["classification", "link", "recsys"])
    def test_json_round_trip(self, task):
        if task == "classification":
            graph, labels = generate_scale_free(120, 2, seed=9)
            bundle = make_classification_bundle(graph, labels, seed=3)
        elif task == "link":
            graph = random_graph(90, 0.1, seed=9, features=True)
            bundle = make_link_bundle(graph, seed=3)
        else:
            graph = generate_bipartite(20, 25, seed=9)
            bundle = make_recsys_bundle(graph, seed=3)

        payload = json.loads(json.dumps(bundle.to_dict()))
        back = SplitBundle.from_dict(payload, graph)
        assert back.task == bundle.task
        assert back.num_nodes == bundle.num_nodes
        assert np.array_equal(back.v_new, bundle.v_new)
        assert pair_set(back.train_graph.edges) == pair_set(bundle.train_graph.edges)
        for name in ("trans_val_edges", "trans_test_edges", "new_input_edges", "new_test_edges"):
            a, b = getattr(bundle, name), getattr(back, name)
            assert (a is None) == (b is None)
            if a is not None:
                assert pair_set(a) == pair_set(b)
        assert set(back.cold_input_edges) == set(bundle.cold_input_edges)
        for r, e in bundle.cold_input_edges.items():
            assert pair_set(back.cold_input_edges[r]) == pair_set(e)
        if bundle.label_set is not None:
            assert np.array_equal(back.label_set.labels, bundle.label_set.labels)
            assert np.array_equal(
                back.label_set.train_labeled, bundle.label_set.train_labeled
            )


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

class TestDatasetFiles:
    def test_plain_round_trip(self, tmp_path):
        g = random_graph(25, 0.2, seed=40)
        path = tmp_path / "edges.txt"
        save_edge_list(g, path, header_comments=["synthetic graph"])
        loaded, labels = load_dataset(path)
        assert labels is None
        assert loaded.num_nodes == int(g.edges.max()) + 1
        assert pair_set(loaded.edges) == pair_set(g.edges)

    def test_features_pin_node_count(self, tmp_path):
        g = random_graph(12, 0.3, seed=41, features=True)
        epath, fpath = tmp_path / "e.txt", tmp_path / "x.csv"
        save_edge_list(g, epath)
        # two extra isolated nodes beyond any edge endpoint
        feats = np.vstack([g.features, np.zeros((2, 3))])
        save_features(feats, fpath)
        loaded, _ = load_dataset(epath, fpath)
        assert loaded.num_nodes == 14
        assert np.allclose(loaded.features, feats)

    def test_feature_count_too_small_rejected(self, tmp_path):
        epath, fpath = tmp_path / "e.txt", tmp_path / "x.csv"
        epath.write_text("0 1\n1 2\n")
        save_features(np.zeros((2, 4)), fpath)
        with pytest.raises(GraphError):
            load_dataset(epath, fpath)

    def test_bipartite_round_trip(self, tmp_path):
        g = generate_bipartite(8, 11, seed=42)
        path = tmp_path / "bip.txt"
        save_edge_list(g, path)
        first_data_line = [
            ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")
        ][0]
        assert first_data_line == "%bipartite 8 11"
        loaded, _ = load_dataset(path)
        assert loaded.bipartite == (8, 11)
        assert loaded.num_nodes == 19
        assert pair_set(loaded.edges) == pair_set(g.edges)

    def test_labels_round_trip(self, tmp_path):
        graph, labels = generate_scale_free(40, 2, seed=43)
        epath, lpath = tmp_path / "e.txt", tmp_path / "y.txt"
        save_edge_list(graph, epath)
        save_labels(labels, lpath)
        loaded, lab = load_dataset(epath, label_path=lpath)
        assert lab is not None
        assert np.array_equal(lab.labels, labels.labels)
        assert lab.num_classes == labels.num_classes

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("# top comment\n0 1  # trailing\n\n  1   2\n# done\n")
        g, _ = load_dataset(path)
        assert pair_set(g.edges) == {(0, 1), (1, 2)}

    def test_malformed_line_reports_number(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("0 1\n1 2 3\n")
        with pytest.raises(GraphError, match=":2:"):
            load_dataset(path)
        path.write_text("0 1\nx 2\n")
        with pytest.raises(GraphError, match=":2:"):
            load_dataset(path)

    def test_label_file_errors(self, tmp_path):
        epath, lpath = tmp_path / "e.txt", tmp_path / "y.txt"
        epath.write_text("0 1\n")
        lpath.write_text("5 0\n")
        with pytest.raises(GraphError, match="out of range"):
            load_dataset(epath, label_path=lpath)
        lpath.write_text("0 -2\n")
        with pytest.raises(GraphError, match="nonnegative"):
            load_dataset(epath, label_path=lpath)

    def test_bipartite_marker_must_be_first(self, tmp_path):
        path = tmp_path / "e.txt"
        path.write_text("0 8\n%bipartite 8 11\n")
        with pytest.raises(GraphError):
            load_dataset(path)
