import gzip
import json
import logging

import numpy as np
import pytest

from protosel.corpus import (
    Document,
    GroupedDataset,
    WordVectorTable,
    apply_pca,
    embed_documents,
    fit_pca,
    from_rows,
    load_corpus,
    load_usps,
    load_usps_pair,
    load_word_vectors,
    make_splits,
    tokenize,
)
from protosel.errors import DataError, ParseError, ValidationError


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def doc_record(i, group="g", title="hello world", sentences=("one two", "three")):
    return {"id": f"d{i}", "group": group, "title": title, "sentences": list(sentences)}


class TestLoadCorpus:
    def test_two_lines_in_order(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [doc_record(1), doc_record(2, group="h")])
        docs = load_corpus(path)
        assert [d.id for d in docs] == ["d1", "d2"]
        assert docs[1].group == "h"

    def test_empty_file(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text("")
        assert load_corpus(path) == []

    def test_duplicate_id_names_offender(self, tmp_path):
        path = tmp_path / "c.jsonl"
        write_jsonl(path, [doc_record(1), {**doc_record(2), "id": "d1"}])
        with pytest.raises(ValidationError, match="d1"):
            load_corpus(path)

    def test_malformed_line_reports_line_number(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "group": "g", "title": "t", "sentences": []}\n{oops\n')
        with pytest.raises(ParseError, match="line 2"):
            load_corpus(path)

    def test_missing_key_reports_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", "group": "g", "title": "t"}\n')
        with pytest.raises(ParseError, match="line 1"):
            load_corpus(path)


def test_document_rejects_empty_group():
    with pytest.raises(ValidationError):
        Document("d1", "", "title", ())


def test_grouped_dataset_rejects_unsorted_group_index():
    pts = np.zeros((3, 2))
    with pytest.raises(ValidationError):
        GroupedDataset(
            points=pts,
            group_of=np.array([0, 0, 0]),
            group_names=("a",),
            group_index=(np.array([0, 2, 1]),),
        )


class TestLoadWordVectors:
    def test_basic(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a 1 0\nb 0 1\n")
        table = load_word_vectors(path)
        assert table.dimension == 2
        assert len(table) == 2
        assert np.array_equal(table["a"], [1.0, 0.0])

    def test_wrong_arity_reports_line(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a 1 0\nb 0 1\nc 1\n")
        with pytest.raises(ParseError, match="line 3"):
            load_word_vectors(path)

    def test_duplicate_token_last_wins(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a 1 0\na 0 2\n")
        table = load_word_vectors(path)
        assert np.array_equal(table["a"], [0.0, 2.0])


class TestEmbedDocuments:
    def vecs(self):
        return WordVectorTable(dimension=2, entries={"alpha": np.array([1.0, 0.0]),
                                                     "beta": np.array([0.0, 1.0])})

    def test_single_token_title(self):
        docs = [Document("d1", "g", "alpha", ())]
        data = embed_documents(docs, self.vecs())
        assert np.allclose(data.points, [[1.0, 0.0]])
        assert data.row_ids == ("d1",)

    def test_two_token_mean(self):
        docs = [Document("d1", "g", "alpha beta", ())]
        data = embed_documents(docs, self.vecs())
        assert np.allclose(data.points, [[0.5, 0.5]])

    def test_out_of_vocabulary_dropped_with_warning(self, caplog):
        docs = [Document("d1", "g", "alpha", ()), Document("d2", "g", "unknown", ())]
        with caplog.at_level(logging.WARNING):
            data = embed_documents(docs, self.vecs())
        assert data.n_points == 1
        assert "dropped 1" in caplog.text

    def test_all_dropped_errors(self):
        docs = [Document("d1", "g", "unknown", ())]
        with pytest.raises(DataError):
            embed_documents(docs, self.vecs())

    def test_first_k_sentences_window(self):
        docs = [Document("d1", "g", "", ("alpha", "beta", "alpha", "beta"))]
        data = embed_documents(docs, self.vecs(), first_k_sentences=2)
        assert np.allclose(data.points, [[0.5, 0.5]])

    def test_tokenizer_lowercases_and_splits_nonalnum(self):
        assert tokenize("Alpha-BETA, gamma42!") == ["alpha", "beta", "gamma42"]

    def test_permutation_equivariance(self):
        docs = [
            Document("a", "g1", "alpha", ()),
            Document("b", "g2", "beta", ()),
            Document("c", "g1", "alpha beta", ()),
        ]
        data = embed_documents(docs, self.vecs())
        permuted = embed_documents(docs[::-1], self.vecs())
        assert np.allclose(permuted.points, data.points[::-1])
        assert permuted.row_ids == tuple(reversed(data.row_ids))
        # group order follows first appearance
        assert data.group_names == ("g1", "g2")
        assert permuted.group_names == ("g1", "g2")


class TestLoadUsps:
    def write(self, path, rows, compress=False):
        text = "\n".join(" ".join(str(v) for v in row) for row in rows) + "\n"
        if compress:
            with gzip.open(path, "wt", encoding="utf-8") as fh:
                fh.write(text)
        else:
            path.write_text(text)

    def test_basic(self, tmp_path):
        path = tmp_path / "u.txt"
        rows = [[0] + [0.1] * 256, [1] + [0.2] * 256, [1] + [0.3] * 256]
        self.write(path, rows)
        data = load_usps(path)
        assert data.n_points == 3 and data.dim == 256
        assert data.group_names == ("0", "1")
        assert data.group_index[1].size == 2

    def test_empty_errors(self, tmp_path):
        path = tmp_path / "u.txt"
        path.write_text("")
        with pytest.raises(DataError):
            load_usps(path)

    def test_wrong_arity_reports_line(self, tmp_path):
        path = tmp_path / "u.txt"
        rows = [[0] + [0.1] * 256, [1] + [0.2] * 255]
        self.write(path, rows)
        with pytest.raises(ParseError, match="line 2"):
            load_usps(path)

    def test_label_out_of_range(self, tmp_path):
        path = tmp_path / "u.txt"
        self.write(path, [[11] + [0.1] * 256])
        with pytest.raises(ValidationError):
            load_usps(path)

    def test_gzip_and_float_labels(self, tmp_path):
        path = tmp_path / "u.gz"
        rows = [["3.0000"] + [0.5] * 256, ["7.0000"] + [0.25] * 256]
        self.write(path, rows, compress=True)
        data = load_usps(path)
        assert data.group_names == ("3", "7")

    def test_pair_concatenates_with_canonical_rows(self, tmp_path):
        train, test = tmp_path / "tr.txt", tmp_path / "te.txt"
        self.write(train, [[0] + [0.1] * 256, [1] + [0.2] * 256, [1] + [0.25] * 256])
        self.write(test, [[0] + [0.3] * 256, [1] + [0.4] * 256])
        combined, train_rows, test_rows = load_usps_pair(train, test)
        assert combined.n_points == 5
        assert train_rows.tolist() == [0, 1, 2]
        assert test_rows.tolist() == [3, 4]


class TestPca:
    def test_points_on_a_line_give_rank_one(self):
        t = np.linspace(-1, 1, 10)[:, None]
        X = t * np.array([[1.0, 2.0]])
        data = from_rows(X, ["a"] * 10)
        model = fit_pca(data, target_variance=0.85)
        assert model.n_components == 1
        assert model.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)

    def test_target_one_reconstructs(self):
        rng = np.random.Generator(np.random.PCG64(1))
        X = rng.normal(size=(20, 4))
        data = from_rows(X, ["a"] * 20)
        model = fit_pca(data, target_variance=1.0)
        assert model.n_components == 4
        projected = apply_pca(model, data)
        reconstructed = projected.points @ model.components + model.mean
        assert np.allclose(reconstructed, X, atol=1e-8)

    def test_components_orthonormal_and_ratios_nonincreasing(self):
        rng = np.random.Generator(np.random.PCG64(2))
        X = rng.normal(size=(30, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
        data = from_rows(X, ["a"] * 30)
        model = fit_pca(data, 0.99)
        KT = model.components @ model.components.T
        assert np.allclose(KT, np.eye(model.n_components), atol=1e-8)
        r = model.explained_variance_ratio
        assert np.all(np.diff(r) <= 1e-12)

    def test_sign_convention(self):
        rng = np.random.Generator(np.random.PCG64(3))
        X = rng.normal(size=(25, 4))
        model = fit_pca(from_rows(X, ["a"] * 25), 1.0)
        for row in model.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_projected_variance_reproduces_ratios(self):
        rng = np.random.Generator(np.random.PCG64(4))
        X = rng.normal(size=(50, 6)) * np.array([5, 3, 2, 1, 0.5, 0.2])
        data = from_rows(X, ["a"] * 50)
        model = fit_pca(data, 0.9)
        projected = apply_pca(model, data).points
        total = np.var(X, axis=0, ddof=1).sum()
        ratios = np.var(projected, axis=0, ddof=1) / total
        assert np.allclose(ratios, model.explained_variance_ratio, atol=1e-8)

    def test_rank_deficient_keeps_only_nonzero_components(self):
        # rank-1 data in 3-D: even at target 1.0 only the single nonzero
        # component is kept (ratios are relative to the total variance, so the
        # target is reached without padding zero-variance directions)
        t = np.linspace(-1, 1, 8)[:, None]
        X = t * np.array([[1.0, 1.0, 0.0]])
        data = from_rows(X, ["a"] * 8)
        model = fit_pca(data, target_variance=1.0)
        assert model.n_components == 1
        assert model.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)

    def test_apply_preserves_pairwise_distances_with_full_basis(self):
        rng = np.random.Generator(np.random.PCG64(5))
        X = rng.normal(size=(12, 3))
        data = from_rows(X, ["a"] * 12)
        model = fit_pca(data, 1.0)
        proj = apply_pca(model, data).points
        for i in range(12):
            for j in range(i + 1, 12):
                a = float(np.sum((X[i] - X[j]) ** 2))
                b = float(np.sum((proj[i] - proj[j]) ** 2))
                assert a == pytest.approx(b, abs=1e-8)

    def test_mean_row_projects_to_zero(self):
        rng = np.random.Generator(np.random.PCG64(6))
        X = rng.normal(size=(15, 3))
        data = from_rows(X, ["a"] * 15)
        model = fit_pca(data, 0.9)
        z = (data.points.mean(axis=0) - model.mean) @ model.components.T
        assert np.allclose(z, 0.0, atol=1e-12)

    def test_shape_contract(self):
        rng = np.random.Generator(np.random.PCG64(7))
        X = rng.normal(size=(5, 3)) * np.array([4.0, 1.0, 0.01])
        data = from_rows(X, ["a"] * 5)
        model = fit_pca(data, 0.9)
        out = apply_pca(model, data)
        assert out.points.shape == (5, model.n_components)
        assert out.group_names == data.group_names

    def test_dimension_mismatch(self):
        rng = np.random.Generator(np.random.PCG64(8))
        model = fit_pca(from_rows(rng.normal(size=(6, 3)), ["a"] * 6), 1.0)
        other = from_rows(rng.normal(size=(4, 2)), ["a"] * 4)
        with pytest.raises(ValidationError):
            apply_pca(model, other)


class TestMakeSplits:
    def dataset(self, sizes=(10, 10), seed=0):
        rng = np.random.Generator(np.random.PCG64(seed))
        pts, labels = [], []
        for g, n in enumerate(sizes):
            pts.append(rng.normal(size=(n, 2)))
            labels += [f"g{g}"] * n
        return from_rows(np.vstack(pts), labels)

    def test_counts(self):
        data = self.dataset((10, 10))
        splits = make_splits(data, 0.8, 3, base_seed=5)
        for split in splits:
            assert split.train.group_sizes().tolist() == [8, 8]
            assert split.test.group_sizes().tolist() == [2, 2]

    def test_disjoint_and_exhaustive(self):
        data = self.dataset((9, 7))
        for split in make_splits(data, 0.75, 2, base_seed=1):
            train_pts = {tuple(p) for p in split.train.points}
            test_pts = {tuple(p) for p in split.test.points}
            assert not train_pts & test_pts
            assert len(train_pts) + len(test_pts) == data.n_points

    def test_identical_seed_identical_splits(self):
        data = self.dataset((8, 8))
        a = make_splits(data, 0.8, 4, base_seed=11)
        b = make_splits(data, 0.8, 4, base_seed=11)
        for s, t in zip(a, b):
            assert np.array_equal(s.train.points, t.train.points)
            assert np.array_equal(s.test.points, t.test.points)
            assert s.seed == t.seed

    def test_group_of_one_point_errors(self):
        data = self.dataset((5, 2))
        ok = make_splits(data, 0.8, 1, 0)  # 2-point group still splits 1/1
        assert ok[0].train.group_sizes().tolist() == [4, 1]
        bad = from_rows(np.vstack([np.zeros((3, 2)), np.ones((1, 2))]), ["a"] * 3 + ["b"])
        with pytest.raises(ValidationError):
            make_splits(bad, 0.8, 1, 0)

    def test_both_sides_keep_every_group(self):
        # ceil would otherwise put both points of the small group in train
        data = self.dataset((2, 10))
        split = make_splits(data, 0.8, 1, 0)[0]
        assert split.train.group_sizes().tolist()[0] == 1
        assert split.test.group_sizes().tolist()[0] == 1

    def test_first_split_override(self):
        data = self.dataset((6, 6))
        train_rows = np.array([0, 1, 2, 3, 4, 6, 7, 8, 9])  # 5 of g0, 4 of g1
        test_rows = np.array([5, 10, 11])
        splits = make_splits(data, 0.8, 3, base_seed=0, first_split=(train_rows, test_rows))
        assert np.array_equal(splits[0].train.points, data.points[train_rows])
        # later splits copy the canonical per-group train counts
        counts0 = splits[0].train.group_sizes()
        for split in splits[1:]:
            assert np.array_equal(split.train.group_sizes(), counts0)

    def test_row_ids_carried_through(self):
        data = from_rows(
            np.random.default_rng(0).normal(size=(6, 2)),
            ["a", "a", "a", "b", "b", "b"],
            row_ids=[f"r{i}" for i in range(6)],
        )
        split = make_splits(data, 0.67, 1, 3)[0]
        assert set(split.train.row_ids) | set(split.test.row_ids) == {f"r{i}" for i in range(6)}
        assert not set(split.train.row_ids) & set(split.test.row_ids)
