import numpy as np
import pytest

from refcomplete import retrieval
from refcomplete.descriptor import DIM, embed_geometric
from refcomplete.geometry import ContractError
from refcomplete.shapes import random_spec, sample_shape
from refcomplete.synthesis import occlude


def _write_corpus(tmp_path, clouds: dict[str, np.ndarray], extra_lines=()):
    shdir = tmp_path / "shapes"
    shdir.mkdir(exist_ok=True)
    lines = []
    from refcomplete import cloudio

    for sid, cloud in clouds.items():
        cloudio.write_xyz(cloud, shdir / f"{sid}.xyz")
        lines.append(f"{sid}\tshapes/{sid}.xyz\tcat")
    lines.extend(extra_lines)
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


class TestDescriptor:
    def test_unit_norm(self):
        cloud = sample_shape(random_spec("chair", 1), 256)
        assert abs(np.linalg.norm(embed_geometric(cloud)) - 1.0) < 1e-9

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        cloud = rng.normal(size=(200, 3))
        perm = cloud[rng.permutation(200)]
        np.testing.assert_allclose(embed_geometric(cloud), embed_geometric(perm), atol=1e-12)

    def test_scale_invariant(self):
        rng = np.random.default_rng(3)
        cloud = rng.normal(size=(150, 3))
        np.testing.assert_allclose(embed_geometric(cloud), embed_geometric(2.0 * cloud),
                                   atol=1e-12)

    def test_translation_invariant(self):
        rng = np.random.default_rng(4)
        cloud = rng.normal(size=(150, 3))
        np.testing.assert_allclose(embed_geometric(cloud),
                                   embed_geometric(cloud + [5.0, -3.0, 2.0]), atol=1e-9)

    def test_distinct_shapes_separate(self):
        rng = np.random.default_rng(5)
        sphere = rng.normal(size=(256, 3))
        sphere /= np.linalg.norm(sphere, axis=1, keepdims=True)
        t = np.linspace(-1, 1, 256)
        line = np.stack([t, np.zeros_like(t), np.zeros_like(t)], axis=1)
        cos = float(embed_geometric(sphere) @ embed_geometric(line))
        assert cos < 0.9


class TestBuildIndex:
    def test_three_shapes(self, tmp_path):
        clouds = {f"s{i}": sample_shape(random_spec("box", i), 128) for i in range(3)}
        idx = retrieval.build_index(_write_corpus(tmp_path, clouds))
        assert len(idx) == 3 and not idx.warnings

    def test_rebuild_byte_identical(self, tmp_path):
        clouds = {f"s{i}": sample_shape(random_spec("cylinder", i), 128) for i in range(3)}
        manifest = _write_corpus(tmp_path, clouds)
        a, b = tmp_path / "a.idx", tmp_path / "b.idx"
        retrieval.build_index(manifest).save(a)
        retrieval.build_index(manifest).save(b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_path_warns(self, tmp_path):
        clouds = {f"s{i}": sample_shape(random_spec("box", i), 64) for i in range(3)}
        manifest = _write_corpus(tmp_path, clouds,
                                 extra_lines=["ghost\tshapes/missing.xyz\tcat"])
        idx = retrieval.build_index(manifest)
        assert len(idx) == 3 and len(idx.warnings) == 1 and "ghost" in idx.warnings[0]

    def test_empty_corpus_rejected(self, tmp_path):
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("only\tshapes/nope.xyz\n")
        with pytest.raises(ContractError):
            retrieval.build_index(manifest)

    def test_round_trip(self, tmp_path):
        clouds = {f"s{i}": sample_shape(random_spec("lamp", i), 128) for i in range(4)}
        idx = retrieval.build_index(_write_corpus(tmp_path, clouds))
        path = tmp_path / "corpus.idx"
        idx.save(path)
        back = retrieval.RetrievalIndex.load(path)
        assert back.embedder_id == idx.embedder_id and back.dim == idx.dim
        for a, b in zip(idx.records, back.records):
            assert a.shape_id == b.shape_id and a.path == b.path
            np.testing.assert_array_equal(a.embedding, b.embedding)


class TestQueryTopk:
    def _index(self, vecs: dict[str, np.ndarray]):
        records = [retrieval.EmbeddingRecord(k, v / np.linalg.norm(v), f"{k}.xyz")
                   for k, v in vecs.items()]
        dim = len(next(iter(vecs.values())))
        return retrieval.RetrievalIndex("test", dim, records)

    def test_identity_query(self):
        idx = self._index({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])})
        top = idx.query_topk(np.array([0.0, 1.0]), 1)
        assert top[0][0] == "b" and abs(top[0][1] - 1.0) < 1e-12

    def test_hand_cosine(self):
        idx = self._index({"e1": np.array([1.0, 0.0]), "e2": np.array([0.0, 1.0])})
        q = np.array([0.9, 0.1])
        q /= np.linalg.norm(q)
        assert idx.query_topk(q, 1)[0][0] == "e1"

    def test_dim_mismatch(self):
        idx = self._index({"a": np.array([1.0, 0.0])})
        with pytest.raises(ContractError):
            idx.query_topk(np.zeros(3), 1)

    def test_tie_breaks_lexicographic(self):
        v = np.array([1.0, 0.0])
        idx = self._index({"zz": v.copy(), "aa": v.copy()})
        assert [s for s, _ in idx.query_topk(v, 2)] == ["aa", "zz"]

    @pytest.mark.parametrize("trial", range(10))
    def test_matches_exhaustive_sort(self, trial):
        rng = np.random.default_rng(600 + trial)
        n, d = int(rng.integers(3, 40)), 8
        vecs = {f"r{i:03d}": rng.normal(size=d) for i in range(n)}
        idx = self._index(vecs)
        q = rng.normal(size=d)
        q /= np.linalg.norm(q)
        got = idx.query_topk(q, n)
        cosines = {k: float(v / np.linalg.norm(v) @ q) for k, v in vecs.items()}
        expected = sorted(cosines.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [g[0] for g in got] == [e[0] for e in expected]


class TestRetrieveReference:
    def test_twin_recovered(self, tmp_path):
        # visibly distinct shapes: the chair partial hits its own complete twin
        # (verified across all 24 viewpoints for this corpus)
        clouds = {
            "box": sample_shape(random_spec("box", 10), 1024),
            "chair": sample_shape(random_spec("chair", 13), 1024),
            "spheres": sample_shape(random_spec("sphere_union", 12), 1024),
        }
        idx = retrieval.build_index(_write_corpus(tmp_path, clouds))
        for vp in (0, 5, 17):
            partial = occlude(clouds["chair"], vp, 512)
            got = retrieval.retrieve_reference(idx, partial, k=1, n_points=256)
            assert got[0][0] == "chair"

    def test_singleton_corpus(self, tmp_path):
        clouds = {"only": sample_shape(random_spec("box", 13), 256)}
        idx = retrieval.build_index(_write_corpus(tmp_path, clouds))
        got = retrieval.retrieve_reference(idx, clouds["only"], k=1, n_points=128)
        assert got[0][0] == "only" and got[0][1].shape == (128, 3)

    def test_reference_count_contract(self, tmp_path):
        clouds = {"a": sample_shape(random_spec("chair", 14), 300)}
        idx = retrieval.build_index(_write_corpus(tmp_path, clouds))
        for n in (64, 300, 500):
            got = retrieval.retrieve_reference(idx, clouds["a"], k=1, n_points=n)
            assert got[0][1].shape == (n, 3)

    def test_missing_file_names_shape(self, tmp_path):
        clouds = {"a": sample_shape(random_spec("box", 15), 128)}
        manifest = _write_corpus(tmp_path, clouds)
        idx = retrieval.build_index(manifest)
        (tmp_path / "shapes" / "a.xyz").unlink()
        with pytest.raises(OSError, match="'a'"):
            retrieval.retrieve_reference(idx, clouds["a"])


class TestExternalEmbeddings:
    def test_table_import(self, tmp_path):
        clouds = {f"s{i}": sample_shape(random_spec("box", 20 + i), 64) for i in range(2)}
        manifest = _write_corpus(tmp_path, clouds)
        table = tmp_path / "emb.txt"
        table.write_text("s0 1 0 0\ns1 0 1 0\n")
        idx = retrieval.build_index(manifest, retrieval.read_embedding_table(table))
        assert idx.embedder_id == "external" and idx.dim == 3
        assert idx.query_topk(np.array([1.0, 0.0, 0.0]), 1)[0][0] == "s0"

    def test_zero_vector_rejected(self, tmp_path):
        table = tmp_path / "emb.txt"
        table.write_text("s0 0 0 0\n")
        with pytest.raises(retrieval.IndexError_):
            retrieval.read_embedding_table(table)

    def test_dim_must_match(self, tmp_path):
        table = tmp_path / "emb.txt"
        table.write_text("s0 1 0\ns1 1 0 0\n")
        with pytest.raises(retrieval.IndexError_):
            retrieval.read_embedding_table(table)
