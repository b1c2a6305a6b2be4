"""Manifest loading, stratified splits, class weights, rebalance plans."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lesionforge import manifest as mf


def write(tmp_path, text, name="m.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def synthetic_manifest(counts, split=None):
    names = tuple(f"c{i}" for i in range(len(counts)))
    label_map = mf.LabelMap(names)
    samples = []
    for cid, n in enumerate(counts):
        for i in range(n):
            samples.append(mf.Sample(f"img/{cid}_{i}.png", cid,
                                     split or "unassigned"))
    return mf.DatasetManifest(tuple(samples), label_map)


class TestLoadManifest:
    def test_basic_load_with_declared_labels(self, tmp_path):
        path = write(tmp_path, "# labels: benign,malignant\npath,label\n"
                               "a.png,benign\nb.png,malignant\nc.png,benign\n")
        m = mf.load_manifest(path)
        assert m.label_map.names == ("benign", "malignant")
        assert m.n == 3
        np.testing.assert_array_equal(m.counts, [2, 1])

    def test_900_rows_two_labels(self, tmp_path):
        rows = [f"img{i}.png,{'mal' if i % 2 else 'ben'}" for i in range(900)]
        path = write(tmp_path, "path,label\n" + "\n".join(rows) + "\n")
        m = mf.load_manifest(path)
        assert m.label_map.k == 2
        assert m.n == 900

    def test_first_seen_order(self, tmp_path):
        path = write(tmp_path, "path,label\nx.png,zeta\ny.png,alpha\nz.png,zeta\n")
        m = mf.load_manifest(path, label_order="first_seen")
        assert m.label_map.names == ("zeta", "alpha")

    def test_missing_file(self, tmp_path):
        with pytest.raises(mf.ManifestError, match="not found"):
            mf.load_manifest(tmp_path / "nope.csv")

    def test_empty_manifest(self, tmp_path):
        path = write(tmp_path, "path,label\n")
        with pytest.raises(mf.ManifestError, match="empty manifest"):
            mf.load_manifest(path)

    def test_unknown_label_reports_line(self, tmp_path):
        path = write(tmp_path, "# labels: a,b\npath,label\nx.png,a\ny.png,xyz\n")
        with pytest.raises(mf.ManifestError, match=r":4.*xyz"):
            mf.load_manifest(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = write(tmp_path, "path,label\nx.png,a\nbroken-row\nz.png,a\n")
        with pytest.raises(mf.ManifestError, match=":3"):
            mf.load_manifest(path)

    def test_declared_mode_requires_comment(self, tmp_path):
        path = write(tmp_path, "path,label\nx.png,a\ny.png,b\n")
        with pytest.raises(mf.ManifestError, match="declared"):
            mf.load_manifest(path, label_order="declared")

    def test_split_and_mask_columns(self, tmp_path):
        path = write(tmp_path, "path,label,split,mask\n"
                               "x.png,a,train,mx.pgm\ny.png,b,val,\n")
        m = mf.load_manifest(path)
        assert m.samples[0].split == "train"
        assert m.samples[0].mask_path == "mx.pgm"
        assert m.samples[1].mask_path == ""

    def test_invalid_split_value(self, tmp_path):
        path = write(tmp_path, "path,label,split\nx.png,a,nope\ny.png,b,train\n")
        with pytest.raises(mf.ManifestError, match="invalid split"):
            mf.load_manifest(path)

    def test_round_trip_write(self, tmp_path):
        m = synthetic_manifest([3, 4], split="train")
        out = tmp_path / "out.csv"
        mf.write_manifest(out, m, note="config=abc seed=1")
        again = mf.load_manifest(out)
        assert again.n == m.n
        assert again.label_map.names == m.label_map.names
        assert all(s.split == "train" for s in again.samples)


class TestStratifiedSplit:
    def test_900_balanced_gives_540_180_180(self):
        m = synthetic_manifest([450, 450])
        out = mf.stratified_split(m, mf.SplitFractions(), seed=1)
        assert len(out.subset("train")) == 540
        assert len(out.subset("val")) == 180
        assert len(out.subset("test")) == 180

    def test_exact_fractions_n10(self):
        m = synthetic_manifest([10, 5])
        out = mf.stratified_split(m, mf.SplitFractions(), seed=0)
        np.testing.assert_array_equal(out.split_counts("train"), [6, 3])
        np.testing.assert_array_equal(out.split_counts("val"), [2, 1])
        np.testing.assert_array_equal(out.split_counts("test"), [2, 1])

    def test_deterministic(self):
        m = synthetic_manifest([20, 30, 7])
        a = mf.stratified_split(m, seed=42)
        b = mf.stratified_split(m, seed=42)
        assert [s.split for s in a.samples] == [s.split for s in b.samples]

    def test_seed_changes_assignment(self):
        m = synthetic_manifest([20, 30, 7])
        a = mf.stratified_split(m, seed=1)
        b = mf.stratified_split(m, seed=2)
        assert [s.split for s in a.samples] != [s.split for s in b.samples]

    def test_small_class_rejected(self):
        m = synthetic_manifest([10, 2])
        with pytest.raises(mf.ManifestError, match=">= 3"):
            mf.stratified_split(m)

    @given(st.lists(st.integers(3, 40), min_size=2, max_size=5),
           st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_partition_and_stratification(self, counts, seed):
        m = synthetic_manifest(counts)
        f = mf.SplitFractions()
        out = mf.stratified_split(m, f, seed)
        # partition: every sample lands in exactly one split
        assert all(s.split in ("train", "val", "test") for s in out.samples)
        # stratification: per-class counts within 1 of the ideal
        for cid, n_c in enumerate(counts):
            for frac, sp in ((f.train, "train"), (f.val, "val"), (f.test, "test")):
                got = out.split_counts(sp)[cid]
                assert abs(got - n_c * frac) < 1.0


class TestClassWeights:
    def test_balanced_is_unity(self):
        w = mf.compute_class_weights(synthetic_manifest([10, 10]))
        np.testing.assert_allclose(w, [1.0, 1.0])

    def test_hand_evaluated_30_10_10(self):
        w = mf.compute_class_weights(synthetic_manifest([30, 10, 10]))
        np.testing.assert_allclose(w, [5 / 9, 5 / 3, 5 / 3], rtol=1e-12)
        np.testing.assert_allclose(w, [0.5556, 1.6667, 1.6667], atol=1e-4)

    def test_hand_evaluated_1_99(self):
        w = mf.compute_class_weights(synthetic_manifest([1, 99]))
        np.testing.assert_allclose(w, [50.0, 100 / 198], rtol=1e-12)

    @given(st.lists(st.integers(1, 500), min_size=2, max_size=8))
    @settings(max_examples=60)
    def test_weight_identity(self, counts):
        """w_c * n_c = N / K for every class, up to float rounding."""
        m = synthetic_manifest(counts)
        w = mf.compute_class_weights(m)
        np.testing.assert_allclose(w * m.counts, m.n / m.label_map.k, rtol=1e-12)
        assert np.all(w > 0) and np.all(np.isfinite(w))


class TestRebalancePlan:
    def test_parity_100_20(self):
        plan = mf.rebalance_plan(synthetic_manifest([100, 20], split="train"))
        np.testing.assert_array_equal(plan, [0, 80])

    def test_cap_ratio_3(self):
        plan = mf.rebalance_plan(synthetic_manifest([100, 20], split="train"), cap_ratio=3)
        np.testing.assert_array_equal(plan, [0, 40])

    def test_already_balanced(self):
        plan = mf.rebalance_plan(synthetic_manifest([50, 50], split="train"))
        np.testing.assert_array_equal(plan, [0, 0])

    def test_only_train_split_counts(self):
        m = synthetic_manifest([40, 10], split="train")
        samples = m.samples + tuple(
            mf.Sample(f"v{i}.png", 1, "val") for i in range(30))
        m2 = mf.DatasetManifest(samples, m.label_map)
        plan = mf.rebalance_plan(m2)
        np.testing.assert_array_equal(plan, [0, 30])

    def test_cap_below_one_rejected(self):
        with pytest.raises(mf.ManifestError, match="cap_ratio"):
            mf.rebalance_plan(synthetic_manifest([5, 5]), cap_ratio=0.5)


class TestSplitFractions:
    def test_sum_enforced(self):
        with pytest.raises(mf.ManifestError, match="sum to 1"):
            mf.SplitFractions(0.5, 0.2, 0.2)

    def test_range_enforced(self):
        with pytest.raises(mf.ManifestError, match="lie in"):
            mf.SplitFractions(1.0, 0.0, 0.0)
