import gzip

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from croloss.data import (BehaviorLog, Batch, DataError, ingest, make_batches, make_samples,
                          prepare_splits, split_users, write_log)
from croloss.synthetic import clustered_log


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def log_from(seqs):
    n_items = 1 + max(max(s) for s in seqs if len(s))
    return BehaviorLog([np.array(s, dtype=np.int64) for s in seqs], [f"u{i}" for i in range(len(seqs))],
                       [f"i{i}" for i in range(n_items)], sum(len(s) for s in seqs))


class TestIngest:
    def test_counts_items(self, tmp_path):
        log = ingest(write(tmp_path / "a.tsv", "u1\tx\t1\nu2\ty\t2\nu1\tz\t3\n"))
        assert log.catalog_size == 3
        assert log.num_users == 2
        assert log.num_events == 3

    def test_sorts_by_timestamp_stably(self, tmp_path):
        log = ingest(write(tmp_path / "a.tsv", "u\tc\t30\nu\ta\t10\nu\tb\t20\nu\td\t20\n"))
        assert [log.item_ids[i] for i in log.sequences[0]] == ["a", "b", "d", "c"]

    def test_duplicates_kept(self, tmp_path):
        log = ingest(write(tmp_path / "a.tsv", "u\tx\t1\nu\tx\t1\n"))
        assert len(log.sequences[0]) == 2 and log.catalog_size == 1

    def test_header_and_delimiter(self, tmp_path):
        log = ingest(write(tmp_path / "a.csv", "user,item,ts\nu,x,1\nv,y,2\n"), delimiter=",")
        assert log.num_events == 2

    def test_gzip(self, tmp_path):
        path = tmp_path / "a.tsv.gz"
        with gzip.open(path, "wt", encoding="utf-8") as fh:
            fh.write("u\tx\t1\nu\ty\t2\n")
        assert ingest(path).num_events == 2

    def test_malformed_line_reports_number(self, tmp_path):
        with pytest.raises(DataError, match=":3:"):
            ingest(write(tmp_path / "a.tsv", "u\tx\t1\nu\ty\t2\nu\tbroken\n"))
        with pytest.raises(DataError, match=":2:"):
            ingest(write(tmp_path / "b.tsv", "u\tx\t1\nu\ty\tsoon\n"))

    def test_empty_and_missing(self, tmp_path):
        with pytest.raises(DataError):
            ingest(write(tmp_path / "a.tsv", ""))
        with pytest.raises(DataError):
            ingest(tmp_path / "nope.tsv")

    def test_write_round_trip(self, tmp_path):
        log = clustered_log(n_users=30, n_items=40, n_clusters=3, seed=1)
        write_log(log, tmp_path / "s.tsv.gz")
        back = ingest(tmp_path / "s.tsv.gz")
        assert back.user_ids == log.user_ids
        for a, b in zip(log.sequences, back.sequences):
            assert [log.item_ids[i] for i in a] == [back.item_ids[i] for i in b]


class TestSplit:
    def test_8_1_1_proportion(self):
        parts = split_users(10, (8, 1, 1), seed=3)
        assert [len(p) for p in parts] == [8, 1, 1]

    def test_deterministic_and_seeded(self):
        a, b = split_users(100, seed=1), split_users(100, seed=1)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        c = split_users(100, seed=2)
        assert not np.array_equal(a[0], c[0])

    @given(st.integers(3, 500), st.integers(0, 1000))
    def test_partition(self, n, seed):
        parts = split_users(n, (8, 1, 1), seed)
        joined = np.concatenate(parts)
        assert sorted(joined.tolist()) == list(range(n))
        assert all(len(p) >= 1 for p in parts)

    def test_too_few_users(self):
        with pytest.raises(ValueError):
            split_users(2, (8, 1, 1))


class TestSamples:
    def test_enumeration(self):
        s = make_samples(log_from([[0, 1, 2]]), [0], max_len=5)
        assert [(x.history.tolist(), x.target) for x in (s[0], s[1])] == [([0], 1), ([0, 1], 2)]

    def test_truncation(self):
        seq = list(range(60))
        s = make_samples(log_from([seq]), [0], max_len=50)
        assert s.history.shape[1] == 50
        assert s[len(s) - 1].history.tolist() == list(range(9, 59))
        assert s.length.max() == 50

    def test_single_event_user(self):
        assert len(make_samples(log_from([[3], [0, 1]]), [0], max_len=5)) == 0

    def test_last_mode(self):
        s = make_samples(log_from([[0, 1, 2], [3, 4]]), [0, 1], max_len=5, mode="last")
        assert s.target.tolist() == [2, 4]
        assert s.mode == "last"

    @settings(max_examples=30)
    @given(st.lists(st.lists(st.integers(0, 9), min_size=0, max_size=12), min_size=1, max_size=10))
    def test_sample_count(self, seqs):
        seqs = [s or [0] for s in seqs]
        s = make_samples(log_from(seqs), range(len(seqs)), max_len=4)
        assert len(s) == sum(max(0, len(q) - 1) for q in seqs)


@pytest.fixture(scope="module")
def small_set():
    log = clustered_log(n_users=400, n_items=6000, n_clusters=5, seed=2)
    return log, make_samples(log, range(log.num_users), max_len=20)


class TestBatches:
    def test_default_batch_sizes(self, small_set):
        log, samples = small_set
        batch = next(make_batches(samples, 256, 10, log.catalog_size, seed=0))
        assert len(batch.index) == 256
        assert len(batch.negatives) == 2560

    def test_scale_without_collisions(self, small_set):
        log, samples = small_set
        negs = np.arange(2560)
        batch = Batch(np.arange(256), negs, log.catalog_size)
        targets = np.full(256, 5999)
        mask = batch.collision_mask(targets)
        assert mask.all()
        np.testing.assert_array_equal(batch.sample_scale(mask), log.catalog_size / 2561)

    def test_collisions_dropped_per_sample(self):
        batch = Batch(np.arange(2), np.array([1, 2, 1, 3]), 10)
        mask = batch.collision_mask(np.array([1, 5]))
        np.testing.assert_array_equal(mask, [[False, True, False, True], [True] * 4])
        np.testing.assert_array_equal(batch.sample_scale(mask), [10 / 3, 10 / 5])

    def test_deterministic_stream(self, small_set):
        log, samples = small_set
        a = list(make_batches(samples, 64, 3, log.catalog_size, seed=4, epochs=2))
        b = list(make_batches(samples, 64, 3, log.catalog_size, seed=4, epochs=2))
        for x, y in zip(a, b):
            assert np.array_equal(x.index, y.index) and np.array_equal(x.negatives, y.negatives)

    def test_epoch_covers_all_and_keeps_partial_batch(self, small_set):
        log, samples = small_set
        batches = list(make_batches(samples, 100, 2, log.catalog_size, seed=0))
        seen = np.concatenate([b.index for b in batches])
        assert sorted(seen.tolist()) == list(range(len(samples)))
        last = batches[-1]
        assert len(last.negatives) == 2 * len(last.index)

    def test_uniform_negatives(self):
        # chi-square goodness of fit, 10^6 draws over 100 items
        samples = make_samples(log_from([list(range(50)) * 2]), [0], max_len=5)
        counts = np.zeros(100)
        n = 0
        for batch in make_batches(samples, 1, 99, 100, seed=11, epochs=None):
            counts += np.bincount(batch.negatives, minlength=100)
            n += len(batch.negatives)
            if n >= 10 ** 6:
                break
        assert stats.chisquare(counts).pvalue > 0.001

    def test_rejects_scale_below_one(self):
        samples = make_samples(log_from([[0, 1, 2]]), [0], max_len=5)
        with pytest.raises(ValueError):
            next(make_batches(samples, 2, 5, 10))


class TestSplits:
    def test_disjoint_users(self):
        log = clustered_log(n_users=300, n_items=100, n_clusters=4, seed=5)
        sp = prepare_splits(log, max_len=20, seed=0)
        train_users = set(sp.train.user.tolist())
        assert not train_users & set(sp.valid.user.tolist())
        assert not train_users & set(sp.test.user.tolist())
        assert sp.catalog_size == log.catalog_size
        batch_users = set()
        for b in make_batches(sp.train, 64, 1, sp.catalog_size, seed=0):
            batch_users |= set(sp.train.user[b.index].tolist())
        assert not batch_users & (set(sp.users[1].tolist()) | set(sp.users[2].tolist()))

    def test_eval_mode(self):
        log = clustered_log(n_users=200, n_items=100, n_clusters=4, seed=5)
        sp = prepare_splits(log, max_len=20, seed=0, eval_mode="last")
        assert len(sp.test) == len(sp.users[2])
        assert sp.train.mode == "all"


class TestSynthetic:
    def test_seeded_shape(self):
        a = clustered_log(n_users=50, n_items=30, n_clusters=3, seed=9)
        b = clustered_log(n_users=50, n_items=30, n_clusters=3, seed=9)
        assert a.catalog_size == 30 and a.num_users == 50
        assert all(np.array_equal(x, y) for x, y in zip(a.sequences, b.sequences))
        assert all(8 <= len(s) <= 20 for s in a.sequences)
