import struct
import zlib

import numpy as np
import pytest

from precisegrasp.dataset import (HEADER, RECORD_SIZE, CorpusStats, GraspSet, balance_for_gqn, collect,
                                  collect_part, corpus_stats, filter_corpus, from_bytes, read_dataset, read_manifest,
                                  select_parts, split_objectwise, successful_only, to_bytes, write_dataset)
from precisegrasp.errors import CorruptFileError, RejectedInputError, UnbalanceableDataError
from precisegrasp.parts import generate_part


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    parts = [generate_part(21, "ngon"), generate_part(22, "slotted_bar")]
    d = tmp_path_factory.mktemp("collect")
    gs, manifest, stats = collect(parts, 10, 3, path=d / "a.pgds")
    return parts, gs, manifest, stats, d


def synthetic_set(success, part_ids=None):
    n = len(success)
    rng = np.random.default_rng(n)
    pid = np.asarray(part_ids if part_ids is not None else np.arange(n), dtype=np.uint64)
    return GraspSet(pid, rng.normal(size=(n, 3)), rng.normal(size=(n, 4)), np.asarray(success, bool),
                    rng.normal(size=(n, 4)), rng.normal(size=(n, 4)), rng.random((n, 64, 64)).astype(np.float32),
                    rng.random((n, 64, 64)).astype(np.float32))


def test_collection_accounting(small_run):
    parts, gs, manifest, stats, _ = small_run
    assert len(gs) == manifest["records"] == 20 - manifest["divergences"]
    assert manifest["attempts"] == 20 and manifest["parts"] == 2
    assert manifest["positives"] == int(gs.success.sum())
    ids = sorted(p.part_id for p in parts)
    assert list(gs.part_id) == sorted(gs.part_id.tolist())
    assert set(gs.part_id.tolist()) <= set(ids)
    assert [s.part_id for s in stats] == ids
    for s in stats:
        sel = gs.part_id == np.uint64(s.part_id)
        assert s.attempts == int(sel.sum())
        assert s.success_rate == pytest.approx(gs.success[sel].mean())
    # failed grasps carry no grasp displacement
    assert np.all(gs.dg[~gs.success] == 0)
    assert gs.ocfi.shape == (len(gs), 64, 64) and gs.gcip.dtype == np.float32
    assert corpus_stats(gs, parts) == stats


def test_collection_is_reproducible_and_worker_independent(small_run, tmp_path):
    parts, gs, manifest, _, d = small_run
    again, m2, _ = collect(list(reversed(parts)), 10, 3, workers=2, path=tmp_path / "b.pgds")
    assert (tmp_path / "b.pgds").read_bytes() == (d / "a.pgds").read_bytes()
    assert m2["sha256"] == manifest["sha256"]
    other, m3, _ = collect(parts, 10, 4)
    assert m3["sha256"] != manifest["sha256"]


def test_part_results_do_not_depend_on_corpus(small_run):
    parts, gs, _, _, _ = small_run
    alone, _ = collect_part(parts[0], 10, 3)
    assert alone.equals(select_parts(gs, [parts[0].part_id]))


def test_manifest_file(small_run):
    _, _, manifest, _, d = small_run
    m = read_manifest(d / "a.pgds.manifest")
    assert m["records"] == str(manifest["records"]) and m["sha256"] == manifest["sha256"]
    assert "physics.friction" in m and "sensor.noise_sigma" in m


def test_collect_rejects_bad_corpus():
    with pytest.raises(RejectedInputError):
        collect([], 5)
    p = generate_part(1, "gear")
    with pytest.raises(RejectedInputError):
        collect([p, p], 5)


def test_container_round_trip(small_run, tmp_path):
    _, gs, _, _, d = small_run
    back = read_dataset(d / "a.pgds")
    assert back.equals(gs)
    write_dataset(tmp_path / "c.pgds", back)
    assert (tmp_path / "c.pgds").read_bytes() == (d / "a.pgds").read_bytes()
    empty = from_bytes(to_bytes(GraspSet.empty()))
    assert len(empty) == 0


def test_container_layout():
    gs = synthetic_set([True, False])
    data = to_bytes(gs)
    assert data[:4] == b"PGDS"
    assert struct.unpack_from("<HQ", data, 4) == (1, 2)
    assert len(data) == HEADER.size + 2 * RECORD_SIZE
    # the record size follows from the declared field list
    assert RECORD_SIZE == 8 + 24 + 32 + 1 + 32 + 32 + 2 * 4096 * 4 + 4
    first = data[HEADER.size:HEADER.size + RECORD_SIZE]
    assert struct.unpack_from("<I", first, RECORD_SIZE - 4)[0] == zlib.crc32(first[:-4])
    assert struct.unpack_from("<Q", first, 0)[0] == 0
    assert first[64] == 1


def test_container_corruption_offsets():
    gs = synthetic_set([True, False, True])
    data = to_bytes(gs)
    with pytest.raises(CorruptFileError) as e:
        from_bytes(b"XXXX" + data[4:])
    assert e.value.offset == 0
    with pytest.raises(CorruptFileError) as e:
        from_bytes(data[:4] + struct.pack("<H", 2) + data[6:])
    assert e.value.offset == 4
    with pytest.raises(CorruptFileError):
        from_bytes(data[:10])
    # a byte flipped inside record 1 is reported at that record's start
    flipped = bytearray(data)
    flipped[HEADER.size + RECORD_SIZE + 100] ^= 0xFF
    with pytest.raises(CorruptFileError) as e:
        from_bytes(bytes(flipped))
    assert e.value.offset == HEADER.size + RECORD_SIZE
    with pytest.raises(CorruptFileError) as e:
        from_bytes(data[:-7])
    assert e.value.offset == HEADER.size + 2 * RECORD_SIZE
    with pytest.raises(CorruptFileError):
        from_bytes(data[:4] + struct.pack("<HQ", 1, 5) + data[HEADER.size:])


def test_container_rejects_bad_success_flag():
    data = bytearray(to_bytes(synthetic_set([True])))
    rec = HEADER.size
    data[rec + 64] = 2
    data[rec + RECORD_SIZE - 4:rec + RECORD_SIZE] = struct.pack("<I", zlib.crc32(bytes(data[rec:rec + RECORD_SIZE - 4])))
    with pytest.raises(CorruptFileError) as e:
        from_bytes(bytes(data))
    assert e.value.offset == rec + 64


def filter_reference(stats, lo=0.05, hi=0.40, alo=0.02, ahi=0.15):
    keep = set()
    for s in stats:
        rate_ok = not (s.success_rate < lo or s.success_rate > hi)
        axis_ok = not (s.longest_axis < alo or s.longest_axis > ahi)
        if rate_ok and axis_ok:
            keep.add(s.part_id)
    return keep


def test_filter_boundaries():
    stats = [CorpusStats(1, 0.05, 0.02), CorpusStats(2, 0.40, 0.15), CorpusStats(3, 0.0499, 0.05),
             CorpusStats(4, 0.4001, 0.05), CorpusStats(5, 0.2, 0.0199), CorpusStats(6, 0.2, 0.1501),
             CorpusStats(7, 0.2, 0.08)]
    assert filter_corpus(stats) == {1, 2, 7} == filter_reference(stats)
    rng = np.random.default_rng(0)
    rand = [CorpusStats(i, float(rng.choice([0.05, 0.4, rng.uniform(0, 0.6)])),
                        float(rng.choice([0.02, 0.15, rng.uniform(0, 0.2)]))) for i in range(2000)]
    assert filter_corpus(rand) == filter_reference(rand)


def test_split_sizes_and_disjointness():
    train, val = split_objectwise(range(100), 0.15, seed=0)
    assert (len(train), len(val)) == (85, 15)
    assert not set(train) & set(val) and set(train) | set(val) == set(range(100))
    train, val = split_objectwise(range(773), 0.146, seed=1)
    assert (len(train), len(val)) == (660, 113)
    assert split_objectwise(range(50), 0.2, 4) == split_objectwise(reversed(range(50)), 0.2, 4)
    assert split_objectwise(range(50), 0.2, 4) != split_objectwise(range(50), 0.2, 5)
    with pytest.raises(RejectedInputError):
        split_objectwise([1], 0.5)
    with pytest.raises(RejectedInputError):
        split_objectwise(range(5), 1.0)


def test_split_never_empties_a_side():
    train, val = split_objectwise([1, 2], 0.01)
    assert len(train) == len(val) == 1


def test_balance_undersamples_majority():
    success = [True] * 30 + [False] * 70
    gs = synthetic_set(success)
    bal = balance_for_gqn(gs, seed=0)
    assert int(bal.success.sum()) == 30 and int((~bal.success).sum()) == 30
    assert np.all(np.diff(bal.part_id.astype(np.int64)) > 0)
    assert set(bal.part_id[bal.success].tolist()) == set(range(30))
    assert balance_for_gqn(gs, seed=0).equals(bal)
    with pytest.raises(UnbalanceableDataError):
        balance_for_gqn(synthetic_set([True, True]))


def test_select_and_successful_only():
    gs = synthetic_set([True, False, True, False], part_ids=[5, 5, 6, 7])
    assert select_parts(gs, [5, 7]).part_id.tolist() == [5, 5, 7]
    ok = successful_only(gs)
    assert len(ok) == 2 and ok.success.all()
    assert ok.part_id.tolist() == [5, 6]
