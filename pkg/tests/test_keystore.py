import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qkdvault.bb84.session import SessionParams, run_session
from qkdvault.channel import ChannelConfig
from qkdvault.errors import KeyExhaustedError, PoolCorruptError, WrongKeyError
from qkdvault.keystore import DepositRejectedError, KeyPool, read_audit, replay_audit


class Crash(Exception):
    pass


def bits(n, seed=0):
    return np.random.default_rng(seed).integers(0, 2, n, dtype=np.uint8)


def established(seed=1):
    r = run_session(SessionParams(2000, seed=seed), ChannelConfig(seed=seed))
    assert r.established
    return r


def test_deposit_accounting():
    pool = KeyPool()
    r = established()
    pool.deposit(r)
    assert pool.total_available == r.final_length
    pool.deposit_bits(bits(512))
    pool.deposit_bits(bits(512, 1))
    assert pool.total_available == r.final_length + 1024


def test_deposit_rejects_aborted_and_replayed_sessions():
    pool = KeyPool()
    aborted = run_session(SessionParams(2000, seed=1), ChannelConfig(0.3, 0.0, 1))
    assert not aborted.established
    with pytest.raises(DepositRejectedError):
        pool.deposit(aborted)
    r = established()
    pool.deposit(r)
    with pytest.raises(DepositRejectedError):
        pool.deposit(r)


def test_exhaustion():
    pool = KeyPool()
    pool.deposit_bits(bits(100))
    assert len(pool.consume(100)) == 100
    with pytest.raises(KeyExhaustedError):
        pool.consume(1)


def test_sequential_consumes_disjoint_and_fifo():
    pool = KeyPool()
    material = bits(64, 3)
    pool.deposit_bits(material)
    k1, k2 = pool.consume(32), pool.consume(32)
    assert np.array_equal(k1.bits, material[:32])
    assert np.array_equal(k2.bits, material[32:])
    ranges = [r[:2] for r in pool.segments[0].consumed]
    assert ranges == [(0, 32), (32, 64)]


def test_consume_spans_segments():
    pool = KeyPool()
    a, b = bits(10, 1), bits(10, 2)
    pool.deposit_bits(a)
    pool.deposit_bits(b)
    pool.consume(4)
    k = pool.consume(12)
    assert np.array_equal(k.bits, np.concatenate([a[4:], b[:6]]))
    assert np.array_equal(pool.material(k.id).bits, k.bits)


def test_64_concurrent_consumers():
    pool = KeyPool()
    pool.deposit_bits(bits(1024))
    barrier = threading.Barrier(64)
    keys = []

    def take():
        barrier.wait()
        keys.append(pool.consume(16))

    threads = [threading.Thread(target=take) for _ in range(64)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(keys) == 64 and pool.total_available == 0
    spans = sorted(r[:2] for r in pool.segments[0].consumed)
    covered = np.zeros(1024, int)
    for s, e in spans:
        assert e - s == 16
        covered[s:e] += 1
    assert np.all(covered == 1)
    assert len({k.id for k in keys}) == 64


def test_material_lookup():
    pool = KeyPool()
    pool.deposit_bits(bits(50))
    k = pool.consume(20)
    m = pool.material(k.id)
    assert m.used and np.array_equal(m.bits, k.bits)
    with pytest.raises(WrongKeyError):
        pool.material(b"\x00" * 16)


def test_persist_roundtrip(tmp_path):
    empty = KeyPool()
    assert KeyPool.from_bytes(empty.persist()).total_available == 0
    path = tmp_path / "p.pool"
    pool = KeyPool(path)
    pool.deposit_bits(bits(300))
    pool.deposit_bits(bits(200, 9))
    k = pool.consume(350)
    loaded = KeyPool.load(path)
    assert loaded.to_bytes() == pool.to_bytes()
    assert loaded.total_available == pool.total_available == 150
    assert np.array_equal(loaded.material(k.id).bits, k.bits)
    assert len(loaded.audit) == 4  # two deposits, one consume across two segments


def test_corruption_detected(tmp_path):
    pool = KeyPool()
    pool.deposit_bits(bits(300))
    data = pool.persist()
    with pytest.raises(PoolCorruptError):
        KeyPool.from_bytes(data[:-3])
    flipped = bytearray(data)
    flipped[40] ^= 1
    with pytest.raises(PoolCorruptError):
        KeyPool.from_bytes(bytes(flipped))
    with pytest.raises(PoolCorruptError):
        KeyPool.from_bytes(b"NOTAPOOL" + data[8:])
    with pytest.raises(PoolCorruptError):
        KeyPool.from_bytes(data + b"\x00")


def test_mark_precedes_release(tmp_path):
    path = tmp_path / "crash.pool"
    pool = KeyPool(path)
    pool.deposit_bits(bits(64))

    def crash(stage):
        assert stage == "after_mark"
        # at this point the consumed mark must already be on disk
        on_disk = KeyPool.load(path)
        assert on_disk.total_available == 32
        raise Crash

    pool.fault_hook = crash
    with pytest.raises(Crash):
        pool.consume(32)
    restarted = KeyPool.load(path)
    assert restarted.total_available == 32
    nxt = restarted.consume(32)
    assert np.array_equal(nxt.bits, bits(64)[32:])
    assert replay_audit(read_audit(restarted.audit_path)).clean


def test_audit_log_records(tmp_path):
    pool = KeyPool(tmp_path / "a.pool")
    pool.deposit_bits(bits(10))
    k = pool.consume(4)
    recs = read_audit(pool.audit_path)
    assert [r["op"] for r in recs] == ["deposit", "consume"]
    assert {"ts", "op", "segment_id", "range"} <= set(recs[1])
    assert recs[1]["range"] == [0, 4] and recs[1]["key_id"] == k.id.hex()


def test_replay_flags_overlap():
    recs = [
        {"op": "deposit", "segment_id": "s", "range": [0, 10]},
        {"op": "consume", "segment_id": "s", "range": [0, 6]},
        {"op": "consume", "segment_id": "s", "range": [5, 8]},
        {"op": "consume", "segment_id": "s", "range": [8, 12]},
    ]
    rep = replay_audit(recs)
    assert not rep.clean and rep.overlaps and rep.out_of_bounds


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 200)), max_size=60))
def test_conservation_and_disjointness(ops):
    pool = KeyPool()
    for i, (is_deposit, size) in enumerate(ops):
        if is_deposit:
            pool.deposit_bits(bits(size, i))
        else:
            try:
                pool.consume(size)
            except KeyExhaustedError:
                assert size > pool.total_available
        assert pool.total_deposited == pool.total_consumed + pool.total_available
    rep = replay_audit(pool.audit)
    assert rep.clean
    assert rep.consumed == pool.total_consumed and rep.deposited == pool.total_deposited
