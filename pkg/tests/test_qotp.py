import threading

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qkdvault.bits import to_str
from qkdvault.errors import DemoInapplicableError, KeyLengthError, KeyReuseError, WrongKeyError
from qkdvault.qotp import (
    CipherText,
    OtpKey,
    PlainText,
    UnsafeReusableKey,
    decrypt,
    encrypt,
    reuse_attack_demo,
)


def test_worked_example():
    key = OtpKey.fresh("1010")
    c = encrypt(PlainText("1101"), key)
    assert to_str(c.bits) == "0111"
    assert to_str(decrypt(c, key).bits) == "1101"


def test_zero_key_and_self_key():
    m = PlainText("10110011")
    assert encrypt(m, OtpKey.fresh("00000000")).bits.tolist() == m.bits.tolist()
    assert not encrypt(m, OtpKey.fresh(m.bits)).bits.any()


def test_all_four_bit_roundtrips(rng):
    for v in range(16):
        m = PlainText(format(v, "04b"))
        k = OtpKey.fresh(rng.integers(0, 2, 4))
        assert decrypt(encrypt(m, k), k) == m


def test_reuse_refused_and_marked():
    k = OtpKey.fresh("1111")
    assert not k.used
    encrypt(PlainText("0000"), k)
    assert k.used
    with pytest.raises(KeyReuseError):
        encrypt(PlainText("0101"), k)


def test_length_mismatch_does_not_burn_key():
    k = OtpKey.fresh("1111")
    with pytest.raises(KeyLengthError):
        encrypt(PlainText("101"), k)
    assert not k.used
    encrypt(PlainText("1010"), k)


def test_decrypt_errors():
    k = OtpKey.fresh("1010")
    c = encrypt(PlainText("1101"), k)
    with pytest.raises(WrongKeyError):
        decrypt(c, OtpKey.fresh("1010"))
    long_c = CipherText("11110000", k.id)
    with pytest.raises(KeyLengthError):
        decrypt(long_c, k)


def test_reuse_demo_examples():
    k = UnsafeReusableKey(b"\x07" * 16, "0110")
    c1 = encrypt(PlainText("1100"), k)
    c2 = encrypt(PlainText("1010"), k)
    assert to_str(c1.bits) == "1010" and to_str(c2.bits) == "1100"
    assert to_str(reuse_attack_demo(c1, c2)) == "0110"
    k2 = UnsafeReusableKey(b"\x08" * 16, "0110")
    same = encrypt(PlainText("1100"), k2), encrypt(PlainText("1100"), k2)
    assert not reuse_attack_demo(*same).any()


def test_reuse_demo_needs_same_key():
    c1 = encrypt(PlainText("1"), OtpKey.fresh("0"))
    c2 = encrypt(PlainText("1"), OtpKey.fresh("1"))
    with pytest.raises(DemoInapplicableError):
        reuse_attack_demo(c1, c2)


def test_values_are_immutable():
    p = PlainText("101")
    with pytest.raises(ValueError):
        p.bits[0] = 0


def test_file_format():
    k = OtpKey(bytes(range(16)), "1011001110")
    c = encrypt(PlainText("0000011111"), k)
    data = c.to_file_bytes()
    assert data[:5] == b"QOTP1"
    assert data[5:21] == bytes(range(16))
    assert int.from_bytes(data[21:29], "big") == 10
    assert CipherText.from_file_bytes(data) == c
    with pytest.raises(ValueError):
        CipherText.from_file_bytes(b"XXXX" + data[4:])
    with pytest.raises(ValueError):
        CipherText.from_file_bytes(data[:-1])


@given(st.binary(max_size=200))
def test_bytes_roundtrip(payload):
    m = PlainText.from_bytes(payload)
    k = OtpKey.fresh(np.random.default_rng(len(payload)).integers(0, 2, len(m)))
    c = encrypt(m, k)
    assert CipherText.from_file_bytes(c.to_file_bytes()) == c
    assert decrypt(c, k).to_bytes() == payload


def test_concurrent_claim_one_winner():
    for _ in range(200):
        k = OtpKey.fresh("10101010")
        barrier = threading.Barrier(8)
        wins, losses = [], []

        def attempt():
            barrier.wait()
            try:
                wins.append(encrypt(PlainText("11110000"), k))
            except KeyReuseError:
                losses.append(1)

        threads = [threading.Thread(target=attempt) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(wins) == 1 and len(losses) == 7


def test_ciphertext_bit_frequency(rng):
    m = PlainText(rng.integers(0, 2, 32))
    cts = np.array([encrypt(m, OtpKey.fresh(rng.integers(0, 2, 32))).bits for _ in range(10_000)])
    freq = cts.mean(axis=0)
    assert np.all(np.abs(freq - 0.5) <= 0.02)
