from fractions import Fraction
from itertools import product

import numpy as np
import pytest

from qkdvault.adversary import (
    InterceptResend,
    MitmImpersonate,
    NoAdversary,
    detection_probability,
    expected_qber,
    from_name,
    tap,
)
from qkdvault.bb84.session import SessionParams, generate_raw, run_session, sift
from qkdvault.bench import trial_seed
from qkdvault.channel import Basis, ChannelConfig, encode

from conftest import three_sigma


def enumerated_error(fraction: Fraction, flip: Fraction) -> Fraction:
    """Sifted-bit error probability by walking every branch of the tree.

    Alice and Bob share basis 0 (sifted). Branches: tapped or not, Eve's
    basis, Eve's outcome, Bob's coin when bases differ, channel flip.
    """
    half = Fraction(1, 2)
    total = Fraction(0)
    alice_bit = 0
    for tapped in (True, False):
        p_tap = fraction if tapped else 1 - fraction
        for eve_basis, eve_coin, bob_coin, flipped in product((0, 1), (0, 1), (0, 1), (True, False)):
            p = p_tap * half * half * half * (flip if flipped else 1 - flip)
            if tapped:
                eve_bit = alice_bit if eve_basis == 0 else eve_coin
                sent_basis, sent_bit = eve_basis, eve_bit
            else:
                sent_basis, sent_bit = 0, alice_bit
            bob = sent_bit if sent_basis == 0 else bob_coin
            if flipped:
                bob ^= 1
            if bob != alice_bit:
                total += p
    return total


def test_tap_none_is_identity(rng):
    photon = encode(1, Basis.DIAGONAL)
    assert tap(photon, NoAdversary(), rng) is photon
    assert not photon.measured


def test_tap_with_matching_eve_basis_is_faithful(rng):
    seen = 0
    for _ in range(2000):
        original = encode(int(rng.integers(0, 2)), Basis(int(rng.integers(0, 2))))
        basis, bit = original.basis, original.bit
        out = tap(original, InterceptResend(1.0), rng)
        assert original.measured
        if out.basis == basis:
            seen += 1
            assert out.bit == bit
    assert seen > 800


def test_fraction_validation():
    with pytest.raises(ValueError):
        InterceptResend(1.2)


def test_from_name():
    assert from_name("none") == NoAdversary()
    assert from_name("intercept", 0.3) == InterceptResend(0.3)
    assert from_name("mitm", authenticated=False) == MitmImpersonate(False)
    with pytest.raises(ValueError):
        from_name("alien")


def test_expected_qber_examples():
    assert expected_qber(NoAdversary(), 0.0) == 0.0
    assert expected_qber(InterceptResend(1.0), 0.0) == 0.25
    assert expected_qber(InterceptResend(0.5), 0.0) == 0.125
    assert expected_qber(MitmImpersonate(), 0.0) == 0.25


@pytest.mark.parametrize("f", ["0", "1/4", "1/2", "3/4", "1"])
@pytest.mark.parametrize("p", ["0", "1/50", "1/10", "1/2"])
def test_expected_qber_matches_case_enumeration(f, p):
    f, p = Fraction(f), Fraction(p)
    assert expected_qber(InterceptResend(float(f)), float(p)) == pytest.approx(float(enumerated_error(f, p)), abs=1e-15)


def test_detection_probability_examples():
    # 1 - (3/4)^19 evaluated exactly with fractions
    assert detection_probability(InterceptResend(1.0), 19) == pytest.approx(0.9957717174147547, abs=1e-15)
    assert detection_probability(InterceptResend(1.0), 19) >= 0.995
    assert detection_probability(InterceptResend(0.7), 0) == 0.0
    assert detection_probability(InterceptResend(0.0), 50) == 0.0
    with pytest.raises(ValueError):
        detection_probability(NoAdversary(), -1)


def _sifted_errors(strategy, flip, seed, need=10_000):
    params = SessionParams(2 * need + 2000, sample_size=0, seed=seed)
    alice, bob, record = generate_raw(params, ChannelConfig(flip, 0.0, seed), strategy)
    a, b, _ = sift(alice, bob, record)
    assert len(a) >= need
    return float(np.mean(a[:need] != b[:need]))


def test_full_intercept_bob_error_rate_in_band():
    assert 0.22 <= _sifted_errors(InterceptResend(1.0), 0.0, 4) <= 0.28


@pytest.mark.parametrize("strategy", [NoAdversary(), InterceptResend(0.25), InterceptResend(0.5), InterceptResend(1.0), MitmImpersonate(False)])
@pytest.mark.parametrize("flip", [0.0, 0.03])
def test_monte_carlo_qber_within_three_sigma(strategy, flip):
    q = expected_qber(strategy, flip)
    rate = _sifted_errors(strategy, flip, 99)
    assert abs(rate - q) <= max(three_sigma(q, 10_000), 1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("fraction", [0.25, 0.5, 1.0])
def test_sample_detection_frequency_matches_law(fraction):
    """Share of sessions whose public sample shows at least one error."""
    strategy = InterceptResend(fraction)
    trials = 10_000
    hits = aborts = 0
    for i in range(trials):
        s = trial_seed(int(fraction * 100), i)
        r = run_session(SessionParams(160, sample_size=19, seed=s), ChannelConfig(seed=s), strategy)
        hits += r.sample_errors > 0
        aborts += not r.established
    law = detection_probability(strategy, 19)
    assert abs(hits / trials - law) <= 0.01
    if fraction == 1.0:
        assert aborts / trials >= law - 0.01
