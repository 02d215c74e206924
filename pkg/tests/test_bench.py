import csv
import io
import math

import pytest

from qkdvault.bench import (
    SCHEMAS,
    ExperimentSpec,
    detection_rate,
    mean_ci,
    rate_ci,
    run_experiment,
    trial_seed,
    write_csv,
)


def emit(spec):
    buf = io.StringIO()
    write_csv(run_experiment(spec), spec.kind, buf)
    return buf.getvalue()


def parse(text, kind):
    reader = csv.DictReader(io.StringIO(text))
    assert tuple(reader.fieldnames) == SCHEMAS[kind]
    rows = list(reader)
    for row in rows:
        assert set(row) == set(SCHEMAS[kind]) and all(v != "" for v in row.values())
    return rows


def test_spec_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("nonsense")
    with pytest.raises(ValueError):
        ExperimentSpec("qber_sweep", trials=0)
    with pytest.raises(ValueError):
        ExperimentSpec("qber_sweep", grid={"fraction": []})


def test_trial_seed_is_stable_and_distinct():
    assert trial_seed(1, 0) == trial_seed(1, 0)
    assert len({trial_seed(1, i) for i in range(1000)}) == 1000
    assert trial_seed(1, 0) != trial_seed(2, 0)


def test_ci_helpers():
    m, ci = mean_ci([1.0, 2.0, 3.0])
    assert m == 2.0 and ci == pytest.approx(1.96 * 1.0 / math.sqrt(3))
    assert mean_ci([4.0]) == (4.0, 0.0)
    p, ci = rate_ci(30, 100)
    assert p == 0.3 and ci == pytest.approx(1.96 * math.sqrt(0.21 / 100))


def test_detection_sweep_full_intercept():
    rate, ci = detection_rate(19, 1.0, 10_000, seed=0, photons=400)
    assert 0.985 <= rate <= 1.0
    assert ci >= 0


def test_qber_sweep_zero_fraction():
    rows = parse(emit(ExperimentSpec("qber_sweep", {"fraction": [0.0, 1.0], "flip": [0.0], "photons": [20000]}, 5)), "qber_sweep")
    assert float(rows[0]["mean_qber"]) == 0.0
    assert 0.22 <= float(rows[1]["mean_qber"]) <= 0.28


def test_sifting_yield_band():
    rows = parse(emit(ExperimentSpec("sifting_yield", {"n": [10_000]}, 20)), "sifting_yield")
    assert 0.47 <= float(rows[0]["yield"]) <= 0.53


def test_every_kind_emits_its_schema():
    grids = {
        "detection_sweep": {"sample_size": [5], "fraction": [0.0, 1.0], "photons": [200]},
        "qber_sweep": {"fraction": [0.5], "flip": [0.01], "photons": [2000]},
        "sifting_yield": {"n": [100]},
        "scalability": {"concurrent_users": [2, 4], "photons": [256], "workers": [2]},
        "session_demo": {"photons": [1500], "adversary": ["none", "intercept"], "fraction": [1.0], "flip": [0.0], "loss": [0.0]},
    }
    for kind, grid in grids.items():
        rows = parse(emit(ExperimentSpec(kind, grid, 3, seed=1)), kind)
        assert rows


def test_deterministic_outputs():
    for kind, grid in [
        ("detection_sweep", {"sample_size": [10], "fraction": [0.5], "photons": [300]}),
        ("qber_sweep", {"fraction": [0.3], "flip": [0.02], "photons": [1000]}),
        ("session_demo", {"photons": [1000], "adversary": ["intercept"], "fraction": [0.2], "flip": [0.01], "loss": [0.1]}),
    ]:
        a = emit(ExperimentSpec(kind, grid, 10, seed=5))
        b = emit(ExperimentSpec(kind, grid, 10, seed=5))
        assert a == b


def test_session_demo_row_content():
    rows = parse(emit(ExperimentSpec("session_demo", {"photons": [3000], "adversary": ["none"]}, 2, seed=3)), "session_demo")
    for row in rows:
        assert row["status"] == "Established" and row["adversary"] == "none"
        assert int(row["final_len"]) > 0 and float(row["qber"]) == 0.0
