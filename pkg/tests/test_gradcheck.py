"""Central-difference gradient validation: every primitive over >= 20 seeded
trials in float64, plus the tiny end-to-end model. Criterion: max relative
error < 1e-4."""

import time

import numpy as np

from sleepset import gradcheck

TOLERANCE = 1e-4


def test_every_primitive_passes_20_trials():
    start = time.monotonic()
    results = [gradcheck.check_primitive(name, trials=20)
               for name in gradcheck.PRIMITIVE_NAMES]
    elapsed = time.monotonic() - start
    failed = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not failed, f"gradient checks failed: {failed}"
    assert elapsed < 110.0, f"primitive checks too slow: {elapsed:.0f}s"


def test_model_end_to_end_gradients():
    res = gradcheck.check_model_end_to_end(max_coords=12)
    assert res.passed, f"end-to-end gradient error {res.max_rel_error:.2e}"


def test_injected_fault_is_detected():
    res = gradcheck.check_primitive("conv1d", trials=2, corrupt=True)
    assert not res.passed


def test_relative_gap_floors_near_zero():
    assert gradcheck.relative_gap(0.0, 0.0) == 0.0
    assert gradcheck.relative_gap(1e-9, 0.0) < TOLERANCE


def test_check_function_flags_wrong_gradient():
    def build(ts):
        x = ts[0]
        # deliberately mismatched forward/backward via a frozen constant
        return (x * x).sum() + x.sum() * 3.0

    rng = np.random.default_rng(0)
    arr = rng.normal(size=(3,))
    gap = gradcheck.check_function(build, [arr], corrupt=True)
    assert gap > TOLERANCE
