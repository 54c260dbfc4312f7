import numpy as np
import pytest

from byzsaga.attacks import AttackSpec, apply


H = np.arange(12.0).reshape(4, 3)


def test_none_and_empty_cohort_pass_through():
    out = apply(AttackSpec("none", (1,)), H)
    assert np.array_equal(out, H) and out is not H
    assert np.array_equal(apply(AttackSpec("sign-flip"), H), H)


def test_sign_flip():
    out = apply(AttackSpec("sign-flip", (2, 3)), H)
    assert np.array_equal(out[:2], H[:2])
    assert np.array_equal(out[2:], -5 * H[2:])


def test_gaussian_moments():
    big = np.zeros((2000, 5))
    out = apply(AttackSpec("gaussian", tuple(range(1000, 2000))), big, np.random.default_rng(0))
    assert np.all(out[:1000] == 0)
    assert out[1000:].std() == pytest.approx(100.0, rel=0.02)
    assert abs(out[1000:].mean()) < 1.0


def test_gaussian_is_seeded():
    spec = AttackSpec("gaussian", (0,))
    a = apply(spec, H, np.random.default_rng(3))
    b = apply(spec, H, np.random.default_rng(3))
    assert np.array_equal(a, b)


def test_sample_duplicate():
    out = apply(AttackSpec("sample-duplicate", (2, 3), target=0), H)
    assert np.array_equal(out[2], H[0]) and np.array_equal(out[3], H[0])
    assert np.array_equal(out[1], H[1])


def test_does_not_mutate_input():
    h = H.copy()
    apply(AttackSpec("sign-flip", (0,)), h)
    assert np.array_equal(h, H)


@pytest.mark.parametrize("kw", [
    dict(kind="flip"),
    dict(kind="sample-duplicate", byzantine=(1,)),
    dict(kind="sample-duplicate", byzantine=(1,), target=1),
    dict(kind="gaussian", byzantine=(0, 0)),
    dict(kind="gaussian", variance=-1),
])
def test_invalid_specs(kw):
    with pytest.raises(ValueError):
        AttackSpec(**kw)


def test_out_of_range_ids():
    with pytest.raises(ValueError):
        apply(AttackSpec("sign-flip", (9,)), H)
