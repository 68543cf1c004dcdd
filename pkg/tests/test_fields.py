"""Coefficient library, mollification, and the ellipticity check."""

import numpy as np
import pytest

from kinetic_flow.errors import ValidationError
from kinetic_flow.fields import (
    CoefficientField,
    check_UE,
    library_field,
    mollified,
    smooth_plateau,
    _smooth_step,
)
from kinetic_flow.grids import GridFunction
from kinetic_flow.spaces import lp_norm

LIBRARY = ("free", "constant-sigma-smooth-b", "langevin", "hoelder-drift",
           "anisotropic-sigma")


def drift_grid(field, n=96, box=4.0):
    def fn(X, V):
        return field.drift(0.0, np.stack([X, V], axis=-1))
    return GridFunction.from_callable(fn, box, n, ("x", "v"))


# ---------------------------------------------------------------------------
# plateau cutoff


def test_smooth_step_endpoints_and_scalars():
    assert _smooth_step(-1.0) == 0.0
    assert _smooth_step(0.0) == 0.0
    assert _smooth_step(1.0) == 1.0
    assert _smooth_step(2.0) == 1.0
    xs = np.linspace(-0.5, 1.5, 41)
    arr = _smooth_step(xs)
    # scalar calls agree with the vectorized path elementwise
    assert np.array_equal(arr, np.array([_smooth_step(float(x)) for x in xs]))
    assert np.all(np.diff(arr) >= 0.0)


def test_smooth_plateau_shape():
    r = np.linspace(0.0, 5.0, 101)
    cut = smooth_plateau(r, 2.0, 4.0)
    assert np.all(cut[r <= 2.0] == 1.0)
    assert np.all(cut[r >= 4.0] == 0.0)
    assert np.all((cut >= 0.0) & (cut <= 1.0))
    with pytest.raises(ValidationError):
        smooth_plateau(r, 4.0, 2.0)


# ---------------------------------------------------------------------------
# library


def test_library_membership_and_rejection():
    for name in LIBRARY:
        f = library_field(name, 1)
        assert f.name == name
        assert f.dim == 1
    with pytest.raises(ValidationError):
        library_field("nonexistent", 1)
    with pytest.raises(ValidationError):
        library_field("free", 1, bogus=3.0)


def test_free_field_is_trivial():
    f = library_field("free", 1)
    z = np.random.default_rng(0).normal(size=(17, 2))
    assert np.all(f.drift(0.0, z) == 0.0)
    assert np.array_equal(f.constant_sigma, np.eye(1))
    assert np.allclose(f.generator_a(), 0.5 * np.eye(1))


def test_kappa_scales_drift_linearly():
    z = np.random.default_rng(1).normal(size=(23, 2))
    for name in ("hoelder-drift", "langevin", "constant-sigma-smooth-b"):
        b1 = library_field(name, 1, kappa=1.0).drift(0.0, z)
        b3 = library_field(name, 1, kappa=3.0).drift(0.0, z)
        assert np.allclose(b3, 3.0 * b1, rtol=1e-12)


def test_drift_compact_support():
    for name in ("hoelder-drift", "constant-sigma-smooth-b",
                 "anisotropic-sigma"):
        f = library_field(name, 1)
        far = np.array([[f.support_radius + 1.0, 0.0],
                        [0.0, -(f.support_radius + 2.0)]])
        assert np.all(f.drift(0.0, far) == 0.0)


def test_hoelder_profile_on_axis():
    f = library_field("hoelder-drift", 1)
    # inside the plateau the drift is sign(x) |x|^(2/3)
    x = np.array([0.5, -0.5, 1.0, -1.7])
    z = np.stack([x, np.zeros(4)], axis=-1)
    assert np.allclose(f.drift(0.0, z)[:, 0],
                       np.sign(x) * np.abs(x) ** (2.0 / 3.0), rtol=1e-12)


def test_coefficient_field_validation():
    zero = lambda t, z: np.zeros(np.asarray(z).shape[:-1] + (1,))
    sig = lambda t, z: np.broadcast_to(np.eye(1),
                                       np.asarray(z).shape[:-1] + (1, 1))
    with pytest.raises(ValidationError):
        CoefficientField(0, zero, sig, 1.0)
    with pytest.raises(ValidationError):
        CoefficientField(1, zero, sig, -1.0)
    f = CoefficientField(1, zero, sig, 1.0)
    with pytest.raises(ValidationError):
        f.generator_a()        # non-constant sigma needs a state


# ---------------------------------------------------------------------------
# mollification


def test_mollified_keeps_constant_sigma_exact():
    base = library_field("constant-sigma-smooth-b", 1)
    m = mollified(base, 4)
    z = np.random.default_rng(2).normal(size=(31, 2))
    assert np.all(m.sigma(0.0, z) == np.eye(1))


def test_mollification_commutes_with_translation():
    sig = lambda t, z: np.broadcast_to(np.eye(1),
                                       np.asarray(z).shape[:-1] + (1, 1))

    def sin_drift(t, z):
        z = np.asarray(z, dtype=float)
        return np.sin(z[..., :1] + 0.3 * z[..., 1:])

    tau = np.array([0.4, -0.7])
    base = CoefficientField(1, sin_drift, sig, 50.0, "custom", {}, np.eye(1))
    shifted = CoefficientField(
        1, lambda t, z: sin_drift(t, np.asarray(z) + tau), sig, 50.0,
        "custom", {}, np.eye(1))
    z = np.random.default_rng(3).normal(size=(40, 2))
    lhs = mollified(base, 6).drift(0.0, z + tau)
    rhs = mollified(shifted, 6).drift(0.0, z)
    assert np.abs(lhs - rhs).max() <= 1e-10


def test_drift_gap_nonincreasing_in_n():
    base = library_field("hoelder-drift", 1)
    bg = drift_grid(base)
    gaps = []
    for n in (2, 4, 8, 16):
        mg = drift_grid(mollified(base, n))
        gaps.append(lp_norm(bg.with_values(mg.values - bg.values), 4))
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05 * gaps[0]


def test_sigma_sup_gap_nonincreasing_in_n():
    base = library_field("anisotropic-sigma", 1)
    z = np.random.default_rng(1).uniform(-3, 3, size=(500, 2))
    gaps = [np.abs(mollified(base, n).sigma(0.0, z)
                   - base.sigma(0.0, z)).max() for n in (2, 4, 8, 16)]
    assert all(a >= b - 1e-12 for a, b in zip(gaps, gaps[1:]))


def test_mollified_rejects_bad_level():
    base = library_field("hoelder-drift", 1)
    with pytest.raises(ValidationError):
        mollified(base, 0)


# ---------------------------------------------------------------------------
# uniform ellipticity


def test_check_UE_identity_and_anisotropic():
    assert check_UE(library_field("hoelder-drift", 1), 1.0, slack=1e-9).ok
    ani = library_field("anisotropic-sigma", 1)
    rep = check_UE(ani, 2.0, slack=1e-6)
    assert rep.ok
    # eigenvalues sweep the full [1/2, 2] band, so a tighter constant fails
    assert not check_UE(ani, 1.1).ok
    assert rep.min_singular_value >= 0.5 - 1e-6
    assert rep.max_singular_value <= 2.0 + 1e-6
    with pytest.raises(ValidationError):
        check_UE(ani, 0.5)
