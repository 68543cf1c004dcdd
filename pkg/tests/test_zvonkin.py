"""Resolvent PDE layer and the drift-removing phase-space transform."""

import numpy as np
import pytest

from kinetic_flow.errors import (
    AccuracyError,
    LambdaTooSmallError,
    ValidationError,
)
from kinetic_flow.fields import library_field, mollified
from kinetic_flow.integrator import BrownianGrid
from kinetic_flow.zvonkin import (
    SpaceTimeField,
    duhamel_resolvent,
    pde_defect,
    picard_solve,
    search_lambda,
    transformed_sde_residual,
    zvonkin_transform,
)


def constant_source(c, n=64, slices=16, horizon=1.0, box=6.0):
    times = np.linspace(0.0, horizon, slices + 1)
    vals = np.full((slices + 1, n, n, 1), float(c))
    return SpaceTimeField(times, vals, box, np.eye(1))


def discrete_resolvent_profile(c, lam, times):
    """Trapezoid-in-s of c e^{lam(t-s)}: the solver's own quadrature,
    derived independently.  Transitions act as the identity on constants."""
    step = times[1] - times[0]
    out = np.empty(times.size)
    for i, t in enumerate(times):
        s = times[i:]
        if s.size == 1:
            out[i] = 0.0
            continue
        w = np.full(s.size, step)
        w[0] = w[-1] = 0.5 * step
        out[i] = c * np.sum(w * np.exp(lam * (t - s)))
    return out


# ---------------------------------------------------------------------------
# resolvent


def test_duhamel_constant_source_closed_form():
    # constants are exactly periodic, so the seam guard is the only
    # obstruction and is deliberately disabled here
    lam = 3.0
    src = constant_source(2.0)
    u = duhamel_resolvent(src, lam, tail_tol=1.0)
    prof = discrete_resolvent_profile(2.0, lam, src.times)
    assert np.abs(u.values[..., 0] - prof[:, None, None]).max() <= 1e-13
    # continuum closed form to quadrature accuracy
    cont = 2.0 * (1.0 - np.exp(-lam * (1.0 - src.times))) / lam
    assert np.abs(u.values[..., 0] - cont[:, None, None]).max() <= 5e-3
    assert np.all(u.values[-1] == 0.0)      # terminal slice


def gaussian_source(n=64, slices=16, box=6.0):
    times = np.linspace(0.0, 1.0, slices + 1)
    ax = np.linspace(-box, box, n, endpoint=False)
    X, V = np.meshgrid(ax, ax, indexing="ij")
    prof = np.exp(-2.0 * (X**2 + V**2))[None, :, :, None]
    vals = prof * np.linspace(1.0, 0.3, slices + 1)[:, None, None, None]
    return SpaceTimeField(times, vals, box, np.eye(1))


def test_duhamel_recursive_matches_direct():
    src = gaussian_source()
    ur = duhamel_resolvent(src, 2.0, tail_tol=1.0)
    ud = duhamel_resolvent(src, 2.0, method="direct", tail_tol=1.0)
    assert np.abs(ur.values - ud.values).max() <= 1e-5


def test_duhamel_linearity_and_lambda_decay():
    src = gaussian_source()
    u1 = duhamel_resolvent(src, 1.0, tail_tol=1.0)
    double = SpaceTimeField(src.times, 2.0 * src.values, src.box_half_width,
                            np.eye(1))
    u2 = duhamel_resolvent(double, 1.0, tail_tol=1.0)
    assert np.abs(u2.values - 2.0 * u1.values).max() <= 1e-12
    u4 = duhamel_resolvent(src, 4.0, tail_tol=1.0)
    assert np.abs(u4.values).max() < np.abs(u1.values).max()


def test_duhamel_seam_guard_rejects_boundary_mass():
    with pytest.raises(AccuracyError):
        duhamel_resolvent(constant_source(2.0), 3.0)


def test_duhamel_validation():
    src = gaussian_source(n=32, slices=4)
    with pytest.raises(ValidationError):
        duhamel_resolvent(src, -1.0)
    with pytest.raises(ValidationError):
        duhamel_resolvent(src, 1.0, horizon=2.0)
    with pytest.raises(ValidationError):
        duhamel_resolvent(src, 1.0, method="simpson")


# ---------------------------------------------------------------------------
# picard fixed point


def test_picard_zero_drift_gives_zero():
    def zero_drift(t, z):
        z = np.asarray(z, dtype=float)
        return np.zeros(z.shape[:-1] + (1,))

    res = picard_solve(zero_drift, 2.0, 1.0, 0.5, box_half_width=6.0,
                       points_per_axis=32, num_slices=8)
    assert np.abs(res.u.values).max() == 0.0


def test_picard_constant_drift_closed_form():
    def const_drift(t, z):
        z = np.asarray(z, dtype=float)
        return np.full(z.shape[:-1] + (1,), 0.7)

    lam = 3.0
    res = picard_solve(const_drift, lam, 1.0, 0.5, box_half_width=6.0,
                       points_per_axis=64, num_slices=16, tail_tol=1.0)
    prof = discrete_resolvent_profile(0.7, lam, res.u.times)
    assert np.abs(res.u.values[..., 0] - prof[:, None, None]).max() <= 1e-13
    # gradient-free source: the first sweep is already the fixed point
    assert res.ratios.size == 0 or max(res.ratios) <= 1e-12


_SEARCH_CACHE = {}


def searched_state():
    """One shared search result for the transform tests below."""
    if "res" not in _SEARCH_CACHE:
        field = mollified(library_field("hoelder-drift", 1), 4)
        res = search_lambda(field.drift, 1.0, 0.5, box_half_width=8.0,
                            points_per_axis=64, num_slices=32)
        _SEARCH_CACHE["res"] = (field, res, zvonkin_transform(res.u, np.eye(1)))
    return _SEARCH_CACHE["res"]


def test_picard_resolvent_sup_bound():
    # ||u||_inf <= ||b||_inf / lam, uniformly in the iteration
    _, res, _ = searched_state()
    b_sup = 4.0 ** (2.0 / 3.0)       # library profile maximum
    assert np.abs(res.u.values).max() <= b_sup / res.u.lam


def test_search_lambda_contraction_and_gradient():
    _, res, transform = searched_state()
    assert max(res.ratios) <= 0.5
    assert transform.gradient_sup <= 0.5
    # searched rate is lam_init times a power of two
    lam = res.u.lam
    assert lam >= 1.0
    assert float(np.round(np.log2(lam))) == np.log2(lam)


def test_search_lambda_unreachable_target():
    field = mollified(library_field("hoelder-drift", 1), 4)
    with pytest.raises(LambdaTooSmallError):
        search_lambda(field.drift, 1.0, 0.5, box_half_width=8.0,
                      points_per_axis=64, num_slices=16,
                      gradient_target=1e-9, max_doublings=2)


# ---------------------------------------------------------------------------
# transform and residual


def test_transform_sandwich_under_gradient_bound():
    _, _, transform = searched_state()
    rng = np.random.default_rng(77)
    ratios = transform.velocity_ratio_sample(rng, 2000)
    assert ratios.min() >= 0.5
    assert ratios.max() <= 1.5


def test_residual_requires_matching_grids():
    field, _, transform = searched_state()
    # 48 steps cannot align with 32 slices over the unit horizon
    bad = BrownianGrid(3, 1.0 / 48, 48, 1)
    with pytest.raises(ValidationError):
        transformed_sde_residual(transform, field, np.zeros(2), bad, 64)


def test_pde_defect_of_constant_solution():
    # for the constant-drift fixed point the source is the constant itself
    # (grad_v u = 0), and the continuum defect cancels exactly; what is
    # left is the O(step^2) mismatch between the trapezoid profile and the
    # centered time derivative
    def const_drift(t, z):
        z = np.asarray(z, dtype=float)
        return np.full(z.shape[:-1] + (1,), 0.7)

    lam, slices = 3.0, 32
    res = picard_solve(const_drift, lam, 1.0, 0.5, box_half_width=6.0,
                       points_per_axis=32, num_slices=slices, tail_tol=1.0)
    source = SpaceTimeField(res.u.times,
                            np.full_like(res.u.values, 0.7),
                            res.u.box_half_width, np.eye(1) * 0.5)
    defect = pde_defect(res.u, source)
    assert np.all(np.isfinite(defect))
    assert np.abs(defect).max() <= 10.0 * lam**2 * 0.7 / slices**2
