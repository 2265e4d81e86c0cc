import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinmodel.eos import (DegenerateRangeError, DomainError, ParamEos, ReferenceEos, StateHull,
                           build_param_eos, convex_hull, eos_from_dict, eos_pressure,
                           hull_and_membership, solve_internal_energy)

from conftest import central_fd


def test_reference_examples():
    assert eos_pressure(ReferenceEos("ideal", 1.4), 1.0, 10.0) == pytest.approx(4.0)
    vdw = ReferenceEos("vdw", 1.4, 1e4, 0.1)
    assert vdw.pressure(1e-8, 10.0) == pytest.approx(4.0, rel=1e-6)


@pytest.mark.parametrize("kind", ["vdw", "rk"])
def test_reference_low_density_limit(kind):
    ideal = ReferenceEos("ideal")
    real = ReferenceEos(kind)
    U = np.array([1e3, 2.5e5, 1e6])
    assert np.allclose(real.pressure(1e-8, U), ideal.pressure(1e-8, U), rtol=1e-6, atol=0)


def test_reference_domain_errors():
    with pytest.raises(DomainError):
        ReferenceEos("vdw").pressure(10.0, 1e5)
    with pytest.raises(DomainError):
        ReferenceEos("rk").pressure(1.0, -1.0)
    with pytest.raises(DomainError):
        ReferenceEos("rk").pressure(1.0, 0.0)
    with pytest.raises(ValueError):
        ReferenceEos("ideal", gamma=1.0)
    with pytest.raises(ValueError):
        ReferenceEos("dieterici")


@pytest.mark.parametrize("kind", ["ideal", "vdw", "rk"])
def test_reference_partials_and_inverse(kind, rng):
    eos = ReferenceEos(kind)
    rho = rng.uniform(0.5, 1.5, 10)
    U = rng.uniform(2e5, 3e5, 10)
    p, pr, pu = eos.partials(rho, U)
    h = 1e-7
    assert np.allclose(pr, (eos.pressure(rho * (1 + h), U) - eos.pressure(rho * (1 - h), U)) / (2 * h * rho),
                       rtol=1e-6)
    assert np.allclose(pu, (eos.pressure(rho, U * (1 + h)) - eos.pressure(rho, U * (1 - h))) / (2 * h * U),
                       rtol=1e-6)
    assert np.allclose(eos.internal_energy(rho, p), U, rtol=1e-12)


def test_param_eos_zero_alpha():
    sk = build_param_eos([1.0, 2.0], [5.0, 9.0], 3, 3).with_params(np.append(np.zeros(9), 7.5))
    rho, U = np.array([0.5, 1.5, 3.0]), np.array([1.0, 6.0, 20.0])
    p, _, pu = sk.partials(rho, U)
    assert np.all(p == 7.5) and np.all(pu == 0)


def test_build_param_eos_examples():
    sk = build_param_eos([1.0, 1.5, 2.0], [3.0, 4.0, 5.0], N_rho=4, N_U=2)
    assert np.allclose(sk.rho_centers, [1, 4 / 3, 5 / 3, 2])
    assert sk.sigma_rho == pytest.approx(0.25)
    assert sk.n_params == 4 * 2 + 1 and np.all(sk.alpha == 0) and sk.p0 == 0
    with pytest.raises(DegenerateRangeError):
        build_param_eos([1.0, 2.0], [5.0, 5.0])
    one = build_param_eos([1.0, 2.0], [3.0, 5.0], N_rho=1, N_U=1)
    assert one.rho_centers[0] == pytest.approx(1.5) and one.sigma_rho == pytest.approx(1.0)


def _random_eos(rng, n=4):
    sk = build_param_eos([0.8, 1.2], [2e5, 3e5], n, n)
    return sk.with_params(np.append(rng.uniform(0, 1e5, n * n), rng.uniform(-1e4, 1e4)))


def test_param_eos_partials_match_fd(rng):
    eos = _random_eos(rng)
    rho, U = rng.uniform(0.8, 1.2, 20), rng.uniform(2e5, 3e5, 20)
    p, pr, pu = eos.partials(rho, U)
    hr, hu = 1e-6, 1e-6 * 2.5e5
    assert np.allclose(pr, (eos.pressure(rho + hr, U) - eos.pressure(rho - hr, U)) / (2 * hr), rtol=1e-6)
    assert np.allclose(pu, (eos.pressure(rho, U + hu) - eos.pressure(rho, U - hu)) / (2 * hu), rtol=1e-6)


def test_param_jacobian_matches_fd(rng):
    eos = _random_eos(rng, 3)
    rho, U = rng.uniform(0.8, 1.2, 5), rng.uniform(2e5, 3e5, 5)
    J = eos.param_jacobian(rho, U)
    th = eos.params
    for i in range(rho.size):
        fd = central_fd(lambda t: float(eos.with_params(t).pressure(rho[i], U[i])) if np.all(t[:-1] >= 0)
                        else np.nan, th + 1.0, 1e-2)
        assert np.allclose(J[i], fd, rtol=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.5, 1.5), st.floats(1e5, 4e5))
def test_param_eos_monotone_in_U(seed, rho, U):
    eos = _random_eos(np.random.default_rng(seed))
    assert eos.partials(rho, U)[2] >= 0


def test_param_eos_rejects_negative_alpha():
    sk = build_param_eos([1.0, 2.0], [1.0, 2.0], 2, 2)
    with pytest.raises(ValueError):
        sk.with_params(np.array([-1.0, 0, 0, 0, 0]))


def test_param_eos_serialization_and_inverse(tmp_path, rng):
    eos = _random_eos(rng)
    eos.save(tmp_path / "e.json")
    back = ParamEos.load(tmp_path / "e.json")
    assert np.array_equal(back.params, eos.params)
    assert isinstance(eos_from_dict(eos.to_dict()), ParamEos)
    assert eos_from_dict(ReferenceEos("rk").to_dict()).kind == "rk"
    rho, U = np.array([0.9, 1.1]), np.array([2.2e5, 2.8e5])
    p = eos.pressure(rho, U)
    assert np.allclose(solve_internal_energy(eos, rho, p, np.full(2, 2.5e5)), U, rtol=1e-10)


def test_hull_examples():
    h = hull_and_membership(np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
    assert len(h.vertices) == 3 and not h.degenerate
    assert h.contains(1 / 3, 1 / 3)
    assert h.contains(0.5, 0.5)  # boundary is inclusive
    assert not h.contains(2.0, 2.0)
    seg = StateHull.from_cloud([0.0, 1.0, 2.0], [0.0, 1.0, 2.0])
    assert seg.degenerate and seg.contains(1.5, 1.5) and not seg.contains(1.0, 0.0)


def _brute_force_hull(pts):
    n = len(pts)
    verts = set()
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            a, b = pts[i], pts[j]
            cr = (b[0] - a[0]) * (pts[:, 1] - a[1]) - (b[1] - a[1]) * (pts[:, 0] - a[0])
            if np.all(cr >= 0):
                verts.update([i, j])
    return {tuple(pts[k]) for k in verts}


def test_hull_matches_brute_force(rng):
    pts = rng.uniform(size=(100, 2))
    hull = convex_hull(pts)
    assert {tuple(p) for p in hull} == _brute_force_hull(pts)
    # counter-clockwise orientation
    x, y = hull[:, 0], hull[:, 1]
    assert 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y) > 0
    sh = StateHull.from_cloud(pts[:, 0], pts[:, 1])
    assert np.all(sh.contains(pts[:, 0], pts[:, 1]))
    assert not np.any(sh.contains(np.array([1.5, -0.5]), np.array([0.5, 0.5])))
