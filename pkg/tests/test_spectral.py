import dataclasses

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from starspec import spectral as sp
from starspec.eos import Polytrope
from starspec.equilibrium import profile_query, solve_profile
from starspec.errors import DegenerateError, DomainError

NU = 0.1


@pytest.fixture(scope="module")
def t125(prof125):
    return sp.assemble_eulerian(prof125, NU, NU, 200)


@pytest.fixture(scope="module")
def t15(prof15):
    return sp.assemble_eulerian(prof15, NU, NU, 200)


def quadform(ab, u):
    return float(u @ sp._band_matvec(ab, u))


# ------------------------------------------------------------ assembly


def test_band_round_trip():
    rng = np.random.default_rng(1)
    A = np.diag(rng.standard_normal(6)) + np.diag(np.ones(5), 1) + np.diag(np.ones(5), -1)
    ab = sp.dense_to_band(A)
    np.testing.assert_array_equal(sp.band_to_dense(ab), A)
    x = rng.standard_normal(6)
    np.testing.assert_allclose(sp._band_matvec(ab, x), A @ x, rtol=1e-14)
    np.testing.assert_allclose(sp._solve_band(ab, x), np.linalg.solve(A, x), rtol=1e-10)


@pytest.mark.parametrize("fixture", ["prof125", "prof15", "prof_wd"])
def test_partition_of_unity_gives_total_mass(fixture, request):
    # sum of all hat functions is 1, so 1.M.1 = int rho r^2 dr = M / 4 pi
    p = request.getfixturevalue(fixture)
    Mf = sp.full_mass_matrix(p, 200)
    one = np.ones(Mf.shape[0])
    assert one @ Mf @ one == pytest.approx(p.M / (4 * np.pi), rel=1e-7)


@pytest.mark.parametrize("fixture", ["prof125", "prof15", "prof_wd"])
def test_forms_on_dilation(fixture, request):
    p = request.getfixturevalue(fixture)
    T = sp.assemble_eulerian(p, 0.3, 0.7, 200)
    u = T.grid[1:]  # u = r is represented exactly
    # a pure dilation has no shear, only bulk damping 9 nu2 r^2
    assert quadform(T.Db, u) == pytest.approx(3 * 0.7 * p.R_mu**3, rel=1e-10)
    val = quad(lambda r: profile_query(p, r).rho * r**4, 0, p.R_mu, epsrel=1e-12, limit=200)[0]
    assert quadform(T.Mb, u) == pytest.approx(val, rel=1e-6)


def test_symmetric_and_definite(t125):
    for A in (t125.Mmat, t125.Dmat, t125.Kmat):
        np.testing.assert_array_equal(A, A.T)
    assert sp._cholesky(t125.Mb) is not None
    assert sp._cholesky(t125.Db) is not None
    assert sp._cholesky(t125.Kb) is None  # one negative direction
    assert t125.n == 200 and t125.grid[0] == 0.0


def test_assembly_errors(prof15):
    with pytest.raises(DomainError):
        sp.assemble_eulerian(prof15, 0.0, 0.1, 100)
    with pytest.raises(DomainError):
        sp.assemble_eulerian(prof15, 0.1, 0.1, 8)
    with pytest.raises(DomainError):
        sp.assemble_mass_coord(prof15, 0.1, -1.0, 100)


# ------------------------------------------------------- model problems


def scalar(m, d, k):
    return sp.OperatorTriple.from_dense([[m]], [[d]], [[k]])


def test_scalar_unstable_root():
    # lambda^2 + lambda - 1 = 0
    t = scalar(1.0, 1.0, -1.0)
    golden = (np.sqrt(5.0) - 1.0) / 2.0
    lam, _ = sp.solve_qep(t)
    assert lam[0].real == pytest.approx(golden, rel=1e-12) and lam[0].imag == 0.0
    assert sp.real_unstable_roots(t)[0] == pytest.approx(golden, rel=1e-12)
    assert len(sp.unstable_set(t, lam)) == 1


def test_scalar_stable():
    t = scalar(1.0, 1.0, 1.0)
    lam, _ = sp.solve_qep(t)
    assert np.all(lam.real < 0)
    assert len(sp.real_unstable_roots(t)) == 0


def test_scalar_euler_poisson():
    t = scalar(1.0, 3.0, -4.0)
    np.testing.assert_allclose(sp.euler_poisson_spectrum(t), [2.0], rtol=1e-14)
    lam, _ = sp.solve_qep(t, tau=0.0)
    assert lam[0] == pytest.approx(2.0, rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(0.01, 10.0), st.floats(0.01, 10.0))
def test_scalar_damped_model(m, d, k):
    # m lambda^2 + d lambda - k = 0 has exactly one positive root
    t = scalar(m, d, -k)
    root = (-d + np.sqrt(d * d + 4 * m * k)) / (2 * m)
    assert sp.real_unstable_roots(t)[0] == pytest.approx(root, rel=1e-10)
    # more damping, slower growth
    assert sp.real_unstable_roots(scalar(m, 2 * d, -k))[0] < root


def random_triple(seed, n):
    rng = np.random.default_rng(seed)

    def tri(diag, off):
        return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)

    off = rng.uniform(-0.4, 0.4, n - 1)
    M = tri(1.0 + rng.uniform(0, 1, n), off)  # diagonally dominant
    off = rng.uniform(-0.4, 0.4, n - 1)
    D = tri(1.0 + rng.uniform(0, 1, n), off) * rng.uniform(0.05, 3.0)
    K = tri(rng.uniform(-2, 2, n), rng.uniform(-1, 1, n - 1))
    return M, D, K


def companion_oracle(M, D, K):
    n = M.shape[0]
    Minv = np.linalg.inv(M)
    C = np.block([[np.zeros((n, n)), np.eye(n)], [-Minv @ K, -Minv @ D]])
    return np.linalg.eigvals(C)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 7))
def test_random_qep_matches_companion(seed, n):
    M, D, K = random_triple(seed, n)
    t = sp.OperatorTriple.from_dense(M, D, K)
    lam, V = sp.solve_qep(t)
    ref = companion_oracle(M, D, K)
    assert len(lam) == 2 * n
    for z in ref:
        assert np.min(np.abs(lam - z)) <= 1e-8 * max(1.0, abs(z))
    # eigenvectors satisfy the quadratic problem
    for j in range(2 * n):
        x = V[:, j]
        r = (lam[j] ** 2 * M + lam[j] * D + K) @ x
        assert np.linalg.norm(r) <= 1e-8 * max(1.0, abs(lam[j]) ** 2) * np.linalg.norm(x) * 10
    # with D > 0 every unstable eigenvalue is real and counted by inertia
    n_unstable = int(np.sum(ref.real > 1e-10))
    assert n_unstable == sp.negative_count(K)
    roots = sp.real_unstable_roots(t)
    np.testing.assert_allclose(np.sort(roots), np.sort(ref.real[ref.real > 1e-10]),
                               rtol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 30))
def test_negative_count_matches_eigvalsh(seed, n):
    rng = np.random.default_rng(seed)
    A = np.diag(rng.standard_normal(n))
    if n > 1:
        off = rng.standard_normal(n - 1)
        A += np.diag(off, 1) + np.diag(off, -1)
    assert sp.negative_count(A) == int(np.sum(np.linalg.eigvalsh(A) < 0))


def test_negative_count_singular_pivot():
    # exact zero pivot: the fallback eigensolve decides
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    assert sp.negative_count(A) == 1
    assert sp.negative_count(np.zeros((3, 3))) == 0


def test_two_by_two_band_not_mistaken_for_dense():
    A = np.array([[1.0, 3.0], [3.0, 1.0]])  # eigenvalues 4 and -2
    ab = sp.dense_to_band(A)
    assert sp.negative_count(A) == 1
    assert sp.negative_count(ab, band=True) == 1
    assert sp.negative_count(np.diag([1.0, 2.0]), band=True) == 0


def test_stiff_damping_does_not_create_unstable_roots():
    # a damping entry 1e18 gives an overdamped rate near -1e18 that sits at
    # the noise level of the shift-inverted matrix
    for big in (1e12, 1e18, 1e24):
        t = sp.OperatorTriple.from_dense(np.eye(3), np.diag([1.0, big, 1.0]), np.diag([-1.0, 1.0, 2.0]))
        lam, _ = sp.solve_qep(t, vectors=False)
        uns = sp.unstable_set(t, lam)
        assert len(uns) == 1
        assert uns[0].real == pytest.approx((np.sqrt(5.0) - 1.0) / 2.0, rel=1e-10)
        assert np.all(np.isfinite(lam))


def test_homotopy_homogeneity():
    # tau only rescales D: lambda(tau) for D equals lambda(1) for tau D
    M, D, K = random_triple(7, 5)
    a = sp.solve_qep(sp.OperatorTriple.from_dense(M, D, K), tau=0.5, vectors=False)[0]
    b = sp.solve_qep(sp.OperatorTriple.from_dense(M, 0.5 * D, K), vectors=False)[0]
    np.testing.assert_allclose(np.sort_complex(a), np.sort_complex(b), rtol=1e-9, atol=1e-12)
    with pytest.raises(DomainError):
        sp.solve_qep(sp.OperatorTriple.from_dense(M, D, K), tau=1.5)


# ------------------------------------------------------- stellar spectra


@pytest.mark.parametrize("fixture,expected", [("prof125", 1), ("prof15", 0), ("prof_wd", 0)])
def test_inertia_counts(fixture, expected, request):
    p = request.getfixturevalue(fixture)
    for assemble in (sp.assemble_eulerian, sp.assemble_mass_coord):
        n_minus, margin = sp.inertia_nminus(assemble(p, NU, NU, 200))
        assert n_minus == expected
        assert margin > 1e-3


def test_ker_margin_against_dense(t125):
    sig = sla.eigh(t125.Kmat, t125.Mmat, eigvals_only=True)
    assert sp.inertia_nminus(t125)[1] == pytest.approx(np.min(np.abs(sig)), rel=1e-8)


def test_unstable_eigenvalue_consistency(t125):
    lam, V = sp.solve_qep(t125)
    uns = sp.unstable_set(t125, lam)
    assert len(uns) == 1 and uns[0].imag == 0.0
    root = sp.real_unstable_roots(t125)[0]
    assert uns[0].real == pytest.approx(root, rel=1e-8)
    x = sp.qep_vector(t125, root)
    Q = t125.combine(root * root, root, 1.0)
    assert np.linalg.norm(sp._band_matvec(Q, x)) <= 1e-8 * sp._band_norm(Q) * np.linalg.norm(x)
    # the damped rate lies below the undamped one
    assert root < sp.euler_poisson_spectrum(t125)[0]


def test_unstable_eigenvalue_converges(prof125):
    lams = [sp.real_unstable_roots(sp.assemble_eulerian(prof125, NU, NU, n))[0]
            for n in (100, 200, 400)]
    d1, d2 = lams[1] - lams[0], lams[2] - lams[1]
    assert abs(d2) < abs(d1) / 3  # second order in the cell size
    mass = sp.real_unstable_roots(sp.assemble_mass_coord(prof125, NU, NU, 400))[0]
    assert mass == pytest.approx(lams[-1], rel=0.02)


def test_viscosity_doubling_slows_growth(prof125, t125):
    slow = sp.real_unstable_roots(sp.assemble_eulerian(prof125, 2 * NU, 2 * NU, 200))[0]
    assert slow < sp.real_unstable_roots(t125)[0]


@pytest.mark.parametrize("fixture,expected", [("prof125", 1), ("prof15", 0), ("prof_wd", 0)])
def test_verify_ktc(fixture, expected, request):
    p = request.getfixturevalue(fixture)
    rep = sp.verify_ktc(p, NU, NU, 200)
    assert rep.ktc_verified is True
    assert rep.n_minus == expected == len(rep.unstable_eigenvalues) == len(rep.ep_unstable_eigenvalues)
    assert [c for _, c in rep.homotopy_counts] == [expected] * 5
    d = rep.to_dict()
    assert d["n_minus"] == expected and d["cells"] == 200


def test_degenerate_pencil_is_indeterminate(prof15, t15):
    # shift K by its smallest pencil eigenvalue so that K has a kernel
    sig = sla.eigh(t15.Kmat, t15.Mmat, eigvals_only=True)
    sing = dataclasses.replace(t15, Kb=t15.Kb - sig[0] * t15.Mb)
    rep = sp.verify_ktc(prof15, NU, NU, 200, triple=sing)
    assert rep.ktc_verified == "indeterminate" and rep.degenerate
    with pytest.raises(DegenerateError):
        sp.check_degenerate(sing)
    assert sp.check_degenerate(t15)[0] == 0


# ------------------------------------------------------- linear dynamics


def test_evolve_zero_state_stays_zero(t125):
    z = np.zeros(t125.n)
    s = sp.evolve_linear(t125, z, z, 1.0, 0.1)
    assert np.all(s.energy == 0) and np.all(s.dissipation == 0)


def test_energy_balance_second_order(t15):
    r = t15.grid[1:]
    u0 = np.sin(np.pi * r / r[-1])
    res = []
    for dt in (0.02, 0.01):
        s = sp.evolve_linear(t15, u0, 0 * u0, 2.0, dt)
        res.append(np.max(np.abs(s.residual)) / s.energy[0])
        assert np.all(np.diff(s.energy) <= 1e-12 * s.energy[0])  # stable star: decay
    assert res[0] < 1e-2
    assert 3.0 < res[0] / res[1] < 5.0


def test_evolve_tracks_unstable_mode(t125):
    lam = sp.real_unstable_roots(t125)[0]
    x = sp.qep_vector(t125, lam)
    s = sp.evolve_linear(t125, x, lam * x, 20.0, 0.05, keep_states=True, every=40)
    # the discrete flow follows exp(lam t) up to O(dt^2) in the rate
    amp = np.array([u @ x / (x @ x) for u in s.u])
    np.testing.assert_allclose(amp, np.exp(lam * s.t), rtol=1e-4)


def test_evolve_errors(t15):
    z = np.zeros(t15.n)
    with pytest.raises(DomainError):
        sp.evolve_linear(t15, z, z, 1.0, 0.0)
    with pytest.raises(DomainError):
        sp.evolve_linear(t15, z, z, -1.0, 0.1)
