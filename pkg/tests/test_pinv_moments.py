import numpy as np
import pytest
from conftest import mgf_direct_mpmath, random_mgf_context
from mpmath import mp
from scipy.integrate import quad

from dmduq.data_model import NoiseModel, RawTrajectory, build_snapshots
from dmduq.errors import (
    ConfigError,
    MomentComputationError,
    QuadratureNotConverged,
    SingularV,
)
from dmduq.pinv_moments import (
    MgfContext,
    PinvMoments,
    QuadratureConfig,
    build_context,
    context_from_parts,
    deterministic_pinv_element,
    first_moment_element,
    mgf_closed_form,
    moment_integrands,
    pinv_moments,
    second_moment_element,
)

# Scalar toys on X = [1, 2]: column t=0 has V=4, mu=1; column t=1 has V=1,
# mu=2.  Frozen expectations computed with scipy.integrate.quad over the
# noise variable x directly:
#   E[x / (V + x^2)]        and        E[x^2 / (V + x^2)^2]
SCALAR_ORACLE = {
    (4.0, 1.0, 0.0001): (0.19999120039360493, 0.039997920470342396),
    (4.0, 1.0, 0.04): (0.19654317978602187, 0.039239610939994916),
    (1.0, 2.0, 0.0001): (0.40000159963514614, 0.16000271963512616),
    (1.0, 2.0, 0.04): (0.40057812363256273, 0.16102483163202014),
}


def scalar_oracle(V: float, mu: float, s2: float) -> tuple[float, float]:
    """Direct 1-D expectations over the noise variable, independent of p2."""
    s = np.sqrt(s2)

    def pdf(x):
        return np.exp(-((x - mu) ** 2) / (2.0 * s2)) / np.sqrt(2.0 * np.pi * s2)

    lo, hi = mu - 14.0 * s, mu + 14.0 * s
    e1 = quad(lambda x: x / (V + x * x) * pdf(x), lo, hi, epsabs=1e-16, epsrel=1e-13, limit=200)[0]
    e2 = quad(
        lambda x: x * x / (V + x * x) ** 2 * pdf(x), lo, hi, epsabs=1e-16, epsrel=1e-13, limit=200
    )[0]
    return e1, e2


def scalar_context(V: float, mu: float, s2: float) -> MgfContext:
    noise = NoiseModel(variances=np.array([s2]))
    return context_from_parts(np.array([[1.0 / V]]), np.array([mu]), noise, k=0)


def snapshots_from_states(states: np.ndarray, extra_column=None):
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if extra_column is None:
        extra_column = np.zeros((states.shape[0], 1))
    samples = np.hstack([states, np.asarray(extra_column, dtype=float).reshape(-1, 1)])
    times = np.arange(samples.shape[1]) * 0.1
    return build_snapshots(RawTrajectory(times=times, samples=samples))


def random_context(rng, n=None):
    return random_mgf_context(rng, n)[0]


class TestBuildContext:
    def test_gram_complement_example(self):
        snaps = snapshots_from_states([[1.0, 2.0, 1.0], [0.0, 1.0, -1.0]])
        noise = NoiseModel(variances=np.array([0.01, 0.01]))
        ctx = build_context(snaps, noise, t=0, k=0)
        # V = [[5, 1], [1, 2]] from the two remaining columns; R by direct
        # 2x2 inversion: (1/9) [[2, -1], [-1, 5]].
        expected_R = np.array([[2.0, -1.0], [-1.0, 5.0]]) / 9.0
        assert np.allclose(ctx.R, expected_R, rtol=1e-10)
        assert np.allclose(ctx.mu, [1.0, 0.0])
        assert np.allclose(ctx.r, expected_R[:, 0], rtol=1e-10)

    def test_rank_deficient_raises_singular(self):
        snaps = snapshots_from_states(2.0 * np.eye(3), extra_column=np.ones(3))
        noise = NoiseModel(variances=np.full(3, 0.01))
        with pytest.raises(SingularV):
            build_context(snaps, noise, t=0, k=0)

    def test_ridge_recovers_singular_case(self):
        snaps = snapshots_from_states(2.0 * np.eye(3), extra_column=np.ones(3))
        noise = NoiseModel(variances=np.full(3, 0.01))
        ctx = build_context(snaps, noise, t=0, k=0, ridge=1e-6)
        assert ctx.R[0, 0] == pytest.approx(1e6, rel=1e-6)
        assert ctx.R[1, 1] == pytest.approx(0.25, rel=1e-5)
        assert ctx.R[2, 2] == pytest.approx(0.25, rel=1e-5)

    def test_b_equals_sigma_inverse_mu(self):
        rng = np.random.default_rng(0)
        snaps = snapshots_from_states(rng.standard_normal((2, 6)))
        noise = NoiseModel(variances=np.array([0.02, 0.09]))
        ctx = build_context(snaps, noise, t=2, k=1)
        assert np.allclose(ctx.b, ctx.mu / noise.variances, rtol=1e-12)

    def test_negative_ridge_rejected(self):
        snaps = snapshots_from_states([[1.0, 2.0, 1.0], [0.0, 1.0, -1.0]])
        noise = NoiseModel(variances=np.array([0.01, 0.01]))
        with pytest.raises(ConfigError):
            build_context(snaps, noise, t=0, k=0, ridge=-1.0)


class TestDeterministicElement:
    def test_scalar_toy(self):
        ctx = scalar_context(4.0, 1.0, 0.04)
        assert deterministic_pinv_element(ctx) == pytest.approx(0.2, rel=1e-12)

    def test_zero_mean(self):
        ctx = scalar_context(4.0, 0.0, 0.04)
        assert deterministic_pinv_element(ctx) == 0.0

    def test_matches_direct_pseudoinverse(self):
        rng = np.random.default_rng(1)
        states = rng.standard_normal((3, 8))
        snaps = snapshots_from_states(states)
        noise = NoiseModel(variances=np.full(3, 0.01))
        pinv = states.T @ np.linalg.inv(states @ states.T)
        for t in range(8):
            for k in range(3):
                ctx = build_context(snaps, noise, t=t, k=k)
                got = deterministic_pinv_element(ctx)
                assert got == pytest.approx(pinv[t, k], rel=1e-10)


class TestShermanMorrison:
    def test_rank_one_update_identity(self):
        # inv(X X.T) equals the downdated form built from V = X X.T - x x.T.
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(n + 1, n + 8))
            X = rng.standard_normal((n, m))
            t = int(rng.integers(0, m))
            x = X[:, t]
            gram_inv = np.linalg.inv(X @ X.T)
            V_inv = np.linalg.inv(X @ X.T - np.outer(x, x))
            update = V_inv - (V_inv @ np.outer(x, x) @ V_inv) / (1.0 + x @ V_inv @ x)
            rel = np.linalg.norm(gram_inv - update) / np.linalg.norm(gram_inv)
            assert rel <= 1e-10


class TestMgfClosedForm:
    def test_scalar_substitution(self):
        noise = NoiseModel(variances=np.array([1.0]))
        ctx = context_from_parts(np.array([[1.0]]), np.array([0.0]), noise, k=0)
        log_mag, sign = mgf_closed_form(ctx, 0.0, 1.0)
        assert sign == 1
        assert np.exp(log_mag) == pytest.approx(np.exp(-1.0) / np.sqrt(3.0), rel=1e-12)

    def test_sign_positive_at_p1_zero(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            ctx = random_context(rng)
            _, sign = mgf_closed_form(ctx, 0.0, float(rng.uniform(0.01, 5.0)))
            assert sign == 1

    def test_matches_direct_formula(self):
        # The stabilized log-domain value must equal the raw definition
        # evaluated by independent arbitrary-precision linear algebra.
        rng = np.random.default_rng(14)
        for _ in range(30):
            ctx, R, mu, noise, k = random_mgf_context(rng)
            p2 = float(rng.uniform(0.05, 4.0))
            direct = float(mgf_direct_mpmath(R, mu, noise.covariance(), k, mp.mpf(0), mp.mpf(p2)))
            log_mag, sign = mgf_closed_form(ctx, 0.0, p2)
            assert sign * np.exp(log_mag) == pytest.approx(direct, rel=1e-12)

    def test_finite_difference_consistency(self):
        # Central differences of the generating function in p1 at 0 must
        # reproduce the integrand factors of both moment integrals within
        # 1e-6 relative.  The oracle evaluates the raw definition in
        # arbitrary precision (float64 black-box differences at step 1e-5
        # have a round-off floor near 1e-4 relative).  The second
        # difference uses the stated step 1e-5; its kernel is strictly
        # positive so the relative bound is well conditioned.  The first
        # difference uses a smaller step because its kernel crosses zero,
        # where relative truncation error of any fixed step diverges; an
        # envelope-scaled floor covers the crossing itself.
        rng = np.random.default_rng(4)
        for _ in range(100):
            ctx, R, mu, noise, k = random_mgf_context(rng)
            p2 = float(rng.uniform(0.05, 4.0))
            cov = noise.covariance()
            with mp.workdps(60):
                d1, d2 = mp.mpf("1e-8"), mp.mpf("1e-5")
                h = lambda p1: mgf_direct_mpmath(R, mu, cov, k, p1, mp.mpf(p2))
                h0 = h(mp.mpf(0))
                fd1 = float((h(d1) - h(-d1)) / (2 * d1))
                fd2 = float((h(d2) - 2 * h0 + h(-d2)) / d2**2)
                envelope = float(h0)
            f1, f2 = moment_integrands(ctx, np.array([p2]))
            assert fd1 == pytest.approx(f1[0], rel=1e-6, abs=1e-12 * envelope)
            assert fd2 == pytest.approx(f2[0] / p2, rel=1e-6)

    def test_float_first_difference_consistency(self):
        # The first derivative is within reach of plain float evaluations
        # away from the kernel's zero crossing.
        rng = np.random.default_rng(15)
        delta = 1e-5
        for _ in range(50):
            ctx = random_context(rng)
            p2 = float(rng.uniform(0.05, 4.0))
            h = lambda p1: np.exp(mgf_closed_form(ctx, p1, p2)[0])
            fd1 = (h(delta) - h(-delta)) / (2.0 * delta)
            f1, _ = moment_integrands(ctx, np.array([p2]))
            assert fd1 == pytest.approx(f1[0], rel=1e-6, abs=1e-9 * h(0.0))


class TestFirstMomentElement:
    def test_zero_mean_gives_zero(self):
        ctx = scalar_context(4.0, 0.0, 0.04)
        assert first_moment_element(ctx) == 0.0

    def test_zero_noise_limit(self):
        ctx = scalar_context(4.0, 1.0, 1e-16)
        assert first_moment_element(ctx) == pytest.approx(0.2, abs=1e-6)

    @pytest.mark.parametrize("key", sorted(SCALAR_ORACLE))
    def test_scalar_oracle(self, key):
        V, mu, s2 = key
        frozen_first, _ = SCALAR_ORACLE[key]
        live_first, _ = scalar_oracle(V, mu, s2)
        assert live_first == pytest.approx(frozen_first, rel=1e-10)
        ctx = scalar_context(V, mu, s2)
        assert first_moment_element(ctx) == pytest.approx(frozen_first, rel=1e-6)

    def test_adaptive_matches_gauss_laguerre(self):
        ctx = scalar_context(4.0, 1.0, 0.04)
        gl = first_moment_element(ctx, QuadratureConfig(method="gauss_laguerre"))
        ad = first_moment_element(ctx, QuadratureConfig(method="adaptive_truncated"))
        assert gl == pytest.approx(ad, rel=1e-9)

    def test_cross_check_passes_at_default_nodes(self):
        ctx = scalar_context(4.0, 1.0, 0.04)
        first_moment_element(ctx, QuadratureConfig(cross_check=True))

    def test_cross_check_catches_coarse_rule(self):
        ctx = scalar_context(4.0, 1.0, 0.04)
        with pytest.raises(QuadratureNotConverged):
            first_moment_element(ctx, QuadratureConfig(node_count=1, cross_check=True))

    def test_monotone_noise_degeneracy(self):
        target = deterministic_pinv_element(scalar_context(4.0, 1.0, 0.04))
        errors = []
        for s2 in (1e-2, 1e-4, 1e-6, 1e-8):
            ctx = scalar_context(4.0, 1.0, s2)
            errors.append(abs(first_moment_element(ctx) - target))
        assert all(a > b for a, b in zip(errors, errors[1:]))
        assert errors[-1] <= 1e-6


class TestSecondMomentElement:
    @pytest.mark.parametrize("key", sorted(SCALAR_ORACLE))
    def test_scalar_oracle(self, key):
        V, mu, s2 = key
        _, frozen_second = SCALAR_ORACLE[key]
        _, live_second = scalar_oracle(V, mu, s2)
        assert live_second == pytest.approx(frozen_second, rel=1e-10)
        ctx = scalar_context(V, mu, s2)
        assert second_moment_element(ctx) == pytest.approx(frozen_second, rel=1e-6)

    def test_zero_noise_limit_squares_first(self):
        ctx = scalar_context(4.0, 1.0, 1e-16)
        assert second_moment_element(ctx) == pytest.approx(0.04, abs=1e-6)

    def test_strictly_positive_at_zero_mean(self):
        ctx = scalar_context(4.0, 0.0, 0.04)
        assert second_moment_element(ctx) > 0.0

    def test_full_covariance_against_mc(self):
        # Non-diagonal SPD noise covariance: moments of the ratio checked
        # against two million correlated draws.
        R = np.linalg.inv(np.array([[5.0, 1.0], [1.0, 2.0]]))
        cov = np.array([[0.02, 0.01], [0.01, 0.03]])
        noise = NoiseModel(variances=np.diag(cov), full_covariance=cov)
        mu = np.array([0.8, -0.4])
        rng = np.random.default_rng(17)
        x = mu + rng.multivariate_normal(np.zeros(2), cov, size=2_000_000)
        den = 1.0 + np.einsum("ij,jk,ik->i", x, R, x)
        for k in range(2):
            ctx = context_from_parts(R, mu, noise, k=k)
            num = x @ R[:, k]
            ratio = num / den
            for order, op in ((1, first_moment_element), (2, second_moment_element)):
                samples = ratio if order == 1 else ratio**2
                se = samples.std(ddof=1) / np.sqrt(samples.size)
                assert op(ctx) == pytest.approx(samples.mean(), abs=3.0 * se)

    def test_zero_mean_matrix_case_against_mc(self):
        # mu = 0, n = 2, Sigma = 0.01 I, R from the worked Gram example;
        # Monte Carlo of (r.k @ x / (1 + x.T R x))^2 with a million draws.
        V = np.array([[5.0, 1.0], [1.0, 2.0]])
        R = np.linalg.inv(V)
        noise = NoiseModel(variances=np.array([0.01, 0.01]))
        ctx = context_from_parts(R, np.zeros(2), noise, k=0)
        value = second_moment_element(ctx)
        rng = np.random.default_rng(5)
        x = 0.1 * rng.standard_normal((1_000_000, 2))
        num = x @ R[:, 0]
        den = 1.0 + np.einsum("ij,jk,ik->i", x, R, x)
        samples = (num / den) ** 2
        se = samples.std(ddof=1) / np.sqrt(samples.size)
        assert value > 0.0
        assert abs(value - samples.mean()) <= 3.0 * se


class TestGaussianIntegralIdentity:
    @pytest.mark.parametrize("dim", [1, 2, 3])
    def test_dense_grid_integration(self, dim):
        # integral exp(-u.T L u + v.T u) du == pi^(n/2) |L|^(-1/2)
        #   exp(v.T L^-1 v / 4); trapezoid on a Gaussian converges fast.
        rng = np.random.default_rng(10 + dim)
        B = rng.standard_normal((dim, dim))
        L = B @ B.T + np.eye(dim)
        v = rng.standard_normal(dim)
        center = 0.5 * np.linalg.solve(L, v)
        width = 8.0 / np.sqrt(np.linalg.eigvalsh(L).min())
        axes = [np.linspace(c - width, c + width, 81) for c in center]
        grids = np.meshgrid(*axes, indexing="ij")
        u = np.stack([g.ravel() for g in grids], axis=1)
        values = np.exp(-np.einsum("ij,jk,ik->i", u, L, u) + u @ v).reshape(grids[0].shape)
        for axis in reversed(range(dim)):
            values = np.trapezoid(values, axes[axis], axis=axis)
        expected = np.pi ** (dim / 2.0) / np.sqrt(np.linalg.det(L)) * np.exp(v @ np.linalg.solve(L, v) / 4.0)
        assert values == pytest.approx(expected, rel=1e-5)


class TestPinvMomentsTable:
    def test_zero_noise_collapse(self):
        rng = np.random.default_rng(6)
        states = rng.standard_normal((2, 9))
        snaps = snapshots_from_states(states)
        noise = NoiseModel(variances=np.full(2, 1e-16))
        table = pinv_moments(snaps, noise)
        pinv = states.T @ np.linalg.inv(states @ states.T)
        assert np.abs(table.first - pinv).max() <= 1e-6
        assert np.abs(table.second_raw - pinv**2).max() <= 1e-6

    def test_jensen_invariant(self):
        rng = np.random.default_rng(7)
        snaps = snapshots_from_states(rng.standard_normal((2, 8)))
        noise = NoiseModel(variances=np.array([0.05, 0.02]))
        table = pinv_moments(snaps, noise)
        assert (table.second_raw - table.first**2).min() >= -1e-12

    def test_jensen_violation_rejected(self):
        with pytest.raises(QuadratureNotConverged):
            PinvMoments(first=np.array([[1.0]]), second_raw=np.array([[0.5]]))

    def test_idempotent(self):
        rng = np.random.default_rng(8)
        snaps = snapshots_from_states(rng.standard_normal((2, 8)))
        noise = NoiseModel(variances=np.array([0.05, 0.02]))
        a = pinv_moments(snaps, noise)
        b = pinv_moments(snaps, noise)
        assert np.array_equal(a.first, b.first)
        assert np.array_equal(a.second_raw, b.second_raw)

    def test_thread_count_invariant(self):
        rng = np.random.default_rng(9)
        snaps = snapshots_from_states(rng.standard_normal((3, 10)))
        noise = NoiseModel(variances=np.full(3, 0.03))
        a = pinv_moments(snaps, noise, threads=1)
        b = pinv_moments(snaps, noise, threads=4)
        assert np.array_equal(a.first, b.first)
        assert np.array_equal(a.second_raw, b.second_raw)

    def test_error_aggregation_with_locations(self):
        snaps = snapshots_from_states(2.0 * np.eye(3), extra_column=np.ones(3))
        noise = NoiseModel(variances=np.full(3, 0.01))
        with pytest.raises(MomentComputationError) as info:
            pinv_moments(snaps, noise)
        failures = info.value.failures
        assert len(failures) == 3  # every column's Gram complement is singular
        assert all(isinstance(err, SingularV) for _, _, err in failures)
        assert [t for t, _, _ in failures] == [0, 1, 2]


class TestQuadratureConfig:
    def test_bad_method(self):
        with pytest.raises(ConfigError):
            QuadratureConfig(method="simpson")

    def test_bad_node_count(self):
        with pytest.raises(ConfigError):
            QuadratureConfig(node_count=0)

    def test_bad_rel_tol(self):
        with pytest.raises(ConfigError):
            QuadratureConfig(rel_tol=0.5)
