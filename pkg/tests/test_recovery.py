"""Barycenter extraction: grids, MCMC, and the three map routes."""

import io

import numpy as np
import pytest

from cwbary.baselines import DiscreteMeasure, sinkhorn
from cwbary.dual_solver import PotentialSpec
from cwbary.measures import (
    Box,
    Empirical,
    Gaussian,
    SupportMeasure,
    center_inputs,
)
from cwbary.potentials import init_mlp
from cwbary.recovery import (
    BarycenterSampleSet,
    ConditionalMassVanishes,
    DensityGrid,
    MongeFitConfig,
    TransportPlanHandle,
    apportion_counts,
    barycentric_projection,
    barycentric_projection_batch,
    combine_grids,
    fit_monge_net,
    gradient_map,
    gradient_map_batch,
    make_plans,
    marginal_grid,
    mcmc_sample,
    pushforward_barycenter,
    sample_from_grid,
)
from cwbary.regularization import RegularizerSpec

from oracles import integrated_autocorr_ess, semi_relaxed_entropic_potential


# ---------------------------------------------------------------- stubs


class ZeroCost:
    """c == 0; makes H depend on the potentials alone."""

    def __call__(self, x, y):
        return 0.0

    def pairwise_rows(self, X, Y):
        return np.zeros(np.atleast_2d(X).shape[0])

    def cross(self, X, Y):
        return np.zeros((np.atleast_2d(X).shape[0], np.atleast_2d(Y).shape[0]))


class ConstantPotential:
    def __init__(self, c: float, d: int = 1):
        self.c = float(c)
        self.d = d

    def value_batch(self, X):
        return np.full(np.atleast_2d(X).shape[0], self.c)

    def input_gradient_batch(self, X):
        return np.zeros_like(np.atleast_2d(np.asarray(X, dtype=float)))

    def input_gradient(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))


class QuadraticPotential:
    """f(x) = ||x||^2, so the induced map x - grad f / 2 vanishes."""

    def value_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.einsum("ij,ij->i", X, X)

    def input_gradient_batch(self, X):
        return 2.0 * np.atleast_2d(np.asarray(X, dtype=float))

    def input_gradient(self, x):
        return 2.0 * np.asarray(x, dtype=float)


class TablePotential:
    """Nearest-atom lookup for potentials known only on a 1D atom set."""

    def __init__(self, atoms, values):
        self.atoms = np.asarray(atoms, dtype=float).ravel()
        self.values = np.asarray(values, dtype=float)

    def value_batch(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        idx = np.abs(X[:, 0][:, None] - self.atoms[None, :]).argmin(axis=1)
        return self.values[idx]


class TiledSampler:
    """Cycles deterministically through fixed atoms; exact frequencies."""

    has_density = False

    def __init__(self, atoms):
        self.atoms = np.atleast_2d(np.asarray(atoms, dtype=float))
        self.cursor = 0

    @property
    def d(self):
        return self.atoms.shape[1]

    def sample(self, n, rng):
        idx = (self.cursor + np.arange(n)) % self.atoms.shape[0]
        self.cursor = (self.cursor + n) % self.atoms.shape[0]
        return self.atoms[idx]


class FixedPointSupport:
    """Support stub whose every draw is the same point y0."""

    def __init__(self, y0, box: Box):
        self.y0 = np.asarray(y0, dtype=float)
        self.box = box

    @property
    def d(self):
        return self.y0.size

    def sample(self, n, rng):
        return np.tile(self.y0, (n, 1))


ENT = RegularizerSpec(family="entropic", epsilon=1.0)
QUAD = RegularizerSpec(family="quadratic", epsilon=1.0)


def unit_support(d: int, half_width: float = 6.0) -> SupportMeasure:
    return SupportMeasure(
        Box(np.full(d, -half_width), np.full(d, half_width))
    )


def make_handle(f, g, source, support, reg, cost=None, index=0):
    kwargs = {} if cost is None else {"cost": cost}
    return TransportPlanHandle(
        index=index, f=f, g=g, source=source, support=support,
        regularizer=reg, **kwargs,
    )


# ---------------------------------------------------------- plan handle


class TestPlanHandle:
    def test_density_nonnegative_both_families(self):
        rng = np.random.default_rng(0)
        f = init_mlp(2, np.random.default_rng(1))
        g = init_mlp(2, np.random.default_rng(2))
        f.param_arrays()[5][:] = 0.5  # lift values so both signs of t occur
        X = rng.normal(size=(64, 2))
        Y = rng.normal(size=(64, 2))
        for reg in (ENT, QUAD):
            plan = make_handle(f, g, None, unit_support(2), reg)
            assert np.all(plan.density_pairs(X, Y) >= 0.0)
            assert np.all(plan.density_cross(X[:8], Y[:8]) >= 0.0)

    def test_cross_diagonal_matches_pairs(self):
        rng = np.random.default_rng(3)
        f = init_mlp(2, np.random.default_rng(4))
        g = init_mlp(2, np.random.default_rng(5))
        X = rng.normal(size=(10, 2))
        Y = rng.normal(size=(10, 2))
        plan = make_handle(f, g, None, unit_support(2), ENT)
        cross = plan.density_cross(X, Y)
        pairs = plan.density_pairs(X, Y)
        assert np.allclose(np.diag(cross), pairs, rtol=1e-12, atol=0.0)

    def test_log_density_consistent_with_density(self):
        rng = np.random.default_rng(6)
        f = init_mlp(1, np.random.default_rng(7))
        g = init_mlp(1, np.random.default_rng(8))
        X = rng.normal(size=(50, 1))
        Y = rng.normal(size=(50, 1))
        for reg in (ENT, QUAD):
            plan = make_handle(f, g, None, unit_support(1), reg)
            h = plan.density_pairs(X, Y)
            log_h = plan.log_density_pairs(X, Y)
            with np.errstate(divide="ignore"):
                expected = np.where(h > 0, np.log(np.maximum(h, 1e-300)), -np.inf)
            finite = np.isfinite(expected)
            assert np.allclose(log_h[finite], expected[finite], rtol=1e-10)
            assert np.all(log_h[~finite] == -np.inf)

    def test_quadratic_log_density_minus_inf_where_t_nonpositive(self):
        f = ConstantPotential(0.0)
        g = ConstantPotential(0.0)
        plan = make_handle(f, g, None, unit_support(1), QUAD)
        X = np.array([[0.0], [1.0]])
        Y = np.array([[2.0], [3.0]])  # t = -c < 0 at both pairs
        assert np.all(plan.log_density_pairs(X, Y) == -np.inf)
        assert np.all(plan.density_pairs(X, Y) == 0.0)


# --------------------------------------------------------- density grid


class TestDensityGrid:
    def test_normalize_integrates_to_one(self):
        rng = np.random.default_rng(9)
        box = Box(np.array([-1.0, 0.0]), np.array([3.0, 2.0]))
        grid = DensityGrid(box, (8, 5), rng.uniform(0.1, 2.0, size=(8, 5)))
        normed = grid.normalize()
        assert normed.normalized and not normed.degenerate
        total = normed.values.sum() * normed.cell_volume
        assert abs(total - 1.0) <= 1e-6

    def test_all_zero_grid_flagged_degenerate(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        grid = DensityGrid(box, (4,), np.zeros(4)).normalize()
        assert grid.degenerate and not grid.normalized

    def test_nodes_are_cell_centers(self):
        box = Box(np.array([0.0, -1.0]), np.array([1.0, 1.0]))
        grid = DensityGrid(box, (2, 4), np.ones((2, 4)))
        assert np.allclose(grid.axis_nodes(0), [0.25, 0.75])
        assert np.allclose(grid.axis_nodes(1), [-0.75, -0.25, 0.25, 0.75])
        nodes = grid.nodes()
        assert nodes.shape == (8, 2)
        assert np.allclose(nodes[0], [0.25, -0.75])
        assert np.allclose(nodes[-1], [0.75, 0.75])

    def test_validation(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        with pytest.raises(ValueError, match="shape"):
            DensityGrid(box, (3,), np.ones(4))
        with pytest.raises(ValueError, match="nonnegative"):
            DensityGrid(box, (2,), np.array([1.0, -0.5]))

    def test_sample_from_grid_respects_cells(self):
        box = Box(np.array([0.0]), np.array([4.0]))
        values = np.array([0.0, 1.0, 0.0, 3.0])
        grid = DensityGrid(box, (4,), values).normalize()
        pts = sample_from_grid(grid, 2000, np.random.default_rng(10))
        assert pts.shape == (2000, 1)
        in_second = (pts[:, 0] >= 1.0) & (pts[:, 0] < 2.0)
        in_fourth = pts[:, 0] >= 3.0
        assert np.all(in_second | in_fourth)
        # cell probabilities 1/4 and 3/4
        frac = in_fourth.mean()
        assert abs(frac - 0.75) < 4.0 * np.sqrt(0.75 * 0.25 / 2000)

    def test_sample_from_degenerate_grid_rejected(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        grid = DensityGrid(box, (4,), np.zeros(4))
        with pytest.raises(ValueError, match="degenerate"):
            sample_from_grid(grid, 10, np.random.default_rng(0))

    def test_csv_round_trip_exact(self):
        rng = np.random.default_rng(11)
        box = Box(np.array([-0.3, 0.7]), np.array([1.9, 2.2]))
        grid = DensityGrid(box, (3, 7), rng.uniform(size=(3, 7))).normalize()
        buf = io.StringIO()
        grid.to_csv(buf, comment="dims 2")
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# dims 2"
        header = dict(
            line.split(",", 1) for line in lines[1:6]
        )
        assert [float(v) for v in header["lo"].split(",")] == [-0.3, 0.7]
        assert [float(v) for v in header["hi"].split(",")] == [1.9, 2.2]
        assert header["resolution"] == "3,7"
        assert header["normalized"] == "1"
        assert header["degenerate"] == "0"
        assert lines[6] == "values"
        flat = np.array(
            [float(v) for line in lines[7:] for v in line.split(",")]
        )
        assert np.array_equal(flat.reshape(3, 7), grid.values)


# ------------------------------------------------------------ grid route


class TestMarginalGrid:
    def test_flat_density_gives_uniform_grid(self):
        # H == 1 everywhere: entropic family, zero potentials, zero cost.
        support = unit_support(2, half_width=1.0)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            TiledSampler(np.array([[0.3, -0.2], [-0.5, 0.1]])),
            support, ENT, cost=ZeroCost(),
        )
        box = Box(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        grid = marginal_grid(plan, 64, box, (4, 4), np.random.default_rng(0))
        assert grid.normalized
        assert np.allclose(grid.values, 0.25, rtol=1e-12)

    def test_zero_density_flagged_degenerate(self):
        # Quadratic family with zero potentials: t = -c <= 0, H == 0.
        support = unit_support(1)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            TiledSampler(np.array([[2.0], [3.0]])), support, QUAD,
        )
        box = Box(np.array([-1.0]), np.array([1.0]))
        grid = marginal_grid(plan, 32, box, (8,), np.random.default_rng(0))
        assert grid.degenerate and not grid.normalized

    def test_grid_box_must_lie_inside_support(self):
        support = unit_support(1, half_width=1.0)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            TiledSampler(np.array([[0.0]])), support, ENT,
        )
        with pytest.raises(ValueError, match="inside the support"):
            marginal_grid(
                plan, 8, Box(np.array([-2.0]), np.array([1.0])), (4,),
                np.random.default_rng(0),
            )
        with pytest.raises(ValueError, match=">= 1"):
            marginal_grid(
                plan, 0, Box(np.array([-1.0]), np.array([1.0])), (4,),
                np.random.default_rng(0),
            )

    def test_single_input_grid_matches_sinkhorn_columns(self):
        # Five unit-spaced atoms; resolution 5 puts one node on each atom.
        atoms = np.arange(5.0)[:, None]
        eps = 1.0
        eta_w = np.full(5, 0.2)
        f_star = semi_relaxed_entropic_potential(atoms, atoms, eta_w, eps)
        cost = np.sum((atoms[:, None, :] - atoms[None, :, :]) ** 2, axis=2)
        # Optimal output marginal of the one-input problem.
        nu_star = (
            0.2 * eta_w[None, :] * np.exp((f_star[:, None] - cost) / eps)
        ).sum(axis=0)

        box = Box(np.array([-0.5]), np.array([4.5]))
        plan = make_handle(
            TablePotential(atoms, f_star), ConstantPotential(0.0),
            TiledSampler(atoms), SupportMeasure(box),
            RegularizerSpec(family="entropic", epsilon=eps),
        )
        grid = marginal_grid(plan, 5000, box, (5,), np.random.default_rng(0))
        assert np.allclose(grid.axis_nodes(0), atoms[:, 0])

        mu = DiscreteMeasure.uniform(atoms)
        nu = DiscreteMeasure(atoms, nu_star)
        res = sinkhorn(mu, nu, cost, RegularizerSpec(family="entropic", epsilon=eps))
        col_sums = res.plan.sum(axis=0)
        # Cell volume is 1, so normalized grid values are the cell masses.
        assert np.max(np.abs(grid.values - col_sums)) <= 1e-3

    def test_combine_grids_weighted_average(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        a = DensityGrid(box, (2,), np.array([3.0, 1.0])).normalize()
        b = DensityGrid(box, (2,), np.array([1.0, 3.0])).normalize()
        combined = combine_grids([a, b], [0.5, 0.5])
        assert np.allclose(combined.values, [1.0, 1.0])
        skewed = combine_grids([a, b], [1.0, 0.0])
        assert np.allclose(skewed.values, a.values)

    def test_combine_grids_rejects_mismatch_and_degenerate(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        other = Box(np.array([0.0]), np.array([2.0]))
        a = DensityGrid(box, (2,), np.array([3.0, 1.0])).normalize()
        b = DensityGrid(other, (2,), np.array([1.0, 3.0])).normalize()
        with pytest.raises(ValueError, match="share box"):
            combine_grids([a, b], [0.5, 0.5])
        dead = DensityGrid(box, (2,), np.zeros(2))
        with pytest.raises(ValueError, match="degenerate"):
            combine_grids([a, dead], [0.5, 0.5])


# ------------------------------------------------------------------ mcmc


class TestMcmc:
    def test_gaussian_target_mean_within_mc_error(self):
        # Zero cost and g(y) = -eps ||y||^2 / 2 make log H = -||y||^2 / 2,
        # so the y-marginal of the chain is a standard normal in 2D.
        support = unit_support(2)

        class NegHalfSq:
            def value_batch(self, Y):
                Y = np.atleast_2d(np.asarray(Y, dtype=float))
                return -0.5 * np.einsum("ij,ij->i", Y, Y)

        plan = make_handle(
            ConstantPotential(0.0), NegHalfSq(),
            Gaussian(np.zeros(2), np.eye(2)), support, ENT, cost=ZeroCost(),
        )
        n_chains = 16
        out = mcmc_sample(
            plan, 4000, proposal_sigma=0.8, burn_in=1500,
            rng=np.random.default_rng(12), thin=5, n_chains=n_chains,
        )
        assert out.points.shape == (4000, 2)
        assert out.method == "mcmc"
        assert np.all(out.source_index == 0)
        assert 0.05 <= out.acceptance_rate <= 0.95
        for k in range(2):
            ess = sum(
                integrated_autocorr_ess(out.points[c::n_chains, k])
                for c in range(n_chains)
            )
            bound = 4.0 / np.sqrt(ess)
            assert abs(out.points[:, k].mean()) <= bound

    def test_vanishing_proposal_accepts_everything(self):
        support = unit_support(1, half_width=2.0)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            Gaussian(np.zeros(1), np.eye(1)), support, ENT, cost=ZeroCost(),
        )
        with pytest.warns(UserWarning, match="acceptance rate"):
            out = mcmc_sample(
                plan, 100, proposal_sigma=1e-8, burn_in=50,
                rng=np.random.default_rng(1), thin=1,
            )
        assert out.acceptance_rate > 0.99

    def test_empirical_source_rejected(self):
        support = unit_support(1)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            Empirical(np.zeros((4, 1))), support, ENT,
        )
        with pytest.raises(ValueError, match="density"):
            mcmc_sample(plan, 10, rng=np.random.default_rng(0))

    def test_zero_mass_plan_rejected(self):
        # Quadratic family with zero potentials: H == 0 everywhere.
        support = unit_support(1)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            Gaussian(np.zeros(1), np.eye(1)), support, QUAD,
        )
        with pytest.raises(ValueError, match="no mass"):
            mcmc_sample(plan, 10, rng=np.random.default_rng(0))


# -------------------------------------------------- barycentric projection


class TestBarycentricProjection:
    def test_flat_conditional_returns_mean_of_draws(self):
        # H constant in y: T(x) must equal the plain average of the draws.
        support = unit_support(2, half_width=1.0)
        plan = make_handle(
            ConstantPotential(0.7, d=2), ConstantPotential(0.0, d=2),
            None, support, ENT, cost=ZeroCost(),
        )
        x = np.array([0.1, -0.3])
        out = barycentric_projection(plan, x, 500, np.random.default_rng(21))
        expected = support.sample(500, np.random.default_rng(21)).mean(axis=0)
        assert np.allclose(out, expected, rtol=1e-12)

    def test_constant_support_returns_that_point(self):
        y0 = np.array([0.4, -0.2])
        box = Box(np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
        plan = make_handle(
            ConstantPotential(0.0, d=2), ConstantPotential(0.0, d=2),
            None, FixedPointSupport(y0, box), ENT,
        )
        out = barycentric_projection(
            plan, np.array([0.0, 0.0]), 64, np.random.default_rng(0)
        )
        assert np.allclose(out, y0, rtol=0.0, atol=1e-15)

    def test_batch_matches_single_with_shared_draws(self):
        y0 = np.array([0.4])
        box = Box(np.array([-1.0]), np.array([1.0]))
        plan = make_handle(
            ConstantPotential(0.3), ConstantPotential(0.0),
            None, FixedPointSupport(y0, box), ENT,
        )
        X = np.linspace(-0.5, 0.5, 7)[:, None]
        batch, kept = barycentric_projection_batch(
            plan, X, 32, np.random.default_rng(0)
        )
        assert np.all(kept)
        singles = np.stack([
            barycentric_projection(plan, x, 32, np.random.default_rng(0))
            for x in X
        ])
        # same draws, same weights; only BLAS kernel rounding may differ
        assert np.allclose(batch, singles, rtol=1e-14, atol=0.0)

    def test_vanishing_mass_raises_and_batch_drops(self):
        support = unit_support(1)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            None, support, QUAD,
        )
        with pytest.raises(ConditionalMassVanishes):
            barycentric_projection(
                plan, np.array([0.0]), 16, np.random.default_rng(0)
            )
        pts, kept = barycentric_projection_batch(
            plan, np.zeros((3, 1)), 16, np.random.default_rng(0)
        )
        assert pts.shape == (0, 1)
        assert not np.any(kept)

    def test_sample_count_validated(self):
        support = unit_support(1)
        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            None, support, ENT,
        )
        with pytest.raises(ValueError, match=">= 1"):
            barycentric_projection(
                plan, np.array([0.0]), 0, np.random.default_rng(0)
            )


# ---------------------------------------------------------- gradient map


class TestGradientMap:
    def test_zero_potential_gives_identity(self):
        support = unit_support(2)
        plan = make_handle(
            ConstantPotential(0.0, d=2), ConstantPotential(0.0, d=2),
            None, support, ENT,
        )
        X = np.random.default_rng(2).normal(size=(16, 2))
        assert np.array_equal(gradient_map_batch(plan, X), X)
        x = np.array([0.3, -0.7])
        assert np.array_equal(gradient_map(plan, x), x)

    def test_squared_norm_potential_maps_to_zero(self):
        support = unit_support(3)
        plan = make_handle(
            QuadraticPotential(), ConstantPotential(0.0, d=3),
            None, support, ENT,
        )
        X = np.random.default_rng(3).normal(size=(16, 3))
        assert np.allclose(gradient_map_batch(plan, X), 0.0, atol=1e-15)
        assert np.allclose(
            gradient_map(plan, np.array([1.0, -2.0, 0.5])), 0.0, atol=1e-15
        )

    def test_batch_matches_single(self):
        f = init_mlp(2, np.random.default_rng(30))
        f.param_arrays()[4][:] = np.random.default_rng(31).normal(
            size=f.param_arrays()[4].shape
        )
        support = unit_support(2)
        plan = make_handle(
            f, ConstantPotential(0.0, d=2), None, support, ENT,
        )
        X = np.random.default_rng(32).normal(size=(5, 2))
        batch = gradient_map_batch(plan, X)
        singles = np.stack([gradient_map(plan, x) for x in X])
        assert np.allclose(batch, singles, rtol=1e-14, atol=0.0)


# ------------------------------------------------------------- monge fit


class TestMongeFit:
    def test_zero_steps_returns_initialized_net(self):
        support = unit_support(2, half_width=1.0)

        class UniformSource:
            has_density = True

            def sample(self, n, rng):
                return rng.uniform(-1.0, 1.0, size=(n, 2))

        plan = make_handle(
            ConstantPotential(0.0, d=2), ConstantPotential(0.0, d=2),
            UniformSource(), support, ENT,
        )
        spec = PotentialSpec(kind="mlp")
        cfg = MongeFitConfig(total_steps=0, seed=77)
        net = fit_monge_net(plan, spec, cfg)
        seeds = np.random.SeedSequence(77).spawn(2)
        fresh = spec.build(2, np.random.default_rng(seeds[0]), out=2)
        assert net.out == 2
        for got, want in zip(net.param_arrays(), fresh.param_arrays()):
            assert np.array_equal(got, want)

    def test_near_identity_plan_learns_identity_map(self):
        # mu = eta = uniform box, small entropic eps: H concentrates on
        # y ~ x, so the fitted map should be close to the identity.
        box = Box(np.array([-1.0]), np.array([1.0]))
        support = SupportMeasure(box)

        class BoxSource:
            has_density = True

            def sample(self, n, rng):
                return rng.uniform(-1.0, 1.0, size=(n, 1))

        plan = make_handle(
            ConstantPotential(0.0), ConstantPotential(0.0),
            BoxSource(), support,
            RegularizerSpec(family="entropic", epsilon=0.02),
        )
        cfg = MongeFitConfig(
            batch_size=512, total_steps=1500, learning_rate=3e-3, seed=5
        )
        net = fit_monge_net(plan, PotentialSpec(kind="mlp"), cfg)
        X = np.random.default_rng(6).uniform(-1.0, 1.0, size=(4000, 1))
        TX = np.asarray(net.value_batch(X)).reshape(-1, 1)
        mse = float(np.mean((TX - X) ** 2))
        assert mse <= 0.01 * (1.0 / 3.0)  # 1% of Var(uniform[-1, 1])

    def test_non_finite_loss_aborts(self):
        support = unit_support(1)

        class BadPlan:
            def __init__(self):
                self.support = support
                self.source = Gaussian(np.zeros(1), np.eye(1))

            def density_pairs(self, X, Y):
                return np.full(np.atleast_2d(X).shape[0], np.inf)

        cfg = MongeFitConfig(batch_size=8, total_steps=3, seed=0)
        with pytest.raises(RuntimeError, match="non-finite"):
            fit_monge_net(BadPlan(), PotentialSpec(kind="mlp"), cfg)


# -------------------------------------------------- pushforward mixing


class SymmetricPairSource:
    """Samples tile (+a, -a): empirical means vanish exactly."""

    has_density = False

    def __init__(self, a):
        self.a = np.asarray(a, dtype=float)

    @property
    def d(self):
        return self.a.size

    def sample(self, n, rng):
        out = np.tile(self.a, (n, 1))
        out[1::2] *= -1.0
        return out


class TrivialCentering:
    def __init__(self, d):
        self.barycenter_mean = np.zeros(d)


class TestApportion:
    def test_exact_split(self):
        assert np.array_equal(apportion_counts([0.5, 0.5], 10), [5, 5])
        assert np.array_equal(apportion_counts([0.25, 0.75], 8), [2, 6])

    def test_largest_remainder_rounding(self):
        counts = apportion_counts([0.5, 0.5], 7)
        assert counts.sum() == 7
        assert set(counts) == {3, 4}

    def test_random_weights_property(self):
        rng = np.random.default_rng(40)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            w = rng.uniform(0.1, 1.0, size=n)
            w = w / w.sum()
            total = int(rng.integers(1, 500))
            counts = apportion_counts(w, total)
            assert counts.sum() == total
            assert np.all(counts >= 0)
            # each count within one point of the exact share
            assert np.all(np.abs(counts - w * total) < 1.0)


class TestPushforward:
    def test_identity_map_single_input_reproduces_source(self):
        src = SymmetricPairSource(np.array([1.0, 2.0]))
        out = pushforward_barycenter(
            [lambda X: X], [src], np.array([1.0]), TrivialCentering(2),
            n_total=10, rng=np.random.default_rng(0), method="gradmap",
        )
        # the mean-shift estimate vanishes exactly on the symmetric tile
        assert out.points.shape == (10, 2)
        assert np.array_equal(np.abs(out.points), np.tile([1.0, 2.0], (10, 1)))
        assert np.all(out.source_index == 0)
        assert out.method == "gradmap"

    def test_translated_copies_mean_is_midpoint(self):
        rng = np.random.default_rng(41)
        m1, m2 = np.array([2.0, 0.0]), np.array([0.0, 4.0])
        sources = [Gaussian(m1, np.eye(2)), Gaussian(m2, np.eye(2))]
        weights = np.array([0.5, 0.5])
        centered, record = center_inputs(sources, weights)
        assert np.allclose(record.barycenter_mean, (m1 + m2) / 2.0)
        out = pushforward_barycenter(
            [lambda X: X, lambda X: X], centered, weights, record,
            n_total=20000, rng=rng, method="gradmap",
        )
        # MC error of the mean: sigma/sqrt(n) per coordinate, 4 sigma slack
        tol = 4.0 / np.sqrt(20000)
        assert np.all(np.abs(out.points.mean(axis=0) - (m1 + m2) / 2.0) <= tol)

    def test_two_gaussian_maps_give_barycenter_std(self):
        # Analytic optimal maps: x -> 1.5x from N(0,1), x -> 0.75x from
        # N(0,4); the mixture of pushforwards is exactly N(0, 2.25).
        rng = np.random.default_rng(42)
        sources = [
            Gaussian(np.zeros(1), np.eye(1)),
            Gaussian(np.zeros(1), 4.0 * np.eye(1)),
        ]
        weights = np.array([0.5, 0.5])
        centered, record = center_inputs(sources, weights)
        out = pushforward_barycenter(
            [lambda X: 1.5 * X, lambda X: 0.75 * X], centered, weights,
            record, n_total=20000, rng=rng, method="gradmap",
        )
        std = float(np.std(out.points[:, 0]))
        assert abs(std - 1.5) / 1.5 <= 0.05
        assert abs(float(np.mean(out.points[:, 0]))) <= 4.0 * 1.5 / np.sqrt(20000)

    def test_provenance_fractions_match_weights(self):
        weights = np.array([0.2, 0.3, 0.5])
        sources = [SymmetricPairSource(np.array([float(i + 1)])) for i in range(3)]
        out = pushforward_barycenter(
            [lambda X: X] * 3, sources, weights, TrivialCentering(1),
            n_total=997, rng=np.random.default_rng(43), method="gradmap",
        )
        for i, w in enumerate(weights):
            frac = float(np.mean(out.source_index == i))
            assert abs(frac - w) <= 1.0 / 997

    def test_dropping_maps_supported(self):
        # bproj-style callables return (points, kept_mask)
        src = SymmetricPairSource(np.array([1.0]))

        def dropping(X):
            keep = np.arange(X.shape[0]) % 2 == 0
            return X[keep], keep

        out = pushforward_barycenter(
            [dropping], [src], np.array([1.0]), TrivialCentering(1),
            n_total=10, rng=np.random.default_rng(44), method="bproj",
        )
        assert out.points.shape == (5, 1)
        assert np.all(out.source_index == 0)

    def test_recentering_idempotent(self):
        # After one correction the output mean already sits on the target;
        # correcting the produced cloud again must not move it.
        src = SymmetricPairSource(np.array([1.0, -3.0]))
        out = pushforward_barycenter(
            [lambda X: 2.0 * X + 5.0], [src], np.array([1.0]),
            TrivialCentering(2), n_total=64,
            rng=np.random.default_rng(45), method="gradmap",
        )
        mean = out.points.mean(axis=0)
        assert np.allclose(mean, 0.0, atol=1e-12)
        again = out.points - mean + TrivialCentering(2).barycenter_mean
        assert np.allclose(again, out.points, atol=1e-12)


class TestSampleSet:
    def test_validation(self):
        with pytest.raises(ValueError, match="finite"):
            BarycenterSampleSet(
                np.array([[np.inf]]), "gradmap", np.array([0])
            )
        with pytest.raises(ValueError, match="one source index"):
            BarycenterSampleSet(
                np.zeros((3, 1)), "gradmap", np.array([0, 1])
            )

    def test_csv_round_trip(self):
        pts = np.array([[0.1234567890123, -2.0], [1.5, 3.25]])
        ss = BarycenterSampleSet(pts, "bproj", np.array([0, 1]))
        buf = io.StringIO()
        ss.to_csv(buf, comment="trial 0")
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# trial 0"
        assert lines[1] == "x0,x1,method,source_index"
        row = lines[2].split(",")
        assert float(row[0]) == pts[0, 0] and float(row[1]) == pts[0, 1]
        assert row[2] == "bproj" and row[3] == "0"
        assert lines[3].split(",")[3] == "1"

    def test_make_plans_indexing(self):
        support = unit_support(1)
        fs = [ConstantPotential(0.0), ConstantPotential(1.0)]
        gs = [ConstantPotential(2.0), ConstantPotential(3.0)]
        srcs = [None, None]
        plans = make_plans(fs, gs, srcs, support, ENT)
        assert [p.index for p in plans] == [0, 1]
        assert plans[1].f is fs[1] and plans[1].g is gs[1]


class TestTrainedPairMaps:
    """Map-shape checks on the trained N(0,1)/N(0,4) barycenter solve.

    The optimal maps onto the N(0,2.25) barycenter are 1.5x and 0.75x;
    every map-based method should land within 10% at probes covering
    two standard deviations of each input.
    """

    def probes(self, sigma):
        return np.array([-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]) * sigma

    def test_gradient_map_matches_slopes(self, trained_1d_pair):
        pair = trained_1d_pair
        for i, slope in enumerate(pair.map_slopes):
            x = self.probes(1.0 if i == 0 else 2.0)[:, None]
            got = gradient_map_batch(pair.plans[i], x)
            expect = slope * x
            rel = np.abs(got - expect) / np.abs(expect)
            assert rel.max() < 0.10

    def test_barycentric_projection_matches_slopes(self, trained_1d_pair):
        pair = trained_1d_pair
        rng = np.random.default_rng(42)
        for i, slope in enumerate(pair.map_slopes):
            x = self.probes(1.0 if i == 0 else 2.0)[:, None]
            got, kept = barycentric_projection_batch(
                pair.plans[i], x, n_y_samples=8192, rng=rng
            )
            assert kept.all()
            expect = slope * x
            rel = np.abs(got - expect) / np.abs(expect)
            assert rel.max() < 0.10

    def test_monge_net_matches_slopes(self, trained_1d_pair):
        pair = trained_1d_pair
        for i, slope in enumerate(pair.map_slopes):
            x = self.probes(1.0 if i == 0 else 2.0)[:, None]
            got = np.asarray(pair.nets[i].value_batch(x)).reshape(-1, 1)
            expect = slope * x
            rel = np.abs(got - expect) / np.abs(expect)
            assert rel.max() < 0.10
