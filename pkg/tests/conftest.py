"""Shared fixtures.

The expensive one is ``trained_1d_pair``: a full solve of the
equal-weight barycenter of N(0,1) and N(0,4) plus fitted Monge
networks, built once per session and reused by the recovery tests and
the cross-method agreement checks.  The closed-form answer is
N(0, 2.25): optimal maps 1.5x from the first input and 0.75x from the
second, barycenter standard deviation 1.5.
"""

from types import SimpleNamespace

import numpy as np
import pytest

from cwbary.dual_solver import PotentialSpec, SolverConfig, solve
from cwbary.measures import Gaussian, center_inputs, estimate_bounding_box
from cwbary.recovery import (
    MongeFitConfig,
    TransportPlanHandle,
    fit_monge_net,
    pushforward_barycenter,
)
from cwbary.regularization import RegularizerSpec


@pytest.fixture(scope="session")
def trained_1d_pair():
    sources = [Gaussian([0.0], [[1.0]]), Gaussian([0.0], [[4.0]])]
    weights = np.array([0.5, 0.5])
    centered, record = center_inputs(sources, weights)
    support = estimate_bounding_box(centered, 4096, 0.2, np.random.default_rng(7))
    reg = RegularizerSpec(family="quadratic", epsilon=1e-4, scale_by_diagonal=True)
    reg = reg.scaled_to(support.box)
    config = SolverConfig(
        weights=weights,
        regularizer=reg,
        support=support,
        batch_size=256,
        total_steps=12000,
        learning_rate=2e-3,
        seed=11,
        parameterization=PotentialSpec(kind="rff", n_features=384, freq_scale=0.4),
    )
    result = solve(config, centered)
    plans = [
        TransportPlanHandle(
            index=i,
            f=result.f_potentials[i],
            g=result.g_centered[i],
            regularizer=reg,
            source=centered[i],
            support=support,
        )
        for i in range(2)
    ]
    nets = [
        fit_monge_net(
            plans[i],
            PotentialSpec(kind="mlp"),
            MongeFitConfig(
                batch_size=1024, total_steps=3000, learning_rate=2e-3, seed=100 + i
            ),
        )
        for i in range(2)
    ]
    return SimpleNamespace(
        sources=sources,
        centered=centered,
        record=record,
        weights=weights,
        support=support,
        regularizer=reg,
        plans=plans,
        nets=nets,
        true_std=1.5,
        map_slopes=(1.5, 0.75),
    )


def sample_sets_for_methods(pair, n_total=20000):
    """Barycenter draws from the three map-based methods, fresh rngs."""
    from cwbary.recovery import barycentric_projection_batch, gradient_map_batch

    out = {}
    maps_by_method = {
        "gradmap": [
            (lambda X, p=p: gradient_map_batch(p, X)) for p in pair.plans
        ],
        "bproj": [
            (
                lambda X, p=p, r=np.random.default_rng(501 + i): (
                    barycentric_projection_batch(p, X, n_y_samples=4096, rng=r)
                )
            )
            for i, p in enumerate(pair.plans)
        ],
        "mongenet": [
            (lambda X, net=net: np.asarray(net.value_batch(X))) for net in pair.nets
        ],
    }
    mix_seeds = {"gradmap": 201, "bproj": 202, "mongenet": 203}
    for method, maps in maps_by_method.items():
        rng = np.random.default_rng(mix_seeds[method])
        out[method] = pushforward_barycenter(
            maps,
            pair.centered,
            pair.weights,
            pair.record,
            n_total,
            rng,
            method=method,
        )
    return out
