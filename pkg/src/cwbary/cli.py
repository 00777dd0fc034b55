"""Command-line entry points.

Subcommands: ``run`` (solve, recover, evaluate, end to end), ``solve``
(training only, writes a checkpoint), ``recover`` (consume a
checkpoint), ``eval`` (score a samples file against the oracle), and
``oracle`` (direct access to the reference computations).

Heavy imports happen inside the handlers so the CWBARY_THREADS
environment variable can cap BLAS thread counts before the numerics
stack loads.
"""

from __future__ import annotations

import argparse
import os
import sys

CHECKPOINT_MAGIC = "cwbary-checkpoint"
CHECKPOINT_VERSION = 1


def _apply_thread_env() -> None:
    threads = os.environ.get("CWBARY_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _fmt(x) -> str:
    return repr(float(x))


def _vec(v) -> str:
    return ",".join(_fmt(x) for x in v)


def write_checkpoint(path, config_hash, seed, state, support, centering, effective):
    """Persist trained potentials plus the problem geometry."""
    from .potentials import write_potential

    n = len(state.f_potentials)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n")
        fh.write(f"config_hash {config_hash}\n")
        fh.write(f"seed {seed}\n")
        fh.write(f"n {n}\n")
        fh.write(f"d {support.d}\n")
        fh.write(f"step {state.step_count}\n")
        fh.write(f"family {effective.family}\n")
        fh.write(f"epsilon {_fmt(effective.epsilon)}\n")
        fh.write(f"weights {_vec(state.config.weights)}\n")
        fh.write(f"box_lo {_vec(support.box.lo)}\n")
        fh.write(f"box_hi {_vec(support.box.hi)}\n")
        if centering is None:
            fh.write("centered 0\n")
        else:
            fh.write("centered 1\n")
            for m in centering.means:
                fh.write(f"mean {_vec(m)}\n")
        for pot in state.f_potentials + state.g_potentials:
            write_potential(fh, pot)


def read_checkpoint(path):
    """Load a checkpoint into plain objects ready for recovery."""
    import numpy as np

    from .measures import Box, CenteringRecord, SupportMeasure
    from .potentials import _read_potential_lines
    from .regularization import RegularizerSpec

    with open(path, encoding="utf-8") as fh:
        lines = iter(fh.read().splitlines())
    magic = next(lines).split()
    if magic[0] != CHECKPOINT_MAGIC or int(magic[1]) != CHECKPOINT_VERSION:
        raise ValueError(f"not a recognized checkpoint: {path}")
    meta = {}
    means = []
    for line in lines:
        key, _, rest = line.partition(" ")
        if key == "mean":
            means.append([float(t) for t in rest.split(",")])
            continue
        meta[key] = rest
        if key == "centered":
            break
    n = int(meta["n"])
    if meta["centered"] == "1":
        for _ in range(n):
            line = next(lines)
            key, _, rest = line.partition(" ")
            if key != "mean":
                raise ValueError("malformed checkpoint: expected mean lines")
            means.append([float(t) for t in rest.split(",")])
    potentials = [_read_potential_lines(lines) for _ in range(2 * n)]
    weights = np.array([float(t) for t in meta["weights"].split(",")])
    support = SupportMeasure(
        Box(
            [float(t) for t in meta["box_lo"].split(",")],
            [float(t) for t in meta["box_hi"].split(",")],
        )
    )
    centering = (
        CenteringRecord(np.array(means), weights) if meta["centered"] == "1" else None
    )
    return {
        "config_hash": meta["config_hash"],
        "seed": int(meta["seed"]),
        "step": int(meta["step"]),
        "weights": weights,
        "regularizer": RegularizerSpec(meta["family"], float(meta["epsilon"])),
        "support": support,
        "centering": centering,
        "f_potentials": potentials[:n],
        "g_raw": potentials[n:],
    }


def _centered_g(g_raw, weights):
    from .potentials import LinearCombinationPotential

    out = []
    for i in range(len(g_raw)):
        coef = [-w for w in weights]
        coef[i] += 1.0
        out.append(LinearCombinationPotential(coef, g_raw))
    return out


def _prepare_problem(config, seed):
    """Sources, optional centering, support box, effective regularizer."""
    import numpy as np

    from .config import build_sources
    from .measures import center_inputs, estimate_bounding_box

    sources = build_sources(config)
    weights = np.array(config.weights)
    centering = None
    active = sources
    if config.preprocess.center:
        active, centering = center_inputs(sources, weights)
    probe_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    support = estimate_bounding_box(
        active, config.preprocess.n_probe, config.preprocess.margin, probe_rng
    )
    effective = config.regularizer
    if effective.scale_by_diagonal:
        effective = effective.scaled_to(support.box)
    return sources, active, weights, centering, support, effective


def _train(config, seed, active, weights, support, effective):
    from .dual_solver import SolveResult, SolverConfig, init_state, solve

    steps = config.solver.total_steps
    solver_config = SolverConfig(
        weights=weights,
        regularizer=effective,
        support=support,
        batch_size=config.solver.batch_size,
        total_steps=max(steps, 1),
        learning_rate=config.solver.learning_rate,
        beta1=config.solver.beta1,
        beta2=config.solver.beta2,
        eps_adam=config.solver.eps_adam,
        seed=seed,
        parameterization=config.solver.parameterization,
        log_interval=config.solver.log_interval,
    )
    if steps == 0:
        # Smoke path: recovery runs on the freshly initialized potentials.
        state = init_state(solver_config, active[0].d)
        return SolveResult(
            state.f_potentials, state.centered_g(), state.g_potentials, [], state
        )
    return solve(solver_config, active)


def _recover(config, seed, plans, active, weights, centering):
    """Dispatch on the configured method; returns (sample_set, grid)."""
    import numpy as np

    from . import recovery

    rc = config.recovery
    rec_seq = np.random.SeedSequence((seed, 2))
    rng = np.random.default_rng(rec_seq)
    grid = None
    if rc.method == "grid":
        grids = [
            recovery.marginal_grid(
                p, rc.grid_samples, p.support.box, rc.grid_resolution, rng
            )
            for p in plans
        ]
        if all(g.degenerate for g in grids):
            # No detectable mass anywhere (untrained potentials); emit
            # the flagged grid and skip sampling.
            return None, grids[0]
        grid = recovery.combine_grids(grids, weights)
        pts = recovery.sample_from_grid(grid, rc.n_total, rng)
        if centering is not None:
            pts = pts + centering.barycenter_mean
        sample_set = recovery.BarycenterSampleSet(
            pts, "grid", np.full(len(pts), -1)
        )
        return sample_set, grid
    if rc.method == "mcmc":
        counts = recovery.apportion_counts(weights, rc.n_total)
        parts = []
        prov = []
        for p, cnt in zip(plans, counts):
            if cnt == 0:
                continue
            part = recovery.mcmc_sample(
                p,
                int(cnt),
                proposal_sigma=rc.mcmc.proposal_sigma,
                burn_in=rc.mcmc.burn_in,
                rng=rng,
                thin=rc.mcmc.thin,
                n_chains=rc.mcmc.chains,
            )
            parts.append(part.points)
            prov.append(part.source_index)
        pts = np.concatenate(parts, axis=0)
        if centering is not None:
            pts = pts + centering.barycenter_mean
        return (
            recovery.BarycenterSampleSet(pts, "mcmc", np.concatenate(prov)),
            None,
        )

    if rc.method == "gradmap":
        maps = [
            (lambda X, p=p: recovery.gradient_map_batch(p, X)) for p in plans
        ]
    elif rc.method == "bproj":
        child = rec_seq.spawn(len(plans))
        maps = [
            (
                lambda X, p=p, r=np.random.default_rng(s): (
                    recovery.barycentric_projection_batch(
                        p, X, rc.bproj_samples, r
                    )
                )
            )
            for p, s in zip(plans, child)
        ]
    elif rc.method == "mongenet":
        from .dual_solver import PotentialSpec
        from .recovery import MongeFitConfig

        maps = []
        for i, p in enumerate(plans):
            fit_seed = int(
                np.random.SeedSequence((seed, 3, i)).generate_state(1)[0]
            )
            net = recovery.fit_monge_net(
                p,
                PotentialSpec(kind="mlp"),
                MongeFitConfig(
                    batch_size=rc.monge.batch_size,
                    total_steps=rc.monge.total_steps,
                    learning_rate=rc.monge.learning_rate,
                    seed=fit_seed,
                ),
            )
            maps.append(net.value_batch)
    else:
        raise ValueError(f"unhandled recovery method {rc.method}")

    sample_set = recovery.pushforward_barycenter(
        maps,
        active,
        weights,
        centering,
        rc.n_total,
        rng,
        method=rc.method,
    )
    return sample_set, None


def _evaluate(config, seed, sample_set, sources, weights, wall_s):
    """Score one trial against the configured oracle."""
    import numpy as np

    from .baselines import GaussianParams, gaussian_fixed_point
    from .evaluation import (
        EvalRecord,
        covariance_error,
        gaussian_mle_fit,
        mean_error,
        w2_curve,
    )
    from .measures import Gaussian

    if config.evaluation.oracle == "none":
        return None, None
    if not all(isinstance(s, Gaussian) for s in sources):
        raise ValueError(
            "the gaussian-fixed-point oracle requires all-gaussian sources; "
            "set evaluation.oracle to 'none'"
        )
    truth = gaussian_fixed_point(
        [GaussianParams(s.mean_vec, s.cov) for s in sources], weights
    )
    fit = gaussian_mle_fit(sample_set.points)
    cov_err = covariance_error(fit.cov, truth.cov)
    m_err = mean_error(fit.mean, truth.mean)
    w2_val = None
    curve = None
    if config.evaluation.w2_sizes:
        eval_rng = np.random.default_rng(np.random.SeedSequence((seed, 4)))
        ref = Gaussian(truth.mean, truth.cov).sample(
            max(config.evaluation.w2_sizes), eval_rng
        )
        curve = w2_curve(
            sample_set.points,
            ref,
            config.evaluation.w2_sizes,
            trials=config.evaluation.w2_trials,
            rng=eval_rng,
        )
        w2_val = curve[-1][1]
    record = EvalRecord(
        seed=seed,
        method=sample_set.method,
        cov_error=cov_err,
        mean_error=m_err,
        w2=w2_val,
        wall_s=wall_s,
    )
    return record, curve


def run_experiment(config, out_dir=None) -> int:
    """Full pipeline; artifacts land in the output directory."""
    import time

    from .evaluation import EvalReport

    out = out_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    tag = f"config {config.config_hash()} seed {config.seed}"
    report = EvalReport()
    curves = []
    for trial in range(config.evaluation.trials):
        seed = config.seed + trial
        t0 = time.perf_counter()
        sources, active, weights, centering, support, effective = _prepare_problem(
            config, seed
        )
        result = _train(config, seed, active, weights, support, effective)
        from .recovery import make_plans

        plans = make_plans(
            result.f_potentials, result.g_centered, active, support, effective
        )
        sample_set, grid = _recover(config, seed, plans, active, weights, centering)
        wall_s = time.perf_counter() - t0
        if trial == 0:
            with open(os.path.join(out, "training_log.csv"), "w") as fh:
                fh.write(f"# {tag}\n")
                fh.write("step,ema_objective,wall_ms\n")
                for rec in result.log:
                    fh.write(
                        f"{rec.step},{_fmt(rec.ema_objective)},"
                        f"{rec.wall_ms:.1f}\n"
                    )
            write_checkpoint(
                os.path.join(out, "checkpoint.txt"),
                config.config_hash(),
                seed,
                result.state,
                support,
                centering,
                effective,
            )
            if sample_set is not None:
                with open(os.path.join(out, "barycenter_samples.csv"), "w") as fh:
                    sample_set.to_csv(fh, comment=tag)
            if grid is not None:
                with open(os.path.join(out, "density_grid.csv"), "w") as fh:
                    grid.to_csv(fh, comment=tag)
        if sample_set is None:
            print("degenerate output: recovered grid carries no mass")
            continue
        record, curve = _evaluate(
            config, seed, sample_set, sources, weights, wall_s
        )
        if record is not None:
            report.add(record)
        if curve is not None:
            curves.append(curve)

    if report.records:
        with open(os.path.join(out, "eval_report.csv"), "w") as fh:
            _write_eval_csv(fh, report, tag)
    if curves:
        with open(os.path.join(out, "w2_curve.csv"), "w") as fh:
            fh.write(f"# {tag}\n")
            fh.write("trial,m,w2_mean,w2_std\n")
            for t, curve in enumerate(curves):
                for m, mean, std in curve:
                    fh.write(f"{t},{m},{_fmt(mean)},{_fmt(std)}\n")
    summary = report.summary() if report.records else "no oracle evaluation"
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(f"# {tag}\n{summary}\n")
    print(summary)
    return 0


def _write_eval_csv(fh, report, tag) -> None:
    # Wall time stays out of this file so reruns are byte-identical; it
    # is reported in summary.txt instead.
    fh.write(f"# {tag}\n")
    fh.write("seed,method,cov_error,mean_error,w2\n")
    for r in report.records:
        w2 = "" if r.w2 is None else _fmt(r.w2)
        fh.write(
            f"{r.seed},{r.method},{_fmt(r.cov_error)},{_fmt(r.mean_error)},{w2}\n"
        )


def _load_samples_csv(path):
    import numpy as np

    from .recovery import BarycenterSampleSet

    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    header = lines[0].split(",")
    d = sum(1 for h in header if h.startswith("x"))
    pts = []
    prov = []
    method = "unknown"
    for ln in lines[1:]:
        parts = ln.split(",")
        pts.append([float(t) for t in parts[:d]])
        method = parts[d]
        prov.append(int(parts[d + 1]))
    return BarycenterSampleSet(np.array(pts), method, np.array(prov))


def _cmd_run(args) -> int:
    from .config import load_config

    config = load_config(args.config)
    config = _apply_overrides(config, args)
    return run_experiment(config, out_dir=args.out)


def _apply_overrides(config, args):
    import dataclasses

    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "log_interval", None) is not None:
        updates["solver"] = dataclasses.replace(
            config.solver, log_interval=args.log_interval
        )
    return dataclasses.replace(config, **updates) if updates else config


def _cmd_solve(args) -> int:
    from .config import load_config

    config = load_config(args.config)
    config = _apply_overrides(config, args)
    out = args.out or config.output_dir
    os.makedirs(out, exist_ok=True)
    tag = f"config {config.config_hash()} seed {config.seed}"
    _, active, weights, centering, support, effective = _prepare_problem(
        config, config.seed
    )
    result = _train(config, config.seed, active, weights, support, effective)
    with open(os.path.join(out, "training_log.csv"), "w") as fh:
        fh.write(f"# {tag}\n")
        fh.write("step,ema_objective,wall_ms\n")
        for rec in result.log:
            fh.write(f"{rec.step},{_fmt(rec.ema_objective)},{rec.wall_ms:.1f}\n")
    ckpt = args.checkpoint or os.path.join(out, "checkpoint.txt")
    write_checkpoint(
        ckpt, config.config_hash(), config.seed, result.state, support,
        centering, effective,
    )
    print(f"checkpoint written to {ckpt}")
    return 0


def _cmd_recover(args) -> int:
    from .config import build_sources, load_config
    from .measures import CenteredSource
    from .recovery import TransportPlanHandle

    config = load_config(args.config)
    config = _apply_overrides(config, args)
    ckpt = read_checkpoint(args.checkpoint)
    sources = build_sources(config)
    centering = ckpt["centering"]
    if centering is not None:
        active = [
            CenteredSource(src, m) for src, m in zip(sources, centering.means)
        ]
    else:
        active = sources
    weights = ckpt["weights"]
    g_centered = _centered_g(ckpt["g_raw"], weights)
    plans = [
        TransportPlanHandle(
            i, f, g, src, ckpt["support"], ckpt["regularizer"]
        )
        for i, (f, g, src) in enumerate(zip(ckpt["f_potentials"], g_centered, active))
    ]
    seed = args.seed if args.seed is not None else ckpt["seed"]
    sample_set, grid = _recover(config, seed, plans, active, weights, centering)
    out = args.out or config.output_dir
    os.makedirs(out, exist_ok=True)
    tag = f"config {ckpt['config_hash']} seed {seed}"
    with open(os.path.join(out, "barycenter_samples.csv"), "w") as fh:
        sample_set.to_csv(fh, comment=tag)
    if grid is not None:
        with open(os.path.join(out, "density_grid.csv"), "w") as fh:
            grid.to_csv(fh, comment=tag)
    print(f"{len(sample_set.points)} samples written ({sample_set.method})")
    return 0


def _cmd_eval(args) -> int:
    import numpy as np

    from .config import build_sources, load_config
    from .evaluation import EvalReport

    config = load_config(args.config)
    config = _apply_overrides(config, args)
    sample_set = _load_samples_csv(args.samples)
    sources = build_sources(config)
    weights = np.array(config.weights)
    record, curve = _evaluate(
        config, config.seed, sample_set, sources, weights, wall_s=0.0
    )
    report = EvalReport()
    if record is not None:
        report.add(record)
    out = args.out or config.output_dir
    os.makedirs(out, exist_ok=True)
    tag = f"config {config.config_hash()} seed {config.seed}"
    if report.records:
        with open(os.path.join(out, "eval_report.csv"), "w") as fh:
            _write_eval_csv(fh, report, tag)
    print(report.summary() if report.records else "no oracle evaluation")
    return 0


def _cmd_oracle(args) -> int:
    import numpy as np

    if args.oracle_cmd == "gaussian":
        from .baselines import GaussianParams, gaussian_fixed_point
        from .config import build_sources, load_config
        from .measures import Gaussian

        config = load_config(args.config)
        sources = build_sources(config)
        if not all(isinstance(s, Gaussian) for s in sources):
            raise ValueError("oracle gaussian requires all-gaussian sources")
        result = gaussian_fixed_point(
            [GaussianParams(s.mean_vec, s.cov) for s in sources],
            np.array(config.weights),
        )
        print("mean", _vec(result.mean))
        for row in result.cov:
            print("cov", _vec(row))
        return 0
    if args.oracle_cmd == "w2":
        from .baselines import empirical_w2
        from .measures import load_csv

        A = load_csv(args.a).points
        B = load_csv(args.b).points
        print(_fmt(empirical_w2(A, B)))
        return 0
    if args.oracle_cmd == "sinkhorn":
        from .baselines import DiscreteMeasure, duality_gap, sinkhorn
        from .measures import load_csv
        from .regularization import ENTROPIC, RegularizerSpec, SquaredEuclideanCost

        A = load_csv(args.a).points
        B = load_csv(args.b).points
        cost = SquaredEuclideanCost().cross(A, B)
        res = sinkhorn(
            DiscreteMeasure.uniform(A),
            DiscreteMeasure.uniform(B),
            cost,
            RegularizerSpec(ENTROPIC, args.epsilon),
        )
        print(f"primal {_fmt(res.primal)}")
        print(f"dual {_fmt(res.dual)}")
        print(f"gap {_fmt(duality_gap(res))}")
        print(f"iterations {res.n_iter}")
        return 0
    raise ValueError(f"unknown oracle subcommand {args.oracle_cmd!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cwbary",
        description="Continuous regularized Wasserstein barycenters from samples",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    def common(p, checkpoint=None, samples=False):
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument(
            "--log-interval", type=int, default=None, dest="log_interval"
        )
        if checkpoint is not None:
            p.add_argument(
                "--checkpoint", required=checkpoint, default=None,
                help="potential checkpoint path",
            )
        if samples:
            p.add_argument("--samples", required=True, help="barycenter samples CSV")

    common(sub.add_parser("run", help="solve, recover, and evaluate"))
    common(sub.add_parser("solve", help="train potentials, write checkpoint"),
           checkpoint=False)
    common(sub.add_parser("recover", help="extract barycenter from a checkpoint"),
           checkpoint=True)
    common(sub.add_parser("eval", help="score a samples CSV against the oracle"),
           samples=True)

    p_oracle = sub.add_parser("oracle", help="reference computations")
    oracle_sub = p_oracle.add_subparsers(dest="oracle_cmd", required=True)
    p_g = oracle_sub.add_parser("gaussian", help="fixed-point gaussian barycenter")
    p_g.add_argument("--config", required=True)
    p_w = oracle_sub.add_parser("w2", help="assignment-based empirical W2")
    p_w.add_argument("--a", required=True)
    p_w.add_argument("--b", required=True)
    p_s = oracle_sub.add_parser("sinkhorn", help="discrete entropic OT")
    p_s.add_argument("--a", required=True)
    p_s.add_argument("--b", required=True)
    p_s.add_argument("--epsilon", type=float, required=True)
    return parser


def main(argv=None) -> int:
    _apply_thread_env()
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "solve": _cmd_solve,
        "recover": _cmd_recover,
        "eval": _cmd_eval,
        "oracle": _cmd_oracle,
    }
    try:
        return handlers[args.cmd](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
