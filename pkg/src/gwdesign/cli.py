"""Command-line entry point.

Exit codes: 0 success, 2 bad arguments / configuration / output directory,
3 truth bundle incompatible with the configuration, 4 truncated chain file
found in the output directory, 5 every replicate failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .acquisition import acquire_batch
from .config import ExperimentConfig
from .errors import GWDesignError, InvalidArgumentError
from .experiment import POSTERIORS, STRATEGIES, Setup, aggregate, lhs_wells, observe, run_replicates, stream
from .inference import ForwardModel, run_chains
from .io import (
    JsonlWriter,
    count_jsonl,
    dump_json,
    ensure_dir,
    read_wells_csv,
    write_nodal_csv,
    write_wells_csv,
)
from .random_field import KLBasis

log = logging.getLogger("gwdesign")

EXIT_OK, EXIT_USAGE, EXIT_INCOMPATIBLE, EXIT_TRUNCATED, EXIT_ALL_FAILED = 0, 2, 3, 4, 5
STRATEGY_FLAGS = {"vanilla": ("vanilla",), "dual": ("dual_weighted",), "both": STRATEGIES}
FIELDS = ("head", "flux_norm", "influence", "conductivity")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class Manifest:
    def __init__(self, out_dir, command, config, seed):
        self.out_dir = out_dir
        self.data = {
            "command": command,
            "version": __version__,
            "seed": seed,
            "config": config.to_dict(),
            "artifacts": [],
            "timings": {},
        }

    def add(self, name, **meta):
        self.data["artifacts"].append({"path": name, **meta})
        return os.path.join(self.out_dir, name)

    def time(self, stage, start):
        self.data["timings"][stage] = round(time.perf_counter() - start, 6)

    def write(self):
        missing = [a["path"] for a in self.data["artifacts"]
                   if not os.path.exists(os.path.join(self.out_dir, a["path"]))]
        if missing:
            raise CliError(EXIT_USAGE, f"artifacts missing after run: {missing}")
        dump_json(self.data, os.path.join(self.out_dir, "manifest.json"))


def _load_config(path):
    if path is None:
        return ExperimentConfig()
    if not os.path.isfile(path):
        raise CliError(EXIT_USAGE, f"config file not found: {path}")
    try:
        return ExperimentConfig.load(path)
    except (GWDesignError, ValueError, OSError) as exc:
        raise CliError(EXIT_USAGE, f"malformed config {path}: {exc}") from exc


def _prepare_out(path):
    try:
        ensure_dir(path)
    except OSError as exc:
        raise CliError(EXIT_USAGE, f"output directory not writable: {path} ({exc})") from exc


def _model_fingerprint(config):
    return {
        "domain": [config.domain.width, config.domain.height],
        "fine_mesh": list(config.mesh.fine),
        "prior": [config.prior.length_scale, config.prior.mu, config.prior.sigma, config.prior.truth_n_kl],
    }


def cmd_truth(args):
    config = _load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    _prepare_out(args.output_dir)
    man = Manifest(args.output_dir, "truth", config, seed)
    t0 = time.perf_counter()
    setup = Setup.build(config)
    man.time("basis", t0)

    t0 = time.perf_counter()
    rng = np.random.default_rng(stream(seed, 0, "truth"))
    theta = rng.standard_normal(setup.truth_basis.n_kl)
    model = ForwardModel(setup.fine_mesh, setup.truth_basis, config.heads, qoi_boundary=config.boundary.qoi_boundary)
    truth = model.evaluate(theta)
    man.time("solve", t0)

    setup.truth_basis.save(man.add("kl_basis.npz"))
    dump_json({
        "theta": theta.tolist(),
        "q_true": truth.qoi,
        "seed": seed,
        "model": _model_fingerprint(config),
    }, man.add("truth.json"))
    for name in FIELDS:
        write_nodal_csv(man.add(f"{name}.csv", kind="nodal"), setup.fine_mesh, truth.fields()[name])
    man.write()
    print(f"Q_true = {truth.qoi!r}")
    return EXIT_OK


def _load_truth(truth_dir, config):
    try:
        with open(os.path.join(truth_dir, "truth.json")) as fh:
            meta = json.load(fh)
        basis = KLBasis.load(os.path.join(truth_dir, "kl_basis.npz"))
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_USAGE, f"cannot read truth bundle in {truth_dir}: {exc}") from exc
    setup = Setup.build(config)
    if meta.get("model") != _model_fingerprint(config):
        raise CliError(EXIT_INCOMPATIBLE, "truth bundle was generated with a different mesh or prior")
    if basis.nodes.shape != setup.fine_mesh.nodes.shape or not np.allclose(basis.nodes, setup.fine_mesh.nodes):
        raise CliError(EXIT_INCOMPATIBLE, "KL basis nodes do not match the configured fine mesh")
    if basis.n_kl != config.prior.truth_n_kl:
        raise CliError(EXIT_INCOMPATIBLE, "KL basis has a different number of modes")
    return meta, basis, setup


def _check_chain_files(out_dir, n_chains, expected):
    for c in range(n_chains):
        path = os.path.join(out_dir, f"chain_{c}.jsonl")
        if not os.path.exists(path):
            continue
        try:
            n = count_jsonl(path)
        except ValueError as exc:
            raise CliError(EXIT_TRUNCATED, f"corrupt chain file {path}: {exc}") from exc
        if n != expected:
            raise CliError(EXIT_TRUNCATED, f"truncated chain file {path}: {n} of {expected} records")


def cmd_round(args):
    config = _load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    meta, basis, setup = _load_truth(args.truth_dir, config)
    _prepare_out(args.output_dir)
    chain_cfg = config.chain.to_chain_config(int(stream(seed, 0, "chains").generate_state(1, np.uint64)[0]))
    _check_chain_files(args.output_dir, chain_cfg.n_chains, chain_cfg.retained_per_chain)
    man = Manifest(args.output_dir, "round", config, seed)

    model = ForwardModel(setup.fine_mesh, basis, config.heads, qoi_boundary=config.boundary.qoi_boundary)
    truth = model.evaluate(np.asarray(meta["theta"]))
    if args.wells:
        wells = read_wells_csv(args.wells)
    else:
        wells = lhs_wells(config.design.initial_wells, config.domain.width, config.domain.height,
                          np.random.default_rng(stream(seed, 0, "wells")))
    obs = observe(truth, wells, config.noise.head, config.noise.flux_norm,
                  np.random.default_rng(stream(seed, 0, "observe_initial")))
    dump_json(obs.to_dict(), man.add("observations.json"))

    t0 = time.perf_counter()
    inv = basis.truncate(config.prior.n_kl)
    fine = ForwardModel(setup.fine_mesh, inv, config.heads, obs.wells, config.boundary.qoi_boundary)
    coarse = ForwardModel(setup.coarse_mesh, inv.transfer(setup.fine_mesh, setup.coarse_mesh),
                          config.heads, obs.wells, config.boundary.qoi_boundary)
    writers = []

    def factory(c):
        w = JsonlWriter(man.add(f"chain_{c}.jsonl", kind="chain", chain=c))
        writers.append(w)
        return w

    try:
        ens = run_chains(chain_cfg, fine, coarse, obs, record_factory=factory)
    finally:
        for w in writers:
            w.close()
    man.time("sampling", t0)
    man.data["diagnostics"] = ens.diagnostics

    for name in FIELDS:
        write_nodal_csv(man.add(f"{name}_mean.csv", kind="moment"), setup.fine_mesh, ens.field_mean(name))
        write_nodal_csv(man.add(f"{name}_std.csv", kind="moment"), setup.fine_mesh, ens.field_std(name))

    exclusions = sorted({setup.fine_mesh.nearest_node(x) for x in obs.wells})
    for mode in STRATEGY_FLAGS[args.strategy]:
        acq = acquire_batch(ens, setup.fine_mesh, mode, config.design.dispersion_target,
                            config.design.new_wells, config.design.l_psi, exclusions)
        write_nodal_csv(man.add(f"acquisition_{mode}.csv", kind="acquisition", mode=mode),
                        setup.fine_mesh, acq.base_scores)
        write_wells_csv(man.add(f"selected_wells_{mode}.csv", kind="wells", mode=mode),
                        acq.selected_points, acq.selected_scores)
    q = np.asarray(ens.qoi)
    man.data["qoi"] = {"q_true": meta["q_true"], "mean": float(q.mean()), "n_samples": int(q.size)}
    man.write()
    return EXIT_OK


def cmd_replicate(args):
    config = _load_config(args.config)
    seed = config.seed if args.seed is None else args.seed
    n = config.replicates if args.replicates is None else args.replicates
    if n < 1:
        raise CliError(EXIT_USAGE, "--replicates must be >= 1")
    _prepare_out(args.output_dir)
    man = Manifest(args.output_dir, "replicate", config, seed)
    t0 = time.perf_counter()
    results = run_replicates(config, n, seed, parallel=args.parallel)
    man.time("replicates", t0)

    rows = []
    for r, res in enumerate(results):
        sub = f"rep_{r:03d}"
        ensure_dir(os.path.join(args.output_dir, sub))
        row = res if isinstance(res, dict) else res.to_dict()
        rows.append(row)
        dump_json(row, man.add(f"{sub}/result.json"))
        if not row.get("failed"):
            _write_qoi_csv(man.add(f"{sub}/qoi.csv"), res)
    if all(r.get("failed") for r in rows):
        man.write()
        print("all replicates failed", file=sys.stderr)
        return EXIT_ALL_FAILED
    summary = aggregate(rows)
    dump_json(summary, man.add("aggregate.json"))
    man.write()
    print(json.dumps({k: summary[k] for k in summary if k.startswith(("median", "mse"))}, indent=2))
    return EXIT_OK


def _write_qoi_csv(path, result):
    cols = [result.posteriors[name].qoi for name in POSTERIORS]
    with open(path, "w") as fh:
        fh.write("sample," + ",".join(POSTERIORS) + "\n")
        for i, vals in enumerate(zip(*cols)):
            fh.write(f"{i}," + ",".join(repr(float(v)) for v in vals) + "\n")


def cmd_init_config(args):
    config = ExperimentConfig.desk() if args.desk else ExperimentConfig()
    if args.output == "-":
        sys.stdout.write(config.to_yaml())
    else:
        config.save(args.output)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="gwdesign", description="Adaptive design of groundwater surveys.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment configuration (defaults to full scale)")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        sp.add_argument("--output-dir", required=True)

    t = sub.add_parser("truth", help="draw and solve a data-generating model")
    common(t)
    t.set_defaults(func=cmd_truth)

    r = sub.add_parser("round", help="observe, sample the posterior and propose new wells")
    common(r)
    r.add_argument("--truth-dir", required=True)
    r.add_argument("--wells", help="CSV with x,y columns; Latin hypercube wells if omitted")
    r.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS), default="both")
    r.set_defaults(func=cmd_round)

    rep = sub.add_parser("replicate", help="run independent replicates and aggregate")
    common(rep)
    rep.add_argument("--replicates", type=int)
    rep.add_argument("--parallel", type=int, default=1, help="worker processes")
    rep.set_defaults(func=cmd_replicate)

    ic = sub.add_parser("init-config", help="write a configuration file with default values")
    ic.add_argument("--desk", action="store_true", help="reduced-scale preset")
    ic.add_argument("--output", default="-")
    ic.set_defaults(func=cmd_init_config)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
