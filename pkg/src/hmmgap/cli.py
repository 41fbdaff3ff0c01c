"""Command-line entry point.

Every subcommand is deterministic given its flags: a single ``--seed`` flag
feeds each component through derived sub-seeds, each output is written
atomically (temp file + rename), and a manifest JSON capturing the resolved
configuration, seed, input digests and tool version is placed next to every
file output so a rerun can be checked bit for bit.

Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, lyapunov
from .errors import ModelError, NumericalError
from .filtering import forward_filter, forward_filter_stream
from .inference import ParamSelector, SgdConfig, sgd_infer
from .model import load_model
from .sampling import (
    iter_observations,
    read_observations,
    sample_sequence,
    write_observations,
    write_states,
)


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int | None
    input_digests: dict
    version: str


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-hmmgap-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(path, text, manifest: RunManifest) -> None:
    """Write output and its manifest atomically, or print to stdout."""
    if path is None:
        sys.stdout.write(text)
        return
    _atomic_write(path, text)
    _atomic_write(path + ".manifest.json", json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")


def _manifest(args, subcommand, inputs: dict) -> RunManifest:
    config = {k: v for k, v in vars(args).items() if k != "func"}
    return RunManifest(
        subcommand=subcommand,
        config={k: (list(v) if isinstance(v, tuple) else v) for k, v in config.items()},
        seed=getattr(args, "seed", None),
        input_digests={name: _sha256(path) for name, path in inputs.items() if path},
        version=__version__,
    )


def _load_obs(args) -> np.ndarray:
    if getattr(args, "simulate", None) is not None:
        n, seed = args.simulate
        model = load_model(args.model)
        return sample_sequence(model, int(n), int(seed)).observations
    if getattr(args, "obs", None) is None:
        raise ModelError("either --obs or --simulate is required")
    return read_observations(args.obs, binary=args.format == "f64")


def _cmd_sample(args) -> int:
    model = load_model(args.model)
    out = sample_sequence(model, args.n, args.seed)
    directory = os.path.dirname(os.path.abspath(args.output))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-hmmgap-")
    os.close(fd)
    try:
        write_observations(tmp, out.observations, binary=args.format == "f64")
        os.replace(tmp, args.output)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    manifest = _manifest(args, "sample", {"model": args.model})
    _atomic_write(args.output + ".manifest.json",
                  json.dumps(asdict(manifest), indent=2, sort_keys=True) + "\n")
    if args.states:
        write_states(args.states, out.states)
    return 0


def _cmd_filter(args) -> int:
    model = load_model(args.model)
    manifest = _manifest(args, "filter", {"model": args.model, "obs": args.obs})
    if args.stream:
        obs_iter = iter_observations(args.obs, binary=args.format == "f64")
        _, loglik, n = forward_filter_stream(model, obs_iter)
        _emit(args.output, json.dumps({"log_likelihood": loglik, "n": n}) + "\n", manifest)
        return 0
    obs = _load_obs(args)
    run = forward_filter(model, obs, store_history=True)
    buf = io.StringIO()
    writer = csv.writer(buf)
    k = model.n_states
    writer.writerow(["step"] + [f"rho_{i + 1}" for i in range(k)] + ["log_norm"])
    for t in range(run.n):
        writer.writerow([t + 1] + [f"{v:.17g}" for v in run.rhos[t]] + [f"{run.per_step_log_norms[t]:.17g}"])
    writer.writerow(["total"] + [""] * k + [f"{run.log_likelihood:.17g}"])
    _emit(args.output, buf.getvalue(), manifest)
    return 0


def _cmd_gap(args) -> int:
    model = load_model(args.model)
    obs = _load_obs(args)
    out = {"n": int(len(obs)), "method": args.method, "direction": args.direction}
    try:
        tau = lyapunov.birkhoff_tau(model.transition)
        out["tau_bound_log"] = float(np.log(tau)) if tau > 0 else -np.inf
    except ValueError:
        out["tau_bound_log"] = None

    results = {}
    if args.method in ("jacobian", "all"):
        est = lyapunov.estimate_gap(model, obs, burn_in=args.burn_in, seed=args.seed,
                                    direction=args.direction)
        results["jacobian"] = est.gap
    if args.method in ("qr", "all"):
        spectrum = lyapunov.qr_spectrum(model, obs, burn_in=args.burn_in, direction=args.direction)
        results["qr"] = float(spectrum[1] - spectrum[0])
        out["qr_spectrum"] = [float(v) for v in spectrum]
    if args.method == "trajectory" and args.direction != "forward":
        raise ModelError("trajectory method only measures the forward rate")
    if args.method == "trajectory" or (args.method == "all" and args.direction == "forward"):
        p0, p0_alt = lyapunov.default_initial_pair(model)
        seqs = [sample_sequence(model, args.trajectory_steps, _sub_seed(args.seed, i)).observations
                for i in range(args.trajectory_seqs)]
        results["trajectory"] = lyapunov.trajectory_gap(model, seqs, p0, p0_alt).gap

    primary = {"jacobian": "jacobian", "qr": "qr", "trajectory": "trajectory", "all": "jacobian"}
    gap = results[primary[args.method]]
    out["gap"] = gap
    out["all_gaps"] = results
    out["buffer_length"] = lyapunov.buffer_length(gap, args.epsilon)
    out["epsilon"] = args.epsilon
    manifest = _manifest(args, "gap", {"model": args.model, "obs": getattr(args, "obs", None)})
    _emit(args.output, json.dumps(out, indent=2) + "\n", manifest)
    return 0


def _sub_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def _cmd_sync_demo(args) -> int:
    model = load_model(args.model)
    p0, p0_alt = lyapunov.default_initial_pair(model)

    def one(i):
        obs = sample_sequence(model, args.steps, _sub_seed(args.seed, i)).observations
        series = lyapunov.trajectory_decay(model, obs, p0, p0_alt, cutoff=None)
        return series.distances

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            distances = np.vstack(list(pool.map(one, range(args.seeds))))
    else:
        distances = np.vstack([one(i) for i in range(args.seeds)])

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["seed", "step", "log_distance_over_n"])
    steps = np.arange(1, args.steps + 1)
    with np.errstate(divide="ignore"):
        normalized = np.log(distances) / steps[None, :]
    for i in range(args.seeds):
        for t in range(args.steps):
            writer.writerow([i, int(steps[t]), f"{normalized[i, t]:.17g}"])
    # mean curve averages the plotted quantity over seeds still above exact
    # zero; rows stop once every pair of filters has fully synchronized
    for t in range(args.steps):
        live = distances[:, t] > 0
        if not np.any(live):
            break
        writer.writerow(["mean", int(steps[t]), f"{normalized[live, t].mean():.17g}"])
    manifest = _manifest(args, "sync-demo", {"model": args.model})
    _emit(args.output, buf.getvalue(), manifest)
    return 0


def _cmd_tau(args) -> int:
    model = load_model(args.model)
    tau = lyapunov.birkhoff_tau(model.transition)
    out = {"tau": tau, "log_tau": float(np.log(tau)) if tau > 0 else -np.inf}
    manifest = _manifest(args, "tau", {"model": args.model})
    _emit(args.output, json.dumps(out, indent=2) + "\n", manifest)
    return 0


def _cmd_infer(args) -> int:
    model = load_model(args.model)
    obs = read_observations(args.obs, binary=args.format == "f64")
    selector = ParamSelector.from_tokens(args.free.split(","), model.n_states)
    if args.buffer == "auto":
        b1 = b2 = None
    else:
        b1 = b2 = int(args.buffer)
    config = SgdConfig(
        eta0=args.eta0, decay=args.decay, steps_per_restart=args.steps_per_restart,
        restart_threshold=args.restart_threshold, batch_size=args.batch,
        b1=b1, b2=b2, epsilon=args.epsilon, seed=args.seed,
        max_restarts=args.max_restarts, decay_scope=args.decay_scope,
    )
    result = sgd_infer(model, obs, selector, config)

    manifest = _manifest(args, "infer", {"model": args.model, "obs": args.obs})
    if args.trace:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["restart", "step"] + result.labels + ["eta", "probe_loglik"])
        for row in result.trace:
            writer.writerow(
                [row["restart"], row["step"]]
                + [f"{row[label]:.17g}" for label in result.labels]
                + [f"{row['eta']:.17g}",
                   "" if row["probe_loglik"] is None else f"{row['probe_loglik']:.17g}"]
            )
        _emit(args.trace, buf.getvalue(), manifest)
    final = {
        "theta_hat": dict(zip(result.labels, result.theta.tolist())),
        "multiplies": result.counts["total"],
        "multiplies_detail": result.counts,
        "buffers": list(result.buffers),
        "restarts": result.restarts,
        "stopped_by": result.stopped_by,
    }
    _emit(args.output, json.dumps(final, indent=2) + "\n", manifest)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="hmmgap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hmmgap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="simulate an observation sequence", parents=[])
    p.add_argument("--model", required=True)
    p.add_argument("-n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=["text", "f64"], default="text")
    p.add_argument("--states", default=None, help="also write states to this file")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("filter", help="run the forward filter, emit CSV or summary JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--format", choices=["text", "f64"], default="text")
    p.add_argument("--stream", action="store_true", help="O(K) memory; JSON summary only")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("gap", help="estimate the forgetting rate and buffer length")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", default=None)
    p.add_argument("--simulate", nargs=2, metavar=("N", "SEED"), default=None)
    p.add_argument("--format", choices=["text", "f64"], default="text")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1e-15)
    p.add_argument("--method", choices=["jacobian", "qr", "trajectory", "all"], default="jacobian")
    p.add_argument("--direction", choices=["forward", "backward"], default="forward")
    p.add_argument("--trajectory-seqs", dest="trajectory_seqs", type=int, default=50)
    p.add_argument("--trajectory-steps", dest="trajectory_steps", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_gap)

    p = sub.add_parser("sync-demo", help="two-filter synchronization decay CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--seeds", type=int, default=500)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_sync_demo)

    p = sub.add_parser("tau", help="Birkhoff contraction coefficient of the transition matrix")
    p.add_argument("--model", required=True)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_tau)

    p = sub.add_parser("infer", help="buffered minibatch SGD parameter fit")
    p.add_argument("--model", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--format", choices=["text", "f64"], default="text")
    p.add_argument("--free", required=True, help="comma list, e.g. mu1,mu2 or mu1,sigma1 or row2")
    p.add_argument("--eta0", type=float, default=0.05)
    p.add_argument("--decay", type=float, default=0.95)
    p.add_argument("--steps-per-restart", dest="steps_per_restart", type=int, default=25)
    p.add_argument("--restart-threshold", dest="restart_threshold", type=float, default=0.02)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--buffer", default="auto", help="'auto' or an integer used for both windows")
    p.add_argument("--epsilon", type=float, default=1e-10)
    p.add_argument("--max-restarts", dest="max_restarts", type=int, default=40)
    p.add_argument("--decay-scope", dest="decay_scope", choices=["restart", "global"], default="restart")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", default=None, help="write per-step CSV trace here")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ModelError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
