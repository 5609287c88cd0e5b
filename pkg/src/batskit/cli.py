"""Experiment driver.

Subcommands: analyze | optimize | evolve | simulate | endtoend | sweep.
Every command is a pure function of (config, seed): reruns produce byte
identical outputs. JSON outputs carry "schema": 1; CSV outputs start with
a comment line recording the config hash and seed.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import sys

import numpy as np

from .gf import GF, RandomStream
from .rankdist import (
    RankDistribution,
    effective_dist,
    expected_rank,
    line_rank_dist,
)
from .degreeopt import (
    DegreeDistribution,
    achievable_theta,
    density_evolution,
    max_degree,
    optimize_p1,
    optimize_p2,
    optimize_p3,
    optimize_p4,
    sample_rank_dist,
    theta_bounds,
    thin_degrees,
)
from .codec import (
    DecoderState,
    PrecodeSpec,
    _parity_equations,
    generate_batch,
    inactivation_decode,
    overheads,
    precode_complete,
    precode_encode,
    precode_output_count,
)
from .netsim import NetworkTopology, SchemeConfig, run_scheme

SCHEMA = 1


class ConfigError(Exception):
    pass


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(path: str | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _csv(header, rows, cfg_hash, seed) -> str:
    buf = io.StringIO()
    buf.write(f"# config={cfg_hash} seed={seed}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _field(q: int) -> GF:
    m = int(q).bit_length() - 1
    if 2 ** m != q or m not in (1, 2, 4, 8):
        raise ConfigError(f"unsupported field size {q}")
    return GF(m)


def _load_rank(cfg, key="h") -> RankDistribution:
    spec = cfg.get(key)
    if spec is None:
        hops = cfg.get("hops")
        if hops is None:
            raise ConfigError(f"need {key!r} or 'hops'")
        return line_rank_dist(int(cfg["M"]), hops, int(cfg["q"]))
    return RankDistribution.from_json_dict(spec)


def _load_ranks(cfg) -> list:
    if "ranks" in cfg:
        return [RankDistribution.from_json_dict(d) for d in cfg["ranks"]]
    if "hop_sets" in cfg:
        return [line_rank_dist(int(cfg["M"]), hops, int(cfg["q"]))
                for hops in cfg["hop_sets"]]
    return [_load_rank(cfg)]


# -- analyze ---------------------------------------------------------------

def cmd_analyze(cfg: dict, seed: int, out, trials):
    M, q = int(cfg["M"]), int(cfg["q"])
    h = _load_rank(cfg)
    eff = effective_dist(h, q)
    r = np.arange(M + 1)
    report = {
        "schema": SCHEMA,
        "M": M,
        "q": q,
        "h": [float(x) for x in h.h],
        "hbar": [float(x) for x in eff.hbar],
        "hbar_prime": [float(x) for x in eff.hbar_prime],
        "sum_r_hbar": float(eff.weighted_sum()),
        "sum_r_h": float((r * h.h).sum()),
        "expected_rank": float(expected_rank(h)),
    }
    sweep = cfg.get("sweep")
    rows = []
    if sweep:
        T = int(sweep["T"])
        k = int(sweep["k"])
        eps = float(sweep["eps"])
        for m in sweep["Ms"]:
            hk = line_rank_dist(int(m), [eps] * k, q)
            val = (1 - m / T) * expected_rank(hk) / m
            rows.append((int(m), k, float(val)))
        report["sweep_best_M"] = int(max(rows, key=lambda t: t[2])[0])
    text = _dump_json(report)
    _write(out, text)
    if rows and out:
        _write(out + ".csv",
               _csv(("M", "k", "normalized_rate"), rows,
                    _config_hash(cfg), seed))
    return 0


# -- optimize --------------------------------------------------------------

def cmd_optimize(cfg: dict, seed: int, out, trials):
    problem = cfg.get("problem", "p1").lower()
    q = int(cfg["q"])
    eta = float(cfg["eta"])
    N = int(cfg.get("grid_points", 100))
    ranks = _load_ranks(cfg)
    degrees = None
    if cfg.get("thin_degrees"):
        D = max(max_degree(h.M, eta) for h in ranks)
        degrees = thin_degrees(D)
    if problem == "p1":
        res = optimize_p1(ranks[0], q, eta, N=N, degrees=degrees)
    elif problem == "p2":
        res = optimize_p2(ranks, q, eta, N=N, degrees=degrees)
    elif problem == "p3":
        res = optimize_p3(ranks, q, eta, N=N, degrees=degrees)
    elif problem == "p4":
        res = optimize_p4(ranks[0], q, eta, K=int(cfg["K"]),
                          c=float(cfg.get("c", 0.0)),
                          c_prime=float(cfg.get("c_prime", 1.0)),
                          N=N, degrees=degrees)
    else:
        raise ConfigError(f"unknown problem {problem!r}")
    report = {
        "schema": SCHEMA,
        "problem": problem,
        "eta": eta,
        "status": res.status,
        "value": float(res.value),
        "empty_support": res.empty_support,
        "psi": None if res.psi is None else res.psi.to_json_dict(),
    }
    if problem in ("p1", "p4"):
        lo, up = theta_bounds(ranks[0], q, eta)
        report["theta_lower_bound"] = float(lo)
        report["theta_upper_bound"] = float(up)
    if problem == "p3":
        report["per_node"] = [
            float(achievable_theta(res.psi, h, q, eta, N=10 * N)
                  / effective_dist(h, q).weighted_sum())
            for h in ranks] if res.psi is not None else []
    if res.psi is not None:
        margin = min(
            achievable_theta(res.psi, h, q, eta, N=10 * N)
            * (1.0 if problem != "p3"
               else 1.0 / effective_dist(h, q).weighted_sum())
            for h in ranks)
        report["feasibility_margin"] = float(margin - res.value)
    _write(out, _dump_json(report))
    return 0


# -- evolve ----------------------------------------------------------------

def cmd_evolve(cfg: dict, seed: int, out, trials):
    psi = DegreeDistribution.from_json_dict(cfg["psi"])
    h = _load_rank(cfg)
    q = int(cfg["q"])
    theta = float(cfg["theta"])
    N = int(cfg.get("grid_points", 1000))
    eta = float(cfg.get("eta", 0.0))
    grid = (1.0 - eta) * np.arange(1, N + 1) / (N + 1)
    curve = density_evolution(psi, h, q, theta, grid)
    crossing = curve.first_crossing()
    rows = [(float(x), float(r)) for x, r in zip(grid, curve.rho0)]
    cfg_hash = _config_hash(cfg)
    text = _csv(("x", "rho0"), rows, cfg_hash, seed)
    text += (f"# crossing={crossing!r}\n" if crossing is None
             else f"# crossing={float(crossing)!r}\n")
    _write(out, text)
    return 0


# -- simulate --------------------------------------------------------------

def _scheme_config(cfg: dict, seed: int) -> SchemeConfig:
    s = cfg["scheme"]
    return SchemeConfig(
        scheme=s["tag"], M=int(s["M"]), q=int(s["q"]), n=int(s["n"]),
        seed=seed, T=int(s.get("T", 0)),
        m_tilde=s.get("m_tilde"), n_h=s.get("n_h"))


def cmd_simulate(cfg: dict, seed: int, out, trials):
    top = NetworkTopology.from_json_dict(cfg["topology"])
    scfg = _scheme_config(cfg, seed)
    f = _field(scfg.q)
    traces = run_scheme(top, scfg)
    rows = []
    for dest in sorted(traces):
        tr = traces[dest]
        for bid, h in zip(tr.batch_ids, tr.hs):
            rows.append((bid, dest, h.shape[1], f.rank(h)))
    rows.sort(key=lambda r: (r[0], r[1]))
    _write(out, _csv(("batch_id", "destination", "columns", "rank"),
                     rows, _config_hash(cfg), seed))
    return 0


# -- endtoend --------------------------------------------------------------

def _parity_entries(k_prime, K, spec, f, T, first_id):
    """Precode parity relations as extra zero-RHS check nodes over the
    intermediate packets, so the decoder exploits them jointly."""
    entries = []
    for j, (idx, coeff) in enumerate(
            _parity_equations(k_prime, K, spec, f)):
        contributors = np.concatenate([idx, [k_prime + j]])
        order = np.argsort(contributors)
        C = np.concatenate([coeff, [np.uint8(1)]])[order, None]
        entries.append((first_id + j, contributors[order], C,
                        np.zeros((T, 1), dtype=np.uint8)))
    return entries


def _endtoend_trial(cfg, f, psi, top, trial_seed):
    """One full pipeline run; returns a result dict.

    The receiver consumes packets in arrival order and first attempts
    decoding once batch-equation ranks plus parity equations reach the
    number of intermediate packets, then one packet at a time, which keeps
    the coding overhead at packet granularity.
    """
    k_prime = int(cfg["k_prime"])
    T = int(cfg.get("T", 4))
    q = int(cfg["scheme"]["q"])
    M = int(cfg["scheme"]["M"])
    pc = cfg.get("precode", {})
    spec = PrecodeSpec(pc.get("mode", "systematic-sparse"),
                       rate=float(pc.get("rate", 0.98)),
                       row_weight=int(pc.get("row_weight", 20)),
                       seed=int(pc.get("seed", 0)))
    K = precode_output_count(k_prime, spec)
    n_par = K - k_prime
    st = RandomStream(trial_seed)
    inputs = st.integers(0, f.q, size=(T, k_prime)).astype(np.uint8)
    inter = precode_encode(inputs, spec, f)

    max_batches = int(cfg.get("max_batches", 4 * (K // M + 1)))
    scfg = SchemeConfig(
        scheme=cfg["scheme"]["tag"], M=M, q=q, n=max_batches,
        seed=trial_seed, T=T, m_tilde=cfg["scheme"].get("m_tilde"),
        n_h=cfg["scheme"].get("n_h"))
    (dest, tr), = run_scheme(top, scfg).items()
    parity = _parity_entries(k_prime, K, spec, f, T, max_batches)

    received = []  # per batch: [batch, H columns received so far]
    got_rank = 0

    def attempt():
        """Try a full decode; returns (report, ok) or a rank deficit."""
        entries = []
        per_batch = []
        for batch, h in received:
            C = f.matmul(batch.generator, h)
            Y = f.matmul(batch.packets, h)
            r = f.rank(h)
            entries.append((batch.batch_id, batch.contributors, C, Y, r))
            # the destination observes M slots per batch; erased slots are
            # zero columns of the transfer matrix and count toward RO
            per_batch.append((M, r))
        state = DecoderState.from_batches(K, M, f, entries + parity)
        state, rep = inactivation_decode(state)
        if not rep.success:
            return max(1, rep.rank_deficit)
        decoded = {v: state.decoded[v] for v in range(K)}
        final = precode_complete(decoded, k_prime, spec, f, T)
        ok = final is not None and np.array_equal(final, inputs)
        report = overheads(per_batch, k_prime,
                           inactivations=rep.inactivations)
        return report, ok

    outcome = None
    need = K - n_par  # total batch-equation rank required to try a decode
    for b in range(max_batches):
        batch = generate_batch(b, trial_seed, psi, K, M, q, inputs=inter)
        h_full = tr.hs[b]
        if got_rank + min(*h_full.shape) < need:
            # cannot possibly decode yet: take the whole batch
            received.append([batch, h_full])
            got_rank += f.rank(h_full)
            continue
        # packet-by-packet tail
        received.append([batch, h_full[:, :0]])
        done = False
        for col in range(1, h_full.shape[1] + 1):
            received[-1][1] = h_full[:, :col]
            if got_rank + f.rank(h_full[:, :col]) < need:
                continue
            got = attempt()
            if isinstance(got, int):
                need += got  # rank deficit: keep receiving
            else:
                outcome = got
                done = True
                break
        if done:
            break
        got_rank += f.rank(h_full)
    if outcome is None:
        return {"success": False, "mismatch": False,
                "batches": len(received), "ro": None, "co": None,
                "inactivations": None}
    report, ok = outcome
    return {"success": True, "mismatch": not ok,
            "batches": len(received), "ro": report.ro, "co": report.co,
            "inactivations": report.inactivations, "cr": report.cr}


def cmd_endtoend(cfg: dict, seed: int, out, trials):
    top = NetworkTopology.from_json_dict(cfg["topology"])
    psi = DegreeDistribution.from_json_dict(cfg["psi"])
    f = _field(int(cfg["scheme"]["q"]))
    trials = trials or int(cfg.get("trials", 1))
    base = RandomStream(seed)
    results = []
    for t in range(trials):
        trial_seed = int(base.derive("trial", t).gen.integers(0, 2 ** 62))
        results.append(_endtoend_trial(cfg, f, psi, top, trial_seed))
    good = [r for r in results if r["success"]]

    def agg(key):
        vals = [r[key] for r in good]
        if not vals:
            return None
        return {"min": float(np.min(vals)), "mean": float(np.mean(vals)),
                "max": float(np.max(vals))}

    report = {
        "schema": SCHEMA,
        "trials": trials,
        "failures": trials - len(good),
        "mismatches": sum(r["mismatch"] for r in results),
        "ro": agg("ro"),
        "co": agg("co"),
        "inactivations": agg("inactivations"),
        "batches": agg("batches"),
        "per_trial": results,
    }
    _write(out, _dump_json(report))
    return 0


# -- sweep -----------------------------------------------------------------

def cmd_sweep(cfg: dict, seed: int, out, trials):
    """Optimizer value over randomly sampled rank distributions."""
    M = int(cfg["M"])
    q = int(cfg["q"])
    etas = [float(e) for e in cfg["etas"]]
    samples = trials or int(cfg.get("samples", 100))
    base = RandomStream(seed)
    degrees_by_eta = {}
    for eta in etas:
        D = max_degree(M, eta)
        degrees_by_eta[eta] = (thin_degrees(D)
                               if cfg.get("thin_degrees", True) else None)
    rows = []
    for i in range(samples):
        h = sample_rank_dist(M, base.derive("sample", i))
        s_bar = float(effective_dist(h, q).weighted_sum())
        for eta in etas:
            res = optimize_p1(h, q, eta, degrees=degrees_by_eta[eta])
            theta_tilde = ((1 - eta) * res.value / s_bar if s_bar > 0
                           else 0.0)
            rows.append((i, eta, float(res.value), s_bar,
                         float(theta_tilde)))
    _write(out, _csv(("sample", "eta", "theta_hat", "sum_r_hbar",
                      "theta_tilde"), rows, _config_hash(cfg), seed))
    return 0


# -- entry point -----------------------------------------------------------

_COMMANDS = {
    "analyze": cmd_analyze,
    "optimize": cmd_optimize,
    "evolve": cmd_evolve,
    "simulate": cmd_simulate,
    "endtoend": cmd_endtoend,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="batskit",
        description="batch sparse code analysis and simulation driver")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=None)
        p.add_argument("--trials", type=int, default=None)
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, args.seed, args.out,
                                       args.trials)
    except (ConfigError, KeyError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
