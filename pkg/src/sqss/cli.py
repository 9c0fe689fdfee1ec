"""Command-line front end: run sessions, sweep attacks, verify, tabulate.

Exit codes: 0 success, 1 verification failure, 2 usage error, 3 session
aborted by the eavesdropping check.  All output is deterministic for a
fixed seed and --jobs 1; machine-readable files are only written when
--output (or --transcript) is given.
"""

from __future__ import annotations

import argparse
import json
import math
import random
import sys

from .adversary import AttackModel, EmParams, load_complex_matrix
from .analysis import derive_seed, efficiency_table, emit_report, estimate_detection
from .protocol import (
    Secret,
    SessionConfig,
    SessionHooks,
    load_config_file,
    run_session,
)
from .quantum import GhzSpec, StatePool, inner_product

ATTACK_CHOICES = ("none", "intercept-resend", "measure-resend", "double-cnot",
                  "em", "entangle-measure", "collusion")


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sqss",
        description="Simulate and analyse a multi-party semi-quantum "
                    "secret sharing protocol.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--n", type=str, default=None, help="number of classical parties")
        p.add_argument("--L", type=str, default=None, help="number of shared values")
        p.add_argument("--seed", type=int, default=None, help="session seed (default 0)")
        p.add_argument("--decoys-per-party", type=int, default=None,
                       help="check positions per party (default L)")
        p.add_argument("--abort-threshold", type=float, default=None,
                       help="tolerated decoy error fraction (default 0)")
        p.add_argument("--attack", choices=ATTACK_CHOICES, default=None,
                       help="adversary model (default none)")
        p.add_argument("--alpha", type=float, default=None,
                       help="entangle-measure keep amplitude (beta follows)")
        p.add_argument("--mu", type=str, default=None,
                       help="entangle-measure return weights, e.g. 1,1,1,1")
        p.add_argument("--nu", type=str, default=None,
                       help="entangle-measure flip weights, e.g. 0,0,0,0")
        p.add_argument("--em-ue", default=None,
                       help="file with the forward operator (re,im pairs, row-major)")
        p.add_argument("--em-uf", default=None,
                       help="file with the backward operator")
        p.add_argument("--em-dim", type=int, default=None, help="probe dimension (default 4)")
        p.add_argument("--dishonest", type=str, default=None,
                       help="colluding party indices, e.g. 1,2")
        p.add_argument("--output", default=None, help="write a machine-readable report here")
        p.add_argument("--format", choices=("csv", "json"), default="csv",
                       help="report format for --output")

    p_run = sub.add_parser("run", help="run a single session")
    add_common(p_run)
    p_run.add_argument("--secret", default=None,
                       help="comma-separated shared values, e.g. 3,0,2")
    p_run.add_argument("--random-secret", action="store_true",
                       help="derive the secret from the session seed")
    p_run.add_argument("--transcript", default=None,
                       help="dump the message transcript as JSONL here")

    p_sweep = sub.add_parser("sweep", help="Monte-Carlo detection rates")
    add_common(p_sweep)
    p_sweep.add_argument("--attacks", default="",
                         help="comma-separated attack list (may be empty)")
    p_sweep.add_argument("--trials", type=int, default=1000, help="sessions per attack")
    p_sweep.add_argument("--jobs", type=int, default=1, help="worker threads (default 1)")
    p_sweep.add_argument("--aligned", action="store_true",
                         help="pin party reorders to the identity (oracle comparison)")

    p_verify = sub.add_parser("verify", help="exhaustive correctness suites")
    p_verify.add_argument("--n-max", type=int, default=3)
    p_verify.add_argument("--l-max", type=int, default=2)
    p_verify.add_argument("--seed", type=int, default=0)
    p_verify.add_argument("--inject-fault", action="store_true",
                          help="flip one published bit to demonstrate detection")

    p_eff = sub.add_parser("efficiency", help="qubit-efficiency comparison table")
    p_eff.add_argument("--n", default="1..5", help="party counts: N, A..B or a,b,c")
    p_eff.add_argument("--output", default=None)
    p_eff.add_argument("--format", choices=("csv", "json"), default="csv")

    return parser


def _parse_int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError):
        raise UsageError(f"{name} must be an integer, got {value!r}")


def _parse_floats(text: str, name: str, count: int) -> tuple[float, ...]:
    parts = [p for p in text.split(",") if p != ""]
    if len(parts) != count:
        raise UsageError(f"{name} needs {count} comma-separated values")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"{name} must be numeric")


def parse_n_range(text: str) -> list[int]:
    """Accept '3', '1..5' or '1,2,4'."""
    text = text.strip()
    if ".." in text:
        lo_s, _, hi_s = text.partition("..")
        lo, hi = _parse_int(lo_s, "--n"), _parse_int(hi_s, "--n")
        if lo < 1 or hi < lo:
            raise UsageError(f"bad range {text!r}")
        return list(range(lo, hi + 1))
    if "," in text:
        return [_parse_int(p, "--n") for p in text.split(",") if p]
    return [_parse_int(text, "--n")]


def _merged_settings(args) -> dict:
    settings = {}
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    for key in ("n", "L", "seed", "decoys_per_party", "abort_threshold", "attack",
                "alpha", "mu", "nu", "em_dim", "dishonest", "trials"):
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _session_config(settings: dict) -> SessionConfig:
    if "n" not in settings or "L" not in settings:
        raise UsageError("both --n and --L are required (flag or config file)")
    n = _parse_int(settings["n"], "--n")
    L = _parse_int(settings["L"], "--L")
    if n < 1 or L < 1:
        raise UsageError("--n and --L must be >= 1")
    decoys = settings.get("decoys_per_party")
    threshold = settings.get("abort_threshold", 0.0)
    seed = _parse_int(settings.get("seed", 0), "--seed")
    try:
        return SessionConfig(
            n=n, L=L, seed=seed,
            decoys_per_party=None if decoys is None else _parse_int(decoys, "--decoys-per-party"),
            abort_threshold=float(threshold),
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _attack_model(settings: dict, args) -> AttackModel | None:
    name = settings.get("attack", "none")
    if name in ("none", None):
        return None
    if name == "intercept-resend":
        return AttackModel.intercept_resend()
    if name == "measure-resend":
        return AttackModel.measure_resend()
    if name == "double-cnot":
        return AttackModel.double_cnot()
    if name in ("em", "entangle-measure"):
        d = _parse_int(settings.get("em_dim", 4), "--em-dim")
        ue_path = getattr(args, "em_ue", None)
        uf_path = getattr(args, "em_uf", None)
        if ue_path or uf_path:
            if not (ue_path and uf_path):
                raise UsageError("--em-ue and --em-uf must be given together")
            try:
                return AttackModel.entangle_measure_raw(
                    load_complex_matrix(ue_path), load_complex_matrix(uf_path), d)
            except ValueError as exc:
                raise UsageError(str(exc))
        alpha = settings.get("alpha", 1.0)
        try:
            alpha = float(alpha)
            beta = math.sqrt(max(0.0, 1.0 - alpha * alpha))
            mu = _parse_floats(str(settings.get("mu", "1,1,1,1")), "--mu", 4)
            nu = _parse_floats(str(settings.get("nu", "0,0,0,0")), "--nu", 4)
            return AttackModel.entangle_measure(
                EmParams(alpha=alpha, beta=beta, mu=mu, nu=nu), d=d)
        except ValueError as exc:
            raise UsageError(str(exc))
    if name == "collusion":
        spec = str(settings.get("dishonest", ""))
        if not spec:
            raise UsageError("collusion requires --dishonest indices")
        try:
            parties = tuple(int(p) for p in spec.split(",") if p)
            return AttackModel.collusion(parties)
        except ValueError as exc:
            raise UsageError(str(exc))
    raise UsageError(f"unknown attack {name!r}")


def _parse_secret(args, config: SessionConfig) -> Secret:
    if args.random_secret and args.secret:
        raise UsageError("give either --secret or --random-secret, not both")
    if args.random_secret:
        rng = random.Random(derive_seed(config.seed, 0x5EC))
        return Secret.random(config.n, config.L, rng)
    if args.secret:
        try:
            values = tuple(int(v) for v in args.secret.split(","))
            return Secret(values, config.n)
        except ValueError as exc:
            raise UsageError(f"bad --secret: {exc}")
    raise UsageError("a secret is required: --secret v1,v2,... or --random-secret")


# -- commands ------------------------------------------------------------------


def cmd_run(args) -> int:
    settings = _merged_settings(args)
    config = _session_config(settings)
    attack = _attack_model(settings, args)
    secret = _parse_secret(args, config)
    if secret.n != config.n or secret.tuple_count != config.L:
        raise UsageError("secret length must equal L with values below 2^n")

    result = run_session(config, secret, attack=attack)

    attack_name = attack.kind if attack is not None else "none"
    print(f"session: n={config.n} L={config.L} seed={config.seed} attack={attack_name}")
    print(f"decoy checks: {result.decoys_checked} checked, "
          f"errors per party {result.per_party_errors}")
    if args.transcript:
        with open(args.transcript, "w", encoding="utf-8") as fh:
            for event in result.transcript.events:
                fh.write(json.dumps(event) + "\n")
        print(f"transcript: {args.transcript} ({len(result.transcript.events)} events)")

    summary = {
        "n": config.n,
        "L": config.L,
        "seed": config.seed,
        "attack": attack_name,
        "aborted": result.aborted,
        "decoys_checked": result.decoys_checked,
        "per_party_errors": result.per_party_errors,
        "reconstructed": list(result.reconstructed.values) if result.reconstructed else None,
        "secret_matches": (result.reconstructed == secret
                           if result.reconstructed is not None else None),
    }
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

    if result.aborted:
        print("aborted: decoy-check error rate exceeded the threshold")
        return 3
    print("reconstructed:", ",".join(str(v) for v in result.reconstructed.values))
    print("secret recovered:", "yes" if result.reconstructed == secret else "NO")
    return 0


def cmd_sweep(args) -> int:
    settings = _merged_settings(args)
    config = _session_config(settings)
    names = [a for a in (args.attacks or "").split(",") if a]
    for name in names:
        if name not in ATTACK_CHOICES or name == "collusion":
            raise UsageError(f"unknown or unsupported sweep attack {name!r}")
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")

    estimates = []
    for name in names:
        sweep_settings = dict(settings)
        sweep_settings["attack"] = name
        attack = _attack_model(sweep_settings, args) or AttackModel.none()
        est = estimate_detection(config, attack, args.trials,
                                 jobs=args.jobs, aligned=args.aligned)
        estimates.append(est)
        print(f"{est.attack}: per-decoy rate {est.per_decoy_rate:.4f} "
              f"(95% CI {est.ci_low:.4f}..{est.ci_high:.4f}), "
              f"abort rate {est.abort_rate:.4f} over {est.trials} sessions")

    report = emit_report(estimates, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(report)
        print(f"report: {args.output}")
    if not names:
        print("no attacks requested; header-only report")
    return 0


def cmd_verify(args) -> int:
    if args.n_max < 1 or args.l_max < 1:
        raise UsageError("--n-max and --l-max must be >= 1")
    failures: list[str] = []

    # entangled-tuple orthonormality, all index pairs at both signs
    for n in range(1, args.n_max + 1):
        pool = StatePool()
        for sign in (1, -1):
            factors = []
            for k in range(1 << n):
                slots = pool.prepare_ghz(GhzSpec(n=n, k=k, sign=sign))
                factors.append(pool.factor_of(slots[0]))
            for a in range(len(factors)):
                for b in range(len(factors)):
                    want = 1.0 if a == b else 0.0
                    got = inner_product(factors[a], factors[b])
                    if abs(got - want) >= 1e-12:
                        failures.append(
                            f"orthonormality n={n} sign={sign} k={a} k'={b}: {got}")
    print(f"orthonormality suite (n <= {args.n_max}): "
          f"{'ok' if not failures else 'FAILED'}")

    # exhaustive masked-bit algebra over operation and collapse branches
    checked = 0
    cap = 4096
    rng = random.Random(args.seed)
    fault_pending = bool(args.inject_fault)
    for n in range(1, args.n_max + 1):
        for L in range(1, args.l_max + 1):
            config = SessionConfig(n=n, L=L, seed=derive_seed(args.seed, n * 37 + L))
            per_party = config.positions_per_party
            op_bits = n * per_party
            total = 1 << (op_bits + L)
            if total <= cap:
                combos = range(total)
            else:
                combos = [rng.getrandbits(op_bits + L) for _ in range(512)]
            for combo in combos:
                ops = []
                for i in range(n):
                    chunk = (combo >> (i * per_party)) & ((1 << per_party) - 1)
                    ops.append([(chunk >> p) & 1 for p in range(per_party)])
                branches = [(combo >> (op_bits + j)) & 1 for j in range(L)]
                secret = Secret.random(n, L, random.Random(derive_seed(args.seed, combo)))
                hooks = SessionHooks(party_ops=ops, ghz_branch=branches)
                result = run_session(config, secret, hooks=hooks)
                if result.aborted:
                    failures.append(f"honest session aborted: n={n} L={L} combo={combo}")
                    continue
                published = [row[:] for row in result.published]
                if fault_pending:
                    published[0][0] ^= 1  # deliberate corruption, must be caught
                    fault_pending = False
                for j in range(L):
                    for i in range(n):
                        expect = result.dealer.ghz_bits[j][i] ^ \
                            result.parties[i].record.sifted[j]
                        if published[j][i] != expect:
                            failures.append(
                                f"masked-bit identity violated at party i={i + 1}, "
                                f"tuple j={j + 1} (n={n}, L={L}, combo={combo}): "
                                f"published {published[j][i]}, expected {expect}")
                if result.reconstructed != secret:
                    failures.append(f"reconstruction mismatch n={n} L={L} combo={combo}")
                checked += 1
    print(f"branch algebra suite: {checked} sessions checked, "
          f"{'ok' if not failures else 'FAILED'}")

    if failures:
        print("counterexamples:")
        for line in failures[:10]:
            print(" ", line)
        return 1
    return 0


def cmd_efficiency(args) -> int:
    try:
        n_values = parse_n_range(args.n)
    except UsageError:
        raise
    entries = efficiency_table(n_values)
    print("protocol  n   efficiency")
    for e in entries:
        print(f"{e.protocol_id:<9} {e.n:<3} {e.eta.numerator}/{e.eta.denominator}")
    report = emit_report(entries, args.format)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(report)
        print(f"report: {args.output}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "efficiency":
            return cmd_efficiency(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1
    parser.error("no command given")
    return 2


if __name__ == "__main__":
    sys.exit(main())
