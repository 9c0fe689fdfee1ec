"""Quantitative harness: exact detection oracles, Monte Carlo, efficiency.

The exact oracles walk every branch of a single decoy check by hand:
decoy state (weight 1/4), party operation (weight 1/2), adversary
randomness and measurement branches with their exact weights, entirely in
rational arithmetic, independent of the statevector simulator.  Monte
Carlo estimates from full sessions are then required to agree with them,
so each side checks the other.

Efficiency figures are exact rationals throughout: shared classical bits
divided by generated qubits, compared against three earlier multi-party
schemes (identified as ref34, ref35 and ref36 in reports).
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .adversary import AttackModel, EmParams
from .protocol import Permutation, Secret, SessionConfig, SessionHooks, run_session

Z95 = 1.959963984540054  # two-sided 95% normal quantile

EXACT_ATTACKS = ("intercept-resend", "measure-resend", "double-cnot", "entangle-measure")

# enumeration labels: four decoy states x two party operations
_STATES = ("z0", "z1", "x+", "x-")
_OPS = ("measure-flip", "reflect")


@dataclass(frozen=True)
class DetectionEstimate:
    """Monte-Carlo per-decoy failure and session abort rates."""

    attack: str
    n: int
    L: int
    trials: int
    decoys_checked: int
    failures: int
    per_decoy_rate: float
    abort_rate: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class EfficiencyEntry:
    protocol_id: str
    n: int
    eta: Fraction


def wilson_interval(failures: int, total: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if total == 0:
        return (0.0, 1.0)
    p = failures / total
    denom = 1.0 + z * z / total
    centre = (p + z * z / (2 * total)) / denom
    half = (z / denom) * ((p * (1 - p) / total + z * z / (4 * total * total)) ** 0.5)
    return (max(0.0, centre - half), min(1.0, centre + half))


def derive_seed(seed: int, index: int) -> int:
    """Deterministic per-trial seed, independent of scheduling order."""
    return (seed * 0x9E3779B97F4A7C15 + index * 0xBF58476D1CE4E5B9 + 1) % (1 << 63)


def estimate_detection(config: SessionConfig, attack: AttackModel, trials: int,
                       jobs: int = 1, aligned: bool = False) -> DetectionEstimate:
    """Run independent sessions and tally decoy-check failures.

    Each trial draws a fresh random secret and runs one full session under
    the attack.  ``aligned=True`` pins every party's reorder to the
    identity (test support for comparing against the fixed-alignment
    oracles).  Aggregation is over counts only, so the result does not
    depend on worker scheduling.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(index: int) -> tuple[int, int, int]:
        seed = derive_seed(config.seed, index)
        rng = random.Random(seed)
        secret = Secret.random(config.n, config.L, rng)
        cfg = SessionConfig(n=config.n, L=config.L, seed=seed,
                            decoys_per_party=config.decoys_per_party,
                            abort_threshold=config.abort_threshold)
        hooks = None
        if aligned:
            m = cfg.positions_per_party
            hooks = SessionHooks(
                party_reorders=[Permutation.identity(m) for _ in range(cfg.n)])
        result = run_session(cfg, secret, attack=attack, hooks=hooks)
        return (sum(result.per_party_errors), result.decoys_checked,
                1 if result.aborted else 0)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(one, range(trials)))
    else:
        outcomes = [one(i) for i in range(trials)]

    failures = sum(o[0] for o in outcomes)
    checked = sum(o[1] for o in outcomes)
    aborts = sum(o[2] for o in outcomes)
    rate = failures / checked if checked else 0.0
    lo, hi = wilson_interval(failures, checked)
    return DetectionEstimate(
        attack=attack.kind, n=config.n, L=config.L, trials=trials,
        decoys_checked=checked, failures=failures, per_decoy_rate=rate,
        abort_rate=aborts / trials, ci_low=lo, ci_high=hi,
    )


# -- exact oracles ---------------------------------------------------------------


def exact_branch_table(kind: str, em: EmParams | None = None,
                       aligned: bool = True, positions: int = 2,
                       ) -> dict[tuple[str, str], Fraction]:
    """Exact per-branch failure probability for one checked decoy.

    Keys are (decoy state, party operation); values are the conditional
    failure probability of the check in that branch, as exact rationals.
    ``positions`` is the per-party sequence length used for the
    misaligned double-CNOT pairing probability.
    """
    if kind == "measure-resend":
        return _measure_resend_branches()
    if kind == "intercept-resend":
        return _intercept_resend_branches()
    if kind == "double-cnot":
        return _double_cnot_branches(aligned, positions)
    if kind == "entangle-measure":
        if em is None:
            raise ValueError("entangle-measure oracle needs the family parameters")
        return _entangle_measure_branches(em)
    raise ValueError(f"no exact oracle for attack {kind!r}")


def enumerate_detection_exact(kind: str, n: int = 1, L: int = 1,
                              em: EmParams | None = None,
                              aligned: bool = True) -> Fraction:
    """Exact per-decoy detection probability under uniform states and ops."""
    positions = 2 * L  # protocol default: one decoy interleaved per tuple
    table = exact_branch_table(kind, em=em, aligned=aligned, positions=positions)
    total = Fraction(0)
    for state in _STATES:
        for op in _OPS:
            total += Fraction(1, 4) * Fraction(1, 2) * table[(state, op)]
    return total


def _measure_resend_branches() -> dict[tuple[str, str], Fraction]:
    # Eve's forward Z-measurement leaves computational decoys untouched and
    # collapses the superposed ones to a uniformly random bit.  A flipped
    # reply is always consistent; only a reflected collapsed superposition
    # can betray her, and it does so half the time.
    table: dict[tuple[str, str], Fraction] = {}
    for state in ("z0", "z1"):
        table[(state, "measure-flip")] = Fraction(0)
        table[(state, "reflect")] = Fraction(0)
    for state in ("x+", "x-"):
        table[(state, "measure-flip")] = Fraction(0)
        # collapsed to |0> or |1>; the dealer's conjugate-basis check hits
        # the prepared state with probability 1/2 either way
        table[(state, "reflect")] = Fraction(1, 2)
    return table


def _intercept_resend_branches() -> dict[tuple[str, str], Fraction]:
    # The party only ever touches Eve's uniformly random computational fake
    # f.  Measure-flip: the reported outcome is f, which contradicts a
    # computational decoy half the time; the returned flip is always
    # internally consistent.  Reflect: the dealer measures |f> in the
    # preparation basis.
    table: dict[tuple[str, str], Fraction] = {}
    for state, bit in (("z0", 0), ("z1", 1)):
        # f != prepared bit with probability 1/2
        table[(state, "measure-flip")] = Fraction(1, 2)
        table[(state, "reflect")] = Fraction(1, 2)
    for state in ("x+", "x-"):
        table[(state, "measure-flip")] = Fraction(0)
        # X-measurement of a computational state: wrong half the time,
        # whatever f was
        table[(state, "reflect")] = Fraction(1, 2)
    return table


def _double_cnot_branches(aligned: bool, positions: int) -> dict[tuple[str, str], Fraction]:
    # Aligned pairing: the second ancilla gate exactly undoes the first, so
    # no branch ever fails.  Misaligned pairing leaves a reflected
    # superposed decoy entangled with the ancilla, and its conjugate-basis
    # check fails half the time; computational decoys and flipped replies
    # are unaffected because the entanglement is diagonal in that basis.
    table: dict[tuple[str, str], Fraction] = {
        (state, op): Fraction(0) for state in _STATES for op in _OPS
    }
    if not aligned:
        if positions < 1:
            raise ValueError("positions must be >= 1")
        p_misaligned = Fraction(1) - Fraction(1, positions)
        for state in ("x+", "x-"):
            table[(state, "reflect")] = p_misaligned * Fraction(1, 2)
    return table


def _entangle_measure_branches(em: EmParams) -> dict[tuple[str, str], Fraction]:
    # Canonical family, aligned pairing.  The forward operator keeps the
    # probe at level 0 on unflipped branches (either target bit) and marks
    # flips with levels 1 and 2; the backward operator rotates the target
    # by (mu_w, nu_w) conditioned on the probe level.  Failure weights
    # follow by expanding each branch over probe levels.
    a2 = Fraction(em.alpha) ** 2
    b2 = Fraction(em.beta) ** 2
    mu = [Fraction(m) for m in em.mu]
    nu = [Fraction(v) for v in em.nu]

    table: dict[tuple[str, str], Fraction] = {}
    # computational decoys: a forward flip (weight beta^2) contradicts the
    # party's reported outcome outright; otherwise only the backward
    # rotation on level 0 can flip the returned qubit
    table[("z0", "measure-flip")] = b2 + a2 * nu[0] ** 2
    table[("z1", "measure-flip")] = b2 + a2 * nu[0] ** 2
    table[("z0", "reflect")] = a2 * nu[0] ** 2 + b2 * mu[1] ** 2
    table[("z1", "reflect")] = a2 * nu[0] ** 2 + b2 * mu[2] ** 2
    # superposed decoys, measure-flip: the fresh reply is rotated under a
    # probe mixture of level 0 with level 2 (party saw 0) or level 1 (saw 1)
    flip_fail = a2 * nu[0] ** 2 + b2 * (nu[1] ** 2 + nu[2] ** 2) / 2
    table[("x+", "measure-flip")] = flip_fail
    table[("x-", "measure-flip")] = flip_fail
    # superposed decoys, reflect: conjugate-basis amplitude per probe level
    table[("x+", "reflect")] = (a2 * nu[0] ** 2
                                + b2 * (mu[1] + nu[1]) ** 2 / 4
                                + b2 * (mu[2] - nu[2]) ** 2 / 4)
    table[("x-", "reflect")] = (a2 * nu[0] ** 2
                                + b2 * (mu[1] - nu[1]) ** 2 / 4
                                + b2 * (mu[2] + nu[2]) ** 2 / 4)
    return table


# -- qubit efficiency --------------------------------------------------------------

PROTOCOL_IDS = ("ref34", "ref35", "ref36", "this_work")


def qubit_efficiency(protocol_id: str, n: int) -> EfficiencyEntry:
    """Shared-bits-per-generated-qubit ratio, as an exact rational."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if protocol_id == "this_work":
        eta = Fraction(1, 3 * n + 1)
    elif protocol_id == "ref34":
        eta = Fraction(1, 4 ** n)
    elif protocol_id == "ref35":
        eta = Fraction(1, 6 * n + 4)
    elif protocol_id == "ref36":
        eta = Fraction(1, 5 * n)
    else:
        raise ValueError(f"unknown protocol id {protocol_id!r}")
    return EfficiencyEntry(protocol_id=protocol_id, n=n, eta=eta)


def derive_efficiency_this_work(n: int, L: int, seed: int = 0,
                                ) -> tuple[int, int, Fraction]:
    """Count qubits actually created by a session and form c/q.

    The dealer contributes L entangled (n+1)-tuples plus n*L decoys; each
    party regenerates one fresh qubit per measure-flip.  The run uses a
    balanced operation tape (exactly half the positions flipped, the
    nominal replacement budget) so the count is deterministic.
    """
    if n < 1 or L < 1:
        raise ValueError("n and L must be >= 1")
    cfg = SessionConfig(n=n, L=L, seed=seed)
    rng = random.Random(derive_seed(seed, 0))
    secret = Secret.random(n, L, rng)
    per_party = cfg.positions_per_party
    tape = [1 if pos % 2 == 0 else 0 for pos in range(per_party)]
    hooks = SessionHooks(party_ops=[list(tape) for _ in range(n)])
    result = run_session(cfg, secret, hooks=hooks)
    if result.aborted:
        raise RuntimeError("honest counting session aborted unexpectedly")
    c = L
    q = result.qubits_created
    return c, q, Fraction(c, q)


def efficiency_table(n_values: list[int]) -> list[EfficiencyEntry]:
    """One entry per (protocol, n), protocols in a fixed report order."""
    return [qubit_efficiency(pid, n) for n in n_values for pid in PROTOCOL_IDS]


# -- reports -----------------------------------------------------------------------

DETECTION_FIELDS = ("attack", "n", "L", "trials", "per_decoy_rate",
                    "abort_rate", "ci_low", "ci_high")
EFFICIENCY_FIELDS = ("protocol", "n", "eta_num", "eta_den")


def emit_report(results: list, fmt: str) -> str:
    """Serialise detection estimates or efficiency entries.

    Field order is fixed and no timestamps are included, so identical
    inputs yield byte-identical output.
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format {fmt!r}")
    if results and isinstance(results[0], EfficiencyEntry):
        rows = [{
            "protocol": e.protocol_id,
            "n": e.n,
            "eta_num": e.eta.numerator,
            "eta_den": e.eta.denominator,
        } for e in results]
        fields = EFFICIENCY_FIELDS
    else:
        rows = [{
            "attack": r.attack,
            "n": r.n,
            "L": r.L,
            "trials": r.trials,
            "per_decoy_rate": r.per_decoy_rate,
            "abort_rate": r.abort_rate,
            "ci_low": r.ci_low,
            "ci_high": r.ci_high,
        } for r in results]
        fields = DETECTION_FIELDS
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    lines = [",".join(fields)]
    for row in rows:
        lines.append(",".join(_csv_cell(row[f]) for f in fields))
    return "\n".join(lines) + "\n"


def _csv_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)
