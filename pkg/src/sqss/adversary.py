"""Channel-tap adversaries and dishonest-participant attacks.

A tap sits on both directions of every dealer<->party quantum channel.  It
sees transit qubits and, later, whatever the protocol publishes; it never
sees private operation records or decoy positions, and order announcements
arrive only after the backward transit, so taps pair forward and backward
qubits by wire position alone.

Four channel attacks are modelled:

  * intercept-resend: stash the real qubit, substitute a random
    computational-basis fake, measure what comes back;
  * measure-resend: measure every transit in the computational basis and
    pass the collapsed qubit along;
  * double-CNOT: entangle a fresh ancilla with each forward qubit, apply a
    second CNOT against the positionally-paired backward qubit, measure;
  * entangle-measure: parameterised joint unitaries on (transit x d-level
    probe), one for each direction, probe measured after the return leg.

Collusion (a strict subset of parties pooling shares) is not a channel tap;
it is evaluated directly against the published matrix.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .quantum import CNOT, Basis, Ket, StatePool, UNITARY_TOL

if TYPE_CHECKING:
    from .protocol import Secret, SessionResult

ATTACK_KINDS = (
    "none",
    "intercept-resend",
    "measure-resend",
    "double-cnot",
    "entangle-measure",
    "collusion",
)


@dataclass(frozen=True)
class EmParams:
    """Real parameters of the canonical entangle-measure family.

    ``alpha``/``beta`` weight the forward operator's keep/flip branches;
    ``mu[w]``/``nu[w]`` set the backward target rotation conditioned on
    probe level w.  Both pairs must be normalised.
    """

    alpha: float
    beta: float
    mu: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    nu: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        if abs(self.alpha ** 2 + self.beta ** 2 - 1.0) > 1e-12:
            raise ValueError("alpha^2 + beta^2 must equal 1")
        if len(self.mu) != 4 or len(self.nu) != 4:
            raise ValueError("mu and nu must each hold 4 entries")
        for w, (m, v) in enumerate(zip(self.mu, self.nu)):
            if abs(m ** 2 + v ** 2 - 1.0) > 1e-12:
                raise ValueError(f"mu[{w}]^2 + nu[{w}]^2 must equal 1")


def build_em_family(params: EmParams, d: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Concrete (forward, backward) unitaries for the canonical family.

    Forward operator on (qubit x probe), probe starting in level 0:

        |0,0> -> alpha |0, level0> + beta |1, level1>
        |1,0> -> beta  |0, level2> + alpha |1, level0>

    The unflipped branches leave the probe in level 0 for either target
    bit, so at alpha=1 the operator is the identity and the probe carries
    no target information; flips are marked by levels 1 and 2.  Remaining
    columns are completed orthonormally.

    Backward operator: a target rotation by (mu_w, nu_w) conditioned on
    the probe level w, probe level preserved.  At nu=0, mu=1 it is the
    identity.
    """
    if d < 4:
        raise ValueError("probe dimension must be >= 4")
    dim = 2 * d

    def unit(bit: int, level: int) -> np.ndarray:
        v = np.zeros(dim, dtype=complex)
        v[bit * d + level] = 1.0
        return v

    cols: dict[int, np.ndarray] = {}
    cols[0 * d + 0] = params.alpha * unit(0, 0) + params.beta * unit(1, 1)
    cols[1 * d + 0] = params.beta * unit(0, 2) + params.alpha * unit(1, 0)
    fixed = list(cols.values())
    candidates = [unit(b, w) for b in (0, 1) for w in range(d)]
    for idx in range(dim):
        if idx in cols:
            continue
        for cand in candidates:
            v = cand.copy()
            for c in fixed:
                v -= np.vdot(c, v) * c
            norm = np.linalg.norm(v)
            if norm > 1e-6:
                v /= norm
                cols[idx] = v
                fixed.append(v)
                break
        else:
            raise ValueError("orthonormal completion failed")
    u_e = np.column_stack([cols[i] for i in range(dim)])

    u_f = np.zeros((dim, dim), dtype=complex)
    for w in range(d):
        mu = params.mu[w] if w < 4 else 1.0
        nu = params.nu[w] if w < 4 else 0.0
        rot = np.array([[mu, -nu], [nu, mu]], dtype=complex)
        for b_in in (0, 1):
            for b_out in (0, 1):
                u_f[b_out * d + w, b_in * d + w] = rot[b_out, b_in]

    for name, u in (("forward", u_e), ("backward", u_f)):
        err = np.abs(u.conj().T @ u - np.eye(dim)).max()
        if err > UNITARY_TOL:
            raise ValueError(f"{name} operator not unitary (deviation {err:.3e})")
    return u_e, u_f


def load_complex_matrix(path: str) -> np.ndarray:
    """Read a square complex matrix: row-major 're,im' pairs, whitespace-split."""
    with open(path, "r", encoding="utf-8") as fh:
        tokens = fh.read().split()
    values = []
    for tok in tokens:
        re_s, _, im_s = tok.partition(",")
        if not _:
            raise ValueError(f"expected 're,im' pair, got {tok!r}")
        values.append(complex(float(re_s), float(im_s)))
    dim = math.isqrt(len(values))
    if dim * dim != len(values):
        raise ValueError(f"{len(values)} entries do not form a square matrix")
    return np.array(values, dtype=complex).reshape(dim, dim)


@dataclass(frozen=True)
class AttackModel:
    """Tagged adversary description routed into a session."""

    kind: str
    em_ue: np.ndarray | None = None
    em_uf: np.ndarray | None = None
    em_dim: int = 4
    dishonest: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.kind == "entangle-measure":
            if self.em_ue is None or self.em_uf is None:
                raise ValueError("entangle-measure requires both operators")
            dim = 2 * self.em_dim
            for name, u in (("forward", self.em_ue), ("backward", self.em_uf)):
                if u.shape != (dim, dim):
                    raise ValueError(f"{name} operator must be {dim}x{dim}")
                err = np.abs(u.conj().T @ u - np.eye(dim)).max()
                if err > UNITARY_TOL:
                    raise ValueError(f"{name} operator not unitary (deviation {err:.3e})")

    @classmethod
    def none(cls) -> "AttackModel":
        return cls(kind="none")

    @classmethod
    def intercept_resend(cls) -> "AttackModel":
        return cls(kind="intercept-resend")

    @classmethod
    def measure_resend(cls) -> "AttackModel":
        return cls(kind="measure-resend")

    @classmethod
    def double_cnot(cls) -> "AttackModel":
        return cls(kind="double-cnot")

    @classmethod
    def entangle_measure(cls, params: EmParams, d: int = 4) -> "AttackModel":
        u_e, u_f = build_em_family(params, d)
        return cls(kind="entangle-measure", em_ue=u_e, em_uf=u_f, em_dim=d)

    @classmethod
    def entangle_measure_raw(cls, u_e: np.ndarray, u_f: np.ndarray,
                             d: int) -> "AttackModel":
        return cls(kind="entangle-measure", em_ue=u_e, em_uf=u_f, em_dim=d)

    @classmethod
    def collusion(cls, dishonest: tuple[int, ...]) -> "AttackModel":
        if not dishonest:
            raise ValueError("collusion needs at least one dishonest party")
        return cls(kind="collusion", dishonest=tuple(sorted(set(dishonest))))


@dataclass
class EveReport:
    """Everything the tap recorded, keyed by (party index, wire position)."""

    attack: str
    forward_bits: dict = field(default_factory=dict)
    backward_bits: dict = field(default_factory=dict)
    probe_outcomes: dict = field(default_factory=dict)
    guessed_bits: dict | None = None
    strategy_note: str = ""


class ChannelTap:
    """Pass-through tap; subclasses override the two transit hooks.

    Hooks return the slot actually delivered, so an attack may substitute a
    different qubit.  The base class touches nothing and draws no
    randomness, keeping tap-equipped honest sessions bit-identical to
    bare ones.
    """

    kind = "none"

    def __init__(self):
        self.report_data = EveReport(attack=self.kind)

    def forward(self, party: int, pos: int, slot: int, pool: StatePool,
                rng: random.Random) -> int:
        return slot

    def backward(self, party: int, pos: int, slot: int, pool: StatePool,
                 rng: random.Random) -> int:
        return slot

    def report(self) -> EveReport:
        return self.report_data


class InterceptResendTap(ChannelTap):
    """Substitute uniformly random computational-basis fakes on the way out."""

    kind = "intercept-resend"

    def __init__(self):
        super().__init__()
        self.stolen: dict = {}

    def forward(self, party, pos, slot, pool, rng):
        bit = rng.getrandbits(1)
        fake = pool.prepare_single(Ket.ONE if bit else Ket.ZERO)
        self.stolen[(party, pos)] = slot
        self.report_data.forward_bits[(party, pos)] = bit
        return fake

    def backward(self, party, pos, slot, pool, rng):
        self.report_data.backward_bits[(party, pos)] = pool.measure(slot, Basis.Z, rng)
        return slot


class MeasureResendTap(ChannelTap):
    """Measure every transit in the computational basis, resend in place."""

    kind = "measure-resend"

    def forward(self, party, pos, slot, pool, rng):
        self.report_data.forward_bits[(party, pos)] = pool.measure(slot, Basis.Z, rng)
        return slot

    def backward(self, party, pos, slot, pool, rng):
        self.report_data.backward_bits[(party, pos)] = pool.measure(slot, Basis.Z, rng)
        return slot


class DoubleCnotTap(ChannelTap):
    """Ancilla CNOT on the way out, a second CNOT on the way back.

    Pairing is positional (j-th qubit out <-> j-th qubit back on the same
    channel), so a party's reorder makes the second CNOT hit a different
    photon than the first.
    """

    kind = "double-cnot"

    def __init__(self):
        super().__init__()
        self.probes: dict = {}

    def forward(self, party, pos, slot, pool, rng):
        probe = pool.prepare_single(Ket.ZERO)
        pool.apply_unitary([slot, probe], CNOT)
        self.probes[(party, pos)] = probe
        return slot

    def backward(self, party, pos, slot, pool, rng):
        probe = self.probes[(party, pos)]
        pool.apply_unitary([slot, probe], CNOT)
        self.report_data.probe_outcomes[(party, pos)] = pool.measure(probe, Basis.Z, rng)
        return slot


class EntangleMeasureTap(ChannelTap):
    """Joint unitaries against a fresh d-level probe on each leg."""

    kind = "entangle-measure"

    def __init__(self, u_e: np.ndarray, u_f: np.ndarray, d: int):
        super().__init__()
        self.u_e = u_e
        self.u_f = u_f
        self.d = d
        self.probes: dict = {}

    def forward(self, party, pos, slot, pool, rng):
        probe = pool.prepare_probe(self.d, level=0)
        pool.apply_unitary([slot, probe], self.u_e)
        self.probes[(party, pos)] = probe
        return slot

    def backward(self, party, pos, slot, pool, rng):
        probe = self.probes[(party, pos)]
        pool.apply_unitary([slot, probe], self.u_f)
        self.report_data.probe_outcomes[(party, pos)] = pool.measure(probe, Basis.Z, rng)
        return slot


def build_tap(attack: AttackModel | None, rng: random.Random) -> ChannelTap | None:
    """Instantiate the channel tap for an attack model, if it needs one."""
    if attack is None:
        return None
    if attack.kind == "none":
        return ChannelTap()
    if attack.kind == "intercept-resend":
        return InterceptResendTap()
    if attack.kind == "measure-resend":
        return MeasureResendTap()
    if attack.kind == "double-cnot":
        return DoubleCnotTap()
    if attack.kind == "entangle-measure":
        return EntangleMeasureTap(attack.em_ue, attack.em_uf, attack.em_dim)
    if attack.kind == "collusion":
        return None  # a participant attack, nothing on the channel
    raise ValueError(f"unknown attack kind {attack.kind!r}")


# -- Eve's inference -----------------------------------------------------------


@dataclass
class EveGuess:
    guesses: dict
    accuracy: float | None
    retained_accuracy: float | None
    mutual_information: float
    strategy: str


def eve_guess(result: "SessionResult", strategy: str = "auto",
              rng: random.Random | None = None) -> EveGuess:
    """Score Eve's per-position operation guesses against the ground truth.

    Positions are attributed by wire index: Eve pairs the j-th qubit she
    saw go out with the j-th qubit that came back, so after an honest
    reorder her pairing is usually wrong.  Ground truth comes from the
    session result, which the simulation harness holds but Eve never sees.
    """
    report: EveReport | None = result.eve_report
    rng = rng if rng is not None else random.Random(0)
    attack = report.attack if report is not None else "none"
    if strategy == "auto":
        strategy = {
            "none": "uniform",
            "intercept-resend": "xor-positional",
            "measure-resend": "xor-positional",
            "double-cnot": "probe-bit",
            "entangle-measure": "probe-level",
        }.get(attack, "uniform")

    total = result.config.positions_per_party
    guesses: dict = {}
    records: dict = {}
    for i in range(result.config.n):
        for pos in range(total):
            key = (i, pos)
            if strategy == "uniform":
                guesses[key] = rng.getrandbits(1)
                records[key] = 0
            elif strategy == "xor-positional":
                f = report.forward_bits.get(key)
                b = report.backward_bits.get(key)
                if f is None or b is None:
                    continue
                guesses[key] = f ^ b
                records[key] = 2 * f + b
            elif strategy == "probe-bit":
                p = report.probe_outcomes.get(key)
                if p is None:
                    continue
                guesses[key] = p
                records[key] = p
            elif strategy == "probe-level":
                p = report.probe_outcomes.get(key)
                if p is None:
                    continue
                guesses[key] = 1 if p in (1, 2) else 0
                records[key] = p
            else:
                raise ValueError(f"unknown strategy {strategy!r}")

    pairs = []
    retained_pairs = []
    for (i, pos), guess in guesses.items():
        truth = result.parties[i].record.bits[pos]
        pairs.append((records[(i, pos)], truth, guess))
        if pos not in result.dealer.decoy_positions[i]:
            retained_pairs.append((guess, truth))

    accuracy = (sum(1 for _, t, g in pairs if g == t) / len(pairs)) if pairs else None
    retained = (sum(1 for g, t in retained_pairs if g == t) / len(retained_pairs)
                if retained_pairs else None)
    mi = _mutual_information([(r, t) for r, t, _ in pairs])
    if report is not None:
        report.guessed_bits = guesses
        report.strategy_note = strategy
    return EveGuess(guesses=guesses, accuracy=accuracy,
                    retained_accuracy=retained, mutual_information=mi,
                    strategy=strategy)


def _mutual_information(pairs: list[tuple[int, int]]) -> float:
    """Plug-in MI estimate (bits) between two discrete sequences."""
    if not pairs:
        return 0.0
    n = len(pairs)
    joint: dict = {}
    px: dict = {}
    py: dict = {}
    for x, y in pairs:
        joint[(x, y)] = joint.get((x, y), 0) + 1
        px[x] = px.get(x, 0) + 1
        py[y] = py.get(y, 0) + 1
    mi = 0.0
    for (x, y), c in joint.items():
        p_xy = c / n
        mi += p_xy * math.log2(p_xy / ((px[x] / n) * (py[y] / n)))
    return max(mi, 0.0)


# -- participant attack ----------------------------------------------------------


@dataclass
class CollusionOutcome:
    guessed: "Secret"
    per_tuple_accuracy: float | None
    known_columns_correct: bool | None


def collusion_reconstruct(published: list[list[int]], records: dict[int, list[int]],
                          n: int, rng: random.Random,
                          truth: "Secret | None" = None) -> CollusionOutcome:
    """Dishonest subset reconstruction with uniform guesses for missing shares.

    ``records`` maps party index -> sifted bits for the colluders only; a
    full set is rejected because that is just legitimate reconstruction.
    """
    from .protocol import Secret

    if len(records) >= n:
        raise ValueError("all shares supplied; use ordinary reconstruction")
    L = len(published)
    values = []
    known_ok = True if truth is not None else None
    for j in range(L):
        bits = []
        for i in range(n):
            if i in records:
                bit = published[j][i] ^ records[i][j]
                if truth is not None:
                    true_bit = (truth.values[j] >> (n - 1 - i)) & 1
                    if bit != true_bit:
                        known_ok = False
            else:
                bit = rng.getrandbits(1)
            bits.append(bit)
        values.append(sum(b << (n - 1 - i) for i, b in enumerate(bits)))
    guessed = Secret(tuple(values), n)
    acc = None
    if truth is not None:
        acc = sum(1 for g, t in zip(guessed.values, truth.values) if g == t) / L
    return CollusionOutcome(guessed=guessed, per_tuple_accuracy=acc,
                            known_columns_correct=known_ok)
