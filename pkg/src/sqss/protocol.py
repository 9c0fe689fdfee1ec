"""Dealer and classical-party state machines for the sharing protocol.

One session moves through six phases:

  1. the dealer encodes the secret into L entangled (n+1)-qubit tuples and
     keeps the first qubit of each,
  2. decoy photons are interleaved at uniformly random positions into each
     party's qubit sequence, which is then sent out,
  3. every party either measure-flips or reflects each position, reorders
     the results with a fresh random permutation, and sends them back,
  4. once all qubits are stored the parties announce their orders, the
     dealer restores them, and the decoy positions are checked,
  5. the dealer measures her kept qubits and the retained returns and
     publishes the XOR-masked bit matrix,
  6. the parties pool their operation bits to recover the secret; every
     share is required.

Every qubit transit passes through an optional adversary tap, and every
classical message and transit is appended to an ordered transcript.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .quantum import Basis, GhzSpec, Ket, PoolError, StatePool, bits_to_k

REFLECT = 0
MEASURE_FLIP = 1

DECOY_STATES = (Ket.ZERO, Ket.ONE, Ket.PLUS, Ket.MINUS)


class ProtocolViolation(RuntimeError):
    """A participant broke the message contract (malformed announcement)."""


class InsufficientShares(ValueError):
    """Reconstruction attempted without every party's record."""


@dataclass(frozen=True)
class Secret:
    """The dealer's message: L integers, each expressible in n bits."""

    values: tuple[int, ...]
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("party count must be >= 1")
        if not self.values:
            raise ValueError("secret must hold at least one value")
        for v in self.values:
            if not 0 <= v < (1 << self.n):
                raise ValueError(f"secret value {v} out of range for n={self.n}")

    @property
    def tuple_count(self) -> int:
        return len(self.values)

    @classmethod
    def random(cls, n: int, length: int, rng: random.Random) -> "Secret":
        return cls(tuple(rng.randrange(1 << n) for _ in range(length)), n)


@dataclass
class SessionConfig:
    """Run parameters; ``decoys_per_party`` defaults to L."""

    n: int
    L: int
    seed: int = 0
    decoys_per_party: int | None = None
    abort_threshold: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.decoys_per_party is None:
            self.decoys_per_party = self.L
        if self.decoys_per_party < 0:
            raise ValueError("decoys_per_party must be >= 0")
        if not 0.0 <= self.abort_threshold < 1.0:
            raise ValueError("abort_threshold must lie in [0, 1)")

    @property
    def positions_per_party(self) -> int:
        return self.L + self.decoys_per_party


def load_config_file(path: str) -> dict:
    """Parse a plain ``key = value`` config file into a flat dict.

    Blank lines and ``#`` comments are ignored.  Values are converted to
    int or float when they parse as such, otherwise kept as strings.
    """
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            for conv in (int, float):
                try:
                    value = conv(value)
                    break
                except ValueError:
                    continue
            out[key] = value
    return out


@dataclass(frozen=True)
class Permutation:
    """Bijection on [0, m): wire position j carries original index order[j]."""

    order: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("not a bijection")

    def __len__(self) -> int:
        return len(self.order)

    def apply(self, seq: list) -> list:
        return [seq[i] for i in self.order]

    def restore(self, seq: list) -> list:
        out = [None] * len(self.order)
        for wire, orig in enumerate(self.order):
            out[orig] = seq[wire]
        return out

    @classmethod
    def identity(cls, m: int) -> "Permutation":
        return cls(tuple(range(m)))

    @classmethod
    def shuffled(cls, m: int, rng: random.Random) -> "Permutation":
        order = list(range(m))
        rng.shuffle(order)
        return cls(tuple(order))


@dataclass
class DecoyRecord:
    state: Ket
    position: int  # index within the sent sequence


@dataclass
class OperationRecord:
    """A party's per-position choices: 1 = measure-flip, 0 = reflect."""

    bits: list[int]
    measured_outcomes: dict[int, int]  # position -> Z outcome, measure-flips only
    sifted: list[int] | None = None    # bits at non-decoy positions, original order


@dataclass
class DealerState:
    config: SessionConfig
    secret: Secret
    ghz_bits: list[list[int]]            # per tuple j, the n encoded bits
    kept_slots: list[int]                # dealer's retained qubit per tuple
    sent_slots: list[list[int]]          # per party, the outgoing sequence
    decoys: list[list[DecoyRecord]]      # per party
    decoy_positions: list[set[int]]      # per party
    retained_slots: list[list[int] | None] = None   # per party, original order, post-check
    checked: bool = False
    m0: list[int] | None = None
    measurements: list[list[int] | None] = None     # per party, Z results in tuple order
    published: list[list[int]] | None = None        # [j][i] masked bits

    def __post_init__(self):
        if self.retained_slots is None:
            self.retained_slots = [None] * self.config.n
        if self.measurements is None:
            self.measurements = [None] * self.config.n


@dataclass
class Transcript:
    """Ordered log of classical messages and qubit transits."""

    events: list[dict] = field(default_factory=list)

    def add(self, sender: str, receiver: str, kind: str, payload: str,
            decoy: bool | None = None) -> int:
        index = len(self.events)
        self.events.append({
            "index": index,
            "sender": sender,
            "receiver": receiver,
            "kind": kind,
            "payload": payload,
            "decoy": decoy,
        })
        return index

    def last_index(self, kind: str) -> int:
        idx = -1
        for ev in self.events:
            if ev["kind"] == kind:
                idx = ev["index"]
        return idx


@dataclass
class SessionHooks:
    """Test-only overrides for otherwise random protocol choices.

    ``party_ops[i]`` pins party i's operation bits, ``party_reorders[i]``
    pins its permutation, and ``ghz_branch[j]`` pins which superposition
    branch tuple j collapses into (0 means the dealer's qubit reads 0).
    """

    party_ops: list[list[int]] | None = None
    party_reorders: list[Permutation] | None = None
    ghz_branch: list[int] | None = None


@dataclass
class PartyView:
    record: OperationRecord
    permutation: Permutation


@dataclass
class SessionResult:
    config: SessionConfig
    reconstructed: Secret | None
    aborted: bool
    per_party_errors: list[int]
    decoys_checked: int
    published: list[list[int]] | None
    dealer: DealerState
    parties: list[PartyView]
    transcript: Transcript
    eve_report: object | None = None
    qubits_created: int = 0


# -- dealer ------------------------------------------------------------------


def dealer_prepare(config: SessionConfig, secret: Secret, pool: StatePool,
                   rng: random.Random) -> tuple[DealerState, list[list[int]]]:
    """Phases 1 and 2: entangled tuples, decoy interleaving, outgoing sequences.

    Returns the dealer's bookkeeping plus, per party, the sequence of slots
    to put on the forward channel.  Decoy positions are a uniformly random
    size-d subset of the L+d sequence positions.
    """
    if secret.n != config.n or secret.tuple_count != config.L:
        raise ValueError("secret shape does not match session config")

    kept: list[int] = []
    ghz_bits: list[list[int]] = []
    party_streams: list[list[int]] = [[] for _ in range(config.n)]
    for k in secret.values:
        spec = GhzSpec(n=config.n, k=k, sign=1)
        slots = pool.prepare_ghz(spec)
        kept.append(slots[0])
        ghz_bits.append(spec.a_bits)
        for i in range(config.n):
            party_streams[i].append(slots[i + 1])

    sent: list[list[int]] = []
    decoys: list[list[DecoyRecord]] = []
    decoy_positions: list[set[int]] = []
    d = config.decoys_per_party
    total = config.L + d
    for i in range(config.n):
        positions = sorted(rng.sample(range(total), d))
        pos_set = set(positions)
        seq: list[int] = []
        recs: list[DecoyRecord] = []
        stream = iter(party_streams[i])
        for pos in range(total):
            if pos in pos_set:
                state = DECOY_STATES[rng.randrange(4)]
                slot = pool.prepare_single(state)
                recs.append(DecoyRecord(state=state, position=pos))
                seq.append(slot)
            else:
                seq.append(next(stream))
        sent.append(seq)
        decoys.append(recs)
        decoy_positions.append(pos_set)

    state = DealerState(
        config=config, secret=secret, ghz_bits=ghz_bits, kept_slots=kept,
        sent_slots=sent, decoys=decoys, decoy_positions=decoy_positions,
    )
    return state, sent


def party_process(received: list[int], pool: StatePool, rng: random.Random,
                  ops: list[int] | None = None,
                  reorder: Permutation | None = None,
                  ) -> tuple[list[int], OperationRecord, Permutation]:
    """Phase 3 for one party: measure-flip or reflect, then reorder.

    A measure-flip Z-measures the received slot, records the outcome and
    emits a freshly prepared slot in the opposite computational state; a
    reflect emits the same slot.  ``ops`` and ``reorder`` pin the random
    choices for tests.
    """
    m = len(received)
    if ops is not None and len(ops) != m:
        raise ValueError("ops override has wrong length")
    bits: list[int] = []
    outcomes: dict[int, int] = {}
    processed: list[int] = []
    for pos, slot in enumerate(received):
        r = ops[pos] if ops is not None else rng.getrandbits(1)
        bits.append(r)
        if r == MEASURE_FLIP:
            out = pool.measure(slot, Basis.Z, rng)
            outcomes[pos] = out
            fresh = pool.prepare_single(Ket.ONE if out == 0 else Ket.ZERO)
            processed.append(fresh)
        else:
            processed.append(slot)
    perm = reorder if reorder is not None else Permutation.shuffled(m, rng)
    if len(perm) != m:
        raise ValueError("reorder override has wrong length")
    outgoing = perm.apply(processed)
    record = OperationRecord(bits=bits, measured_outcomes=outcomes)
    return outgoing, record, perm


@dataclass(frozen=True)
class DecoyCheck:
    """What the dealer must do and see for one announced decoy."""

    basis: Basis
    expected: int
    party_consistent: bool


def decoy_expectation(prepared: Ket, party_op: int,
                      party_outcome: int | None = None) -> DecoyCheck:
    """Checking rule for a single decoy position.

    Reflect: the dealer measures in the preparation basis and must see the
    prepared state.  Measure-flip: the dealer measures Z and must see the
    opposite of the party's reported outcome; for computational-basis
    decoys the party's outcome must additionally match the prepared bit.
    """
    if party_op == REFLECT:
        if party_outcome is not None:
            raise ValueError("reflect announcements carry no outcome")
        return DecoyCheck(basis=prepared.basis, expected=prepared.bit,
                          party_consistent=True)
    if party_op == MEASURE_FLIP:
        if party_outcome is None:
            raise ValueError("measure-flip announcements must include the outcome")
        consistent = True
        if prepared in (Ket.ZERO, Ket.ONE):
            consistent = party_outcome == prepared.bit
        return DecoyCheck(basis=Basis.Z, expected=1 - party_outcome,
                          party_consistent=consistent)
    raise ValueError(f"unknown operation {party_op!r}")


def dealer_check(state: DealerState, party_index: int, returned: list[int],
                 announced_order: Permutation,
                 announced_ops: dict[int, tuple[int, int | None]],
                 pool: StatePool, rng: random.Random) -> tuple[int, int]:
    """Phase 4 for one channel: restore order, measure decoys, count failures.

    ``announced_ops`` maps decoy positions to (operation, outcome-or-None).
    Returns (errors, checked).  Retained slots are stashed on the dealer
    state in original order for the later measurement phase.
    """
    total = state.config.positions_per_party
    if len(returned) != total or len(announced_order) != total:
        raise ProtocolViolation("returned sequence or order has wrong length")
    original = announced_order.restore(returned)

    errors = 0
    checked = 0
    for rec in state.decoys[party_index]:
        ann = announced_ops.get(rec.position)
        if ann is None:
            raise ProtocolViolation(f"missing announcement for decoy position {rec.position}")
        op, outcome = ann
        check = decoy_expectation(rec.state, op, outcome)
        seen = pool.measure(original[rec.position], check.basis, rng)
        checked += 1
        if not check.party_consistent or seen != check.expected:
            errors += 1

    state.retained_slots[party_index] = [
        original[pos] for pos in range(total)
        if pos not in state.decoy_positions[party_index]
    ]
    return errors, checked


def dealer_measure_publish(state: DealerState, pool: StatePool,
                           rng: random.Random) -> list[list[int]]:
    """Phase 5: measure kept and retained qubits, publish the masked matrix.

    Published entry [j][i] is the party-i measurement XOR the dealer's own
    qubit for tuple j.  Requires the decoy check to have run.
    """
    if not state.checked:
        raise PoolError("decoy check has not run; refusing to publish")
    cfg = state.config
    state.m0 = [pool.measure(s, Basis.Z, rng) for s in state.kept_slots]
    published = [[0] * cfg.n for _ in range(cfg.L)]
    for i in range(cfg.n):
        retained = state.retained_slots[i]
        if retained is None or len(retained) != cfg.L:
            raise ProtocolViolation(f"party {i} retained sequence incomplete")
        mi = [pool.measure(s, Basis.Z, rng) for s in retained]
        state.measurements[i] = mi
        for j in range(cfg.L):
            published[j][i] = mi[j] ^ state.m0[j]
    state.published = published
    return published


def reconstruct(published: list[list[int]], records: list[list[int]]) -> Secret:
    """Phase 6: all n parties pool their sifted bits to recover the secret.

    ``records[i]`` is party i's length-L sifted bit string; a missing or
    short record raises, since every share is required.
    """
    if not published:
        raise ValueError("empty published matrix")
    n = len(published[0])
    L = len(published)
    if len(records) != n or any(r is None for r in records):
        raise InsufficientShares(f"need all {n} party records")
    for r in records:
        if len(r) != L:
            raise InsufficientShares("party record has wrong length")
    values = []
    for j in range(L):
        bits = [published[j][i] ^ records[i][j] for i in range(n)]
        values.append(bits_to_k(bits))
    return Secret(tuple(values), n)


def sift_record(record: OperationRecord, decoy_positions: set[int]) -> list[int]:
    """Drop the check positions, keeping original sequence order."""
    sifted = [b for pos, b in enumerate(record.bits) if pos not in decoy_positions]
    record.sifted = sifted
    return sifted


# -- full session --------------------------------------------------------------


def run_session(config: SessionConfig, secret: Secret, attack=None,
                hooks: SessionHooks | None = None) -> SessionResult:
    """Execute one full session, routing every transit through the attack tap.

    ``attack`` is an adversary description (or None); a failed decoy check
    beyond the abort threshold yields an aborted result rather than an
    exception.
    """
    from .adversary import build_tap  # adversary depends only on quantum

    pool = StatePool()
    rng = random.Random(config.seed)
    transcript = Transcript()
    tap = build_tap(attack, rng) if attack is not None else None

    state, outgoing = dealer_prepare(config, secret, pool, rng)

    if hooks is not None and hooks.ghz_branch is not None:
        # Pin each tuple's collapse branch by forcing consistent outcomes on
        # every slot of the entangled factor, whichever side measures first.
        for j, branch in enumerate(hooks.ghz_branch):
            pool.force_outcome(state.kept_slots[j], branch)
            for i in range(config.n):
                a = state.ghz_bits[j][i]
                ghz_slot = state.sent_slots[i][
                    _retained_position(state.decoy_positions[i],
                                       config.positions_per_party, j)
                ]
                pool.force_outcome(ghz_slot, a ^ branch)

    # phase 2: forward transits
    delivered: list[list[int]] = []
    for i in range(config.n):
        seq = []
        for pos, slot in enumerate(outgoing[i]):
            transcript.add("alice", f"bob{i + 1}", "qubit", f"pos={pos}",
                           decoy=pos in state.decoy_positions[i])
            if tap is not None:
                slot = tap.forward(i, pos, slot, pool, rng)
            seq.append(slot)
        delivered.append(seq)

    # phase 3: party operations, reorder, backward transits
    returned: list[list[int]] = []
    party_views: list[PartyView] = []
    for i in range(config.n):
        ops = hooks.party_ops[i] if hooks is not None and hooks.party_ops else None
        reorder = (hooks.party_reorders[i]
                   if hooks is not None and hooks.party_reorders else None)
        out, record, perm = party_process(delivered[i], pool, rng,
                                          ops=ops, reorder=reorder)
        party_views.append(PartyView(record=record, permutation=perm))
        seq = []
        for pos, slot in enumerate(out):
            transcript.add(f"bob{i + 1}", "alice", "qubit", f"pos={pos}",
                           decoy=perm.order[pos] in state.decoy_positions[i])
            if tap is not None:
                slot = tap.backward(i, pos, slot, pool, rng)
            seq.append(slot)
        returned.append(seq)

    # phase 4: order announcements (only after every qubit is stored), check
    for i in range(config.n):
        transcript.add(f"bob{i + 1}", "alice", "order",
                       ",".join(str(x) for x in party_views[i].permutation.order))
    per_party_errors: list[int] = []
    checked_total = 0
    aborted = False
    for i in range(config.n):
        announced = {
            pos: (party_views[i].record.bits[pos],
                  party_views[i].record.measured_outcomes.get(pos))
            for pos in state.decoy_positions[i]
        }
        transcript.add(f"bob{i + 1}", "alice", "decoy-ops",
                       f"positions={len(announced)}")
        errors, checked = dealer_check(state, i, returned[i],
                                       party_views[i].permutation,
                                       announced, pool, rng)
        per_party_errors.append(errors)
        checked_total += checked
        transcript.add("alice", f"bob{i + 1}", "check",
                       f"errors={errors} checked={checked}")
        if checked and errors / checked > config.abort_threshold:
            aborted = True
    state.checked = True

    for i in range(config.n):
        sift_record(party_views[i].record, state.decoy_positions[i])

    eve_report = tap.report() if tap is not None else None
    if aborted:
        transcript.add("alice", "all", "abort",
                       f"errors={per_party_errors}")
        return SessionResult(
            config=config, reconstructed=None, aborted=True,
            per_party_errors=per_party_errors, decoys_checked=checked_total,
            published=None, dealer=state, parties=party_views,
            transcript=transcript, eve_report=eve_report,
            qubits_created=pool.created_count,
        )

    # phase 5: measure and publish
    published = dealer_measure_publish(state, pool, rng)
    transcript.add("alice", "all", "publish", f"tuples={config.L}")

    # phase 6: cooperative reconstruction
    recovered = reconstruct(published, [pv.record.sifted for pv in party_views])
    transcript.add("all", "all", "reconstruct", f"tuples={config.L}")

    return SessionResult(
        config=config, reconstructed=recovered, aborted=False,
        per_party_errors=per_party_errors, decoys_checked=checked_total,
        published=published, dealer=state, parties=party_views,
        transcript=transcript, eve_report=eve_report,
        qubits_created=pool.created_count,
    )


def _retained_position(decoy_positions: set[int], total: int, j: int) -> int:
    """Sequence position of the j-th retained (non-decoy) slot."""
    seen = -1
    for pos in range(total):
        if pos in decoy_positions:
            continue
        seen += 1
        if seen == j:
            return pos
    raise IndexError(f"retained index {j} out of range")
