"""Pure-state quantum substrate for small slot-addressed systems.

A :class:`StatePool` owns a collection of mutually unentangled state
factors.  Every two-level qubit (or d-level probe) lives in exactly one
factor, addressed by an opaque integer slot id.  Factors merge lazily when
a joint unitary spans two of them, so L independent entangled tuples cost
``2**(n+1)`` amplitudes each instead of one global ``2**(L*(n+1))`` vector.

Measurement is collapse-with-renormalisation but slot-preserving: the slot
stays addressable until it is explicitly discarded, and discarding is only
legal once the slot has been measured (which guarantees the factor is a
product over that slot, so no partial trace is ever needed).

Conventions:
  * amplitudes are complex128; slot 0 of a factor is the most significant
    digit of the basis-state index,
  * X-basis measurement is Hadamard + Z-measure + Hadamard, with outcome
    0 mapped to the +1 eigenstate and 1 to the -1 eigenstate,
  * norms are renormalised after measurements only, never after unitaries,
    so unitarity bugs surface as norm drift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

SQRT_HALF = 1.0 / math.sqrt(2.0)

NORM_TOL = 1e-12
UNITARY_TOL = 1e-10

HADAMARD = np.array([[SQRT_HALF, SQRT_HALF], [SQRT_HALF, -SQRT_HALF]], dtype=complex)

CNOT = np.array(
    [[1, 0, 0, 0],
     [0, 1, 0, 0],
     [0, 0, 0, 1],
     [0, 0, 1, 0]],
    dtype=complex,
)


class PoolError(RuntimeError):
    """A slot was used in a way its lifecycle forbids."""


class Basis(Enum):
    Z = "Z"
    X = "X"


class Ket(Enum):
    """The four single-qubit preparation states used on the wire."""

    ZERO = "zero"
    ONE = "one"
    PLUS = "plus"
    MINUS = "minus"

    @property
    def basis(self) -> Basis:
        return Basis.Z if self in (Ket.ZERO, Ket.ONE) else Basis.X

    @property
    def bit(self) -> int:
        """Outcome index when measured in the state's own basis."""
        return 0 if self in (Ket.ZERO, Ket.PLUS) else 1


_KET_AMPS = {
    Ket.ZERO: np.array([1.0, 0.0], dtype=complex),
    Ket.ONE: np.array([0.0, 1.0], dtype=complex),
    Ket.PLUS: np.array([SQRT_HALF, SQRT_HALF], dtype=complex),
    Ket.MINUS: np.array([SQRT_HALF, -SQRT_HALF], dtype=complex),
}


def k_to_bits(k: int, n: int) -> list[int]:
    """Big-endian n-bit expansion of k, most significant bit first."""
    if n < 1:
        raise ValueError(f"bit count must be >= 1, got {n}")
    if not 0 <= k < (1 << n):
        raise ValueError(f"value {k} out of range for {n} bits")
    return [(k >> (n - 1 - i)) & 1 for i in range(n)]


def bits_to_k(bits: list[int]) -> int:
    """Inverse of :func:`k_to_bits`."""
    if not bits:
        raise ValueError("empty bit list")
    k = 0
    for b in bits:
        if b not in (0, 1):
            raise ValueError(f"bit values must be 0 or 1, got {b!r}")
        k = (k << 1) | b
    return k


@dataclass(frozen=True)
class GhzSpec:
    """One (n+1)-qubit GHZ instance: 1/sqrt2 (|0 a_1..a_n> +- |1 ~a_1..~a_n>).

    ``k`` is the integer whose big-endian bits are a_1..a_n; the complement
    bits satisfy a_i XOR ~a_i = 1.
    """

    n: int
    k: int
    sign: int = 1

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("party count must be >= 1")
        if not 0 <= self.k < (1 << self.n):
            raise ValueError(f"k={self.k} out of range for n={self.n}")
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")

    @property
    def a_bits(self) -> list[int]:
        return k_to_bits(self.k, self.n)


@dataclass
class StateFactor:
    """A dense statevector over an ordered list of slots."""

    slots: list[int]
    dims: list[int]
    amps: np.ndarray

    def axis_of(self, slot: int) -> int:
        return self.slots.index(slot)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims)) if self.dims else 1

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def dump(self) -> list[tuple[str, float, float]]:
        """Nonzero amplitudes as (basis-state label, re, im) records.

        The label is one digit per slot in slot order; handy for test
        fixtures and debugging.
        """
        out = []
        for idx in range(self.amps.size):
            a = self.amps[idx]
            if abs(a) <= NORM_TOL:
                continue
            rem, digits = idx, []
            for d in reversed(self.dims):
                digits.append(rem % d)
                rem //= d
            label = "".join(str(x) for x in reversed(digits))
            out.append((label, float(a.real), float(a.imag)))
        return out


def inner_product(a: StateFactor, b: StateFactor) -> complex:
    """Hermitian inner product <a|b> of two factors with matching shapes."""
    if a.dims != b.dims:
        raise PoolError(f"shape mismatch: {a.dims} vs {b.dims}")
    return complex(np.vdot(a.amps, b.amps))


@dataclass
class _SlotInfo:
    dim: int
    factor: StateFactor | None  # None once discarded
    measured_basis: Basis | None = None
    measured_value: int | None = None


class StatePool:
    """Registry of live slots and their tensor factorisation.

    Single-session object: not safe for concurrent mutation, but freely
    transferable between threads.  Parallel work uses one pool per session.
    """

    def __init__(self):
        self._slots: dict[int, _SlotInfo] = {}
        self._next_id = 0
        self.created_count = 0  # total slots ever created, for accounting
        self._forced: dict[int, int] = {}  # test hook: slot -> forced outcome

    # -- slot bookkeeping ---------------------------------------------------

    def _register(self, dim: int, factor: StateFactor) -> int:
        sid = self._next_id
        self._next_id += 1
        self.created_count += 1
        self._slots[sid] = _SlotInfo(dim=dim, factor=factor)
        return sid

    def _info(self, slot: int) -> _SlotInfo:
        info = self._slots.get(slot)
        if info is None:
            raise PoolError(f"unknown slot {slot}")
        if info.factor is None:
            raise PoolError(f"slot {slot} was discarded")
        return info

    def factor_of(self, slot: int) -> StateFactor:
        return self._info(slot).factor

    def is_live(self, slot: int) -> bool:
        info = self._slots.get(slot)
        return info is not None and info.factor is not None

    def measured_value(self, slot: int) -> int | None:
        return self._info(slot).measured_value

    def live_slots(self) -> list[int]:
        return [s for s, i in self._slots.items() if i.factor is not None]

    def force_outcome(self, slot: int, value: int) -> None:
        """Test hook: the next measurement of ``slot`` must yield ``value``.

        Forcing an outcome whose Born probability is zero raises, so a test
        can never drive the simulator into an impossible branch.
        """
        self._forced[slot] = value

    # -- preparation --------------------------------------------------------

    def prepare_single(self, state: Ket) -> int:
        """New single-qubit factor in one of |0>, |1>, |+>, |->."""
        f = StateFactor(slots=[], dims=[2], amps=_KET_AMPS[state].copy())
        sid = self._register(2, f)
        f.slots.append(sid)
        return sid

    def prepare_probe(self, dim: int, level: int = 0) -> int:
        """New d-level probe slot in computational level ``level``."""
        if dim < 2:
            raise ValueError("probe dimension must be >= 2")
        if not 0 <= level < dim:
            raise ValueError("probe level out of range")
        amps = np.zeros(dim, dtype=complex)
        amps[level] = 1.0
        f = StateFactor(slots=[], dims=[dim], amps=amps)
        sid = self._register(dim, f)
        f.slots.append(sid)
        return sid

    def prepare_ghz(self, spec: GhzSpec) -> list[int]:
        """New (n+1)-slot factor 1/sqrt2 (|0 a_1..a_n> +- |1 ~a_1..~a_n>)."""
        n = spec.n
        amps = np.zeros(1 << (n + 1), dtype=complex)
        amps[spec.k] = SQRT_HALF                      # |0 a_1..a_n>
        comp = (1 << n) | (~spec.k & ((1 << n) - 1))  # |1 ~a_1..~a_n>
        amps[comp] = spec.sign * SQRT_HALF
        f = StateFactor(slots=[], dims=[2] * (n + 1), amps=amps)
        sids = [self._register(2, f) for _ in range(n + 1)]
        f.slots.extend(sids)
        return sids

    # -- unitaries ----------------------------------------------------------

    def _merge(self, fa: StateFactor, fb: StateFactor) -> StateFactor:
        merged = StateFactor(
            slots=fa.slots + fb.slots,
            dims=fa.dims + fb.dims,
            amps=np.kron(fa.amps, fb.amps),
        )
        for s in merged.slots:
            self._slots[s].factor = merged
        return merged

    def apply_unitary(self, slots: list[int], matrix: np.ndarray) -> None:
        """Apply a unitary over the given slots (in order), merging factors.

        The matrix dimension must equal the product of the slot dimensions
        and pass a unitarity check; norms are deliberately not renormalised
        afterwards.
        """
        infos = [self._info(s) for s in slots]
        if len(set(slots)) != len(slots):
            raise PoolError("duplicate slots in unitary application")
        dim = 1
        for info in infos:
            dim *= info.dim
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.shape != (dim, dim):
            raise PoolError(f"matrix shape {matrix.shape} does not act on dimension {dim}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("matrix has non-finite entries")
        err = np.abs(matrix.conj().T @ matrix - np.eye(dim)).max()
        if err > UNITARY_TOL:
            raise ValueError(f"matrix is not unitary (deviation {err:.3e})")

        factor = infos[0].factor
        for info in infos[1:]:
            if info.factor is not factor:
                factor = self._merge(factor, info.factor)

        axes = [factor.axis_of(s) for s in slots]
        rest = [ax for ax in range(len(factor.dims)) if ax not in axes]
        tensor = factor.amps.reshape(factor.dims)
        moved = np.transpose(tensor, axes + rest)
        block = moved.reshape(dim, -1)
        new = matrix @ block
        new = new.reshape([factor.dims[ax] for ax in axes + rest])
        inverse = np.argsort(axes + rest)
        factor.amps = np.transpose(new, inverse).reshape(-1)
        # A unitary can re-entangle a previously measured slot, which would
        # invalidate the product guarantee discard() relies on.
        for info in infos:
            info.measured_basis = None
            info.measured_value = None

    # -- measurement --------------------------------------------------------

    def measure(self, slot: int, basis: Basis, rng) -> int:
        """Born-rule projective measurement; collapses and renormalises.

        The slot stays live (and flagged as measured) afterwards.  Z-basis
        outcomes are computational indices; X-basis outcomes use 0 for the
        +1 eigenstate and 1 for the -1 eigenstate, and X is only defined on
        two-level slots.
        """
        info = self._info(slot)
        if basis is Basis.X:
            if info.dim != 2:
                raise PoolError(f"X basis undefined on dimension {info.dim}")
            self._apply_single_qubit(info, slot, HADAMARD)
        outcome = self._measure_z(info, slot, rng)
        if basis is Basis.X:
            self._apply_single_qubit(info, slot, HADAMARD)
        info.measured_basis = basis
        info.measured_value = outcome
        return outcome

    def _apply_single_qubit(self, info: _SlotInfo, slot: int, mat: np.ndarray) -> None:
        f = info.factor
        if len(f.slots) == 1:
            f.amps = mat @ f.amps
            return
        ax = f.slots.index(slot)
        pre = math.prod(f.dims[:ax])
        post = math.prod(f.dims[ax + 1:])
        v = f.amps.reshape(pre, 2, post)
        new = np.empty_like(v)
        new[:, 0, :] = mat[0, 0] * v[:, 0, :] + mat[0, 1] * v[:, 1, :]
        new[:, 1, :] = mat[1, 0] * v[:, 0, :] + mat[1, 1] * v[:, 1, :]
        f.amps = new.reshape(-1)

    def _measure_z(self, info: _SlotInfo, slot: int, rng) -> int:
        f = info.factor
        d = info.dim
        if len(f.slots) == 1:
            v = None
            probs = (f.amps.real ** 2 + f.amps.imag ** 2).tolist()
        else:
            ax = f.slots.index(slot)
            pre = math.prod(f.dims[:ax])
            post = math.prod(f.dims[ax + 1:])
            v = f.amps.reshape(pre, d, post)
            probs = (v.real ** 2 + v.imag ** 2).sum(axis=(0, 2)).tolist()
        total = sum(probs)
        if total <= NORM_TOL:
            raise PoolError("factor has zero norm; cannot measure")

        forced = self._forced.pop(slot, None)
        if forced is not None:
            if not 0 <= forced < d:
                raise ValueError(f"forced outcome {forced} out of range")
            if probs[forced] / total <= NORM_TOL:
                raise ValueError(
                    f"forced outcome {forced} has zero probability on slot {slot}"
                )
            outcome = forced
        else:
            r = rng.random() * total
            acc = 0.0
            outcome = d - 1
            for b in range(d):
                acc += probs[b]
                if r < acc:
                    outcome = b
                    break

        scale = 1.0 / math.sqrt(probs[outcome])
        if v is None:
            new = np.zeros_like(f.amps)
            new[outcome] = f.amps[outcome] * scale
            f.amps = new
        else:
            if outcome > 0:
                v[:, :outcome, :] = 0.0
            if outcome < d - 1:
                v[:, outcome + 1:, :] = 0.0
            f.amps *= scale
        return outcome

    # -- discard ------------------------------------------------------------

    def discard(self, slot: int) -> None:
        """Remove a measured slot from its factor.

        Requires the slot to have been measured (so the factor is a product
        over it); discarding an unmeasured, possibly entangled slot raises.
        """
        info = self._info(slot)
        if info.measured_value is None:
            raise PoolError(f"slot {slot} is unmeasured; discarding could require a partial trace")
        if info.measured_basis is Basis.X:
            # rotate the |+->/|-> outcome back to a computational axis slice
            self._apply_single_qubit(info, slot, HADAMARD)
        f = info.factor
        ax = f.axis_of(slot)
        d = info.dim
        pre = int(np.prod(f.dims[:ax])) if ax else 1
        post = int(np.prod(f.dims[ax + 1:])) if ax + 1 < len(f.dims) else 1
        v = f.amps.reshape(pre, d, post)
        f.amps = v[:, info.measured_value, :].reshape(-1)
        del f.slots[ax]
        del f.dims[ax]
        info.factor = None

    # -- diagnostics ----------------------------------------------------------

    def check_invariants(self) -> None:
        """Assert factorisation soundness and unit norms (test support)."""
        seen: dict[int, int] = {}
        for sid, info in self._slots.items():
            if info.factor is None:
                continue
            if sid not in info.factor.slots:
                raise AssertionError(f"slot {sid} missing from its own factor")
            if sid in seen:
                raise AssertionError(f"slot {sid} appears twice")
            seen[sid] = 1
        for sid, info in self._slots.items():
            if info.factor is None:
                continue
            n = info.factor.norm()
            if abs(n - 1.0) > 1e-9:
                raise AssertionError(f"factor norm {n} drifted (slot {sid})")
