"""Reflection emulation: rewriting oracle queries into symmetric-subspace
reflections over copies of |1>|S->, plus copy generation and
projection-via-reflection.

Two exact evaluation paths exist for a rewritten circuit:

* the explicit path runs the rewritten circuit on the literally prepared
  copy registers (small copy counts only; width is capped), and
* the compressed path tracks the copy registers in a per-level bosonic
  occupation basis.  Because every operation on the copies is a
  permutation-symmetric reflection, the copies stay in the symmetric
  sector with at most one new excitation per query, so the reachable basis
  is tiny and the cost is independent of the copy count.

Both paths agree to numerical precision; tests pin that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import oracleworld as ow
from . import qcore
from .qcore import POLICY, CapacityError, Rng, StateVector

__all__ = [
    "project_via_reflection",
    "generate_s_minus",
    "GenerateResult",
    "EmulationPlan",
    "build_emulation",
    "EmulationEngine",
    "CompressedState",
    "emulation_error",
    "EmulationErrorResult",
    "single_query_inner_product",
    "emulation_bound",
    "run_emulated_explicit",
    "EmulatedAcceptProcedure",
    "random_oracle_circuit",
    "pre_query_state",
    "effective_axis_overlap",
]

MIN_GUARANTEED_ELL = 4


# ---------------------------------------------------------------------------
# Projection via one controlled reflection


def _reflect_about_axis(
    state: StateVector, axis: np.ndarray, targets: Sequence[int]
) -> StateVector:
    """psi - 2 <axis|psi> |axis> on the target block (rank-1 update)."""
    n = state.num_qubits
    k = len(targets)
    tens = state.amplitudes.reshape((2,) * n)
    moved = np.moveaxis(tens, targets, range(n - k, n))
    block = np.ascontiguousarray(moved).reshape(-1, 1 << k)
    coeff = block @ axis.conj()
    block = block - 2.0 * np.outer(coeff, axis)
    out = np.moveaxis(block.reshape(moved.shape), range(n - k, n), targets)
    return StateVector(n, out.reshape(-1))


def project_via_reflection(
    input_state: StateVector, target: StateVector, rng: Rng
) -> tuple[bool, StateVector | None]:
    """One-query projection onto `target`.

    Runs ancilla |+>, controlled reflection about the target, Hadamard,
    ancilla measurement.  Success probability is exactly
    |<target|input>|^2; on success the output equals the target up to
    phase.
    """
    if input_state.num_qubits != target.num_qubits:
        raise ValueError("input and target must have the same qubit count")
    n = input_state.num_qubits
    plus = qcore.state_from_amplitudes([1 / math.sqrt(2), 1 / math.sqrt(2)])
    joint = qcore.tensor(plus, input_state)
    axis = np.kron(np.array([0.0, 1.0]), target.amplitudes)  # |1>|target>
    joint = _reflect_about_axis(joint, axis, list(range(n + 1)))
    joint = qcore.apply_unitary(joint, ow.named_gate_matrix("H", 1), [0])
    bits, collapsed, _ = qcore.measure_computational(joint, [0], rng)
    if bits[0] != 1:
        return False, None
    return True, qcore.extract_pure(collapsed, list(range(1, n + 1)))


@dataclass
class GenerateResult:
    state: StateVector | None
    attempts: int
    succeeded: bool


def generate_s_minus(
    env: ow.OracleEnv, lam: int, kappa: int, rng: Rng
) -> GenerateResult:
    """Produce |S_lam -> with at most `kappa` repeat-until-success attempts.

    Each attempt queries the oracle once on |+>|0^lam> and Hadamard-measures
    the control; the minus outcome leaves exactly |S_lam -> (up to phase)
    with per-attempt probability exactly 1/2.  Overall failure probability
    is 2^-kappa.
    """
    if kappa < 1:
        raise ValueError("kappa must be at least 1")
    H = ow.named_gate_matrix("H", 1)
    for attempt in range(1, kappa + 1):
        st = qcore.zero_state(lam + 1)
        st = qcore.apply_unitary(st, H, [0])
        st = ow.apply_oracle(st, env, lam, list(range(lam + 1)))
        st = qcore.apply_unitary(st, H, [0])
        bits, collapsed, _ = qcore.measure_computational(st, [0], rng)
        if bits[0] == 1:
            return GenerateResult(
                qcore.extract_pure(collapsed, list(range(1, lam + 1))),
                attempt,
                True,
            )
    return GenerateResult(None, kappa, False)


# ---------------------------------------------------------------------------
# Rewriting plans


@dataclass(frozen=True)
class EmulationPlan:
    """An oracle-free rewrite of a circuit plus the copy-register layout.

    Copy blocks (one per level and copy index, each level+1 qubits wide,
    holding |1>|S->) are appended after the source registers.  The
    rewritten gate list replaces every oracle gate with a
    symmetric-subspace reflection over its query block and that level's
    copy blocks.  ``materialize()`` builds the explicit rewritten circuit,
    which is only possible within the global width cap; the compressed
    evaluator does not need it.
    """

    source: ow.OracleAidedCircuit
    ell_per_lambda: dict[int, int]
    copy_offsets: dict[int, tuple[int, ...]]
    rewritten_gates: tuple[ow.Gate, ...]
    total_qubits: int
    below_guaranteed_regime: bool

    def materialize(self) -> ow.OracleAidedCircuit:
        return ow.OracleAidedCircuit(self.total_qubits, self.rewritten_gates)


def build_emulation(
    circuit: ow.OracleAidedCircuit, ell_per_lambda: Mapping[int, int] | int
) -> EmulationPlan:
    """Plan the oracle-free rewrite of a deferred-measurement circuit.

    ``ell_per_lambda`` gives the copy count per queried level (one integer
    applies to all levels).  Copy counts below 4 are allowed but flagged:
    the error bound's derivation assumes at least 4.
    """
    if not ow.is_deferred(circuit):
        raise ValueError("circuit must be pre-compiled to deferred-measurement form")
    levels = circuit.query_levels
    if isinstance(ell_per_lambda, int):
        ells = {lam: int(ell_per_lambda) for lam in levels}
    else:
        ells = {lam: int(ell_per_lambda[lam]) for lam in levels}
    for lam, ell in ells.items():
        if ell < 1:
            raise ValueError(f"need at least one copy for lambda={lam}")
    offset = circuit.num_qubits
    copy_offsets: dict[int, tuple[int, ...]] = {}
    for lam in levels:
        block = lam + 1
        copy_offsets[lam] = tuple(offset + i * block for i in range(ells[lam]))
        offset += ells[lam] * block
    rewritten: list[ow.Gate] = []
    for g in circuit.gates:
        if g.kind != "oracle":
            rewritten.append(g)
            continue
        blocks = [g.targets] + [
            tuple(range(o, o + g.lam + 1)) for o in copy_offsets[g.lam]
        ]
        rewritten.append(ow.Gate.symreflect(blocks))
    return EmulationPlan(
        source=circuit,
        ell_per_lambda=ells,
        copy_offsets=copy_offsets,
        rewritten_gates=tuple(rewritten),
        total_qubits=offset,
        below_guaranteed_regime=any(e < MIN_GUARANTEED_ELL for e in ells.values()),
    )


def run_emulated_explicit(
    plan: EmulationPlan, env: ow.OracleEnv, input_state: StateVector, rng: Rng
) -> ow.RunResult:
    """Run the materialized rewritten circuit on input (x) literal copies.

    Small copy counts only; the copy registers are prepared exactly.
    """
    circuit = plan.materialize()
    joint = input_state
    for lam in sorted(plan.copy_offsets):
        chi = ow.oracle_axis_state(env.spec(lam))
        for _ in plan.copy_offsets[lam]:
            joint = qcore.tensor(joint, chi)
    return ow.run_circuit(circuit, env, joint, rng)


# ---------------------------------------------------------------------------
# Compressed evaluation


def _orthonormal_basis_with_first(chi: np.ndarray) -> np.ndarray:
    """Unitary whose first column is `chi` (modified Gram-Schmidt fill)."""
    dim = chi.shape[0]
    cols = [chi / np.linalg.norm(chi)]
    for e in range(dim):
        v = np.zeros(dim, dtype=np.complex128)
        v[e] = 1.0
        for c in cols:
            v = v - c * np.vdot(c, v)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            cols.append(v / norm)
        if len(cols) == dim:
            break
    if len(cols) != dim:
        raise AssertionError("basis completion failed")
    return np.stack(cols, axis=1)


@dataclass
class _Sector:
    lam: int
    ell: int
    cutoff: int
    dim: int  # per-register dimension N = 2^(lam+1)
    occupations: list[tuple[int, ...]]
    index: dict[tuple[int, ...], int]
    basis: np.ndarray  # N x N, column 0 = |1>|S->
    projector: sp.csr_matrix  # symmetric projector on (D-mode, occupation)

    @property
    def size(self) -> int:
        return len(self.occupations)


def _build_sector(lam: int, ell: int, cutoff: int, chi: np.ndarray) -> _Sector:
    dim = chi.shape[0]
    occupations: list[tuple[int, ...]] = []
    for k in range(cutoff + 1):
        occupations.extend(combinations_with_replacement(range(1, dim), k))
    index = {occ: i for i, occ in enumerate(occupations)}
    K = len(occupations)
    rows: list[int] = []
    cols: list[int] = []
    vals: list[float] = []
    for m_idx, m in enumerate(occupations):
        n0 = ell - len(m)
        if n0 < 0:
            raise ValueError(f"copy count {ell} below excitation cutoff {cutoff}")
        for i in range(dim):
            n_i = n0 if i == 0 else m.count(i)
            src = i * K + m_idx
            m_plus = m if i == 0 else tuple(sorted(m + (i,)))
            n0_plus = n0 + 1 if i == 0 else n0
            # Candidate removals: the vacuum mode plus every excited mode
            # present after the insertion.
            for j in {0, *m_plus}:
                if j == 0:
                    if n0_plus < 1:
                        continue
                    m_new = m_plus
                    nj = n0_plus
                else:
                    m_new = list(m_plus)
                    m_new.remove(j)
                    m_new = tuple(m_new)
                    nj = m_plus.count(j)
                if m_new not in index:
                    # Beyond the excitation cutoff; unreachable when gates
                    # are applied in query order, so safe to drop.
                    continue
                rows.append(j * K + index[m_new])
                cols.append(src)
                vals.append(math.sqrt((n_i + 1) * nj) / (ell + 1))
    projector = sp.csr_matrix(
        (vals, (rows, cols)), shape=(dim * K, dim * K), dtype=np.float64
    )
    return _Sector(lam, ell, cutoff, dim, occupations, index, _orthonormal_basis_with_first(chi), projector)


_MAIN_ACTION_CACHE: dict = {}


def _main_axis_action(
    matrix: np.ndarray, targets: tuple[int, ...], n: int
) -> tuple[np.ndarray, np.ndarray | None] | None:
    """Gather/scale realization of phased-permutation or diagonal gates.

    Returns (source indices, per-index phases or None) over the 2^n main
    axis when the matrix moves each basis state to a single basis state;
    None for genuinely dense matrices.  Cached per (matrix, targets, n).
    """
    key = (matrix.tobytes(), targets, n)
    if key in _MAIN_ACTION_CACHE:
        return _MAIN_ACTION_CACHE[key]
    result = None
    dim = matrix.shape[0]
    k = len(targets)
    nonzero = np.abs(matrix) > 1e-14
    if nonzero.sum() == dim and np.all(nonzero.sum(axis=0) == 1):
        rows = np.argmax(nonzero, axis=0)
        vals = matrix[rows, np.arange(dim)]
        if np.allclose(np.abs(vals), 1.0, atol=1e-12):
            # Column c goes to row rows[c] with phase vals[c]; per output
            # index, read from the preimage column.
            inv = np.empty(dim, dtype=np.int64)
            inv[rows] = np.arange(dim)
            m = np.arange(1 << n, dtype=np.int64)
            bits = np.zeros(1 << n, dtype=np.int64)
            for j, t in enumerate(targets):
                bits = (bits << 1) | ((m >> (n - 1 - t)) & 1)
            src_bits = inv[bits]
            src = m
            for j, t in enumerate(targets):
                bit = (src_bits >> (k - 1 - j)) & 1
                shift = n - 1 - t
                src = (src & ~(1 << shift)) | (bit << shift)
            phases = vals[bits]
            if np.allclose(phases, 1.0, atol=1e-14):
                phases = None
            result = (src, phases)
    if len(_MAIN_ACTION_CACHE) > 4096:
        _MAIN_ACTION_CACHE.clear()
    _MAIN_ACTION_CACHE[key] = result
    return result


@dataclass
class CompressedState:
    """Joint amplitudes over (main register, per-level occupation bases)."""

    num_main_qubits: int
    sector_sizes: tuple[int, ...]
    array: np.ndarray  # shape (2^n, K_1, ..., K_m)

    def norm(self) -> float:
        return float(np.linalg.norm(self.array))

    def accept_probability(self, qubit: int) -> float:
        """Total weight of main-register states with `qubit` = 1."""
        n = self.num_main_qubits
        tens = self.array.reshape((2,) * n + self.sector_sizes)
        sl: list[object] = [slice(None)] * tens.ndim
        sl[qubit] = 1
        return float(np.sum(np.abs(tens[tuple(sl)]) ** 2))

    def inner_with_plain(self, plain: StateVector) -> complex:
        """<plain (x) pristine copies | self>; the pristine copy state is the
        zero-excitation occupation in every sector."""
        vac = self.array[(slice(None),) + (0,) * len(self.sector_sizes)]
        return complex(np.vdot(plain.amplitudes, vac))


class EmulationEngine:
    """Exact evaluator for rewritten circuits in the compressed basis.

    Supports unitary and oracle gates (oracle gates are interpreted as the
    rewritten symmetric reflection over the query block and that level's
    copies).  Cost depends on the excitation cutoff (the per-level query
    count), not on the copy counts.
    """

    def __init__(
        self,
        env: ow.OracleEnv,
        num_main_qubits: int,
        ell_per_lambda: Mapping[int, int],
        cutoff_per_lambda: Mapping[int, int],
    ):
        self.env = env
        self.num_main_qubits = num_main_qubits
        self.levels = tuple(sorted(ell_per_lambda))
        self.sectors: dict[int, _Sector] = {}
        for lam in self.levels:
            chi = ow.oracle_axis_state(env.spec(lam)).amplitudes
            self.sectors[lam] = _build_sector(
                lam, int(ell_per_lambda[lam]), int(cutoff_per_lambda[lam]), chi
            )
        self.sector_sizes = tuple(self.sectors[lam].size for lam in self.levels)
        entries = (1 << num_main_qubits) * int(np.prod(self.sector_sizes or (1,)))
        if entries > POLICY.max_engine_entries:
            raise CapacityError(
                f"compressed state of {entries} entries exceeds the configured cap"
            )

    def initial_state(self, input_state: StateVector) -> CompressedState:
        if input_state.num_qubits != self.num_main_qubits:
            raise ValueError("input does not match the main register")
        shape = (1 << self.num_main_qubits,) + self.sector_sizes
        arr = np.zeros(shape, dtype=np.complex128)
        arr[(slice(None),) + (0,) * len(self.sector_sizes)] = input_state.amplitudes
        return CompressedState(self.num_main_qubits, self.sector_sizes, arr)

    def apply_unitary(
        self, state: CompressedState, matrix: np.ndarray, targets: Sequence[int]
    ) -> CompressedState:
        n = self.num_main_qubits
        k = len(targets)
        targets = tuple(targets)
        matrix = np.asarray(matrix, dtype=np.complex128)
        flat = state.array.reshape(1 << n, -1)
        special = _main_axis_action(matrix, targets, n)
        if special is not None:
            src, phases = special
            out = flat[src]
            if phases is not None:
                out = out * phases[:, None]
            return CompressedState(n, self.sector_sizes, out.reshape(state.array.shape))
        if targets == tuple(range(targets[0], targets[0] + k)):
            # Contiguous ascending block: one batched matmul, no transposes.
            pre = 1 << targets[0]
            dim = 1 << k
            work = state.array.reshape(pre, dim, -1)
            out = np.matmul(matrix, work)
            return CompressedState(n, self.sector_sizes, out.reshape(state.array.shape))
        tens = state.array.reshape((2,) * n + self.sector_sizes)
        mat = matrix.reshape((2,) * (2 * k))
        moved = np.tensordot(mat, tens, axes=(range(k, 2 * k), targets))
        moved = np.moveaxis(moved, range(k), targets)
        return CompressedState(
            n, self.sector_sizes, np.ascontiguousarray(moved).reshape(state.array.shape)
        )

    def apply_query(
        self, state: CompressedState, lam: int, targets: Sequence[int]
    ) -> CompressedState:
        """Symmetric reflection over the query block and level-lam copies."""
        sector = self.sectors[lam]
        pos = self.levels.index(lam)
        n = self.num_main_qubits
        block = lam + 1
        N, K = sector.dim, sector.size
        tens = state.array.reshape((2,) * n + self.sector_sizes)
        # Bring the query-block axes to the tail of the main part, then the
        # sector axis right after them.
        tens = np.moveaxis(tens, targets, range(n - block, n))
        tens = np.moveaxis(tens, n + pos, n)
        lead_shape = tens.shape  # (2,)*(n-block) + (2,)*block + (K,) + rest
        work = tens.reshape(1 << (n - block), N, K, -1)
        work = np.moveaxis(work, 3, 1)  # (pre, rest, N, K)
        pre, rest = work.shape[0], work.shape[1]
        flat = work.reshape(pre * rest, N, K)
        # Rotate the query block into the copy-aligned basis.
        v = sector.basis
        flat = np.einsum("ab,rbk->rak", v.conj().T, flat, optimize=True)
        vec = flat.reshape(pre * rest, N * K)
        vec = vec - 2.0 * (vec @ sector.projector.T)
        flat = vec.reshape(pre * rest, N, K)
        flat = np.einsum("ab,rbk->rak", v, flat, optimize=True)
        work = flat.reshape(pre, rest, N, K)
        work = np.moveaxis(work, 1, 3)
        tens = work.reshape(lead_shape)
        tens = np.moveaxis(tens, n, n + pos)
        tens = np.moveaxis(tens, range(n - block, n), targets)
        return CompressedState(n, self.sector_sizes, tens.reshape(state.array.shape))

    def run(
        self, gates: Iterable[ow.Gate], input_state: StateVector
    ) -> CompressedState:
        state = self.initial_state(input_state)
        for g in gates:
            if g.kind == "unitary":
                if g.condition is not None:
                    raise ValueError("compressed evaluation needs deferred circuits")
                state = self.apply_unitary(state, g.matrix, g.targets)
            elif g.kind == "oracle":
                state = self.apply_query(state, g.lam, g.targets)
            elif g.kind in ("measure", "discard"):
                raise ValueError(
                    "compressed evaluation stops before measurements; strip them"
                )
            else:
                raise ValueError(f"unsupported gate kind {g.kind!r}")
        return state


# ---------------------------------------------------------------------------
# Error analysis


def emulation_bound(query_counts: Mapping[int, int], ells: Mapping[int, int]) -> float:
    """2q/sqrt(ell+1), summed over levels when copy counts differ."""
    return sum(
        2.0 * q / math.sqrt(ells[lam] + 1.0) for lam, q in query_counts.items() if q
    )


def single_query_inner_product(ell: int, overlap_sq: float) -> float:
    """Closed-form overlap after one rewritten query on a product input:
    (ell-1)/(ell+1) + 2/(ell+1) * |<axis|query block>|^2."""
    return (ell - 1.0) / (ell + 1.0) + 2.0 / (ell + 1.0) * overlap_sq


@dataclass
class EmulationErrorResult:
    exact_td: float
    bound: float
    inner_product: complex
    ell_per_lambda: dict[int, int]
    query_counts: dict[int, int]


def emulation_error(
    circuit: ow.OracleAidedCircuit,
    env: ow.OracleEnv,
    ell_per_lambda: Mapping[int, int] | int,
    input_state: StateVector | None = None,
) -> EmulationErrorResult:
    """Exact trace distance between the oracle run (with untouched copies)
    and the rewritten run, against the 2q/sqrt(ell+1) bound.

    Both runs are evaluated exactly: the oracle path on the plain state
    vector, the rewritten path in the compressed basis; the distance comes
    from the pure-state overlap.  Asserts the bound.
    """
    prefix = ow.unitary_prefix(circuit)
    plan = build_emulation(circuit, ell_per_lambda)
    counts = dict(circuit.declared_query_count)
    bound = emulation_bound(counts, plan.ell_per_lambda)
    if input_state is None:
        input_state = qcore.zero_state(circuit.num_qubits)
    # Oracle path (queries not charged to the env: this is analysis).
    plain = input_state
    for g in prefix:
        if g.kind == "unitary":
            plain = qcore.apply_unitary(plain, g.matrix, g.targets)
        elif g.kind == "oracle":
            plain = ow.apply_oracle(plain, env, g.lam, g.targets, count=False)
        else:
            raise ValueError("emulation_error needs a unitary/oracle-only prefix")
    # Rewritten path.
    if counts:
        engine = _cached_engine(env, circuit.num_qubits, plan.ell_per_lambda, counts)
        emulated = engine.run(prefix, input_state)
        ip = emulated.inner_with_plain(plain)
    else:
        ip = 1.0 + 0.0j
    td = math.sqrt(max(0.0, 1.0 - abs(ip) ** 2))
    if td > bound + 1e-9:
        raise AssertionError(f"exact TD {td} exceeds the bound {bound}")
    return EmulationErrorResult(td, bound, ip, plan.ell_per_lambda, counts)


# ---------------------------------------------------------------------------
# Randomized corpus helpers


def random_oracle_circuit(
    lam: int, q: int, rng: Rng, extra_qubits: int = 1
) -> ow.OracleAidedCircuit:
    """A random q-query circuit: Haar unitaries on random wire pairs
    interleaved with oracle gates on the leading lam+1 qubits."""
    from scipy.stats import unitary_group

    width = lam + 1 + extra_qubits
    gates: list[ow.Gate] = []

    def random_layer() -> None:
        wires = sorted(
            int(w) for w in rng.generator.choice(width, size=2, replace=False)
        )
        mat = unitary_group.rvs(4, random_state=rng.generator)
        gates.append(ow.Gate.unitary(mat, wires))

    for _ in range(q):
        random_layer()
        gates.append(ow.Gate.oracle(lam, list(range(lam + 1))))
    random_layer()
    return ow.OracleAidedCircuit(width, tuple(gates))


def pre_query_state(
    circuit: ow.OracleAidedCircuit,
    env: ow.OracleEnv,
    input_state: StateVector | None = None,
) -> StateVector:
    """The state right before the circuit's first oracle gate."""
    if input_state is None:
        input_state = qcore.zero_state(circuit.num_qubits)
    state = input_state
    for g in ow.unitary_prefix(circuit):
        if g.kind == "oracle":
            return state
        state = qcore.apply_unitary(state, g.matrix, g.targets)
    raise ValueError("circuit has no oracle gate")


def effective_axis_overlap(
    state: StateVector, axis: StateVector, targets: Sequence[int]
) -> float:
    """Weight of the axis component on the target block:
    || (<axis| (x) I_rest) |state> ||^2.  For a product state this is the
    plain squared overlap of the block with the axis."""
    n = state.num_qubits
    k = len(targets)
    tens = state.amplitudes.reshape((2,) * n)
    moved = np.moveaxis(tens, targets, range(n - k, n))
    block = np.ascontiguousarray(moved).reshape(-1, 1 << k)
    coeff = block @ axis.amplitudes.conj()
    return float(np.sum(np.abs(coeff) ** 2))


# ---------------------------------------------------------------------------
# Emulated accept procedures (for keyed measurement families)


@dataclass
class EmulatedAcceptProcedure:
    """Accept probability of a deferred verifier with its oracle queries
    rewritten into reflections over level copies; evaluated exactly in the
    compressed basis.  ``input_qubits`` is where the challenge goes; all
    other main qubits start at |0>."""

    circuit: ow.OracleAidedCircuit
    input_qubits: tuple[int, ...]
    accept_qubit: int
    env: ow.OracleEnv
    ell_per_lambda: dict[int, int]

    def __post_init__(self) -> None:
        if not ow.is_deferred(self.circuit):
            raise ValueError("verifier must be in deferred-measurement form")

    @property
    def arity(self) -> int:
        return len(self.input_qubits)

    def copies_per_evaluation(self) -> dict[int, int]:
        return dict(self.ell_per_lambda)

    def accept_probability(self, challenge: StateVector) -> float:
        if challenge.num_qubits != self.arity:
            raise ValueError("challenge does not match the verifier input arity")
        main = qcore.embed_state(challenge, self.circuit.num_qubits, self.input_qubits)
        counts = dict(self.circuit.declared_query_count)
        prefix = ow.unitary_prefix(self.circuit)
        if not counts:
            plain = main
            for g in prefix:
                plain = qcore.apply_unitary(plain, g.matrix, g.targets)
            probs = qcore.born_probabilities(plain, [self.accept_qubit])
            return float(probs[1])
        ells = {lam: self.ell_per_lambda[lam] for lam in counts}
        engine = _cached_engine(self.env, self.circuit.num_qubits, ells, counts)
        out = engine.run(prefix, main)
        return out.accept_probability(self.accept_qubit)


_ENGINE_CACHE: dict = {}


def _cached_engine(
    env: ow.OracleEnv,
    num_main: int,
    ells: Mapping[int, int],
    counts: Mapping[int, int],
) -> EmulationEngine:
    """Engines keyed by oracle content and sizes; sectors are immutable and
    independent of the env object once built."""
    token = tuple(
        (lam, env.spec(lam).members, int(ells[lam]), int(counts[lam]))
        for lam in sorted(ells)
    )
    key = (num_main, token)
    engine = _ENGINE_CACHE.get(key)
    if engine is None:
        engine = EmulationEngine(env, num_main, ells, counts)
        if len(_ENGINE_CACHE) > 256:
            _ENGINE_CACHE.clear()
        _ENGINE_CACHE[key] = engine
    return engine
