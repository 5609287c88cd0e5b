"""Outer code: precoding, batch generation, BP/inactivation decoding,
overhead accounting, and the packet wire format.

Input packets are columns of a T x K' matrix over GF(q). A batch picks a
random degree-d subset, multiplies by a totally random d x M generator, and
ships M coded packets whose coding vectors start as the M unit vectors. The
decoder sees, per batch, the combined matrix C = G H (generator times
network transfer) and the received payload columns Y = B C.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .gf import GF, RandomStream, random_matrix
from .degreeopt import DegreeDistribution

MAGIC = b"BATS"
WIRE_VERSION = 1


@dataclass(frozen=True)
class PrecodeSpec:
    mode: str = "none"  # none | systematic-sparse
    rate: float = 0.98
    row_weight: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("none", "systematic-sparse"):
            raise ValueError(f"unknown precode mode {self.mode!r}")
        if not 0.0 < self.rate <= 1.0:
            raise ValueError("rate must be in (0, 1]")


@dataclass
class Packet:
    batch_id: int
    coding_vector: np.ndarray  # (M,) uint8
    payload: np.ndarray  # (T,) uint8


@dataclass(frozen=True)
class Batch:
    batch_id: int
    degree: int
    contributors: np.ndarray  # (d,) sorted distinct indices < K
    generator: np.ndarray  # (d, M) uint8
    packets: np.ndarray | None = None  # (T, M) source payload columns


@dataclass
class OverheadReport:
    ro: int  # receiving overhead: sum over batches of (columns - rank)
    co: int  # coding overhead: sum of ranks - K'
    cr: float  # coding rate K'/(RO + CO + K')
    inactivations: int
    per_batch: list  # [(columns, rank), ...]
    success: bool = True
    rank_deficit: int = 0


# -- precode ---------------------------------------------------------------

def precode_output_count(k_prime: int, spec: PrecodeSpec) -> int:
    if spec.mode == "none":
        return k_prime
    return int(round(k_prime / spec.rate))


def _parity_equations(k_prime: int, k_total: int, spec: PrecodeSpec,
                      f: GF):
    """Per parity packet: (input indices, nonzero coefficients).

    Built column-first: every original feeds `row_weight` randomly chosen
    parities, which guarantees each original is covered by the parity
    system (a weight budget spent per parity instead would leave most
    originals uncovered at high rates).
    """
    n_par = k_total - k_prime
    support = [[] for _ in range(n_par)]
    if n_par:
        for i in range(k_prime):
            s = RandomStream(spec.seed).derive("precode-row", i)
            w = min(spec.row_weight, n_par)
            cols = s.gen.choice(n_par, size=w, replace=False)
            coeff = s.gen.integers(1, f.q, size=w, dtype=np.uint8)
            for j, c in zip(cols.tolist(), coeff.tolist()):
                support[j].append((i, c))
    eqs = []
    for j in range(n_par):
        support[j].sort()
        idx = np.array([i for i, _ in support[j]], dtype=np.int64)
        coeff = np.array([c for _, c in support[j]], dtype=np.uint8)
        eqs.append((idx, coeff))
    return eqs


def precode_encode(inputs: np.ndarray, spec: PrecodeSpec, f: GF) -> np.ndarray:
    """Systematic precode: originals followed by sparse random parities."""
    inputs = np.asarray(inputs, dtype=np.uint8)
    if inputs.ndim != 2 or inputs.shape[1] == 0:
        raise ValueError("inputs must be a nonempty T x K' matrix")
    k_prime = inputs.shape[1]
    if spec.mode == "none":
        return inputs.copy()
    k_total = precode_output_count(k_prime, spec)
    out = np.zeros((inputs.shape[0], k_total), dtype=np.uint8)
    out[:, :k_prime] = inputs
    for j, (idx, coeff) in enumerate(
            _parity_equations(k_prime, k_total, spec, f)):
        out[:, k_prime + j] = f.matmul(inputs[:, idx],
                                       coeff[:, None])[:, 0]
    return out


def precode_complete(decoded: dict, k_prime: int, spec: PrecodeSpec,
                     f: GF, T: int):
    """Recover all K' originals from a decoded subset of intermediates.

    `decoded` maps intermediate index -> (T,) payload. Peels single-unknown
    parity equations first, then solves the remaining dense system exactly.
    Returns a T x K' matrix or None on failure.
    """
    k_total = precode_output_count(k_prime, spec)
    if spec.mode == "none":
        if len(decoded) < k_prime or any(
                i not in decoded for i in range(k_prime)):
            return None
        out = np.zeros((T, k_prime), dtype=np.uint8)
        for i in range(k_prime):
            out[:, i] = decoded[i]
        return out

    known = dict(decoded)
    eqs = []
    for j, (idx, coeff) in enumerate(
            _parity_equations(k_prime, k_total, spec, f)):
        # sum_i coeff_i * b_idx_i + 1 * b_{k_prime + j} = 0 (parity is
        # itself an intermediate packet with coefficient 1 on the XOR side)
        terms = list(zip(idx.tolist(), coeff.tolist()))
        terms.append((k_prime + j, 1))
        eqs.append(terms)

    # peeling
    changed = True
    while changed:
        changed = False
        for terms in eqs:
            unknown = [(v, c) for v, c in terms if v not in known]
            if len(unknown) != 1:
                continue
            v, c = unknown[0]
            acc = np.zeros(T, dtype=np.uint8)
            for u, cu in terms:
                if u != v:
                    acc ^= f.mul(known[u], np.uint8(cu))
            known[v] = f.mul(acc, f.inv(np.uint8(c)))
            changed = True

    missing = [v for v in range(k_prime) if v not in known]
    if missing:
        # exact elimination over the remaining unknowns
        pos = {v: i for i, v in enumerate(
            sorted(set(v for terms in eqs for v, _ in terms
                       if v not in known)))}
        nun = len(pos)
        rows = []
        rhs = []
        for terms in eqs:
            unknown = [(v, c) for v, c in terms if v not in known]
            if not unknown:
                continue
            row = np.zeros(nun, dtype=np.uint8)
            acc = np.zeros(T, dtype=np.uint8)
            for v, c in terms:
                if v in known:
                    acc ^= f.mul(known[v], np.uint8(c))
                else:
                    row[pos[v]] ^= np.uint8(c)
            rows.append(row)
            rhs.append(acc)
        if not rows:
            return None
        A = np.vstack(rows)  # (neq, nun)
        R = np.vstack(rhs)  # (neq, T)
        if f.rank(A) < nun:
            return None
        try:
            # Z (T x nun) with Z @ A^T = R^T, i.e. A applied to the unknown
            # columns reproduces every residual equation
            Z = f.solve_left(A.T, R.T)
        except np.linalg.LinAlgError:
            return None
        for v, i in pos.items():
            known[v] = Z[:, i]
        if any(v not in known for v in range(k_prime)):
            return None
    out = np.zeros((T, k_prime), dtype=np.uint8)
    for i in range(k_prime):
        out[:, i] = known[i]
    return out


# -- batch generation ------------------------------------------------------

def sample_degree(psi: DegreeDistribution, u: float) -> int:
    """Inverse-CDF sample of the degree distribution."""
    cdf = np.cumsum(psi.psi)
    return int(np.searchsorted(cdf, u * cdf[-1], side="right")) + 1


def generate_batch(batch_id: int, master_seed: int, psi: DegreeDistribution,
                   K: int, M: int, q: int,
                   inputs: np.ndarray | None = None) -> Batch:
    """Deterministic batch from (master seed, batch id): degree from Psi,
    contributors a uniform subset, generator totally random."""
    f = GF(int(q).bit_length() - 1)
    s = RandomStream(master_seed).derive("batch", batch_id)
    d = min(sample_degree(psi, float(s.uniform())), K)
    contributors = np.sort(s.gen.choice(K, size=d, replace=False))
    G = random_matrix(f, d, M, s)
    packets = None
    if inputs is not None:
        packets = f.matmul(np.asarray(inputs, dtype=np.uint8)[:, contributors], G)
    return Batch(batch_id, d, contributors, G, packets)


# -- decoder ---------------------------------------------------------------

class _CheckNode:
    __slots__ = ("batch_id", "contributors", "C", "Y", "active",
                 "pending", "decodable", "rank", "h_rank", "r0_contrib")

    def __init__(self, batch_id, contributors, C, Y, h_rank=None):
        self.batch_id = batch_id
        self.contributors = np.asarray(contributors)
        self.C = np.asarray(C, dtype=np.uint8)  # (d, cols)
        self.Y = None if Y is None else np.asarray(Y, dtype=np.uint8)
        self.active = np.ones(len(self.contributors), dtype=bool)
        self.pending = []  # substituted variable indices awaiting subtraction
        self.decodable = False
        self.rank = None
        self.h_rank = h_rank  # rank of the transfer matrix H, if known
        self.r0_contrib = 0

    @property
    def degree(self):
        return int(self.active.sum())


class DecoderState:
    """Residual decoding graph plus decoded/inactive bookkeeping.

    Payloads may be omitted (graph-only mode) to study the peeling process
    on ranks alone.
    """

    def __init__(self, K: int, M: int, f: GF):
        self.K = K
        self.M = M
        self.f = f
        self.checks: list[_CheckNode] = []
        self.var_checks: dict[int, list[int]] = {}
        self.decoded: dict[int, np.ndarray | None] = {}
        self.decoded_z: dict[int, np.ndarray] = {}  # affine part over inactive
        self.inactive: list[int] = []
        self.event_log: list = []
        self.graph_only = False
        self._decodable: set[int] = set()
        self._r0 = 0

    @classmethod
    def from_batches(cls, K, M, f, batches):
        """batches: iterable of (batch_id, contributors, C, Y|None[, h_rank])."""
        st = cls(K, M, f)
        for entry in batches:
            batch_id, contributors, C, Y = entry[:4]
            h_rank = entry[4] if len(entry) > 4 else None
            if Y is None:
                st.graph_only = True
            node = _CheckNode(batch_id, contributors, C, Y, h_rank)
            idx = len(st.checks)
            st.checks.append(node)
            for v in node.contributors:
                st.var_checks.setdefault(int(v), []).append(idx)
        for i, node in enumerate(st.checks):
            st._refresh(i, node)
        return st

    def _refresh(self, ci: int, node: _CheckNode):
        d = node.degree
        if d == 0 or d > min(self.M, node.C.shape[1]):
            node.decodable = False
        else:
            node.rank = self.f.rank(node.C[node.active])
            node.decodable = node.rank == d
        contrib = d if node.decodable else 0
        self._r0 += contrib - node.r0_contrib
        node.r0_contrib = contrib
        if node.decodable:
            self._decodable.add(ci)
        else:
            self._decodable.discard(ci)

    def undecoded_count(self):
        return self.K - len(self.decoded) - len(self.inactive)

    def decodable_checks(self):
        return sorted(self._decodable)

    def r0(self) -> int:
        """Total degree of decodable checks (the decodable-edge count)."""
        return self._r0

    # -- substitution ------------------------------------------------------

    def _substitute(self, v: int):
        for ci in self.var_checks.get(v, []):
            node = self.checks[ci]
            sel = node.active & (node.contributors == v)
            if not sel.any():
                continue
            node.active &= ~sel
            node.pending.append(v)
            self._refresh(ci, node)

    def _effective_rhs(self, node: _CheckNode):
        """Y minus decoded contributions, plus symbolic rows over inactive.

        Returns (Y_eff (T x cols), Z_eff (n_inactive x cols)); subtraction of
        substituted variables is done lazily here, at decode time.
        """
        cols = node.C.shape[1]
        nz = len(self.inactive)
        T = node.Y.shape[0]
        Y_eff = node.Y.copy()
        Z_eff = np.zeros((nz, cols), dtype=np.uint8)
        if node.pending:
            zero = np.zeros(T, dtype=np.uint8)
            inact_pos = {v: j for j, v in enumerate(self.inactive)}
            rows = [int(np.nonzero(node.contributors == v)[0][0])
                    for v in node.pending]
            Crows = node.C[rows]  # (p, cols)
            consts = np.stack(
                [self.decoded.get(v, zero) for v in node.pending], axis=1)
            Y_eff ^= self.f.matmul(consts, Crows)
            if nz:
                zc = np.zeros((nz, len(node.pending)), dtype=np.uint8)
                for k, v in enumerate(node.pending):
                    if v in inact_pos and v not in self.decoded:
                        zc[inact_pos[v], k] = 1  # v is the symbol itself
                        continue
                    coeffs = self.decoded_z.get(v)
                    if coeffs is not None:
                        zc[:len(coeffs), k] = coeffs
                Z_eff ^= self.f.matmul(zc, Crows)
        return Y_eff, Z_eff

    def _solve_check(self, node: _CheckNode, only_var: int | None = None):
        """Solve a decodable check; record payloads unless graph-only."""
        act = np.nonzero(node.active)[0]
        vars_ = [int(node.contributors[i]) for i in act]
        if only_var is not None:
            targets = [only_var]
        else:
            targets = vars_
        if not self.graph_only:
            C_act = node.C[act]
            Y_eff, Z_eff = self._effective_rhs(node)
            stacked = np.concatenate([Y_eff, Z_eff], axis=0)
            # solve on a full-rank column subset; leftover columns only
            # constrain inactive symbols and feed the final elimination
            _, piv = self.f.rref(C_act)
            piv = list(piv)
            B = self.f.solve_left(C_act[:, piv], stacked[:, piv])
            T = Y_eff.shape[0]
            for k, v in enumerate(vars_):
                if v in targets:
                    self.decoded[v] = B[:T, k]
                    if B.shape[0] > T:
                        self.decoded_z[v] = B[T:, k]
        else:
            for v in targets:
                self.decoded[v] = None
        for v in targets:
            self.event_log.append(("decode", node.batch_id, v))
            self._substitute(v)


def bp_decode(state: DecoderState, order: str = "batch",
              rng: RandomStream | None = None,
              record_r0: bool = False):
    """Peel decodable checks to a fixpoint.

    order="batch": solve whole checks, lowest batch id first (deterministic).
    order="edge": remove one uniformly chosen decodable edge at a time,
    the randomized strategy whose trajectory density evolution predicts.
    Returns (state, r0_trace) where r0_trace lists the decodable-edge count
    after each variable removal (empty unless record_r0).
    """
    trace = []
    if record_r0:
        trace.append(state.r0())
    while True:
        dec = state.decodable_checks()
        if not dec:
            break
        if order == "batch":
            ci = min(dec, key=lambda i: state.checks[i].batch_id)
            node = state.checks[ci]
            nvars = node.degree
            state._solve_check(node)
            if record_r0:
                # whole-check solve removes nvars variables one by one
                for _ in range(nvars):
                    trace.append(state.r0())
        elif order == "edge":
            if rng is None:
                raise ValueError("edge order needs a RandomStream")
            weights = np.array([state.checks[i].degree for i in dec],
                               dtype=float)
            pick = dec[int(rng.gen.choice(len(dec),
                                          p=weights / weights.sum()))]
            node = state.checks[pick]
            act = np.nonzero(node.active)[0]
            v = int(node.contributors[
                act[int(rng.gen.integers(0, len(act)))]])
            state._solve_check(node, only_var=v)
            if record_r0:
                trace.append(state.r0())
        else:
            raise ValueError(f"unknown order {order!r}")
    return state, trace


def inactivation_decode(state: DecoderState, k_prime: int | None = None):
    """BP with inactivation: on stall, mark the undecoded variable with the
    most residual edges inactive (symbolic) and resume; finally solve the
    inactive system exactly and back-substitute.
    """
    if state.graph_only:
        raise ValueError("inactivation decoding needs payloads")
    f = state.f
    while True:
        bp_decode(state)
        if state.undecoded_count() == 0:
            break
        # residual edge counts among undecoded variables
        residual = [node.contributors[node.active] for node in state.checks]
        residual = [r for r in residual if r.size]
        counts = (np.bincount(np.concatenate(residual),
                              minlength=state.K).astype(np.int64)
                  if residual else np.zeros(state.K, dtype=np.int64))
        for v in state.decoded:
            counts[v] = -1
        for v in state.inactive:
            counts[v] = -1
        best_v = int(np.argmax(counts))  # ties break to the lowest index
        state.inactive.append(best_v)
        state.event_log.append(("inactivate", best_v))
        state._substitute(best_v)

    nz = len(state.inactive)
    T = next((c.Y.shape[0] for c in state.checks if c.Y is not None), 0)
    if nz:
        # every remaining column equation constrains the inactive symbols:
        # sum_j z_j A[j, col] = R[:, col]
        A_cols = []
        R_cols = []
        for node in state.checks:
            Y_eff, Z_eff = state._effective_rhs(node)
            # active rows correspond to inactive vars substituted symbolically
            # (all contributors are decoded or inactive by now)
            A_cols.append(Z_eff)
            R_cols.append(Y_eff)
        A = np.concatenate(A_cols, axis=1)  # (nz, total_cols)
        R = np.concatenate(R_cols, axis=1)  # (T, total_cols)
        rank = f.rank(A)
        if rank < nz:
            report = _make_report(state, k_prime, success=False,
                                  rank_deficit=nz - rank)
            return state, report
        Z = f.solve_left(A, R)  # (T, nz): Z @ A = R
        for j, v in enumerate(state.inactive):
            state.decoded[v] = Z[:, j]
        # back-substitute affine parts
        for v, coeffs in state.decoded_z.items():
            if len(coeffs) and coeffs.any():
                full = np.zeros(nz, dtype=np.uint8)
                full[:len(coeffs)] = coeffs
                state.decoded[v] = state.decoded[v] ^ f.matmul(
                    Z, full[:, None])[:, 0]
        state.decoded_z.clear()
    return state, _make_report(state, k_prime, success=True)


def _make_report(state, k_prime, success, rank_deficit=0):
    per_batch = [(c.C.shape[1],
                  c.h_rank if c.h_rank is not None else state.f.rank(c.C))
                 for c in state.checks]
    return overheads(per_batch,
                     k_prime if k_prime is not None else state.K,
                     inactivations=len(state.inactive),
                     success=success, rank_deficit=rank_deficit)


def overheads(per_batch, k_prime: int, inactivations: int = 0,
              success: bool = True, rank_deficit: int = 0) -> OverheadReport:
    """per_batch: [(received columns, rank of transfer matrix), ...]."""
    ro = sum(cols - rank for cols, rank in per_batch)
    co = sum(rank for _, rank in per_batch) - k_prime
    cr = k_prime / (ro + co + k_prime)
    return OverheadReport(ro=int(ro), co=int(co), cr=float(cr),
                          inactivations=inactivations,
                          per_batch=list(per_batch), success=success,
                          rank_deficit=rank_deficit)


# -- wire format -----------------------------------------------------------

_MODE_CODES = {"none": 0, "systematic-sparse": 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def _pack_symbols(symbols: np.ndarray, m: int) -> bytes:
    """Pack field symbols at m bits each, MSB-first."""
    symbols = np.asarray(symbols, dtype=np.uint8)
    if m == 8:
        return symbols.tobytes()
    bits = np.unpackbits(symbols[:, None], axis=1)[:, 8 - m:]
    return np.packbits(bits.ravel()).tobytes()


def _unpack_symbols(data: bytes, count: int, m: int) -> np.ndarray:
    if m == 8:
        return np.frombuffer(data[:count], dtype=np.uint8).copy()
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8))[:count * m]
    bits = bits.reshape(count, m)
    out = np.zeros(count, dtype=np.uint8)
    for i in range(m):
        out = (out << 1) | bits[:, i]
    return out


def symbol_bytes(count: int, m: int) -> int:
    return (count * m + 7) // 8


@dataclass
class FileHeader:
    k_prime: int
    k_total: int
    M: int
    q: int
    T: int
    master_seed: int
    precode: PrecodeSpec = field(default_factory=PrecodeSpec)


def write_packet_file(fh, header: FileHeader, packets) -> None:
    """Container: magic, version, header, packet count, packets."""
    fh.write(MAGIC)
    fh.write(bytes([WIRE_VERSION]))
    fh.write(struct.pack("<IIHHIQ", header.k_prime, header.k_total,
                         header.M, header.q, header.T, header.master_seed))
    fh.write(struct.pack("<BdHQ", _MODE_CODES[header.precode.mode],
                         header.precode.rate, header.precode.row_weight,
                         header.precode.seed))
    packets = list(packets)
    fh.write(struct.pack("<I", len(packets)))
    m = int(header.q).bit_length() - 1
    for p in packets:
        if len(p.coding_vector) != header.M or len(p.payload) != header.T:
            raise ValueError("packet shape does not match header")
        fh.write(struct.pack("<I", p.batch_id))
        fh.write(_pack_symbols(p.coding_vector, m))
        fh.write(_pack_symbols(p.payload, m))


def read_packet_file(fh):
    magic = fh.read(4)
    if magic != MAGIC:
        raise ValueError("bad magic")
    version = fh.read(1)[0]
    if version != WIRE_VERSION:
        raise ValueError(f"unsupported version {version}")
    k_prime, k_total, M, q, T, seed = struct.unpack("<IIHHIQ", fh.read(24))
    mode, rate, row_weight, pseed = struct.unpack("<BdHQ", fh.read(19))
    header = FileHeader(k_prime, k_total, M, q, T, seed,
                        PrecodeSpec(_MODE_NAMES[mode], rate, row_weight,
                                    pseed))
    (count,) = struct.unpack("<I", fh.read(4))
    m = int(q).bit_length() - 1
    cv_len = symbol_bytes(M, m)
    pl_len = symbol_bytes(T, m)
    packets = []
    for _ in range(count):
        (batch_id,) = struct.unpack("<I", fh.read(4))
        cv = _unpack_symbols(fh.read(cv_len), M, m)
        pl = _unpack_symbols(fh.read(pl_len), T, m)
        packets.append(Packet(batch_id, cv, pl))
    return header, packets
