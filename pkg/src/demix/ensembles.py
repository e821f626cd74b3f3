"""Measurement ensembles: s linear operators with forward and adjoint maps.

Conventions fixed repo-wide:
  * the 1/sqrt(m) normalization lives in forward/adjoint, never in stored
    payloads;
  * matrices are vectorized in C (row-major) order;
  * the DFT is unitary (F F^H = I), so the convolutive basis B has rows of
    norm sqrt(n2/m);
  * the Hadamard encoder uses the Sylvester construction (m must be a power
    of two) with unnormalized +-1 entries, hence H^H H = m I;
  * complex Gaussian entries have independent real/imaginary parts of
    variance 1/2 each (unit total variance).

Payloads larger than the entry budget are never materialized; they are
regenerated on the fly in fixed chunks from per-(operator, chunk) RNG
streams, so materialized and streamed ensembles are bit identical and
concurrent use is deterministic.
"""

import hashlib
import json
from dataclasses import dataclass, field as dataclass_field

import numpy as np
from scipy.linalg import hadamard

from .factors import HermitianFactor, LowRankFactor
from .seeding import ROLE_PAYLOAD, substream
from .validation import as_matrix, as_vector, check_index

# Maximum number of scalar payload entries (s * m * n1 * n2) kept in memory.
DEFAULT_ENTRY_BUDGET = 2**27

# Rows per regenerated chunk on the streaming path.
CHUNK_ROWS = 1024

# Pauli basis in the numbering sigma_1..sigma_4 = (X, Y, Z, I).
PAULI = np.array(
    [
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
        [[1, 0], [0, 1]],
    ],
    dtype=np.complex128,
)


def _as_triple(Z):
    """Normalize dense/factored input to (dense, (U, w, V)) with one set."""
    if isinstance(Z, LowRankFactor):
        return None, (Z.U, Z.s, Z.V)
    if isinstance(Z, HermitianFactor):
        return None, (Z.U, Z.evals, Z.U)
    return as_matrix(Z), None


def _densify(Z, shape, dtype=None):
    dense, triple = _as_triple(Z)
    if dense is None:
        U, w, V = triple
        dense = (U * w) @ V.conj().T if U.shape[1] else np.zeros(shape, dtype=U.dtype)
    if dense.shape != tuple(shape):
        raise ValueError(f"matrix has shape {dense.shape}, ensemble expects {tuple(shape)}")
    if dtype is not None:
        dense = dense.astype(dtype, copy=False)
    return dense


def _stack_matvec(stack: np.ndarray, Z_dense: np.ndarray) -> np.ndarray:
    """<A_p, Z> for all p with stack rows vec(A_p): conj(stack) @ vec(Z)."""
    z = Z_dense.ravel()
    if np.iscomplexobj(stack):
        return np.conj(stack @ np.conj(z))
    if np.iscomplexobj(z):
        return stack @ z
    return stack @ z


@dataclass
class GaussianPayload:
    """Dense i.i.d. Gaussian sensing matrices, materialized or streamed."""

    seed: int
    s: int
    m: int
    shape: tuple[int, int]
    field: str
    mats: list | None  # per k: (m, n1*n2) stack, or None when streamed

    def _chunk(self, k: int, start: int, rows: int) -> np.ndarray:
        rng = substream(self.seed, ROLE_PAYLOAD, k, start // CHUNK_ROWS)
        cols = self.shape[0] * self.shape[1]
        if self.field == "complex":
            re = rng.standard_normal((rows, cols))
            im = rng.standard_normal((rows, cols))
            return (re + 1j * im) / np.sqrt(2.0)
        return rng.standard_normal((rows, cols))

    def iter_chunks(self, k: int):
        if self.mats is not None:
            yield 0, self.mats[k]
            return
        for start in range(0, self.m, CHUNK_ROWS):
            rows = min(CHUNK_ROWS, self.m - start)
            yield start, self._chunk(k, start, rows)

    def materialize(self) -> None:
        self.mats = [
            np.concatenate([c for _, c in self.iter_chunks(k)], axis=0) for k in range(self.s)
        ]

    def forward(self, k: int, Z) -> np.ndarray:
        Z_dense = _densify(Z, self.shape)
        out = None
        for start, chunk in self.iter_chunks(k):
            part = _stack_matvec(chunk, Z_dense)
            if out is None:
                out = np.zeros(self.m, dtype=part.dtype)
            out[start : start + chunk.shape[0]] = part
        return out / np.sqrt(self.m)

    def adjoint(self, k: int, y: np.ndarray) -> np.ndarray:
        acc = 0
        for start, chunk in self.iter_chunks(k):
            acc = acc + y[start : start + chunk.shape[0]] @ chunk
        return np.asarray(acc).reshape(self.shape) / np.sqrt(self.m)

    def dense_matrix(self, k: int, p: int) -> np.ndarray:
        if self.mats is not None:
            return self.mats[k][p].reshape(self.shape).copy()
        start = (p // CHUNK_ROWS) * CHUNK_ROWS
        rows = min(CHUNK_ROWS, self.m - start)
        return self._chunk(k, start, rows)[p - start].reshape(self.shape)

    def payload_arrays(self, k: int):
        for _, chunk in self.iter_chunks(k):
            yield chunk


def _pauli_words_dense(words: np.ndarray) -> np.ndarray:
    """Materialize the (scaled) tensor-product matrices for index words."""
    c, q = words.shape
    mats = PAULI[words[:, 0]]
    for j in range(1, q):
        nxt = PAULI[words[:, j]]
        d = mats.shape[1]
        mats = np.einsum("cij,ckl->cikjl", mats, nxt).reshape(c, 2 * d, 2 * d)
    return mats * 2.0 ** (-q / 2.0)


def _apply_pauli_words(words: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Rows A_p @ vec for all index words, without the 2^(-q/2) scale."""
    m, q = words.shape
    n = 1 << q
    arr = np.repeat(vec[None, :].astype(np.complex128), m, axis=0)
    arr = arr.reshape((m,) + (2,) * q)
    for axis in range(q):
        a = np.moveaxis(arr, 1 + axis, -1)
        shape = a.shape
        a = a.reshape(m, -1, 2)
        sig = PAULI[words[:, axis]]
        a = np.einsum("mij,mkj->mki", sig, a)
        arr = np.moveaxis(a.reshape(shape), -1, 1 + axis)
    return arr.reshape(m, n)


@dataclass
class PauliPayload:
    """Random tensor products of Pauli matrices, A = 2^(-q/2) kron(sigma_a)."""

    words: np.ndarray  # (s, m, q) indices into PAULI
    stacks: list | None = None  # per k: (m, n*n) dense cache when it fits

    @property
    def q(self) -> int:
        return self.words.shape[2]

    def materialize(self) -> None:
        m = self.words.shape[1]
        n = 1 << self.q
        stacks = []
        for k in range(self.words.shape[0]):
            stack = np.empty((m, n * n), dtype=np.complex128)
            for start in range(0, m, CHUNK_ROWS):
                block = self.words[k, start : start + CHUNK_ROWS]
                stack[start : start + block.shape[0]] = _pauli_words_dense(block).reshape(
                    block.shape[0], -1
                )
            stacks.append(stack)
        self.stacks = stacks

    def forward_kron(self, k: int, Z) -> np.ndarray:
        """Factored Kronecker action, O(m r n q); the fast structured path."""
        m, q = self.words.shape[1], self.q
        n = 1 << q
        dense, triple = _as_triple(Z)
        if triple is None:
            # dense input: treat columns of Z as the "right" factors
            U, w, V = dense, np.ones(n), np.eye(n)
        else:
            U, w, V = triple
        out = np.zeros(m, dtype=np.complex128)
        for i in range(U.shape[1]):
            if triple is not None and w[i] == 0:
                continue
            rows = _apply_pauli_words(self.words[k], np.ascontiguousarray(U[:, i]))
            out += w[i] * (rows @ np.conj(V[:, i]))
        return out * 2.0 ** (-q / 2.0) / np.sqrt(m)

    def adjoint_kron(self, k: int, y: np.ndarray) -> np.ndarray:
        m, q = self.words.shape[1], self.q
        n = 1 << q
        G = np.zeros((n, n), dtype=np.complex128)
        for start in range(0, m, CHUNK_ROWS):
            block = _pauli_words_dense(self.words[k, start : start + CHUNK_ROWS])
            G += np.tensordot(y[start : start + block.shape[0]], block, axes=(0, 0))
        return G / np.sqrt(m)

    def forward(self, k: int, Z) -> np.ndarray:
        if self.stacks is None:
            return self.forward_kron(k, Z)
        n = 1 << self.q
        Z_dense = _densify(Z, (n, n), dtype=np.complex128)
        return _stack_matvec(self.stacks[k], Z_dense) / np.sqrt(self.words.shape[1])

    def adjoint(self, k: int, y: np.ndarray) -> np.ndarray:
        if self.stacks is None:
            return self.adjoint_kron(k, y)
        n = 1 << self.q
        return (y @ self.stacks[k]).reshape(n, n) / np.sqrt(self.words.shape[1])

    def dense_matrix(self, k: int, p: int) -> np.ndarray:
        return _pauli_words_dense(self.words[k, p : p + 1])[0]

    def payload_arrays(self, k: int):
        yield self.words[k]


@dataclass
class ConvolutivePayload:
    """Lifted rank-one measurements A_{k,p} = conj(outer(FC_k[p], B[p]))."""

    FC: list  # per k: (m, n1) frequency-domain encoder F @ C_k
    B: np.ndarray  # (m, n2) first columns of the unitary DFT matrix
    encoder: str

    def forward(self, k: int, Z) -> np.ndarray:
        m = self.B.shape[0]
        dense, triple = _as_triple(Z)
        if triple is not None:
            U, w, V = triple
            if U.shape[1] == 0:
                return np.zeros(m, dtype=np.complex128)
            P = (self.FC[k] @ U) * w
            Q = self.B @ np.conj(V)
            return (P * Q).sum(axis=1) / np.sqrt(m)
        return ((self.FC[k] @ dense) * self.B).sum(axis=1) / np.sqrt(m)

    def adjoint(self, k: int, y: np.ndarray) -> np.ndarray:
        m = self.B.shape[0]
        return self.FC[k].conj().T @ (y[:, None] * np.conj(self.B)) / np.sqrt(m)

    def dense_matrix(self, k: int, p: int) -> np.ndarray:
        return np.conj(np.outer(self.FC[k][p], self.B[p]))

    def payload_arrays(self, k: int):
        yield self.FC[k]
        if k == 0:
            yield self.B


@dataclass
class CustomPayload:
    """Explicitly supplied sensing matrices (toy and oracle ensembles)."""

    mats: list  # per k: (m, n1*n2)
    shape: tuple[int, int]

    def forward(self, k: int, Z) -> np.ndarray:
        Z_dense = _densify(Z, self.shape)
        return _stack_matvec(self.mats[k], Z_dense) / np.sqrt(self.mats[k].shape[0])

    def adjoint(self, k: int, y: np.ndarray) -> np.ndarray:
        m = self.mats[k].shape[0]
        return (y @ self.mats[k]).reshape(self.shape) / np.sqrt(m)

    def dense_matrix(self, k: int, p: int) -> np.ndarray:
        return self.mats[k][p].reshape(self.shape).copy()

    def payload_arrays(self, k: int):
        yield self.mats[k]


@dataclass
class MeasurementEnsemble:
    """s linear operators mapping (n1, n2) matrices to m-vectors.

    Immutable after generation; forward/adjoint are pure and safe to call
    concurrently for different k.
    """

    kind: str
    s: int
    m: int
    shape: tuple[int, int]
    seed: int
    payload: object
    field: str = "real"
    meta: dict = dataclass_field(default_factory=dict)

    def forward(self, k: int, Z) -> np.ndarray:
        """(1/sqrt(m)) . (<A_{k,p}, Z>)_p with <A, Z> = trace(A^H Z)."""
        check_index(k, self.s)
        return self.payload.forward(k, Z)

    def adjoint(self, k: int, y) -> np.ndarray:
        """(1/sqrt(m)) . sum_p y_p A_{k,p}; the adjoint of forward."""
        check_index(k, self.s)
        y = as_vector(y, "y", length=self.m)
        return self.payload.adjoint(k, y)

    def mixed_forward(self, constituents) -> np.ndarray:
        """sum_k forward(k, X_k)."""
        if len(constituents) != self.s:
            raise ValueError(f"got {len(constituents)} constituents, ensemble has s={self.s}")
        out = self.forward(0, constituents[0])
        for k in range(1, self.s):
            out = out + self.forward(k, constituents[k])
        return out

    def dense_matrix(self, k: int, p: int) -> np.ndarray:
        """Materialize the single sensing matrix A_{k,p} (naive-path oracle)."""
        check_index(k, self.s)
        if not 0 <= p < self.m:
            raise IndexError(f"measurement index {p} out of range for m={self.m}")
        return self.payload.dense_matrix(k, p)

    def payload_sha256(self) -> str:
        h = hashlib.sha256()
        for k in range(self.s):
            for arr in self.payload.payload_arrays(k):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def descriptor(self) -> dict:
        """JSON-serializable description; payloads regenerate from the seed."""
        desc = {
            "kind": self.kind,
            "s": self.s,
            "m": self.m,
            "shape": list(self.shape),
            "seed": self.seed,
            "field": self.field,
            "payload_sha256": self.payload_sha256(),
        }
        desc.update(self.meta)
        return desc

    def descriptor_json(self) -> str:
        return json.dumps(self.descriptor(), sort_keys=True)


def generate_ensemble(
    kind: str,
    s: int,
    m: int,
    shape: tuple[int, int],
    seed: int,
    field: str = "real",
    encoder: str = "gaussian",
    entry_budget: int | None = None,
) -> MeasurementEnsemble:
    """Draw a seeded ensemble of one of the supported kinds.

    kind is one of "gaussian", "pauli", "convolutive".  Pauli requires
    shape = (2^q, 2^q); the Hadamard convolutive encoder requires m to be a
    power of two.  Generation is deterministic given the seed, with
    independent streams per (k, chunk).
    """
    kind = kind.lower()
    s, m = int(s), int(m)
    n1, n2 = (int(shape[0]), int(shape[1]))
    if s < 1 or m < 1:
        raise ValueError(f"s and m must be >= 1, got s={s}, m={m}")
    if entry_budget is None:
        entry_budget = DEFAULT_ENTRY_BUDGET
    fits = s * m * n1 * n2 <= entry_budget
    meta: dict = {}

    if kind == "gaussian":
        if field not in ("real", "complex"):
            raise ValueError(f"unknown field {field!r}")
        payload = GaussianPayload(seed=seed, s=s, m=m, shape=(n1, n2), field=field, mats=None)
        if fits:
            payload.materialize()
    elif kind == "pauli":
        q = int(n1).bit_length() - 1
        if n1 != n2 or n1 != 1 << q:
            raise ValueError(f"Pauli ensemble needs shape (2^q, 2^q), got {(n1, n2)}")
        words = np.stack(
            [
                substream(seed, ROLE_PAYLOAD, k).integers(0, 4, size=(m, q), dtype=np.uint8)
                for k in range(s)
            ]
        )
        payload = PauliPayload(words=words)
        if fits:
            payload.materialize()
        field = "complex"
        meta["q"] = q
    elif kind == "convolutive":
        if n2 > m or n1 > m:
            raise ValueError(f"convolutive ensemble needs m >= max(n1, n2), got m={m}, shape={(n1, n2)}")
        FC = []
        for k in range(s):
            rng = substream(seed, ROLE_PAYLOAD, k)
            if encoder == "gaussian":
                C = (rng.standard_normal((m, n1)) + 1j * rng.standard_normal((m, n1))) / np.sqrt(2.0)
            elif encoder == "hadamard":
                if m & (m - 1):
                    raise ValueError(f"Hadamard encoder needs m a power of two, got m={m}")
                signs = rng.integers(0, 2, size=m) * 2 - 1
                C = signs[:, None] * hadamard(m)[:, :n1].astype(np.float64)
            else:
                raise ValueError(f"unknown convolutive encoder {encoder!r}")
            FC.append(np.fft.fft(C, axis=0, norm="ortho"))
        p_idx = np.arange(m)[:, None]
        j_idx = np.arange(n2)[None, :]
        B = np.exp(-2j * np.pi * p_idx * j_idx / m) / np.sqrt(m)
        payload = ConvolutivePayload(FC=FC, B=B, encoder=encoder)
        field = "complex"
        meta["encoder"] = encoder
    else:
        raise ValueError(f"unknown ensemble kind {kind!r}")

    return MeasurementEnsemble(
        kind=kind, s=s, m=m, shape=(n1, n2), seed=seed, payload=payload, field=field, meta=meta
    )


def ensemble_from_matrices(mats, seed: int = 0, field: str = "real") -> MeasurementEnsemble:
    """Wrap explicit per-operator stacks of sensing matrices.

    mats is a sequence of s arrays of shape (m, n1, n2).  Not regenerable
    from a descriptor; intended for toys and oracles.
    """
    stacks = []
    shape = None
    m = None
    for A in mats:
        A = np.asarray(A)
        if A.ndim != 3:
            raise ValueError("each operator needs a stack of shape (m, n1, n2)")
        if shape is None:
            m, shape = A.shape[0], (A.shape[1], A.shape[2])
        elif A.shape != (m, *shape):
            raise ValueError("operator stacks disagree on shape")
        stacks.append(A.reshape(A.shape[0], -1).copy())
    if not stacks:
        raise ValueError("need at least one operator")
    payload = CustomPayload(mats=stacks, shape=shape)
    return MeasurementEnsemble(
        kind="custom", s=len(stacks), m=m, shape=shape, seed=seed, payload=payload, field=field
    )


def identity_ensemble(n1: int, n2: int, scaled: bool = True) -> MeasurementEnsemble:
    """Vectorization toy with m = n1*n2 unit-basis sensing matrices.

    With scaled=True the matrices carry a sqrt(m) factor so the operator is
    an exact isometry; with scaled=False forward(Z) = vec(Z)/sqrt(m).
    """
    m = n1 * n2
    stack = np.eye(m).reshape(m, n1, n2)
    if scaled:
        stack = stack * np.sqrt(m)
    return ensemble_from_matrices([stack])


def ensemble_from_descriptor(desc: dict, entry_budget: int | None = None) -> MeasurementEnsemble:
    """Regenerate an ensemble from its descriptor and verify the payload hash."""
    kind = desc["kind"]
    if kind == "custom":
        raise ValueError("custom ensembles cannot be regenerated from a descriptor")
    ens = generate_ensemble(
        kind,
        desc["s"],
        desc["m"],
        tuple(desc["shape"]),
        desc["seed"],
        field=desc.get("field", "real"),
        encoder=desc.get("encoder", "gaussian"),
        entry_budget=entry_budget,
    )
    expect = desc.get("payload_sha256")
    if expect is not None and ens.payload_sha256() != expect:
        raise ValueError("regenerated payload hash does not match the descriptor")
    return ens
