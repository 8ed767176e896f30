"""Qubit conventions and the U(1)xZ2 symmetry action.

Conventions used throughout the package:

* chain of L qubits, sites numbered 1..L, open boundaries;
* computational basis |0>, |1>, basis index of a bitstring has site 1 as
  the most significant bit;
* charge offset q = (number of 1s) - L/2, so half filling is q = 0;
* the Z2 generator is the global bit flip X^(tensor L), which maps q -> -q.

Two-qubit operators act on the ordered pair basis |00>, |01>, |10>, |11>.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from math import comb

import numpy as np

TWO_PI = 2.0 * np.pi

SINGLET_PLUS = np.array([0.0, 1.0, 1.0, 0.0], dtype=complex) / np.sqrt(2.0)
SINGLET_MINUS = np.array([0.0, 1.0, -1.0, 0.0], dtype=complex) / np.sqrt(2.0)
PAIR_BELL = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex) / np.sqrt(2.0)
for _v in (SINGLET_PLUS, SINGLET_MINUS, PAIR_BELL):
    _v.flags.writeable = False


class ChargeLabel(Enum):
    """The two charge hypotheses of the binary decoding task.

    ZERO_PLUS is the flip-even half-filling sector (q = 0, parity +).
    ONE is the |q| = 1 doublet in its flip-even combination; the sign of q
    is not resolvable from measurement records, so only |q| is labelled.
    """

    ZERO_PLUS = "zero_plus"
    ONE = "one"

    @property
    def other(self) -> "ChargeLabel":
        return ChargeLabel.ONE if self is ChargeLabel.ZERO_PLUS else ChargeLabel.ZERO_PLUS


@dataclass(frozen=True)
class GateParams:
    """Angles of a symmetric two-qubit gate: phase theta on the flip-odd
    pair state, phase phi on the flip-even one."""

    theta: float
    phi: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.theta) and np.isfinite(self.phi)):
            raise ValueError("gate angles must be finite")


def random_gate_params(rng: np.random.Generator) -> GateParams:
    theta, phi = rng.uniform(0.0, TWO_PI, size=2)
    return GateParams(float(theta), float(phi))


@dataclass(frozen=True)
class ProjectorSet:
    """The complete orthogonal projector triple on a two-qubit space.

    p1 projects on span{|00>, |11>}, ps on the flip-even pair state and
    pa on the flip-odd pair state.
    """

    p1: np.ndarray
    ps: np.ndarray
    pa: np.ndarray

    def as_tuple(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (self.p1, self.ps, self.pa)


OUTCOME_SYMBOLS = ("1", "s", "a")


@lru_cache(maxsize=1)
def projector_set() -> ProjectorSet:
    # entries written as exact dyadic rationals so completeness,
    # idempotence and orthogonality hold to the last bit
    p1 = np.diag([1.0, 0.0, 0.0, 1.0]).astype(complex)
    ps = np.zeros((4, 4), dtype=complex)
    ps[1:3, 1:3] = [[0.5, 0.5], [0.5, 0.5]]
    pa = np.zeros((4, 4), dtype=complex)
    pa[1:3, 1:3] = [[0.5, -0.5], [-0.5, 0.5]]
    for m in (p1, ps, pa):
        m.flags.writeable = False
    return ProjectorSet(p1=p1, ps=ps, pa=pa)


def sym_gate(params: GateParams) -> np.ndarray:
    """Two-qubit unitary: identity block plus phases on the pair states."""
    p = projector_set()
    return p.p1 + np.exp(1j * params.theta) * p.pa + np.exp(1j * params.phi) * p.ps


def gate_middle_block(params: GateParams) -> np.ndarray:
    """The 2x2 action of sym_gate on span{|01>, |10>} (the |00>, |11>
    amplitudes are untouched); used by the fast statevector path."""
    ep, ea = np.exp(1j * params.phi), np.exp(1j * params.theta)
    return 0.5 * np.array([[ep + ea, ep - ea], [ep - ea, ep + ea]])


@dataclass(frozen=True)
class SectorSpec:
    """A symmetry sector: charge offset q (for q != 0 the +-q doublet) and
    flip parity; parity 'unresolved' addresses the plain U(1) sector."""

    charge_offset: int
    parity: str = "unresolved"

    def __post_init__(self) -> None:
        if self.parity not in ("+", "-", "unresolved"):
            raise ValueError(f"bad parity {self.parity!r}")


def label_sector(label: ChargeLabel) -> SectorSpec:
    if label is ChargeLabel.ZERO_PLUS:
        return SectorSpec(0, "+")
    return SectorSpec(1, "+")


def sector_dimension(spec: SectorSpec, L: int) -> int:
    """Dimension of the requested joint charge/parity eigenspace.

    For q = 0 the global flip acts within the sector and splits it evenly
    (no half-filling bitstring equals its own complement).  For q != 0 the
    flip exchanges the +-q sectors and each parity eigenspace of the
    doublet has the dimension of a single charge sector.
    """
    q = abs(spec.charge_offset)
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")
    if q > L // 2:
        raise ValueError("empty sector: |q| exceeds L/2")
    n_ones = L // 2 + q
    dim_u1 = comb(L, n_ones)
    if spec.parity == "unresolved":
        return dim_u1
    if q == 0:
        return dim_u1 // 2
    return dim_u1


def initial_amplitudes(label: ChargeLabel, L: int) -> np.ndarray:
    """Dense amplitudes of the weakly entangled definite-charge start
    state: flip-even pair states on every pair, with the first pair
    replaced by the Bell pair for the |q| = 1 label."""
    if L < 2 or L % 2:
        raise ValueError("L must be an even integer >= 2")
    psi = (PAIR_BELL if label is ChargeLabel.ONE else SINGLET_PLUS).copy()
    for _ in range(1, L // 2):
        psi = np.kron(psi, SINGLET_PLUS)
    return psi


def charge_generator(k: int) -> np.ndarray:
    """Diagonal of the k-site total charge Sum_i Z_i in the computational
    basis (site 1 is the most significant bit)."""
    diag = np.zeros(2**k)
    for i in range(2**k):
        ones = bin(i).count("1")
        diag[i] = (k - ones) - ones
    return diag


def flip_matrix(k: int) -> np.ndarray:
    """The k-site global bit flip X^(tensor k)."""
    n = 2**k
    f = np.zeros((n, n))
    f[np.arange(n)[::-1], np.arange(n)] = 1.0
    return f


def check_strong_symmetry(op: np.ndarray, tol: float = 1e-12) -> bool:
    """True iff op commutes with the total charge and the global flip on
    its k-qubit space, to the given max-norm tolerance."""
    op = np.asarray(op)
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError("operator must be a square matrix")
    k = int(round(np.log2(op.shape[0])))
    if 2**k != op.shape[0]:
        raise ValueError("operator dimension must be a power of two")
    z = charge_generator(k)
    comm_charge = op * z[np.newaxis, :] - z[:, np.newaxis] * op
    if np.abs(comm_charge).max() > tol:
        return False
    f = flip_matrix(k)
    comm_flip = op @ f - f @ op
    return bool(np.abs(comm_flip).max() <= tol)
