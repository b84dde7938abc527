"""
Modello del polimero: passi, configurazioni, kernel di interazione,
Hamiltoniana e biiezione polimero <-> coppia di catene di spin.

Convenzioni:
- i passi sono codificati come interi 0:+e1, 1:+e2, 2:-e1, 3:-e2
- la rotazione T di pi/4 manda (x, y) in ((x - y)/sqrt2, (x + y)/sqrt2), quindi
  sigma1 = x - y e sigma2 = x + y per ogni passo unitario
"""

import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from polyscale.errors import ValidationError

logger = logging.getLogger(__name__)

ALIGNMENT_FAVORING = "alignment_favoring"
AS_WRITTEN = "as_written"
SIGN_CONVENTIONS = (ALIGNMENT_FAVORING, AS_WRITTEN)

# soglia oltre la quale una tabella custom viene considerata "non decaduta"
CUSTOM_TAIL_WARNING = 1e-3


class Step(IntEnum):
    E1 = 0
    E2 = 1
    MINUS_E1 = 2
    MINUS_E2 = 3

    @property
    def vector(self) -> Tuple[int, int]:
        return tuple(int(v) for v in STEP_VECTORS[self.value])

    @classmethod
    def from_vector(cls, v: Sequence[int]) -> "Step":
        x, y = int(v[0]), int(v[1])
        if abs(x) + abs(y) != 1:
            raise ValidationError(f"Passo non unitario in norma taxicab: {(x, y)}")
        return cls(VECTOR_TO_CODE[(x, y)])


STEP_VECTORS = np.array([[1, 0], [0, 1], [-1, 0], [0, -1]], dtype=np.int64)
VECTOR_TO_CODE = {(1, 0): 0, (0, 1): 1, (-1, 0): 2, (0, -1): 3}

# spin (sigma1, sigma2) per ciascun codice di passo
STEP_SPINS = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], dtype=np.int8)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Polymer:
    """Cammino a primi vicini su Z^2 che parte dall'origine"""
    steps: np.ndarray  # codici dei passi, shape (N,)

    def __post_init__(self):
        codes = np.asarray(self.steps, dtype=np.int8).reshape(-1).copy()
        if codes.size < 1:
            raise ValidationError("Un polimero deve avere almeno un passo")
        if codes.min() < 0 or codes.max() > 3:
            raise ValidationError("Codici di passo ammessi: 0, 1, 2, 3")
        object.__setattr__(self, "steps", _readonly(codes))

    @classmethod
    def from_steps(cls, steps: Sequence[Union[Step, int]]) -> "Polymer":
        return cls(np.array([int(s) for s in steps], dtype=np.int8))

    @classmethod
    def from_vectors(cls, vectors: Sequence[Sequence[int]]) -> "Polymer":
        return cls(np.array([Step.from_vector(v).value for v in vectors], dtype=np.int8))

    @classmethod
    def from_sites(cls, sites: np.ndarray) -> "Polymer":
        sites = np.asarray(sites, dtype=np.int64)
        if sites.ndim != 2 or sites.shape[1] != 2 or sites.shape[0] < 2:
            raise ValidationError("I siti devono avere shape (N+1, 2) con N >= 1")
        if np.any(sites[0] != 0):
            raise ValidationError("Il polimero deve partire dall'origine")
        return cls.from_vectors(np.diff(sites, axis=0))

    @property
    def n(self) -> int:
        return int(self.steps.size)

    @property
    def vectors(self) -> np.ndarray:
        return STEP_VECTORS[self.steps]

    def sites(self) -> np.ndarray:
        return polymer_sites(self)

    def end_to_end(self) -> np.ndarray:
        return self.vectors.sum(axis=0)

    def end_to_end_l1(self) -> int:
        return int(np.abs(self.end_to_end()).sum())

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polymer):
            return NotImplemented
        return np.array_equal(self.steps, other.steps)

    def __repr__(self) -> str:
        return f"Polymer(n={self.n}, steps={self.steps.tolist()[:16]}{'...' if self.n > 16 else ''})"


@dataclass(frozen=True, eq=False)
class SpinChainPair:
    """Le due catene +-1 ottenute dai passi ruotati"""
    sigma1: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        s1 = np.asarray(self.sigma1, dtype=np.int8).reshape(-1).copy()
        s2 = np.asarray(self.sigma2, dtype=np.int8).reshape(-1).copy()
        if s1.size != s2.size:
            raise ValidationError(f"Catene di lunghezza diversa: {s1.size} vs {s2.size}")
        if s1.size < 1:
            raise ValidationError("Catene vuote")
        if not (np.all(np.abs(s1) == 1) and np.all(np.abs(s2) == 1)):
            raise ValidationError("Gli spin devono valere esattamente +1 o -1")
        object.__setattr__(self, "sigma1", _readonly(s1))
        object.__setattr__(self, "sigma2", _readonly(s2))

    @property
    def n(self) -> int:
        return int(self.sigma1.size)

    def __len__(self) -> int:
        return self.n

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpinChainPair):
            return NotImplemented
        return np.array_equal(self.sigma1, other.sigma1) and np.array_equal(self.sigma2, other.sigma2)


@dataclass(frozen=True)
class InteractionKernel:
    """
    Accoppiamento V(r), r >= 1, che dipende solo dalla distanza |i - j|.

    Usare i costruttori power_law / finite_range / custom.
    """
    kind: str
    alpha: Optional[float] = None
    range_l: Optional[int] = None
    strength: Optional[float] = None
    custom_table: Tuple[float, ...] = field(default_factory=tuple)
    sign_convention: str = ALIGNMENT_FAVORING

    def __post_init__(self):
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValidationError(f"sign_convention non valida: {self.sign_convention}")
        if self.kind == "power_law":
            if self.alpha is None or not self.alpha > 1:
                raise ValidationError(f"power_law richiede alpha > 1 (ricevuto {self.alpha})")
        elif self.kind == "finite_range":
            if self.range_l is None or self.range_l < 1:
                raise ValidationError("finite_range richiede L >= 1")
            if self.strength is None or not self.strength > 0:
                raise ValidationError("finite_range richiede V > 0")
        elif self.kind == "custom":
            table = np.asarray(self.custom_table, dtype=float)
            if table.size == 0:
                raise ValidationError("Tabella custom vuota")
            if np.any(table < 0) or not np.all(np.isfinite(table)):
                raise ValidationError("La tabella custom deve avere valori finiti e >= 0")
            if table[-1] > CUSTOM_TAIL_WARNING * table.max():
                logger.warning(
                    "Tabella custom troncata prima che la coda decada: "
                    "la sommabilita' resta a carico dell'utente"
                )
        else:
            raise ValidationError(f"Tipo di kernel sconosciuto: {self.kind}")

    @property
    def sign(self) -> int:
        """+1 per il peso exp(+beta H), -1 per exp(-beta H)"""
        return 1 if self.sign_convention == ALIGNMENT_FAVORING else -1

    @property
    def is_monotone(self) -> bool:
        if self.kind != "custom":
            return True
        table = np.asarray(self.custom_table, dtype=float)
        return bool(np.all(np.diff(table) <= 0))

    def value(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=np.int64)
        out = np.zeros(r.shape, dtype=float)
        pos = r >= 1
        if self.kind == "power_law":
            out[pos] = r[pos].astype(float) ** (-self.alpha)
        elif self.kind == "finite_range":
            out[pos & (r <= self.range_l)] = self.strength
        else:
            table = np.asarray(self.custom_table, dtype=float)
            inside = pos & (r <= table.size)
            out[inside] = table[r[inside] - 1]
        return out

    def table(self, n: int) -> np.ndarray:
        """V(0), V(1), ..., V(n-1) con V(0) = 0"""
        return self.value(np.arange(n))

    def coupling_matrix(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        return self.table(n)[np.abs(idx[:, None] - idx[None, :])]

    def tail_sum(self, k: int, n: int) -> float:
        """Somma di V(r) per k < r < n"""
        if k + 1 >= n:
            return 0.0
        return math.fsum(self.value(np.arange(k + 1, n)))

    def with_sign(self, sign_convention: str) -> "InteractionKernel":
        return InteractionKernel(self.kind, self.alpha, self.range_l, self.strength,
                                 self.custom_table, sign_convention)


def power_law(alpha: float, sign_convention: str = ALIGNMENT_FAVORING) -> InteractionKernel:
    return InteractionKernel("power_law", alpha=float(alpha), sign_convention=sign_convention)


def finite_range(range_l: int, strength: float = 1.0,
                 sign_convention: str = ALIGNMENT_FAVORING) -> InteractionKernel:
    return InteractionKernel("finite_range", range_l=int(range_l), strength=float(strength),
                             sign_convention=sign_convention)


def custom(table: Sequence[float], sign_convention: str = ALIGNMENT_FAVORING) -> InteractionKernel:
    return InteractionKernel("custom", custom_table=tuple(float(v) for v in table),
                             sign_convention=sign_convention)


@dataclass(frozen=True)
class GibbsParams:
    beta: float
    kernel: InteractionKernel
    n: int

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValidationError(f"beta deve essere finito e >= 0 (ricevuto {self.beta})")
        if self.n < 1:
            raise ValidationError("N deve essere >= 1")

    @property
    def chain_beta(self) -> float:
        """beta efficace di ciascuna catena nella fattorizzazione"""
        return self.kernel.sign * self.beta / 2.0


# ========== OPERAZIONI ==========

def _lag_sum(x: np.ndarray, table: np.ndarray) -> float:
    """Somma esatta di V(j - i) <x_i, x_j> su i < j, lag per lag"""
    n = x.shape[0]
    terms = []
    for r in range(1, n):
        v = table[r]
        if v == 0.0:
            continue
        dot = int(np.sum(x[:-r] * x[r:]))
        if dot:
            terms.append(v * dot)
    return math.fsum(terms)


def hamiltonian(p: Polymer, k: InteractionKernel) -> float:
    """H_N = somma su i<j di V(|i-j|) <X_i, X_j>"""
    return _lag_sum(p.vectors, k.table(p.n))


def polymer_sites(p: Polymer) -> np.ndarray:
    sites = np.zeros((p.n + 1, 2), dtype=np.int64)
    np.cumsum(p.vectors, axis=0, out=sites[1:])
    return sites


def polymer_to_spins(p: Polymer) -> SpinChainPair:
    spins = STEP_SPINS[p.steps]
    return SpinChainPair(spins[:, 0], spins[:, 1])


def spins_to_polymer(s: SpinChainPair) -> Polymer:
    return Polymer(spins_to_codes(s.sigma1, s.sigma2))


def spins_to_codes(sigma1: np.ndarray, sigma2: np.ndarray) -> np.ndarray:
    """Versione vettoriale della biiezione inversa (funziona anche su batch)"""
    sigma1 = np.asarray(sigma1)
    sigma2 = np.asarray(sigma2)
    if sigma1.shape != sigma2.shape:
        raise ValidationError(f"Catene di lunghezza diversa: {sigma1.shape} vs {sigma2.shape}")
    # (+,+)->0, (-,+)->1, (-,-)->2, (+,-)->3
    codes = np.where(sigma2 > 0, np.where(sigma1 > 0, 0, 1), np.where(sigma1 < 0, 2, 3))
    return codes.astype(np.int8)


def rotate(points: np.ndarray) -> np.ndarray:
    """Rotazione T di pi/4 su punti (..., 2)"""
    points = np.asarray(points, dtype=float)
    x, y = points[..., 0], points[..., 1]
    return np.stack([(x - y) / math.sqrt(2.0), (x + y) / math.sqrt(2.0)], axis=-1)


def rotate_inverse(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    u, v = points[..., 0], points[..., 1]
    return np.stack([(u + v) / math.sqrt(2.0), (v - u) / math.sqrt(2.0)], axis=-1)


def gibbs_log_weight(p: Polymer, g: GibbsParams) -> float:
    """Log-peso non normalizzato s * beta * H_N"""
    if g.beta == 0:
        return 0.0
    return g.kernel.sign * g.beta * hamiltonian(p, g.kernel)


def chain_log_weight(chain: Sequence[int], beta_eff: float, k: InteractionKernel) -> float:
    """Log-peso Ising beta_eff * somma su i<j di V_ij sigma_i sigma_j"""
    chain = np.asarray(chain, dtype=np.int64).reshape(-1)
    if not np.all(np.abs(chain) == 1):
        raise ValidationError("La catena deve contenere solo +1 e -1")
    if beta_eff == 0:
        return 0.0
    return beta_eff * _lag_sum(chain[:, None], k.table(chain.size))


def random_polymer(n: int, rng: np.random.Generator) -> Polymer:
    return Polymer(rng.integers(0, 4, size=n, dtype=np.int8))
