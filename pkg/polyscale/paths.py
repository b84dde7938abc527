"""
Somme parziali, processi riscalati e statistiche delle ipotesi del teorema limite.

Normalizzazioni del cammino W_n(t) = S_{nt} / (sigma sqrt(n)):
- 'unit_covariance': sigma^2 = chi/2, ogni coordinata di W_n(1) ha varianza 1 a beta = 0
- 'literal':         sigma^2 = chi
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from polyscale.errors import InsufficientDataError, ValidationError
from polyscale.model import InteractionKernel, Polymer, SpinChainPair, polymer_sites, rotate_inverse
from polyscale.sampler import SampleBatch
from polyscale.wasserstein import EmpiricalMeasure

logger = logging.getLogger(__name__)

UNIT_COVARIANCE = "unit_covariance"
LITERAL = "literal"
NORMALIZATIONS = (UNIT_COVARIANCE, LITERAL)
ANCHOR_FIRST = "first"
ANCHOR_BULK = "bulk"
FRAME_POLYMER = "polymer"
FRAME_ROTATED = "rotated"
DEFAULT_DELTA = 0.2
# campioni per blocco FFT nel calcolo delle autocovarianze
FFT_BATCH = 256


# ========== SOMME PARZIALI E BLOCCHI ==========

def partial_sums(x: Union[Polymer, Sequence, np.ndarray]) -> np.ndarray:
    """S_0 = 0, S_k = X_1 + ... + X_k per catene (N,) o sequenze di passi (N, 2)"""
    if isinstance(x, Polymer):
        return polymer_sites(x)
    arr = np.asarray(x)
    if arr.size == 0:
        raise ValidationError("Sequenza vuota")
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.int64)
    out = np.zeros((arr.shape[0] + 1,) + arr.shape[1:], dtype=arr.dtype)
    np.cumsum(arr, axis=0, out=out[1:])
    return out


@dataclass(frozen=True)
class BlockScheme:
    n: int
    ell: int
    m: int
    delta: Optional[float] = None

    def __post_init__(self):
        if self.n < 1 or not 1 <= self.ell <= self.n:
            raise ValidationError(f"Blocchi non validi: n={self.n}, ell={self.ell}")
        if self.m != self.n // self.ell:
            raise ValidationError(f"m deve essere floor(n/ell) = {self.n // self.ell}")
        if self.delta is not None and not 0 <= self.delta < 0.25:
            raise ValidationError(f"delta deve stare in [0, 1/4) (ricevuto {self.delta})")

    @classmethod
    def from_block_size(cls, n: int, ell: int) -> "BlockScheme":
        return cls(n, ell, n // ell if ell >= 1 else 0)

    @classmethod
    def from_delta(cls, n: int, delta: float = DEFAULT_DELTA) -> "BlockScheme":
        """ell_n = floor(n^delta)"""
        ell = max(1, int(math.floor(n ** delta + 1e-9)))
        return cls(n, ell, n // ell, delta)

    @property
    def condition_ratio(self) -> float:
        """ell^3 / m, deve tendere a 0"""
        return self.ell ** 3 / self.m

    @property
    def leftover(self) -> int:
        return self.n - self.m * self.ell

    def to_dict(self) -> dict:
        return {"n": self.n, "ell": self.ell, "m": self.m, "delta": self.delta,
                "condition_ratio": self.condition_ratio, "leftover": self.leftover}


def make_blocks(chain: np.ndarray, scheme: BlockScheme) -> np.ndarray:
    """Somme di blocco Y_j (ultimo asse); gli ultimi n - m*ell elementi restano fuori"""
    chain = np.asarray(chain)
    if chain.shape[-1] != scheme.n:
        raise ValidationError(f"Catena di lunghezza {chain.shape[-1]}, schema per n={scheme.n}")
    used = chain[..., :scheme.m * scheme.ell].astype(np.int64)
    return used.reshape(chain.shape[:-1] + (scheme.m, scheme.ell)).sum(axis=-1)


def block_schedule(ns: Iterable[int], delta: float = DEFAULT_DELTA) -> List[BlockScheme]:
    return [BlockScheme.from_delta(int(n), delta) for n in ns]


def condition_envelope(n: int, delta: float = DEFAULT_DELTA) -> float:
    """Maggiorante n^(4 delta) / (n - n^delta) di ell^3/m, decrescente in n per delta < 1/4"""
    return n ** (4 * delta) / (n - n ** delta)


# ========== SUSCETTIVITA' ==========

def default_k_cut(n: int) -> int:
    return min(n - 1, int(math.ceil(math.sqrt(n))))


def chi_from_covariance(cov: np.ndarray, k_cut: Optional[int] = None, anchor: str = ANCHOR_FIRST) -> float:
    """
    chi = Var(sigma_1) + 2 sum_{k=1..K} Cov(sigma_1, sigma_{1+k}) da una matrice di covarianze.

    Con anchor='bulk' ogni covarianza di lag k e' la media sulle diagonali.
    """
    cov = np.asarray(cov, dtype=float)
    n = cov.shape[0]
    k_cut = default_k_cut(n) if k_cut is None else min(k_cut, n - 1)
    if anchor == ANCHOR_FIRST:
        terms = [cov[0, 0]] + [2 * cov[0, k] for k in range(1, k_cut + 1)]
    elif anchor == ANCHOR_BULK:
        terms = [np.diagonal(cov).mean()] + [2 * np.diagonal(cov, k).mean() for k in range(1, k_cut + 1)]
    else:
        raise ValidationError(f"Ancoraggio sconosciuto: {anchor}")
    return math.fsum(terms)


def lag_covariances(chains: np.ndarray, k_cut: int, anchor: str = ANCHOR_BULK) -> np.ndarray:
    """
    Covarianze campionarie c_0..c_K (ddof=1) tra sigma_i e sigma_{i+k}.

    'first': solo il sito base 0. 'bulk': media sui siti base ammissibili, con le
    somme incrociate calcolate via FFT.
    """
    integral = np.issubdtype(np.asarray(chains).dtype, np.integer)
    x = np.asarray(chains, dtype=float)
    count, n = x.shape
    if count < 2:
        raise InsufficientDataError("Servono almeno 2 campioni")
    means = x.mean(axis=0)
    if anchor == ANCHOR_FIRST:
        centered = x - means
        return np.array([centered[:, 0] @ centered[:, k] / (count - 1) for k in range(k_cut + 1)])
    if anchor != ANCHOR_BULK:
        raise ValidationError(f"Ancoraggio sconosciuto: {anchor}")
    size = 2 * n
    power = np.zeros(n + 1)
    for start in range(0, count, FFT_BATCH):
        f = np.fft.rfft(x[start:start + FFT_BATCH], size, axis=1)
        power += np.sum(f.real ** 2 + f.imag ** 2, axis=0)
    cross = np.fft.irfft(power, size)[:k_cut + 1]
    if integral:
        cross = np.rint(cross)
    fm = np.fft.rfft(means, size)
    mean_cross = np.fft.irfft(fm.real ** 2 + fm.imag ** 2, size)[:k_cut + 1]
    lags = np.arange(k_cut + 1)
    return (cross - count * mean_cross) / ((count - 1) * (n - lags))


def chi_tail_heuristic(c1: float, kernel: Optional[InteractionKernel], k_cut: int, n: int) -> float:
    """Coda stimata 2 |c_1| / V(1) * sum_{k > K} V(k): covarianze che decadono come il kernel"""
    if kernel is None:
        return 0.0
    v1 = float(kernel.value(1))
    if v1 <= 0:
        return 0.0
    return 2 * abs(c1) / v1 * kernel.tail_sum(k_cut, n)


def sigma_from_chi(chi: float, normalization: str = UNIT_COVARIANCE) -> float:
    if normalization not in NORMALIZATIONS:
        raise ValidationError(f"Normalizzazione sconosciuta: {normalization}")
    if not (chi > 0 and math.isfinite(chi)):
        logger.warning(f"⚠️ chi_hat={chi} non positivo: uso chi=1")
        chi = 1.0
    return math.sqrt(chi / 2 if normalization == UNIT_COVARIANCE else chi)


# ========== STATISTICHE DELLE IPOTESI ==========

@dataclass
class HypothesisStats:
    var_ratio: float
    block_var_ratio: float
    third_moment_max: float
    chi_hat: float
    chi_tail: float = 0.0
    k_cut: int = 0
    var_ratio_se: float = float("nan")
    block_var_ratio_se: float = float("nan")
    n_samples: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _variance_se(values: np.ndarray) -> float:
    """Errore standard della varianza campionaria"""
    count = values.size
    centered = values - values.mean()
    m2 = float(np.mean(centered ** 2))
    m4 = float(np.mean(centered ** 4))
    return math.sqrt(max(m4 - m2 * m2, 0.0) / count)


def hypothesis_stats(samples: Union[SampleBatch, np.ndarray], scheme: BlockScheme,
                     anchor: str = ANCHOR_FIRST, k_cut: Optional[int] = None,
                     kernel: Optional[InteractionKernel] = None) -> HypothesisStats:
    """
    Stime Monte Carlo delle quantita' delle ipotesi (varianze, blocchi, terzo momento, chi).

    Args:
        samples: SampleBatch (si usano tutte le catene sigma1 e sigma2) o array (count, n)
        scheme: schema a blocchi per n
        anchor: 'first' (letterale) o 'bulk' (media sui siti)
        kernel: se dato, stima anche la coda troncata di chi

    Returns:
        HypothesisStats
    """
    chains = samples.chains() if isinstance(samples, SampleBatch) else np.atleast_2d(np.asarray(samples))
    count, n = chains.shape
    if count < 2:
        raise InsufficientDataError(f"Servono almeno 2 campioni (ricevuti {count})")
    if n != scheme.n:
        raise ValidationError(f"Catene di lunghezza {n}, schema per n={scheme.n}")

    totals = chains.sum(axis=1, dtype=np.int64).astype(float)
    var_total = float(np.var(totals, ddof=1))
    blocks = make_blocks(chains, scheme).astype(float)
    block_vars = np.var(blocks, axis=0, ddof=1)
    denom = scheme.m * scheme.ell
    third = float(np.max(np.mean(np.abs(chains.astype(float)) ** 3, axis=0)))

    k_cut = default_k_cut(n) if k_cut is None else min(k_cut, n - 1)
    covs = lag_covariances(chains, k_cut, anchor)
    chi = math.fsum([covs[0]] + [2 * c for c in covs[1:]])
    tail = chi_tail_heuristic(covs[1] if k_cut >= 1 else 0.0, kernel, k_cut, n)

    block_se = math.sqrt(math.fsum(_variance_se(blocks[:, j]) ** 2 for j in range(scheme.m))) / denom
    return HypothesisStats(
        var_ratio=var_total / n,
        block_var_ratio=math.fsum(block_vars) / denom,
        third_moment_max=third,
        chi_hat=chi,
        chi_tail=tail,
        k_cut=k_cut,
        var_ratio_se=_variance_se(totals) / n,
        block_var_ratio_se=block_se,
        n_samples=count,
    )


# ========== PROCESSI RISCALATI ==========

@dataclass(frozen=True, eq=False)
class PathProcess:
    """Interpolazione lineare dei nodi riscalati: il nodo k corrisponde a t = k/n"""
    sigma: float
    n: int
    nodes: np.ndarray  # (n+1, d), gia' divisi per la normalizzazione

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if nodes.shape[0] != self.n + 1:
            raise ValidationError(f"Servono n+1={self.n + 1} nodi (ricevuti {nodes.shape[0]})")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def dim(self) -> int:
        return int(self.nodes.shape[1])

    def value(self, t: float) -> np.ndarray:
        if not 0 <= t <= 1:
            raise ValidationError(f"t deve stare in [0, 1] (ricevuto {t})")
        pos = t * self.n
        k = min(int(math.floor(pos)), self.n - 1)
        frac = pos - k
        if frac == 0:
            return self.nodes[k].copy()
        return self.nodes[k] + frac * (self.nodes[k + 1] - self.nodes[k])

    def values(self, ts: Sequence[float]) -> np.ndarray:
        return np.stack([self.value(t) for t in ts])

    def trace(self) -> np.ndarray:
        """Coppie (t, valore) dei nodi, per l'emissione in CSV"""
        ts = np.arange(self.n + 1) / self.n
        return np.column_stack([ts, self.nodes])


def build_w_path(p: Union[Polymer, SpinChainPair, np.ndarray], sigma: float) -> PathProcess:
    """
    Cammino riscalato S_{nt} / (sigma sqrt(n)).

    Polymer: coordinate del reticolo. SpinChainPair: sistema ruotato
    (S^(1), S^(2)) / (sigma sqrt(2n)), cioe' T applicato al cammino del polimero.
    Array 1D di +-1: somma parziale stabilizzata di una sola catena.
    """
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma deve essere > 0 (ricevuto {sigma})")
    if isinstance(p, SpinChainPair):
        s1 = partial_sums(p.sigma1)
        s2 = partial_sums(p.sigma2)
        nodes = np.column_stack([s1, s2]) / (sigma * math.sqrt(2 * p.n))
        return PathProcess(sigma, p.n, nodes)
    sites = partial_sums(p)
    n = sites.shape[0] - 1
    return PathProcess(sigma, n, sites / (sigma * math.sqrt(n)))


def marginal_samples(paths: Sequence[PathProcess], t: float) -> EmpiricalMeasure:
    if not 0 <= t <= 1:
        raise ValidationError(f"t deve stare in [0, 1] (ricevuto {t})")
    if len(paths) < 1:
        raise InsufficientDataError("Serve almeno un cammino")
    return EmpiricalMeasure(np.stack([path.value(t) for path in paths]))


def _interpolated_sums(chains: np.ndarray, t: float) -> np.ndarray:
    """S_{nt} interpolata per ogni riga di una matrice (count, n) di +-1"""
    n = chains.shape[1]
    pos = t * n
    k = min(int(math.floor(pos)), n)
    frac = pos - k
    base = chains[:, :k].sum(axis=1, dtype=np.int64).astype(float)
    if frac > 0 and k < n:
        base += frac * chains[:, k]
    return base


def path_marginals(batch: SampleBatch, t_grid: Sequence[float], sigma: float,
                   frame: str = FRAME_POLYMER) -> np.ndarray:
    """
    Valori di W_n(t) per tutto il batch senza costruire i singoli PathProcess.

    Returns:
        array (len(t_grid), count, 2)
    """
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma deve essere > 0 (ricevuto {sigma})")
    if frame not in (FRAME_POLYMER, FRAME_ROTATED):
        raise ValidationError(f"Sistema di riferimento sconosciuto: {frame}")
    n = batch.n
    out = np.empty((len(t_grid), len(batch), 2))
    for idx, t in enumerate(t_grid):
        if not 0 <= t <= 1:
            raise ValidationError(f"t deve stare in [0, 1] (ricevuto {t})")
        s1 = _interpolated_sums(batch.sigma1, t)
        s2 = _interpolated_sums(batch.sigma2, t)
        rotated = np.column_stack([s1, s2]) / (sigma * math.sqrt(2 * n))
        out[idx] = rotated if frame == FRAME_ROTATED else rotate_inverse(rotated)
    return out


def stabilized_partial_sum(chains: np.ndarray, t: float, sigma: float) -> np.ndarray:
    """Z_t(n) = S_{floor(nt)} / (sigma sqrt(n)) per ogni catena (count, n)"""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValidationError(f"sigma deve essere > 0 (ricevuto {sigma})")
    if not 0 <= t <= 1:
        raise ValidationError(f"t deve stare in [0, 1] (ricevuto {t})")
    chains = np.atleast_2d(np.asarray(chains))
    n = chains.shape[1]
    k = int(math.floor(n * t + 1e-12))
    return chains[:, :k].sum(axis=1, dtype=np.int64) / (sigma * math.sqrt(n))


def taxicab_mean_square(values: np.ndarray) -> float:
    """E||W||_1^2 su valori (count, 2)"""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return float(np.mean(np.abs(values).sum(axis=1) ** 2))


def brownian_taxicab_mean_square(t: float) -> float:
    """E||B(t)||_1^2 = 2t (1 + 2/pi) per il moto browniano planare standard"""
    return 2 * t * (1 + 2 / math.pi)


def euclidean_mean_square(values: np.ndarray) -> float:
    values = np.atleast_2d(np.asarray(values, dtype=float))
    return float(np.mean(np.sum(values ** 2, axis=1)))


def emit_paths(paths: Sequence[PathProcess], path) -> None:
    """Scrive le tracce (indice, t, valori) in CSV"""
    frames = []
    for idx, proc in enumerate(paths):
        trace = proc.trace()
        columns = ["t"] + [f"w{d + 1}" for d in range(proc.dim)]
        frame = pd.DataFrame(trace, columns=columns)
        frame.insert(0, "path", idx)
        frames.append(frame)
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)
    logger.info(f"💾 Salvate {len(paths)} tracce in {path}")
