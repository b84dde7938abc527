"""
Oracolo esatto per sistemi piccoli: enumerazione completa degli stati.

Ordinamento degli stati:
- catena: lo stato x ha il bit i acceso se e solo se sigma_i = -1
- polimero: la cifra i in base 4 di x e' il codice del passo i (0:+e1, 1:+e2, 2:-e1, 3:-e2)

Le somme sono fatte a blocchi di CHUNK_STATES stati con shift del massimo del
log-peso; i contributi dei blocchi si combinano con math.fsum.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from polyscale.errors import EnumerationLimitError, ValidationError
from polyscale.model import STEP_SPINS, STEP_VECTORS, GibbsParams, InteractionKernel

logger = logging.getLogger(__name__)

CHAIN_MAX_N = 20
POLYMER_MAX_N = 10
ASSOCIATION_MAX_N = 16
CHUNK_STATES = 2 ** 16
# le probabilita' dei singoli stati vengono conservate solo sotto questa soglia
PROBABILITY_MAX_STATES = 2 ** 16


@dataclass
class ExactSummary:
    """
    Riassunto esatto di una misura di Gibbs finita.

    Per le catene site_means ha shape (N,) e pair_covariances e' Cov(sigma_i, sigma_j).
    Per i polimeri site_means ha shape (N, 2) (E[X_i]) e pair_covariances e'
    E<X_i, X_j> - <E X_i, E X_j>.
    """
    n: int
    log_z: float
    site_means: np.ndarray
    pair_covariances: np.ndarray
    energy_mean: float
    extras: dict = field(default_factory=dict)
    probabilities: Optional[np.ndarray] = None

    @property
    def site_variances(self) -> np.ndarray:
        return np.diag(self.pair_covariances).copy()

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "log_z": self.log_z,
            "site_means": self.site_means.tolist(),
            "pair_covariances": self.pair_covariances.tolist(),
            "energy_mean": self.energy_mean,
        }
        out.update(self.extras)
        return out


# ========== STATI ==========

def chain_states(n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Stati di catena start..stop-1 come array int8 (count, n) di +-1"""
    stop = 2 ** n if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n, dtype=np.int64)[None, :]) & 1
    return (1 - 2 * bits).astype(np.int8)


def polymer_codes(n: int, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """Sequenze di passi start..stop-1 come array int8 (count, n) di codici"""
    stop = 4 ** n if stop is None else stop
    idx = np.arange(start, stop, dtype=np.int64)
    digits = (idx[:, None] >> (2 * np.arange(n, dtype=np.int64))[None, :]) & 3
    return digits.astype(np.int8)


def chain_index(chains: np.ndarray) -> np.ndarray:
    """Indice di stato per righe di spin +-1 (inverso di chain_states)"""
    chains = np.atleast_2d(np.asarray(chains))
    bits = (chains < 0).astype(np.int64)
    return bits @ (1 << np.arange(chains.shape[1], dtype=np.int64))


def polymer_index(codes: np.ndarray) -> np.ndarray:
    codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
    return codes @ (1 << (2 * np.arange(codes.shape[1], dtype=np.int64)))


def polymer_chain_indices(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per ogni stato polimero, gli indici degli stati delle due catene associate"""
    spins = STEP_SPINS[polymer_codes(n)]
    return chain_index(spins[..., 0]), chain_index(spins[..., 1])


# ========== MOTORE DI ENUMERAZIONE ==========

def _fsum_stack(values: List[np.ndarray]) -> np.ndarray:
    """Somma compensata elemento per elemento di una lista di array della stessa shape"""
    stacked = np.stack(values).reshape(len(values), -1)
    return np.array([math.fsum(col) for col in stacked.T]).reshape(values[0].shape)


ChunkResult = Tuple[np.ndarray, Dict[str, np.ndarray], Dict[str, List[np.ndarray]]]


def _enumerate(total: int, chunk_fn: Callable[[int, int], ChunkResult],
               keep_probabilities: bool, desc: str):
    """
    Args:
        total: numero di stati
        chunk_fn: (start, stop) -> (log-pesi, osservabili per stato, osservabili a coppie).
            Un osservabile a coppie e' una lista di array (count, N); il suo valore
            atteso e' la somma dei prodotti esterni E[x x^T].
        keep_probabilities: conserva il vettore delle probabilita'

    Returns:
        (log Z, dict di valori attesi, probabilita' o None)
    """
    partials = []
    log_weights = [] if keep_probabilities else None
    bounds = range(0, total, CHUNK_STATES)
    for start in tqdm(bounds, desc=desc, leave=False, disable=len(bounds) < 4):
        stop = min(total, start + CHUNK_STATES)
        logw, observables, pairs = chunk_fn(start, stop)
        shift = float(logw.max())
        w = np.exp(logw - shift)
        sums = {name: np.tensordot(w, values, axes=(0, 0)) for name, values in observables.items()}
        for name, arrays in pairs.items():
            sums[name] = sum((a * w[:, None]).T @ a for a in arrays)
        partials.append((shift, math.fsum(w), sums))
        if keep_probabilities:
            log_weights.append(logw)

    top = max(shift for shift, _, _ in partials)
    scale = [math.exp(shift - top) for shift, _, _ in partials]
    z = math.fsum(zc * s for (_, zc, _), s in zip(partials, scale))
    log_z = top + math.log(z)
    expectations = {
        name: _fsum_stack([sums[name] * s for (_, _, sums), s in zip(partials, scale)]) / z
        for name in partials[0][2]
    }
    probabilities = None
    if keep_probabilities:
        probabilities = np.exp(np.concatenate(log_weights) - log_z)
    return log_z, expectations, probabilities


def _check_cap(n: int, cap: int, what: str):
    if n < 1:
        raise ValidationError("N deve essere >= 1")
    if n > cap:
        raise EnumerationLimitError(f"Enumerazione {what} limitata a N <= {cap} (ricevuto N={n})")


# ========== CATENE ==========

def enumerate_chain(g: GibbsParams, beta_eff: float) -> ExactSummary:
    """
    Misura di Ising esatta su una catena di N spin (beta_eff esplicito, g.beta ignorato).

    extras: magnetization_abs = E|M_N|/N, magnetization_sq = E(M_N/N)^2, var_ratio = Var(S_N)/N.
    """
    n = g.n
    _check_cap(n, CHAIN_MAX_N, "di catena")
    coupling = g.kernel.coupling_matrix(n)

    def chunk(start, stop):
        states = chain_states(n, start, stop).astype(float)
        energy = 0.5 * np.einsum("si,ij,sj->s", states, coupling, states)
        m = states.sum(axis=1)
        return beta_eff * energy, {
            "sigma": states,
            "energy": energy,
            "m_abs": np.abs(m),
            "m_sq": m ** 2,
        }, {"second": [states]}

    total = 2 ** n
    log_z, e, probs = _enumerate(total, chunk, total <= PROBABILITY_MAX_STATES, "Catene")
    means = e["sigma"]
    cov = e["second"] - np.outer(means, means)
    cov = 0.5 * (cov + cov.T)
    extras = {
        "magnetization_abs": float(e["m_abs"]) / n,
        "magnetization_sq": float(e["m_sq"]) / n ** 2,
        "var_ratio": float(cov.sum()) / n,
    }
    return ExactSummary(n, log_z, means, cov, float(e["energy"]), extras, probs)


@lru_cache(maxsize=32)
def _chain_law(n: int, beta_eff: float, kernel: InteractionKernel) -> Tuple[np.ndarray, np.ndarray]:
    _check_cap(n, ASSOCIATION_MAX_N, "per l'associazione")
    summary = enumerate_chain(GibbsParams(abs(beta_eff), kernel, n), beta_eff)
    states = chain_states(n)
    probs = summary.probabilities
    states.setflags(write=False)
    probs.setflags(write=False)
    return states, probs


def chain_probabilities(g: GibbsParams, beta_eff: float) -> np.ndarray:
    """Probabilita' esatte di tutti i 2^N stati di catena (N <= 16)"""
    return _chain_law(g.n, float(beta_eff), g.kernel)[1]


def magnetization_moments(g: GibbsParams, beta_eff: float) -> Tuple[float, float]:
    """(E|M_N|/N, E(M_N/N)^2): proxy a N finito della magnetizzazione spontanea"""
    s = enumerate_chain(g, beta_eff)
    return s.extras["magnetization_abs"], s.extras["magnetization_sq"]


# ========== POLIMERI ==========

def enumerate_polymer(g: GibbsParams) -> ExactSummary:
    """
    Misura del polimero esatta sui 4^N cammini.

    extras: end_to_end_sq = E||S_N||^2, end_to_end_l1_sq = E||S_N||_1^2,
    end_to_end_l1 = E||S_N||_1.
    """
    n = g.n
    _check_cap(n, POLYMER_MAX_N, "del polimero")
    coupling = g.kernel.coupling_matrix(n)
    log_factor = g.kernel.sign * g.beta

    def chunk(start, stop):
        x = STEP_VECTORS[polymer_codes(n, start, stop)].astype(float)
        xs, ys = x[..., 0], x[..., 1]
        energy = 0.5 * (np.einsum("si,ij,sj->s", xs, coupling, xs)
                        + np.einsum("si,ij,sj->s", ys, coupling, ys))
        end = x.sum(axis=1)
        l1 = np.abs(end).sum(axis=1)
        return log_factor * energy, {
            "step": x,
            "energy": energy,
            "end_sq": (end ** 2).sum(axis=1),
            "end_l1": l1,
            "end_l1_sq": l1 ** 2,
        }, {"inner": [xs, ys]}

    total = 4 ** n
    log_z, e, probs = _enumerate(total, chunk, total <= PROBABILITY_MAX_STATES, "Polimeri")
    means = e["step"]
    cov = e["inner"] - means @ means.T
    cov = 0.5 * (cov + cov.T)
    extras = {
        "end_to_end_sq": float(e["end_sq"]),
        "end_to_end_l1_sq": float(e["end_l1_sq"]),
        "end_to_end_l1": float(e["end_l1"]),
    }
    summary = ExactSummary(n, log_z, means, cov, float(e["energy"]), extras, probs)
    summary.extras["step_inner"] = e["inner"].tolist()
    return summary


def polymer_probabilities(g: GibbsParams) -> np.ndarray:
    """Probabilita' esatte dei 4^N cammini, nell'ordine di polymer_codes (N <= 8)"""
    if 4 ** g.n > PROBABILITY_MAX_STATES:
        raise EnumerationLimitError(f"4^{g.n} stati oltre il limite {PROBABILITY_MAX_STATES} per le probabilita'")
    return enumerate_polymer(g).probabilities


# ========== FAMIGLIA MONOTONA ==========

MONOTONE_KINDS = ("site", "partial_sum", "window_sum", "threshold", "max_pair")


@dataclass(frozen=True)
class MonotoneFunction:
    """
    Funzione non decrescente in ogni coordinata della catena (indici da 0).

    site(i)            sigma_i
    partial_sum(k)     sigma_0 + ... + sigma_{k-1}
    window_sum(a, b)   sigma_a + ... + sigma_b
    threshold(k, c)    1[sigma_0 + ... + sigma_{k-1} >= c]
    max_pair(i, j)     max(sigma_i, sigma_j)
    """
    kind: str
    a: int
    b: int = 0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in MONOTONE_KINDS:
            raise ValidationError(f"Funzione monotona sconosciuta: {self.kind}")

    def span(self) -> int:
        """Numero minimo di siti richiesto"""
        if self.kind in ("site",):
            return self.a + 1
        if self.kind in ("partial_sum", "threshold"):
            return self.a
        return max(self.a, self.b) + 1

    def evaluate(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        if self.span() > states.shape[1] or min(self.a, self.b) < 0:
            raise ValidationError(f"{self} non compatibile con N={states.shape[1]}")
        s = states.astype(float)
        if self.kind == "site":
            return s[:, self.a]
        if self.kind == "partial_sum":
            return s[:, :self.a].sum(axis=1)
        if self.kind == "window_sum":
            return s[:, self.a:self.b + 1].sum(axis=1)
        if self.kind == "threshold":
            return (s[:, :self.a].sum(axis=1) >= self.c).astype(float)
        return np.maximum(s[:, self.a], s[:, self.b])

    def __str__(self) -> str:
        return f"{self.kind}({self.a}, {self.b}, {self.c})"


def site(i: int) -> MonotoneFunction:
    return MonotoneFunction("site", i)


def partial_sum(k: int) -> MonotoneFunction:
    return MonotoneFunction("partial_sum", k)


def window_sum(a: int, b: int) -> MonotoneFunction:
    return MonotoneFunction("window_sum", a, b)


def threshold(k: int, c: float) -> MonotoneFunction:
    return MonotoneFunction("threshold", k, c=c)


def max_pair(i: int, j: int) -> MonotoneFunction:
    return MonotoneFunction("max_pair", i, j)


def monotone_family(n: int) -> List[MonotoneFunction]:
    """Famiglia predefinita di funzioni monotone per una catena di N siti"""
    family = [site(i) for i in range(n)]
    family += [partial_sum(k) for k in range(1, n + 1)]
    family += [window_sum(a, min(n - 1, a + w)) for w in (1, 2) for a in range(0, n - 1, 2)]
    family += [threshold(k, c) for k in range(1, n + 1, 2) for c in (0.0, 1.0)]
    family += [max_pair(i, i + 1) for i in range(n - 1)]
    if n > 2:
        family.append(max_pair(0, n - 1))
    return family


def association_matrix(g: GibbsParams, beta_eff: float,
                       family: Sequence[MonotoneFunction]) -> np.ndarray:
    """Matrice delle covarianze esatte Cov(f_a, f_b) sulla famiglia data"""
    states, probs = _chain_law(g.n, float(beta_eff), g.kernel)
    values = np.stack([f.evaluate(states) for f in family])
    means = values @ probs
    centered = values - means[:, None]
    return (centered * probs) @ centered.T


def check_positive_association(g: GibbsParams, beta_eff: float,
                               f: MonotoneFunction, g2: MonotoneFunction) -> float:
    """Cov(f, g2) esatta sotto la misura di catena (>= 0 per accoppiamenti ferromagnetici)"""
    return float(association_matrix(g, beta_eff, [f, g2])[0, 1])


def newman_wright_gap(g: GibbsParams, beta_eff: float, r: Sequence[float]) -> Tuple[float, float]:
    """
    Entrambi i lati della disuguaglianza di Newman-Wright per le funzioni caratteristiche.

    lhs = |E exp(i sum_j r_j sigma_j) - prod_j E exp(i r_j sigma_j)|
    rhs = 1/2 sum_{j != k} |r_j r_k| Cov(sigma_j, sigma_k)
    """
    r = np.asarray(r, dtype=float).reshape(-1)
    if r.size != g.n:
        raise ValidationError(f"r deve avere N={g.n} componenti (ricevute {r.size})")
    states, probs = _chain_law(g.n, float(beta_eff), g.kernel)
    s = states.astype(float)
    phase = s @ r
    joint = complex(math.fsum(probs * np.cos(phase)), math.fsum(probs * np.sin(phase)))
    means = probs @ s
    product = complex(1.0, 0.0)
    for rj, mj in zip(r, means):
        product *= complex(math.cos(rj), math.sin(rj) * mj)
    centered = s - means
    cov = (centered * probs[:, None]).T @ centered
    weights = np.abs(np.outer(r, r))
    np.fill_diagonal(weights, 0.0)
    rhs = 0.5 * math.fsum((weights * cov).ravel())
    return abs(joint - product), rhs
