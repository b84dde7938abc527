"""
Campionatore MCMC della misura di Gibbs del polimero.

Il polimero si ottiene da due catene di Ising indipendenti (beta_eff = s*beta/2)
tramite la biiezione di model.spins_to_polymer; sample_polymer_direct lavora
invece direttamente sulle sequenze di passi e serve solo come controllo incrociato.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from polyscale import dynamics
from polyscale.errors import DegenerateTraceError, InsufficientDataError, ValidationError
from polyscale.model import (STEP_SPINS, STEP_VECTORS, GibbsParams, Polymer, SpinChainPair,
                             spins_to_codes)
from polyscale.oracle import chain_states

logger = logging.getLogger(__name__)

METROPOLIS = "metropolis_single_flip"
HEATBATH = "heatbath"
CLUSTER = "cluster_long_range"
ALGORITHMS = (METROPOLIS, HEATBATH, CLUSTER)

DEFAULT_SEED = 20240611
BURN_IN_SWEEPS_PER_SITE = 100
MIN_TRACE_LENGTH = 100
SOKAL_WINDOW_FACTOR = 6.0
# low confidence se tau_int supera questa frazione del burn-in
LOW_CONFIDENCE_TAU_FRACTION = 0.1


@dataclass(frozen=True)
class SamplerConfig:
    seed: int = DEFAULT_SEED
    burn_in_sweeps: Optional[int] = None   # None -> 100 * N
    thinning_sweeps: Optional[int] = None  # None -> max(1, round(2 tau_int))
    n_samples: int = 1
    algorithm: str = METROPOLIS
    replicas: int = 1
    start: str = "hot"
    workers: int = 1

    def validate(self):
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed deve essere un intero senza segno a 64 bit")
        if self.burn_in_sweeps is not None and self.burn_in_sweeps < 0:
            raise ValidationError("burn_in_sweeps deve essere >= 0")
        if self.thinning_sweeps is not None and self.thinning_sweeps < 1:
            raise ValidationError("thinning_sweeps deve essere >= 1")
        if self.n_samples < 1:
            raise ValidationError("n_samples deve essere >= 1")
        if self.replicas < 1:
            raise ValidationError("replicas deve essere >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValidationError(f"Algoritmo sconosciuto: {self.algorithm}")
        if self.start not in ("hot", "cold"):
            raise ValidationError("start deve essere 'hot' o 'cold'")
        if self.workers < 1:
            raise ValidationError("workers deve essere >= 1")

    def burn_in_for(self, n: int) -> int:
        return BURN_IN_SWEEPS_PER_SITE * n if self.burn_in_sweeps is None else self.burn_in_sweeps


@dataclass
class ChainRun:
    """Diagnostica di una singola catena (una replica, una componente)"""
    replica: int
    component: int
    seed: int
    burn_in: int
    thinning: int
    acceptance: np.ndarray
    energy_trace: np.ndarray
    tau_int: Optional[float] = None
    low_confidence: bool = False
    cluster_updates: Optional[int] = None  # aggiornamenti di Wolff per sweep, congelati dopo il burn-in


@dataclass
class SampleMeta:
    algorithm: str
    runs: List[ChainRun] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def low_confidence(self) -> bool:
        return any(run.low_confidence for run in self.runs)

    @property
    def mean_acceptance(self) -> float:
        rates = [run.acceptance.mean() for run in self.runs if run.acceptance.size]
        return float(np.mean(rates)) if rates else float("nan")

    @property
    def seeds(self) -> List[int]:
        return [run.seed for run in self.runs]

    def summary(self) -> dict:
        taus = [run.tau_int for run in self.runs if run.tau_int is not None]
        return {
            "algorithm": self.algorithm,
            "chains": len(self.runs),
            "mean_acceptance": self.mean_acceptance,
            "max_tau_int": max(taus) if taus else None,
            "thinning": sorted({run.thinning for run in self.runs}),
            "burn_in": sorted({run.burn_in for run in self.runs}),
            "cluster_updates": sorted({run.cluster_updates for run in self.runs if run.cluster_updates}),
            "low_confidence": self.low_confidence,
            "warnings": len(self.warnings),
        }


@dataclass
class SampleBatch:
    """Configurazioni campionate: righe di sigma1/sigma2 allineate, shape (count, N)"""
    sigma1: np.ndarray
    sigma2: np.ndarray
    meta: SampleMeta

    def __len__(self) -> int:
        return int(self.sigma1.shape[0])

    @property
    def n(self) -> int:
        return int(self.sigma1.shape[1])

    def pairs(self) -> Iterator[SpinChainPair]:
        for s1, s2 in zip(self.sigma1, self.sigma2):
            yield SpinChainPair(s1, s2)

    def polymers(self) -> Iterator[Polymer]:
        for codes in spins_to_codes(self.sigma1, self.sigma2):
            yield Polymer(codes)

    def step_codes(self) -> np.ndarray:
        return spins_to_codes(self.sigma1, self.sigma2)

    def chains(self) -> np.ndarray:
        """Tutte le catene (sigma1 e sigma2) impilate: campioni iid della misura di catena"""
        return np.concatenate([self.sigma1, self.sigma2], axis=0)

    def end_to_end(self) -> np.ndarray:
        """Punti finali S_N dei polimeri, shape (count, 2)"""
        m1 = self.sigma1.sum(axis=1, dtype=np.int64)
        m2 = self.sigma2.sum(axis=1, dtype=np.int64)
        return np.stack([(m1 + m2) // 2, (m2 - m1) // 2], axis=1)


# ========== SEMI ==========

def chain_seeds(seed: int, replica: int, component: int) -> Tuple[int, int]:
    """
    Regola di splitting dei semi: SeedSequence(seed, spawn_key=(replica, component)).

    Ritorna (seme per numba a 32 bit, seme per numpy a 64 bit).
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(replica, component))
    state = ss.generate_state(3, dtype=np.uint32)
    numba_seed = int(state[0])
    numpy_seed = (int(state[1]) << 32) | int(state[2])
    return numba_seed, numpy_seed


# ========== AUTOCORRELAZIONE ==========

def autocorrelation_time(trace) -> float:
    """
    Tempo di autocorrelazione integrato tau = 1/2 + somma_k rho_k
    con finestra automatica (W >= c * tau(W)).
    """
    x = np.asarray(trace, dtype=float).reshape(-1)
    n = x.size
    if n < MIN_TRACE_LENGTH:
        raise InsufficientDataError(f"Traccia troppo corta: {n} < {MIN_TRACE_LENGTH}")
    x = x - x.mean()
    var = float(np.dot(x, x)) / n
    if var <= 1e-300 * max(1.0, float(np.abs(x).max()) ** 2):
        raise DegenerateTraceError("Traccia a varianza nulla")
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f), 2 * n)[:n] / n
    rho = acf / acf[0]
    tau = 0.5
    for w in range(1, n):
        tau += rho[w]
        if w >= SOKAL_WINDOW_FACTOR * tau:
            break
    return float(tau)


# ========== ESECUZIONE DI UNA CATENA ==========

@dataclass(frozen=True)
class _ChainTask:
    replica: int
    component: int
    n: int
    beta_eff: float
    vtable: np.ndarray
    algorithm: str
    burn_in: int
    thinning: Optional[int]
    n_samples: int
    start: str
    seed: int


def _initial_spins(task: _ChainTask, rng: np.random.Generator) -> np.ndarray:
    if task.start == "cold":
        return np.ones(task.n, dtype=np.int8)
    return (2 * rng.integers(0, 2, size=task.n) - 1).astype(np.int8)


def _resolve_thinning(task: _ChainTask, trace: np.ndarray, run_warnings: List[str]):
    """Ritorna (thinning, tau_int, low_confidence)"""
    tau = None
    low_confidence = False
    usable = trace[trace.size // 2:] if trace.size >= 2 * MIN_TRACE_LENGTH else trace
    if usable.size >= MIN_TRACE_LENGTH:
        try:
            tau = autocorrelation_time(usable)
        except DegenerateTraceError:
            low_confidence = task.beta_eff != 0
            if low_confidence:
                run_warnings.append(f"replica {task.replica}/{task.component}: traccia di energia degenere")
        if tau is not None and tau > LOW_CONFIDENCE_TAU_FRACTION * task.burn_in:
            low_confidence = True
            run_warnings.append(
                f"replica {task.replica}/{task.component}: tau_int={tau:.1f} grande rispetto al burn-in {task.burn_in}"
            )
    if task.thinning is None:
        thinning = max(1, int(round(2 * tau))) if tau is not None else 1
    else:
        thinning = task.thinning
        if tau is not None and thinning < 2 * tau:
            run_warnings.append(
                f"replica {task.replica}/{task.component}: thinning {thinning} < 2*tau_int ({2 * tau:.1f})"
            )
    return thinning, tau, low_confidence


def _run_chain(task: _ChainTask):
    numba_seed, numpy_seed = chain_seeds(task.seed, task.replica, task.component)
    dynamics.seed_numba(numba_seed)
    rng = np.random.default_rng(numpy_seed)
    spins = _initial_spins(task, rng)
    vtable = task.vtable
    energies: List[float] = []
    acceptance: List[float] = []

    if task.algorithm == CLUSTER:
        cumulative = np.cumsum(vtable)
        in_cluster = np.zeros(task.n, dtype=np.bool_)
        stack = np.zeros(task.n, dtype=np.int64)
        # adattato solo durante il burn-in, poi congelato
        cluster = {"updates": 1 if task.burn_in > 0 else task.n, "flipped": 0, "calls": 0}

        def sweep(record=True):
            flipped = dynamics.cluster_sweep(spins, cumulative, task.beta_eff, in_cluster, stack,
                                             cluster["updates"])
            if record:
                cluster["flipped"] += flipped
                cluster["calls"] += cluster["updates"]
                cluster["updates"] = dynamics.cluster_updates_per_sweep(
                    task.n, cluster["flipped"] / cluster["calls"])
                # l'energia costa O(N log N): si registra solo durante il burn-in
                energies.append(dynamics.chain_energy(spins, vtable))
            acceptance.append(flipped / task.n)
    else:
        h = dynamics.local_fields(spins, vtable)
        state = {"energy": 0.5 * float(np.dot(spins.astype(float), h))}
        kernel = dynamics.metropolis_sweep if task.algorithm == METROPOLIS else dynamics.heatbath_sweep

        def sweep(record=True):
            energy, accepted = kernel(spins, h, vtable, task.beta_eff, state["energy"])
            state["energy"] = energy
            energies.append(energy)
            acceptance.append(accepted / task.n)

    for _ in range(task.burn_in):
        sweep()

    run_warnings: List[str] = []
    thinning, tau, low_confidence = _resolve_thinning(task, np.asarray(energies), run_warnings)

    samples = np.empty((task.n_samples, task.n), dtype=np.int8)
    for s in range(task.n_samples):
        for _ in range(thinning):
            sweep(record=False)
        samples[s] = spins

    run = ChainRun(task.replica, task.component, numba_seed, task.burn_in, thinning,
                   np.asarray(acceptance), np.asarray(energies), tau, low_confidence,
                   cluster["updates"] if task.algorithm == CLUSTER else None)
    return samples, run, run_warnings


def _execute(tasks: List[_ChainTask], workers: int, desc: str):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(tqdm(pool.map(_run_chain, tasks), total=len(tasks), desc=desc, leave=False))
    return [_run_chain(task) for task in tqdm(tasks, desc=desc, leave=False)]


# ========== API ==========

def sample_chain(g: GibbsParams, c: SamplerConfig) -> SampleBatch:
    """
    Campiona coppie di catene indipendenti (sigma1, sigma2) con beta_eff = s*beta/2.

    Ogni replica esegue due catene (componenti 0 e 1), ciascuna con burn-in
    proprio, e produce n_samples configurazioni.
    """
    c.validate()
    if g.n < 2:
        raise ValidationError("sample_chain richiede N >= 2")
    kernel = g.kernel
    beta_eff = g.chain_beta
    if c.algorithm == CLUSTER:
        if not kernel.is_monotone:
            raise ValidationError("cluster_long_range richiede un kernel con coda monotona")
        if beta_eff < 0:
            raise ValidationError("cluster_long_range richiede accoppiamenti ferromagnetici (alignment_favoring)")

    vtable = kernel.table(g.n)
    burn_in = c.burn_in_for(g.n)
    tasks = [
        _ChainTask(replica, component, g.n, beta_eff, vtable, c.algorithm, burn_in,
                   c.thinning_sweeps, c.n_samples, c.start, c.seed)
        for replica in range(c.replicas)
        for component in (0, 1)
    ]
    logger.debug(f"sample_chain: N={g.n}, beta={g.beta}, beta_eff={beta_eff}, "
                 f"{c.algorithm}, burn-in={burn_in}, repliche={c.replicas}")

    results = _execute(tasks, c.workers, "Catene")
    meta = SampleMeta(algorithm=c.algorithm)
    blocks = {0: [], 1: []}
    for samples, run, run_warnings in results:
        blocks[run.component].append(samples)
        meta.runs.append(run)
        meta.warnings.extend(run_warnings)
    for message in meta.warnings:
        logger.warning(message)
    if meta.low_confidence:
        logger.warning(f"⚠️ Mixing lento a beta={g.beta}, N={g.n}: risultati a bassa confidenza")

    return SampleBatch(np.concatenate(blocks[0]), np.concatenate(blocks[1]), meta)


def sample_polymer_direct(g: GibbsParams, c: SamplerConfig) -> SampleBatch:
    """Metropolis direttamente sulle sequenze di passi (solo per validazione)"""
    c.validate()
    if c.algorithm != METROPOLIS:
        logger.debug("sample_polymer_direct usa sempre Metropolis sui passi")
    vtable = g.kernel.table(g.n)
    beta_signed = g.kernel.sign * g.beta
    burn_in = c.burn_in_for(g.n)
    step_vectors = STEP_VECTORS.astype(np.int64)
    meta = SampleMeta(algorithm="polymer_metropolis")
    all_codes = []

    for replica in tqdm(range(c.replicas), desc="Polimeri", leave=False):
        numba_seed, numpy_seed = chain_seeds(c.seed, replica, 2)
        dynamics.seed_numba(numba_seed)
        rng = np.random.default_rng(numpy_seed)
        codes = (np.zeros(g.n, dtype=np.int64) if c.start == "cold"
                 else rng.integers(0, 4, size=g.n).astype(np.int64))
        vectors = step_vectors[codes].copy()
        fields = dynamics._fft_fields(vectors, vtable) if g.n > dynamics.DIRECT_FIELD_MAX_N else \
            g.kernel.coupling_matrix(g.n) @ vectors.astype(float)
        energy = 0.5 * float(np.sum(vectors * fields))
        energies, acceptance = [], []

        def sweep():
            nonlocal energy
            energy, accepted = dynamics.polymer_metropolis_sweep(
                codes, vectors, fields, vtable, step_vectors, beta_signed, energy)
            energies.append(energy)
            acceptance.append(accepted / g.n)

        for _ in range(burn_in):
            sweep()
        task = _ChainTask(replica, 2, g.n, beta_signed, vtable, METROPOLIS, burn_in,
                          c.thinning_sweeps, c.n_samples, c.start, c.seed)
        run_warnings: List[str] = []
        thinning, tau, low_confidence = _resolve_thinning(task, np.asarray(energies), run_warnings)
        samples = np.empty((c.n_samples, g.n), dtype=np.int8)
        for s in range(c.n_samples):
            for _ in range(thinning):
                sweep()
            samples[s] = codes
        all_codes.append(samples)
        meta.runs.append(ChainRun(replica, 2, numba_seed, burn_in, thinning, np.asarray(acceptance),
                                  np.asarray(energies), tau, low_confidence))
        meta.warnings.extend(run_warnings)

    for message in meta.warnings:
        logger.warning(message)
    codes = np.concatenate(all_codes)
    spins = STEP_SPINS[codes]
    return SampleBatch(spins[..., 0].copy(), spins[..., 1].copy(), meta)


def metropolis_transition_matrix(n: int, beta_eff: float, kernel) -> np.ndarray:
    """
    Matrice di transizione esatta del Metropolis a flip singolo (sito uniforme).

    Stati ordinati come in oracle.chain_states: bit i acceso <=> sigma_i = -1.
    """
    if n > 6:
        raise ValidationError("La matrice di transizione esatta e' prevista solo per N <= 6")
    states = chain_states(n)
    coupling = kernel.coupling_matrix(n)
    logw = 0.5 * beta_eff * np.einsum("si,ij,sj->s", states, coupling, states)
    size = states.shape[0]
    P = np.zeros((size, size))
    for x in range(size):
        for i in range(n):
            y = x ^ (1 << i)
            P[x, y] = min(1.0, math.exp(logw[y] - logw[x])) / n
        P[x, x] = 1.0 - P[x].sum()
    return P


def dump_batch(batch: SampleBatch, path) -> Path:
    """Scrive le configurazioni grezze: .npy binario oppure CSV (una riga per campione)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.concatenate([batch.sigma1, batch.sigma2], axis=1)
    if path.suffix == ".npy":
        np.save(path, rows)
    else:
        columns = [f"s1_{i}" for i in range(batch.n)] + [f"s2_{i}" for i in range(batch.n)]
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False)
    logger.info(f"💾 Salvate {len(batch)} configurazioni in {path}")
    return path
