"""
Kernel compilati (numba) per le dinamiche Monte Carlo.

Tutte le funzioni lavorano in-place sugli array passati. Il generatore interno
di numba va inizializzato con seed_numba() prima di ogni catena: lo stato e'
per-thread, quindi ogni replica resta riproducibile da sola.
"""

import numpy as np
from numba import njit

# sotto questa soglia i campi locali si calcolano con la somma diretta
DIRECT_FIELD_MAX_N = 512


@njit(cache=True)
def seed_numba(seed):
    np.random.seed(seed)


@njit(cache=True)
def _direct_fields(spins, vtable):
    n = spins.shape[0]
    h = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += vtable[abs(i - j)] * spins[j]
        h[i] = acc
    return h


def _fft_fields(values: np.ndarray, vtable: np.ndarray) -> np.ndarray:
    """Convoluzione c_i = somma_j V(|i-j|) v_j via FFT (v puo' essere (n,) o (n, d))"""
    n = vtable.shape[0]
    size = 2 * n
    kernel = np.zeros(size)
    kernel[:n] = vtable
    kernel[size - n + 1:] = vtable[1:][::-1]
    fk = np.fft.rfft(kernel)
    vals = np.asarray(values, dtype=float)
    if vals.ndim == 1:
        return np.fft.irfft(np.fft.rfft(vals, size) * fk, size)[:n]
    return np.fft.irfft(np.fft.rfft(vals, size, axis=0) * fk[:, None], size, axis=0)[:n]


def local_fields(spins: np.ndarray, vtable: np.ndarray) -> np.ndarray:
    """Campo locale h_i = somma_{j != i} V(|i-j|) sigma_j (V(0) = 0)"""
    if spins.shape[0] <= DIRECT_FIELD_MAX_N:
        return _direct_fields(spins, vtable)
    return _fft_fields(spins, vtable)


def chain_energy(spins: np.ndarray, vtable: np.ndarray) -> float:
    """E = somma su i<j di V_ij sigma_i sigma_j"""
    return 0.5 * float(np.dot(spins.astype(float), local_fields(spins, vtable)))


@njit(cache=True)
def _flip(spins, h, vtable, i):
    s = spins[i]
    spins[i] = -s
    n = spins.shape[0]
    for j in range(n):
        h[j] -= 2.0 * s * vtable[abs(i - j)]


@njit(cache=True)
def metropolis_sweep(spins, h, vtable, beta_eff, energy):
    """N proposte di flip singolo su siti scelti a caso; ritorna (energia, accettati)"""
    n = spins.shape[0]
    accepted = 0
    for _ in range(n):
        i = np.random.randint(0, n)
        s = spins[i]
        dlog = -2.0 * beta_eff * s * h[i]
        if dlog >= 0.0 or np.random.random() < np.exp(dlog):
            energy -= 2.0 * s * h[i]
            _flip(spins, h, vtable, i)
            accepted += 1
    return energy, accepted


@njit(cache=True)
def heatbath_sweep(spins, h, vtable, beta_eff, energy):
    n = spins.shape[0]
    changed = 0
    for _ in range(n):
        i = np.random.randint(0, n)
        p_plus = 1.0 / (1.0 + np.exp(-2.0 * beta_eff * h[i]))
        new = 1 if np.random.random() < p_plus else -1
        if new != spins[i]:
            energy -= 2.0 * spins[i] * h[i]
            _flip(spins, h, vtable, i)
            changed += 1
    return energy, changed


@njit(cache=True)
def wolff_update(spins, cumulative, beta_eff, in_cluster, stack):
    """
    Un aggiornamento a singolo cluster con selezione cumulativa dei legami.

    cumulative[r] = V(1) + ... + V(r), cumulative[0] = 0.
    Il legame a distanza r e' attivo con probabilita' 1 - exp(-2 beta_eff V(r));
    il prossimo legame attivo si estrae invertendo la somma cumulativa.
    stack fa da coda: alla fine stack[:size] contiene i siti del cluster.
    Ritorna la dimensione del cluster ribaltato.
    """
    n = spins.shape[0]
    seed_site = np.random.randint(0, n)
    s = spins[seed_site]
    in_cluster[seed_site] = True
    stack[0] = seed_site
    head = 0
    size = 1
    while head < size:
        i = stack[head]
        head += 1
        for direction in (1, -1):
            max_dist = n - 1 - i if direction > 0 else i
            k = 0
            while k < max_dist and beta_eff > 0.0:
                threshold = cumulative[k] - np.log(1.0 - np.random.random()) / (2.0 * beta_eff)
                if threshold > cumulative[max_dist]:
                    break
                j = k + 1 + np.searchsorted(cumulative[k + 1:max_dist + 1], threshold)
                k = j
                site = i + direction * j
                if spins[site] == s and not in_cluster[site]:
                    in_cluster[site] = True
                    stack[size] = site
                    size += 1
    for idx in range(size):
        site = stack[idx]
        spins[site] = -s
        in_cluster[site] = False
    return size


@njit(cache=True)
def cluster_sweep(spins, cumulative, beta_eff, in_cluster, stack, updates):
    """
    Un numero fisso di aggiornamenti di cluster; ritorna gli spin ribaltati.

    updates non deve dipendere dallo stato corrente, altrimenti la misura invariante cambia.
    """
    flipped = 0
    for _ in range(updates):
        flipped += wolff_update(spins, cumulative, beta_eff, in_cluster, stack)
    return flipped


def cluster_updates_per_sweep(n: int, mean_cluster_size: float) -> int:
    """ceil(N / dimensione media del cluster), almeno 1"""
    if not mean_cluster_size > 0:
        return n
    return max(1, min(n, int(np.ceil(n / mean_cluster_size))))


@njit(cache=True)
def polymer_metropolis_sweep(codes, vectors, fields, vtable, step_vectors, beta_signed, energy):
    """
    Metropolis diretto sui passi: si ridisegna un passo tra le 4 direzioni.

    fields[i] = somma_j V(|i-j|) X_j (vettore 2D); beta_signed = s * beta.
    """
    n = codes.shape[0]
    accepted = 0
    for _ in range(n):
        i = np.random.randint(0, n)
        new = np.random.randint(0, 4)
        old = codes[i]
        if new == old:
            accepted += 1
            continue
        dx = step_vectors[new, 0] - step_vectors[old, 0]
        dy = step_vectors[new, 1] - step_vectors[old, 1]
        dh = dx * fields[i, 0] + dy * fields[i, 1]
        dlog = beta_signed * dh
        if dlog >= 0.0 or np.random.random() < np.exp(dlog):
            codes[i] = new
            vectors[i, 0] += dx
            vectors[i, 1] += dy
            energy += dh
            for j in range(n):
                v = vtable[abs(i - j)]
                fields[j, 0] += v * dx
                fields[j, 1] += v * dy
            accepted += 1
    return energy, accepted
