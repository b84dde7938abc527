"""
Distanze di Wasserstein d_p (0 < p <= 2) tra misure empiriche e verso riferimenti gaussiani.

- 1D: accoppiamento comonotono (quantile contro quantile), esatto
- 2D: trasporto ottimo discreto esatto (assegnamento per misure uniformi della
  stessa taglia, network simplex di POT altrimenti)

Il valore restituito e' costo^(1/max(p, 1)); con root_all=True si usa costo^(1/p) per ogni p.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import ot
from scipy import stats
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import gammaln, ndtr, ndtri

from polyscale.errors import AtomCapError, InsufficientDataError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_ATOM_CAP = 4096
WEIGHT_TOLERANCE = 1e-9
EMD_MAX_ITER = 10_000_000
JACKKNIFE_GROUPS = 20
GAUSS_LEGENDRE_NODES = 32
# troncamento dei quantili gaussiani estremi nella quadratura
Z_CLIP = 10.0
NORMS = ("euclidean", "l1")
MODES = ("1d", "2d")

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(GAUSS_LEGENDRE_NODES)


def _check_p(p: float):
    if not (0 < p <= 2):
        raise ValidationError(f"p deve stare in (0, 2] (ricevuto {p})")


def _root(cost: float, p: float, root_all: bool) -> float:
    cost = max(cost, 0.0)
    return cost ** (1.0 / p) if root_all else cost ** (1.0 / max(p, 1.0))


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Misura a supporto finito: atomi (k, d) con d in {1, 2} e pesi che sommano a 1"""
    atoms: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] not in (1, 2):
            raise ValidationError(f"Atomi con shape non valida: {atoms.shape}")
        if not np.all(np.isfinite(atoms)):
            raise ValidationError("Atomi non finiti")
        k = atoms.shape[0]
        if self.weights is None:
            weights = np.full(k, 1.0 / k)
        else:
            weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if weights.size != k:
                raise ValidationError(f"{weights.size} pesi per {k} atomi")
            if np.any(weights < 0) or abs(math.fsum(weights) - 1.0) > WEIGHT_TOLERANCE:
                raise ValidationError("I pesi devono essere >= 0 e sommare a 1")
        atoms.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.atoms.shape[0])

    @property
    def dim(self) -> int:
        return int(self.atoms.shape[1])

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    def __len__(self) -> int:
        return self.size

    def scaled(self, a: float) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.atoms * a, self.weights)

    def embedded(self) -> "EmpiricalMeasure":
        """Atomi 1D portati sull'asse x del piano"""
        if self.dim == 2:
            return self
        return EmpiricalMeasure(np.column_stack([self.atoms[:, 0], np.zeros(self.size)]), self.weights)

    def subset(self, mask: np.ndarray) -> "EmpiricalMeasure":
        w = self.weights[mask]
        return EmpiricalMeasure(self.atoms[mask], w / w.sum())

    def moment(self, p: float, norm: str = "euclidean") -> float:
        """E||X||^p"""
        ord_ = 1 if norm == "l1" else 2
        radii = np.linalg.norm(self.atoms, ord=ord_, axis=1)
        return math.fsum(self.weights * radii ** p)

    def cdf(self, x: np.ndarray) -> np.ndarray:
        """CDF empirica (solo 1D)"""
        if self.dim != 1:
            raise ValidationError("cdf definita solo per misure 1D")
        order = np.argsort(self.atoms[:, 0], kind="stable")
        xs = self.atoms[order, 0]
        cw = np.cumsum(self.weights[order])
        idx = np.searchsorted(xs, np.asarray(x, dtype=float), side="right")
        return np.where(idx > 0, cw[np.maximum(idx - 1, 0)], 0.0)


@dataclass
class CouplingPlan:
    """Piano di trasporto: lista di (i, j, massa) e costo sum massa * c(x_i, y_j)"""
    entries: List[Tuple[int, int, float]]
    cost: float

    def as_matrix(self, n_rows: int, n_cols: int) -> np.ndarray:
        plan = np.zeros((n_rows, n_cols))
        for i, j, mass in self.entries:
            plan[i, j] += mass
        return plan

    def marginals(self, n_rows: int, n_cols: int) -> Tuple[np.ndarray, np.ndarray]:
        plan = self.as_matrix(n_rows, n_cols)
        return plan.sum(axis=1), plan.sum(axis=0)

    def to_dict(self) -> dict:
        return {"cost": self.cost, "entries": [[int(i), int(j), float(m)] for i, j, m in self.entries]}


# ========== 1D ==========

def _sorted_partition(m: EmpiricalMeasure) -> Tuple[np.ndarray, np.ndarray]:
    order = np.argsort(m.atoms[:, 0], kind="stable")
    cw = np.cumsum(m.weights[order])
    cw[-1] = 1.0
    return m.atoms[order, 0], cw


def quantile_cost_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """integrale su (0,1) di |F^-1(u) - G^-1(u)|^p, fondendo le due partizioni dei pesi"""
    xa, ca = _sorted_partition(mu)
    xb, cb = _sorted_partition(nu)
    breaks = np.union1d(np.concatenate([[0.0], ca]), cb)
    lengths = np.diff(breaks)
    keep = lengths > 0
    mids = 0.5 * (breaks[:-1] + breaks[1:])[keep]
    ia = np.minimum(np.searchsorted(ca, mids, side="left"), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mids, side="left"), xb.size - 1)
    return math.fsum(lengths[keep] * np.abs(xa[ia] - xb[ib]) ** p)


def d_p_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, root_all: bool = False) -> float:
    """
    Distanza d_p tra misure su R tramite l'accoppiamento comonotono.

    Args:
        mu, nu: misure empiriche 1D
        p: ordine in (0, 2]
        root_all: radice 1/p anche per p < 1

    Returns:
        costo^(1/max(p, 1)) (oppure costo^(1/p))
    """
    _check_p(p)
    if mu.dim != 1 or nu.dim != 1:
        raise ValidationError(f"d_p_1d richiede atomi 1D (ricevuti {mu.dim}D e {nu.dim}D)")
    return _root(quantile_cost_1d(mu, nu, p), p, root_all)


# ========== 2D ESATTO ==========

def cost_matrix(x: np.ndarray, y: np.ndarray, p: float, norm: str = "euclidean") -> np.ndarray:
    if norm not in NORMS:
        raise ValidationError(f"Norma sconosciuta: {norm}")
    metric = "euclidean" if norm == "euclidean" else "cityblock"
    return cdist(x, y, metric=metric) ** p


def d_p_exact_2d(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float, norm: str = "euclidean",
                 cap: int = DEFAULT_ATOM_CAP, root_all: bool = False) -> Tuple[float, CouplingPlan]:
    """
    Trasporto ottimo esatto tra due misure discrete.

    Misure uniformi della stessa taglia: assegnamento (scipy, cammini aumentanti minimi).
    Altrimenti: network simplex di POT sulla matrice dei costi ||x - y||^p.
    """
    _check_p(p)
    if mu.dim != nu.dim:
        raise ValidationError(f"Dimensioni diverse: {mu.dim} vs {nu.dim}")
    if mu.size + nu.size > cap:
        raise AtomCapError(f"{mu.size + nu.size} atomi oltre il limite {cap}")
    costs = cost_matrix(mu.atoms, nu.atoms, p, norm)

    if mu.size == nu.size and mu.is_uniform and nu.is_uniform:
        rows, cols = linear_sum_assignment(costs)
        mass = 1.0 / mu.size
        total = math.fsum(costs[rows, cols]) * mass
        entries = [(int(i), int(j), mass) for i, j in zip(rows, cols)]
    else:
        a = np.asarray(mu.weights, dtype=np.float64)
        b = np.asarray(nu.weights, dtype=np.float64)
        plan, log = ot.emd(a / a.sum(), b / b.sum(), costs, numItermax=EMD_MAX_ITER, log=True)
        if log.get("warning"):
            logger.warning(f"⚠️ Network simplex: {log['warning']}")
        rows, cols = np.nonzero(plan > 0)
        total = math.fsum(plan[rows, cols] * costs[rows, cols])
        entries = [(int(i), int(j), float(plan[i, j])) for i, j in zip(rows, cols)]

    return _root(total, p, root_all), CouplingPlan(entries, total)


# ========== RIFERIMENTO GAUSSIANO ==========

def reference_rng(seed: int, stream: int) -> np.random.Generator:
    """Stream 0: campione di riferimento; stream 1: campione del pavimento di rumore"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(stream,)))


@dataclass(frozen=True)
class GaussianReference:
    """Legge N(0, t I_d), marginale al tempo t del moto browniano standard"""
    t: float
    dim: int = 2

    def __post_init__(self):
        if not (self.t > 0 and math.isfinite(self.t)):
            raise ValidationError(f"t deve essere > 0 (ricevuto {self.t})")
        if self.dim not in (1, 2):
            raise ValidationError("dim deve essere 1 o 2")

    @property
    def scale(self) -> float:
        return math.sqrt(self.t)

    def moment(self, p: float) -> float:
        """E||Z||^p (norma euclidea)"""
        d = self.dim
        return math.exp(0.5 * p * math.log(2 * self.t) + gammaln((d + p) / 2) - gammaln(d / 2))

    def sample(self, size: int, seed: int, stream: int = 0) -> np.ndarray:
        return self.scale * reference_rng(seed, stream).standard_normal((size, self.dim))

    def measure(self, size: int, seed: int, stream: int = 0) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.sample(size, seed, stream))

    def quantile(self, u) -> np.ndarray:
        return self.scale * ndtri(u)

    def cdf(self, x) -> np.ndarray:
        return ndtr(np.asarray(x, dtype=float) / self.scale)

    def smoothed_cdf(self, points: np.ndarray, bandwidth: float) -> np.ndarray:
        """CDF della legge convoluta con N(0, h^2 I): prodotto di Phi(x_k / sqrt(t + h^2))"""
        points = np.atleast_2d(points)
        s = math.sqrt(self.t + bandwidth ** 2)
        return np.prod(ndtr(points / s), axis=1)


def _phi(z: np.ndarray) -> np.ndarray:
    return np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)


def _z_phi(z: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(z), z * _phi(z), 0.0)


def _cell_costs_gauss(x: np.ndarray, za: np.ndarray, zb: np.ndarray, s: float, p: float) -> np.ndarray:
    """integrale di |x_k - s z|^p phi(z) dz su [za_k, zb_k], cella per cella"""
    if p == 2:
        # int z phi = phi(za) - phi(zb); int z^2 phi = [Phi - z phi]
        first = _phi(za) - _phi(zb)
        second = (ndtr(zb) - _z_phi(zb)) - (ndtr(za) - _z_phi(za))
        return x * x * (ndtr(zb) - ndtr(za)) - 2 * x * s * first + s * s * second
    z0 = np.clip(x / s, za, zb)
    if p == 1:
        below = x * (ndtr(z0) - ndtr(za)) - s * (_phi(za) - _phi(z0))
        above = s * (_phi(z0) - _phi(zb)) - x * (ndtr(zb) - ndtr(z0))
        return below + above
    total = np.zeros_like(x)
    for lo, hi in ((za, z0), (z0, zb)):
        lo, hi = np.clip(lo, -Z_CLIP, Z_CLIP), np.clip(hi, -Z_CLIP, Z_CLIP)
        half = 0.5 * np.maximum(hi - lo, 0.0)
        z = (0.5 * (hi + lo))[:, None] + half[:, None] * _GL_NODES[None, :]
        integrand = np.abs(x[:, None] - s * z) ** p * _phi(z)
        total += half * (integrand @ _GL_WEIGHTS)
    return total


def gaussian_cost_1d(mu: EmpiricalMeasure, t: float, p: float) -> float:
    """integrale esatto di |F^-1(u) - sqrt(t) Phi^-1(u)|^p sulla partizione dei quantili di mu"""
    xs, cw = _sorted_partition(mu)
    edges = ndtri(np.concatenate([[0.0], cw]))
    za, zb = edges[:-1], edges[1:]
    keep = zb > za
    return math.fsum(_cell_costs_gauss(xs[keep], za[keep], zb[keep], math.sqrt(t), p))


@dataclass
class DistanceEstimate:
    """Distanza verso il riferimento con errore standard (0 in modalita' 1d)"""
    value: float
    se: float
    mode: str
    p: float
    reference_size: int = 0
    replicates: List[float] = field(default_factory=list)

    def __float__(self) -> float:
        return float(self.value)

    def to_dict(self) -> dict:
        return {"value": self.value, "se": self.se, "mode": self.mode, "p": self.p,
                "reference_size": self.reference_size}


def _jackknife(mu: EmpiricalMeasure, ref: EmpiricalMeasure, p: float, norm: str, cap: int,
               root_all: bool, groups: int) -> Tuple[float, List[float]]:
    """Jackknife a gruppi: si rimuove lo stesso gruppo di indici da misura e riferimento"""
    groups = min(groups, mu.size, ref.size)
    if groups < 2:
        return float("nan"), []
    labels_mu = np.arange(mu.size) % groups
    labels_ref = np.arange(ref.size) % groups
    replicates = []
    for g in range(groups):
        value, _ = d_p_exact_2d(mu.subset(labels_mu != g), ref.subset(labels_ref != g), p, norm, cap, root_all)
        replicates.append(value)
    reps = np.asarray(replicates)
    se = math.sqrt((groups - 1) / groups * float(np.sum((reps - reps.mean()) ** 2)))
    return se, replicates


def d_p_to_gaussian(mu: EmpiricalMeasure, t: float, p: float, mode: str = "2d",
                    ref_samples: Optional[int] = None, seed: int = 0, norm: str = "euclidean",
                    cap: int = DEFAULT_ATOM_CAP, root_all: bool = False,
                    jackknife_groups: int = JACKKNIFE_GROUPS) -> DistanceEstimate:
    """
    Distanza di una misura empirica dalla marginale N(0, t I) del moto browniano.

    Args:
        mode: '1d' integrale esatto contro la funzione quantile gaussiana (misure 1D);
              '2d' trasporto esatto contro ref_samples punti gaussiani generati da seed
        ref_samples: taglia del campione di riferimento (default: taglia di mu)

    Returns:
        DistanceEstimate (float(estimate) da' il valore)
    """
    if not t > 0:
        raise ValidationError(f"t deve essere > 0 (ricevuto {t})")
    _check_p(p)
    if mode not in MODES:
        raise ValidationError(f"Modalita' sconosciuta: {mode}")

    if mode == "1d":
        if mu.dim != 1:
            raise ValidationError("La modalita' 1d richiede una misura 1D")
        value = _root(gaussian_cost_1d(mu, t, p), p, root_all)
        return DistanceEstimate(value, 0.0, mode, p)

    size = mu.size if ref_samples is None else int(ref_samples)
    if size < 1:
        raise ValidationError("ref_samples deve essere >= 1")
    ref = GaussianReference(t, mu.dim).measure(size, seed)
    value, _ = d_p_exact_2d(mu, ref, p, norm, cap, root_all)
    se, replicates = _jackknife(mu, ref, p, norm, cap, root_all, jackknife_groups)
    return DistanceEstimate(value, se, mode, p, size, replicates)


def noise_floor(size: int, t: float, p: float, seed: int = 0, mode: str = "2d",
                ref_samples: Optional[int] = None, norm: str = "euclidean",
                cap: int = DEFAULT_ATOM_CAP, root_all: bool = False,
                jackknife_groups: int = JACKKNIFE_GROUPS) -> DistanceEstimate:
    """Distanza di un campione gaussiano esatto di taglia size dallo stesso riferimento"""
    dim = 1 if mode == "1d" else 2
    exact = GaussianReference(t, dim).measure(size, seed, stream=1)
    return d_p_to_gaussian(exact, t, p, mode, ref_samples, seed, norm, cap, root_all, jackknife_groups)


# ========== DIAGNOSTICA DI BICKEL-FREEDMAN ==========

Reference = Union[GaussianReference, EmpiricalMeasure]


def _default_bandwidth(size: int, scale: float) -> float:
    return scale * size ** (-1.0 / 6.0)


def _evaluation_grid(m: EmpiricalMeasure, scale: float, max_atoms: int = 512) -> np.ndarray:
    step = max(1, m.size // max_atoms)
    axis = np.linspace(-3 * scale, 3 * scale, 21)
    gx, gy = np.meshgrid(axis, axis)
    return np.vstack([m.atoms[::step], np.column_stack([gx.ravel(), gy.ravel()])])


def _smoothed_empirical_cdf(m: EmpiricalMeasure, points: np.ndarray, bandwidth: float) -> np.ndarray:
    z = (points[:, None, :] - m.atoms[None, :, :]) / bandwidth
    return np.prod(ndtr(z), axis=2) @ m.weights


def cdf_gap(m: EmpiricalMeasure, reference: Reference, bandwidth: Optional[float] = None) -> float:
    """Distanza sup tra CDF: di Kolmogorov-Smirnov in 1D, tra CDF lisciate in 2D"""
    if m.dim == 1:
        xs = np.sort(np.concatenate([m.atoms[:, 0], reference.atoms[:, 0]])
                     if isinstance(reference, EmpiricalMeasure) else m.atoms[:, 0])
        ref_cdf = reference.cdf(xs)
        ref_left = reference.cdf(np.nextafter(xs, -np.inf))
        return float(max(np.max(np.abs(m.cdf(xs) - ref_cdf)),
                         np.max(np.abs(m.cdf(np.nextafter(xs, -np.inf)) - ref_left))))
    scale = reference.scale if isinstance(reference, GaussianReference) else float(np.sqrt(
        np.mean(np.sum(reference.atoms ** 2, axis=1)) / 2)) or 1.0
    h = _default_bandwidth(m.size, scale) if bandwidth is None else bandwidth
    points = _evaluation_grid(m, scale)
    if isinstance(reference, GaussianReference):
        ref_values = reference.smoothed_cdf(points, h)
    else:
        ref_values = _smoothed_empirical_cdf(reference, points, h)
    return float(np.max(np.abs(_smoothed_empirical_cdf(m, points, h) - ref_values)))


def trend_shrinks(values: Sequence[float], atol: float = 1e-12) -> bool:
    """Tutti nulli, oppure ultimo < primo con correlazione di rango negativa"""
    v = np.asarray(values, dtype=float)
    if np.all(np.abs(v) <= atol):
        return True
    if not v[-1] < v[0]:
        return False
    rho = stats.spearmanr(np.arange(v.size), v)[0]
    return bool(np.isfinite(rho) and rho < 0)


@dataclass
class BickelFreedmanReport:
    sizes: List[int]
    distances: List[float]
    moment_gaps: List[float]
    cdf_gaps: List[float]
    reference_moment: float
    distance_shrinks: bool
    moment_shrinks: bool
    cdf_shrinks: bool

    @property
    def converges(self) -> bool:
        return self.distance_shrinks and self.moment_shrinks and self.cdf_shrinks

    @property
    def inconsistent(self) -> bool:
        """d_p si riduce ma momenti o CDF no"""
        return self.distance_shrinks and not (self.moment_shrinks and self.cdf_shrinks)

    def to_dict(self) -> dict:
        return {
            "sizes": self.sizes,
            "distances": self.distances,
            "moment_gaps": self.moment_gaps,
            "cdf_gaps": self.cdf_gaps,
            "reference_moment": self.reference_moment,
            "distance_shrinks": self.distance_shrinks,
            "moment_shrinks": self.moment_shrinks,
            "cdf_shrinks": self.cdf_shrinks,
            "converges": self.converges,
            "inconsistent": self.inconsistent,
        }


def bickel_freedman_check(measures: Sequence[EmpiricalMeasure], reference: Reference, p: float,
                          seed: int = 0, norm: str = "euclidean", cap: int = DEFAULT_ATOM_CAP,
                          atol: float = 1e-12) -> BickelFreedmanReport:
    """
    Convergenza in d_p = convergenza debole + convergenza del momento p-esimo:
    segnala quando la distanza si riduce ma uno degli altri due indicatori no.
    """
    _check_p(p)
    if len(measures) < 3:
        raise InsufficientDataError("Servono almeno 3 misure nella sequenza")
    distances, moment_gaps, cdf_gaps = [], [], []
    ref_moment = reference.moment(p)

    for m in measures:
        if isinstance(reference, GaussianReference):
            mode = "1d" if m.dim == 1 else "2d"
            d = d_p_to_gaussian(m, reference.t, p, mode, seed=seed, norm=norm, cap=cap,
                                jackknife_groups=0).value
        elif m.dim == 1 and reference.dim == 1:
            d = d_p_1d(m, reference, p)
        else:
            d, _ = d_p_exact_2d(m.embedded(), reference.embedded(), p, norm, cap)
        distances.append(float(d))
        moment_gaps.append(abs(m.moment(p) - ref_moment))
        cdf_gaps.append(cdf_gap(m, reference))

    report = BickelFreedmanReport(
        sizes=[m.size for m in measures],
        distances=distances,
        moment_gaps=moment_gaps,
        cdf_gaps=cdf_gaps,
        reference_moment=ref_moment,
        distance_shrinks=trend_shrinks(distances, atol),
        moment_shrinks=trend_shrinks(moment_gaps, atol),
        cdf_shrinks=trend_shrinks(cdf_gaps, atol),
    )
    if report.inconsistent:
        logger.warning("⚠️ d_p si riduce ma momenti o CDF no: convergenza sospetta")
    return report
