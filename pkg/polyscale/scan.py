"""
Scansione della griglia (beta, n): campionamento, statistiche, distanze dal moto
browniano, classificazione diffusivo/balistico e intervallo di crossover.
"""

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from tqdm import tqdm

from polyscale import persistence
from polyscale.errors import InsufficientDataError, NoBracketError, ValidationError
from polyscale.model import ALIGNMENT_FAVORING, SIGN_CONVENTIONS, GibbsParams, power_law
from polyscale.paths import (ANCHOR_BULK, ANCHOR_FIRST, DEFAULT_DELTA, LITERAL, NORMALIZATIONS, UNIT_COVARIANCE,
                             BlockScheme, brownian_taxicab_mean_square, euclidean_mean_square, hypothesis_stats,
                             path_marginals, sigma_from_chi, stabilized_partial_sum, taxicab_mean_square)
from polyscale.sampler import CLUSTER, SamplerConfig, sample_chain
from polyscale.wasserstein import (DEFAULT_ATOM_CAP, JACKKNIFE_GROUPS, MODES, NORMS, EmpiricalMeasure,
                                   GaussianReference, bickel_freedman_check, d_p_to_gaussian, noise_floor)

logger = logging.getLogger(__name__)

DIFFUSIVE = "diffusive"
BALLISTIC = "ballistic"
UNDECIDED = "undecided"
MIN_N_POINTS = 3


@dataclass(frozen=True)
class ClassifierThresholds:
    gamma_diffusive: float = 0.6
    gamma_ballistic: float = 0.9
    spearman: float = 0.8
    min_speed_sq: float = 0.01
    speed_se_factor: float = 10.0
    floor_se_factor: float = 3.0
    gamma_sanity_low: float = 0.4
    gamma_sanity_high: float = 1.1

    def validate(self):
        if not self.gamma_diffusive < self.gamma_ballistic:
            raise ValidationError("gamma_diffusive deve essere < gamma_ballistic")
        if not 0 < self.spearman < 1:
            raise ValidationError("La soglia di Spearman deve stare in (0, 1)")
        if self.min_speed_sq < 0 or self.speed_se_factor < 0 or self.floor_se_factor < 0:
            raise ValidationError("Soglie di velocita' e di rumore devono essere >= 0")
        if not self.gamma_sanity_low < self.gamma_sanity_high:
            raise ValidationError("Finestra di plausibilita' di gamma vuota")


@dataclass(frozen=True)
class ScanConfig:
    alpha: float = 1.5
    sign_convention: str = ALIGNMENT_FAVORING
    beta_grid: Tuple[float, ...] = (0.0, 0.2, 0.4)
    n_grid: Tuple[int, ...] = (256, 1024, 4096)
    t_grid: Tuple[float, ...] = (0.5, 1.0)
    p: float = 2.0
    replicas: int = 200
    seed: int = 20240611
    sampler: SamplerConfig = field(default_factory=lambda: SamplerConfig(algorithm=CLUSTER))
    normalization: str = UNIT_COVARIANCE
    anchor: str = ANCHOR_BULK
    delta: float = DEFAULT_DELTA
    mode: str = "2d"
    norm: str = "euclidean"
    ref_samples: Optional[int] = None
    jackknife_groups: int = JACKKNIFE_GROUPS
    atom_cap: int = DEFAULT_ATOM_CAP
    thresholds: ClassifierThresholds = field(default_factory=ClassifierThresholds)
    output_dir: Optional[str] = None

    def validate(self):
        if not 1 < self.alpha <= 2:
            raise ValidationError(f"alpha deve stare in (1, 2] (ricevuto {self.alpha})")
        if self.sign_convention not in SIGN_CONVENTIONS:
            raise ValidationError(f"Convenzione di segno sconosciuta: {self.sign_convention}")
        for name in ("beta_grid", "n_grid", "t_grid"):
            grid = list(getattr(self, name))
            if not grid:
                raise ValidationError(f"{name} vuota")
            if grid != sorted(grid) or len(set(grid)) != len(grid):
                raise ValidationError(f"{name} deve essere ordinata e senza ripetizioni")
        if min(self.beta_grid) < 0:
            raise ValidationError("beta_grid deve contenere valori >= 0")
        if len(self.n_grid) < MIN_N_POINTS:
            raise InsufficientDataError(f"n_grid deve avere almeno {MIN_N_POINTS} valori")
        if min(self.n_grid) < 2:
            raise ValidationError("n_grid deve contenere valori >= 2")
        if not all(0 < t <= 1 for t in self.t_grid):
            raise ValidationError("t_grid deve stare in (0, 1]")
        if not 0 < self.p <= 2:
            raise ValidationError(f"p deve stare in (0, 2] (ricevuto {self.p})")
        if self.replicas < 2:
            raise ValidationError("replicas deve essere >= 2")
        if self.normalization not in NORMALIZATIONS:
            raise ValidationError(f"Normalizzazione sconosciuta: {self.normalization}")
        if self.anchor not in (ANCHOR_FIRST, ANCHOR_BULK):
            raise ValidationError(f"Ancoraggio sconosciuto: {self.anchor}")
        if self.mode not in MODES or self.norm not in NORMS:
            raise ValidationError(f"Modalita'/norma non valide: {self.mode}/{self.norm}")
        self.sampler.validate()
        self.thresholds.validate()

    @property
    def total_samples(self) -> int:
        return self.replicas * self.sampler.n_samples

    def sampler_for(self, seed: int) -> SamplerConfig:
        return replace(self.sampler, seed=seed, replicas=self.replicas)

    def to_dict(self) -> dict:
        return asdict(self)


# ========== RIGHE ==========

@dataclass
class RowStatistics:
    """Statistiche di una cella (beta, n); le liste sono allineate con t_grid"""
    beta: float
    n: int
    t_grid: List[float] = field(default_factory=list)
    d_p: List[float] = field(default_factory=list)
    d_p_se: List[float] = field(default_factory=list)
    noise_floor: List[float] = field(default_factory=list)
    noise_floor_se: List[float] = field(default_factory=list)
    chain_d_p: List[float] = field(default_factory=list)  # Z_t(n) di una sola catena contro N(0, t)
    chi_hat: float = float("nan")
    chi_tail: float = 0.0
    sigma: float = float("nan")
    var_ratio: float = float("nan")
    var_ratio_se: float = float("nan")
    block_var_ratio: float = float("nan")
    block_var_ratio_se: float = float("nan")
    third_moment_max: float = float("nan")
    ell: int = 0
    m: int = 0
    end_to_end_mean_sq: float = float("nan")
    end_to_end_l1_mean_sq: float = float("nan")
    ballistic_speed: float = float("nan")
    ballistic_speed_se: float = 0.0
    taxicab_mean_square: float = float("nan")
    taxicab_gap: float = float("nan")
    second_moment: float = float("nan")
    magnetization: float = float("nan")
    ballistic_lower_bound: float = float("nan")
    acceptance: float = float("nan")
    low_confidence: bool = False
    samples: int = 0

    @property
    def d_p_max(self) -> float:
        return max(self.d_p) if self.d_p else float("nan")

    @property
    def speed_sq(self) -> float:
        return self.ballistic_speed ** 2

    def at_noise_floor(self, factor: float) -> bool:
        """d_p entro factor errori standard dal pavimento di rumore per ogni t"""
        if not self.d_p or len(self.noise_floor) != len(self.d_p):
            return False
        for d, se, floor, floor_se in zip(self.d_p, self.d_p_se, self.noise_floor, self.noise_floor_se):
            spread = math.sqrt(np.nan_to_num(se) ** 2 + np.nan_to_num(floor_se) ** 2)
            if d > floor + factor * spread:
                return False
        return True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["d_p_max"] = self.d_p_max
        return out


@dataclass
class BetaSummary:
    beta: float
    gamma_hat: float
    gamma_flagged: bool
    spearman_rho: float
    at_noise_floor: bool
    verdict: str
    low_confidence: bool = False
    bickel_freedman: Optional[dict] = None


# ========== CLASSIFICAZIONE ==========

def fit_gamma(ns: Sequence[float], mean_sq: Sequence[float]) -> float:
    """Pendenza/2 dei minimi quadrati di log E||S_N||^2 contro log N"""
    ns = np.asarray(ns, dtype=float)
    y = np.asarray(mean_sq, dtype=float)
    if ns.size < 2 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        return float("nan")
    slope = np.polyfit(np.log(ns), np.log(y), 1)[0]
    return float(slope / 2)


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    y = np.asarray(y, dtype=float)
    if np.all(y == y[0]) or not np.all(np.isfinite(y)):
        return 0.0
    rho = stats.spearmanr(x, y)[0]
    return float(rho) if np.isfinite(rho) else 0.0


def trend_details(rows: Sequence[RowStatistics], thresholds: ClassifierThresholds) -> dict:
    if len(rows) < MIN_N_POINTS:
        raise InsufficientDataError(f"Servono almeno {MIN_N_POINTS} valori di n (ricevuti {len(rows)})")
    rows = sorted(rows, key=lambda r: r.n)
    ns = [r.n for r in rows]
    rho = _spearman(ns, [r.d_p_max for r in rows])
    at_floor = all(r.at_noise_floor(thresholds.floor_se_factor) for r in rows)
    gamma = fit_gamma(ns, [r.end_to_end_mean_sq for r in rows])
    return {
        "spearman_rho": rho,
        "at_noise_floor": at_floor,
        "gamma_hat": gamma,
        "decreasing": rho < -thresholds.spearman or at_floor,
        "increasing": rho > thresholds.spearman,
    }


def classify(rows: Sequence[RowStatistics], thresholds: ClassifierThresholds = ClassifierThresholds()) -> str:
    """
    Verdetto per un valore di beta sulle righe della griglia in n.

    diffusivo: trend di d_p decrescente (o tutto al pavimento di rumore) e gamma < soglia bassa
    balistico: trend crescente, gamma > soglia alta, velocita'^2 > soglia e velocita' >= 10 SE
    """
    info = trend_details(rows, thresholds)
    gamma = info["gamma_hat"]
    if info["decreasing"] and gamma < thresholds.gamma_diffusive:
        return DIFFUSIVE
    speed_ok = all(
        r.speed_sq > thresholds.min_speed_sq
        and r.ballistic_speed >= thresholds.speed_se_factor * r.ballistic_speed_se
        for r in rows
    )
    if info["increasing"] and gamma > thresholds.gamma_ballistic and speed_ok:
        return BALLISTIC
    return UNDECIDED


def bracket_crossover(report: Union["ScanReport", Sequence[Tuple[float, str]]]) -> Tuple[float, float]:
    """
    Intervallo (beta_lo, beta_hi) piu' stretto con beta_lo diffusivo e beta_hi balistico.

    Le righe indecise in mezzo allargano l'intervallo; a parita' di ampiezza vince il beta piu' basso.
    """
    if isinstance(report, ScanReport):
        pairs = [(b.beta, b.verdict) for b in report.betas]
    else:
        pairs = list(report)
    pairs.sort(key=lambda bv: bv[0])
    best = None
    for j, (beta_hi, verdict) in enumerate(pairs):
        if verdict != BALLISTIC:
            continue
        for i in range(j - 1, -1, -1):
            beta_lo, previous = pairs[i]
            if previous == UNDECIDED:
                continue
            if previous == DIFFUSIVE:
                candidate = (beta_lo, beta_hi)
                if best is None or candidate[1] - candidate[0] < best[1] - best[0]:
                    best = candidate
            break
    if best is None:
        raise NoBracketError("Nessuna coppia diffusivo/balistico nella griglia in beta")
    return best


# ========== REPORT ==========

@dataclass
class ScanReport:
    config: dict
    rows: List[RowStatistics]
    betas: List[BetaSummary]
    bracket: Optional[Tuple[float, float]] = None
    bracket_error: Optional[str] = None
    complete: bool = True

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "thresholds": self.config.get("thresholds"),
            "rows": [r.to_dict() for r in self.rows],
            "betas": [asdict(b) for b in self.betas],
            "bracket": list(self.bracket) if self.bracket else None,
            "bracket_error": self.bracket_error,
            "complete": self.complete,
        }

    def to_json(self) -> str:
        return persistence.dumps(self.to_dict())

    def cell_table(self) -> List[dict]:
        """Una riga per (beta, n, t)"""
        gammas = {b.beta: b.gamma_hat for b in self.betas}
        table = []
        for r in self.rows:
            for k, t in enumerate(r.t_grid):
                table.append({
                    "beta": r.beta,
                    "n": r.n,
                    "t": t,
                    "d_p": r.d_p[k],
                    "d_p_se": r.d_p_se[k],
                    "chain_d_p": r.chain_d_p[k] if k < len(r.chain_d_p) else float("nan"),
                    "noise_floor": r.noise_floor[k] if k < len(r.noise_floor) else float("nan"),
                    "chi_hat": r.chi_hat,
                    "var_ratio": r.var_ratio,
                    "block_var_ratio": r.block_var_ratio,
                    "gamma_hat": gammas.get(r.beta, float("nan")),
                    "speed": r.ballistic_speed,
                    "speed_se": r.ballistic_speed_se,
                    "end_to_end_mean_sq": r.end_to_end_mean_sq,
                    "end_to_end_l1_mean_sq": r.end_to_end_l1_mean_sq,
                    "taxicab_gap": r.taxicab_gap,
                    "low_confidence": r.low_confidence,
                })
        return table

    def write(self, output_dir, stem: str = "scan_report") -> Dict[str, str]:
        output_dir = Path(output_dir)
        report_path = persistence.write_json(self.to_dict(), output_dir / f"{stem}.json")
        csv_path = persistence.write_table(self.cell_table(), output_dir / f"{stem}_cells.csv")
        logger.info(f"💾 Report salvato in {report_path}")
        logger.info(f"💾 Celle salvate in {csv_path}")
        return {"report": str(report_path), "cells": str(csv_path)}


# ========== ESECUZIONE ==========

def cell_seed(seed: int, beta_index: int, n_index: int) -> int:
    state = np.random.SeedSequence(seed, spawn_key=(beta_index, n_index)).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 32) | int(state[1])


def _marginal_measure(values: np.ndarray, mode: str) -> EmpiricalMeasure:
    return EmpiricalMeasure(values[:, :1] if mode == "1d" else values)


def run_cell(cfg: ScanConfig, beta: float, n: int, seed: int,
             floors: Dict[float, Tuple[float, float]]) -> Tuple[RowStatistics, Dict[float, EmpiricalMeasure]]:
    """Una cella della griglia; ritorna la riga e le misure marginali per t"""
    g = GibbsParams(beta, power_law(cfg.alpha, cfg.sign_convention), n)
    batch = sample_chain(g, cfg.sampler_for(seed))
    scheme = BlockScheme.from_delta(n, cfg.delta)
    hs = hypothesis_stats(batch, scheme, cfg.anchor, kernel=g.kernel)
    sigma = sigma_from_chi(hs.chi_hat, cfg.normalization)

    t_grid = list(cfg.t_grid)
    grid_for_paths = t_grid if 1.0 in t_grid else t_grid + [1.0]
    values = path_marginals(batch, grid_for_paths, sigma)
    measures, d_values, d_ses = {}, [], []
    for k, t in enumerate(t_grid):
        mu = _marginal_measure(values[k], cfg.mode)
        estimate = d_p_to_gaussian(mu, t, cfg.p, cfg.mode, cfg.ref_samples, cfg.seed, cfg.norm,
                                   cfg.atom_cap, jackknife_groups=cfg.jackknife_groups)
        measures[t] = mu
        d_values.append(estimate.value)
        d_ses.append(estimate.se)
    at_one = values[grid_for_paths.index(1.0)]

    ends = batch.end_to_end().astype(float)
    l1 = np.abs(ends).sum(axis=1)
    chains = batch.chains()
    sigma_chain = sigma_from_chi(hs.chi_hat, LITERAL)
    chain_d = [d_p_to_gaussian(EmpiricalMeasure(stabilized_partial_sum(chains, t, sigma_chain)), t, cfg.p,
                               "1d").value for t in t_grid]
    # in normalizzazione literal ogni coordinata ha varianza t/2
    brownian_l1 = brownian_taxicab_mean_square(1.0) * (1.0 if cfg.normalization == UNIT_COVARIANCE else 0.5)
    magnetization = float(np.mean(np.abs(chains.sum(axis=1, dtype=np.int64)))) / n
    row = RowStatistics(
        beta=beta,
        n=n,
        t_grid=t_grid,
        d_p=d_values,
        d_p_se=d_ses,
        noise_floor=[floors[t][0] for t in t_grid],
        noise_floor_se=[floors[t][1] for t in t_grid],
        chain_d_p=chain_d,
        chi_hat=hs.chi_hat,
        chi_tail=hs.chi_tail,
        sigma=sigma,
        var_ratio=hs.var_ratio,
        var_ratio_se=hs.var_ratio_se,
        block_var_ratio=hs.block_var_ratio,
        block_var_ratio_se=hs.block_var_ratio_se,
        third_moment_max=hs.third_moment_max,
        ell=scheme.ell,
        m=scheme.m,
        end_to_end_mean_sq=float(np.mean(np.sum(ends ** 2, axis=1))),
        end_to_end_l1_mean_sq=float(np.mean(l1 ** 2)),
        ballistic_speed=float(l1.mean()) / n,
        ballistic_speed_se=float(l1.std(ddof=1)) / math.sqrt(l1.size) / n,
        taxicab_mean_square=taxicab_mean_square(at_one),
        taxicab_gap=abs(taxicab_mean_square(at_one) - brownian_l1),
        second_moment=euclidean_mean_square(at_one),
        magnetization=magnetization,
        ballistic_lower_bound=0.5 * magnetization ** 2,
        acceptance=batch.meta.mean_acceptance,
        low_confidence=batch.meta.low_confidence,
        samples=len(batch),
    )
    return row, measures


def _summarize_beta(cfg: ScanConfig, beta: float, rows: List[RowStatistics],
                    measures: List[Dict[float, EmpiricalMeasure]]) -> BetaSummary:
    th = cfg.thresholds
    info = trend_details(rows, th)
    verdict = classify(rows, th)
    gamma = info["gamma_hat"]
    flagged = not (th.gamma_sanity_low <= gamma <= th.gamma_sanity_high)
    if flagged:
        logger.warning(f"⚠️ beta={beta}: gamma_hat={gamma:.3f} fuori dalla finestra di plausibilita'")
    t_last = max(cfg.t_grid)
    bf = bickel_freedman_check([m[t_last] for m in measures], GaussianReference(t_last, 1 if cfg.mode == "1d" else 2),
                               cfg.p, seed=cfg.seed, norm=cfg.norm, cap=cfg.atom_cap)
    return BetaSummary(beta, gamma, flagged, info["spearman_rho"], info["at_noise_floor"], verdict,
                       any(r.low_confidence for r in rows), bf.to_dict())


def _noise_floors(cfg: ScanConfig) -> Dict[float, Tuple[float, float]]:
    floors = {}
    for t in cfg.t_grid:
        est = noise_floor(cfg.total_samples, t, cfg.p, cfg.seed, cfg.mode, cfg.ref_samples, cfg.norm,
                          cfg.atom_cap, jackknife_groups=cfg.jackknife_groups)
        floors[t] = (est.value, est.se)
    return floors


def _assemble(cfg: ScanConfig, rows_by_beta: Dict[float, List[RowStatistics]],
              measures_by_beta: Dict[float, list], complete: bool) -> ScanReport:
    betas, rows = [], []
    for beta in cfg.beta_grid:
        cell_rows = rows_by_beta.get(beta, [])
        rows.extend(cell_rows)
        if len(cell_rows) == len(cfg.n_grid):
            betas.append(_summarize_beta(cfg, beta, cell_rows, measures_by_beta[beta]))
    report = ScanReport(cfg.to_dict(), rows, betas, complete=complete)
    try:
        report.bracket = bracket_crossover(report)
    except NoBracketError as e:
        report.bracket_error = str(e)
    return report


def run_scan(cfg: ScanConfig) -> ScanReport:
    """
    Esegue la griglia (beta, n) in ordine deterministico.

    In caso di errore, se output_dir e' impostata, salva le celle completate
    (scan_report_partial.json / .csv) prima di rilanciare l'eccezione.
    """
    cfg.validate()
    started = datetime.now()
    logger.info(f"🚀 Scansione: alpha={cfg.alpha}, {len(cfg.beta_grid)} beta x {len(cfg.n_grid)} n, "
                f"{cfg.total_samples} campioni per cella")
    rows_by_beta: Dict[float, List[RowStatistics]] = {}
    measures_by_beta: Dict[float, list] = {}
    cells = [(bi, beta, ni, n) for bi, beta in enumerate(cfg.beta_grid) for ni, n in enumerate(cfg.n_grid)]
    try:
        floors = _noise_floors(cfg)
        for bi, beta, ni, n in tqdm(cells, desc="Celle", leave=False):
            row, measures = run_cell(cfg, beta, n, cell_seed(cfg.seed, bi, ni), floors)
            rows_by_beta.setdefault(beta, []).append(row)
            measures_by_beta.setdefault(beta, []).append(measures)
            logger.debug(f"beta={beta}, n={n}: d_p={row.d_p}, chi={row.chi_hat:.4f}, "
                         f"speed={row.ballistic_speed:.4f}")
        report = _assemble(cfg, rows_by_beta, measures_by_beta, complete=True)
    except Exception as e:
        logger.error(f"❌ Scansione interrotta: {e}")
        if cfg.output_dir:
            try:
                partial = _assemble(cfg, rows_by_beta, measures_by_beta, complete=False)
                outputs = partial.write(cfg.output_dir, stem="scan_report_partial")
                persistence.write_json(
                    persistence.run_metadata("scan", cfg.to_dict(), started, outputs, [str(e)]),
                    Path(cfg.output_dir) / "scan_metadata_partial.json",
                )
            except Exception as nested:
                logger.error(f"❌ Impossibile salvare i risultati parziali: {nested}")
        raise

    for summary in report.betas:
        status = "✅" if summary.verdict != UNDECIDED else "⚠️"
        logger.info(f"  {status} beta={summary.beta}: {summary.verdict} (gamma_hat={summary.gamma_hat:.3f})")
    if report.bracket:
        logger.info(f"🎯 Crossover in [{report.bracket[0]}, {report.bracket[1]}]")
    if cfg.output_dir:
        outputs = report.write(cfg.output_dir)
        meta_path = persistence.write_json(
            persistence.run_metadata("scan", cfg.to_dict(), started, outputs),
            Path(cfg.output_dir) / "scan_metadata.json",
        )
        logger.info(f"📋 Metadati: {meta_path}")
    return report
