"""
Riga di comando: python -m polyscale <sample|enumerate|blocks|wasserstein|scan>

Ogni sottocomando stampa un JSON su stdout; i log vanno su stderr (e su file con --out).
Codici di uscita: 0 ok, 1 errore inatteso, 2 validazione, 3 nessun bracket.
"""

import argparse
import logging
import sys
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from polyscale import config as cfgmod
from polyscale import oracle, paths, persistence, scan, wasserstein
from polyscale.errors import NoBracketError, PolyscaleError, ValidationError
from polyscale.log import setup_logging
from polyscale.model import SIGN_CONVENTIONS, GibbsParams, finite_range, power_law
from polyscale.sampler import ALGORITHMS, dump_batch, sample_chain, sample_polymer_direct

logger = logging.getLogger("polyscale.cli")

GAUSSIAN = "gaussian"


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="file di configurazione TOML o JSON")
    common.add_argument("--verbose", action="store_true", help="log DEBUG su console")
    common.add_argument("--seed", type=int, help="seme principale")
    common.add_argument("--out", help="directory di output (anche per il file di log)")
    return common


def _model_parser() -> argparse.ArgumentParser:
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--alpha", type=float, help="esponente di V(r) = r^-alpha")
    model.add_argument("--kernel", choices=("power_law", "finite_range"), default="power_law")
    model.add_argument("--range", dest="range_l", type=int, default=1, help="L del kernel finite_range")
    model.add_argument("--strength", type=float, default=1.0, help="V del kernel finite_range")
    model.add_argument("--sign", choices=SIGN_CONVENTIONS, help="convenzione di segno dell'esponente")
    return model


def _sampling_parser() -> argparse.ArgumentParser:
    sampling = argparse.ArgumentParser(add_help=False)
    sampling.add_argument("--beta", type=float, required=True)
    sampling.add_argument("--n", type=int, required=True, help="numero di passi N")
    sampling.add_argument("--samples", type=int, help="campioni per replica")
    sampling.add_argument("--replicas", type=int)
    sampling.add_argument("--workers", type=int)
    sampling.add_argument("--algorithm", choices=ALGORITHMS)
    sampling.add_argument("--burn-in", type=int, help="sweep di termalizzazione")
    sampling.add_argument("--thinning", type=int, help="sweep tra due campioni")
    sampling.add_argument("--direct", action="store_true",
                          help="Metropolis diretto sul polimero (controllo)")
    return sampling


def build_parser() -> argparse.ArgumentParser:
    common, model, sampling = _common_parser(), _model_parser(), _sampling_parser()
    parser = argparse.ArgumentParser(prog="polyscale", description="Polimeri a lungo raggio e limiti di scala")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", parents=[common, model, sampling], help="campiona configurazioni")
    p.add_argument("--dump", help="file .csv o .npy con le configurazioni grezze")
    p.add_argument("--emit-paths", help="CSV con le tracce (path, t, w1, w2) dei cammini riscalati")
    p.add_argument("--sigma", type=float, help="sigma dei cammini emessi (default: da chi stimato)")

    p = sub.add_parser("enumerate", parents=[common, model], help="oracolo esatto per N piccolo")
    p.add_argument("target", choices=("chain", "polymer"))
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--beta-eff", type=float, help="beta della catena (default: beta/2 con segno)")
    p.add_argument("--association", action="store_true", help="verifica l'associazione positiva (catena)")
    p.add_argument("--probabilities", help="CSV con le probabilita' esatte dei 4^N cammini (polimero, N <= 8)")

    p = sub.add_parser("blocks", parents=[common, model, sampling], help="schema a blocchi e ipotesi")
    p.add_argument("--delta", type=float, default=paths.DEFAULT_DELTA)
    p.add_argument("--anchor", choices=(paths.ANCHOR_FIRST, paths.ANCHOR_BULK), default=paths.ANCHOR_BULK)

    p = sub.add_parser("wasserstein", parents=[common], help="distanza tra due liste di punti CSV")
    p.add_argument("first", help="CSV di punti")
    p.add_argument("second", help=f"CSV di punti oppure '{GAUSSIAN}' (riferimento N(0, tI))")
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--mode", choices=wasserstein.MODES, default="2d")
    p.add_argument("--norm", choices=wasserstein.NORMS, default="euclidean")
    p.add_argument("--t", type=float, default=1.0, help="tempo del riferimento gaussiano")
    p.add_argument("--ref-samples", type=int)
    p.add_argument("--root-all", action="store_true", help="radice 1/p anche per p < 1")
    p.add_argument("--plan", action="store_true", help="include il piano di trasporto")

    p = sub.add_parser("scan", parents=[common], help="scansione della griglia (beta, n)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float, nargs="+")
    p.add_argument("--n", type=int, nargs="+")
    p.add_argument("--p", type=float)
    p.add_argument("--replicas", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--sign", choices=SIGN_CONVENTIONS, help="convenzione di segno dell'esponente")
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--allow-no-bracket", action="store_true", help="esce con 0 anche senza bracket")
    return parser


# ========== SOTTOCOMANDI ==========

def _kernel(args, config):
    sign = args.sign or config["model"]["sign_convention"]
    if args.kernel == "finite_range":
        return finite_range(args.range_l, args.strength, sign)
    alpha = args.alpha if args.alpha is not None else config["model"]["alpha"]
    return power_law(alpha, sign)


def _sample(args, config):
    config = cfgmod.apply_overrides(config, seed=args.seed, replicas=args.replicas,
                                    workers=args.workers, algorithm=args.algorithm)
    c = cfgmod.sampler_config(config)
    c = replace(c,
                n_samples=args.samples if args.samples is not None else c.n_samples,
                burn_in_sweeps=args.burn_in if args.burn_in is not None else c.burn_in_sweeps,
                thinning_sweeps=args.thinning if args.thinning is not None else c.thinning_sweeps)
    g = GibbsParams(args.beta, _kernel(args, config), args.n)
    batch = sample_polymer_direct(g, c) if args.direct else sample_chain(g, c)
    return g, c, batch


def _emit_paths(batch, g, config, sigma, target) -> dict:
    if sigma is None:
        scheme = paths.BlockScheme.from_delta(g.n, config["scan"]["delta"])
        chi = paths.hypothesis_stats(batch, scheme, config["scan"]["anchor"], kernel=g.kernel).chi_hat
        sigma = paths.sigma_from_chi(chi, config["scan"]["normalization"])
    processes = [paths.build_w_path(polymer, sigma) for polymer in batch.polymers()]
    paths.emit_paths(processes, target)
    return {"paths": str(target), "paths_sigma": sigma}


def cmd_sample(args, config) -> dict:
    g, c, batch = _sample(args, config)
    ends = batch.end_to_end().astype(float)
    result = {
        "n": g.n,
        "beta": g.beta,
        "samples": len(batch),
        "sampler": batch.meta.summary(),
        "end_to_end_mean_sq": float(np.mean((ends ** 2).sum(axis=1))),
        "end_to_end_l1_mean_sq": float(np.mean(np.abs(ends).sum(axis=1) ** 2)),
        "ballistic_speed": float(np.mean(np.abs(ends).sum(axis=1))) / g.n,
    }
    if args.dump:
        result["dump"] = str(dump_batch(batch, args.dump))
    if args.emit_paths:
        result.update(_emit_paths(batch, g, config, args.sigma, args.emit_paths))
    return result


def cmd_enumerate(args, config) -> dict:
    g = GibbsParams(args.beta, _kernel(args, config), args.n)
    if args.target == "polymer":
        summary = oracle.enumerate_polymer(g)
        result = summary.to_dict()
        if args.probabilities:
            table = {"walk": np.arange(4 ** g.n), "probability": oracle.polymer_probabilities(g)}
            result["probabilities"] = str(persistence.write_table(table, args.probabilities))
        return result
    beta_eff = g.chain_beta if args.beta_eff is None else args.beta_eff
    summary = oracle.enumerate_chain(g, beta_eff)
    result = dict(summary.to_dict(), beta_eff=beta_eff)
    m_abs, m_sq = oracle.magnetization_moments(g, beta_eff)
    result.update(magnetization_abs=m_abs, magnetization_sq=m_sq, ballistic_lower_bound=0.5 * m_abs ** 2)
    if args.association:
        family = oracle.monotone_family(g.n)
        cov = oracle.association_matrix(g, beta_eff, family)
        result["association_min_cov"] = float(cov.min())
        result["association_family"] = len(family)
    return result


def cmd_blocks(args, config) -> dict:
    g, c, batch = _sample(args, config)
    scheme = paths.BlockScheme.from_delta(g.n, args.delta)
    stats = paths.hypothesis_stats(batch, scheme, anchor=args.anchor, kernel=g.kernel)
    return {
        "scheme": scheme.to_dict(),
        "condition_envelope": paths.condition_envelope(g.n, args.delta),
        "stats": stats.to_dict(),
        "sampler": batch.meta.summary(),
    }


def cmd_wasserstein(args, config) -> dict:
    seed = args.seed if args.seed is not None else 0
    mu = persistence.read_points_csv(args.first)
    result = {"p": args.p, "mode": args.mode, "norm": args.norm}
    if args.second == GAUSSIAN:
        if args.mode == "1d" and mu.dim != 1:
            raise ValidationError("La modalita' 1d richiede punti a una colonna")
        estimate = wasserstein.d_p_to_gaussian(mu, args.t, args.p, args.mode, args.ref_samples, seed,
                                               args.norm, root_all=args.root_all)
        result.update(distance=estimate.value, se=estimate.se, t=args.t,
                      reference_size=estimate.reference_size)
        return result

    nu = persistence.read_points_csv(args.second)
    if args.mode == "1d":
        if mu.dim != 1 or nu.dim != 1:
            raise ValidationError("La modalita' 1d richiede punti a una colonna")
        result["distance"] = wasserstein.d_p_1d(mu, nu, args.p, root_all=args.root_all)
        return result
    if mu.dim != nu.dim:
        mu, nu = mu.embedded(), nu.embedded()
    value, plan = wasserstein.d_p_exact_2d(mu, nu, args.p, args.norm, root_all=args.root_all)
    result["distance"] = value
    if args.plan:
        result["plan"] = plan.to_dict()
    return result


def cmd_scan(args, config) -> dict:
    config = cfgmod.apply_overrides(
        config, alpha=args.alpha, sign=args.sign, beta=args.beta, n=args.n, p=args.p, seed=args.seed,
        out=args.out, replicas=args.replicas, workers=args.workers, algorithm=args.algorithm,
    )
    report = scan.run_scan(cfgmod.scan_config(config))
    if report.bracket is None and not args.allow_no_bracket:
        raise NoBracketError(report.bracket_error or "Nessun bracket nella griglia in beta")
    return {
        "verdicts": {str(b.beta): b.verdict for b in report.betas},
        "gamma_hat": {str(b.beta): b.gamma_hat for b in report.betas},
        "bracket": list(report.bracket) if report.bracket else None,
        "output_dir": config["scan"]["output_dir"],
    }


COMMANDS = {
    "sample": cmd_sample,
    "enumerate": cmd_enumerate,
    "blocks": cmd_blocks,
    "wasserstein": cmd_wasserstein,
    "scan": cmd_scan,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point: ritorna il codice di uscita"""
    args = build_parser().parse_args(argv)
    setup_logging(args.out if args.command == "scan" else None, verbose=args.verbose)
    started = datetime.now()
    try:
        config = cfgmod.load_config(args.config)
        result = COMMANDS[args.command](args, config)
    except KeyboardInterrupt:
        logger.warning("⚠️ Interrotto dall'utente (Ctrl+C)")
        return 1
    except PolyscaleError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"💥 Errore critico: {e}")
        return 1

    print(persistence.dumps(result))
    elapsed = (datetime.now() - started).total_seconds()
    logger.info(f"✅ {args.command} completato in {elapsed:.1f}s")
    if args.out and args.command != "scan":
        out = persistence.write_json(result, Path(args.out) / f"{args.command}.json")
        logger.info(f"💾 Risultato salvato in {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
