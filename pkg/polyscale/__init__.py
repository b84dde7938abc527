"""
polyscale: polimeri aleatori a lungo raggio nel piano.

Campionamento della misura di Gibbs tramite la fattorizzazione in due catene
di Ising, oracolo esatto per N piccolo, processi riscalati, distanze di
Wasserstein dal moto browniano e scansione della transizione in beta.
"""

from polyscale.errors import (AtomCapError, DegenerateTraceError, EnumerationLimitError,
                              InsufficientDataError, NoBracketError, PolyscaleError, ValidationError)
from polyscale.model import (GibbsParams, InteractionKernel, Polymer, SpinChainPair, Step, chain_log_weight,
                             custom, finite_range, gibbs_log_weight, hamiltonian, polymer_to_spins,
                             power_law, spins_to_polymer)
from polyscale.oracle import enumerate_chain, enumerate_polymer
from polyscale.paths import BlockScheme, build_w_path, hypothesis_stats, make_blocks, partial_sums
from polyscale.sampler import SampleBatch, SamplerConfig, autocorrelation_time, sample_chain
from polyscale.scan import ScanConfig, ScanReport, bracket_crossover, classify, run_scan
from polyscale.wasserstein import EmpiricalMeasure, d_p_1d, d_p_exact_2d, d_p_to_gaussian

__version__ = "0.1.0"
