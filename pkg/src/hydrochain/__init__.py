"""Anharmonic chain with viscous noise: Gibbs thermodynamics, particle
simulation, the macroscopic viscous p-system, and the experiments that
compare them."""

__version__ = "0.1.0"

from .chain import ChainState, ThermoLedger
from .macro import (ConjugateState, Grid, MacroState, PDEConfig, apply_bcs, apply_bcs_conjugate,
                    dissipation, energy_identity_residual, equilibrium_state, free_energy_functional,
                    integrate, relaxation_functional, rhs_conjugate, rhs_rp, total_length)
from .micro import (SimConfig, drift, empirical_pairing, energy_n, length_n, one_block_residual,
                    run, stability_bound, step)
from .protocol import TensionProtocol
from .sampler import RngStream, SiteDistribution, rejection_sample, sample_chain, sample_p, sample_r
from .thermo import (PotentialModel, ThermoParams, ThermoTable, cosine, ell, ell_prime, free_energy,
                     gibbs_hat, gibbs_potential, harmonic, internal_energy, parse_potential,
                     partition_z, tension, tension_prime, thermo_entropy, thermo_table)
