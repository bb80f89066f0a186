"""Coherent-energy fluctuation theorems: exact TPM statistics, energy
decomposition and a photon-counting emulator."""

__version__ = "0.1.0"

from .arrow import ArrowSweep, arrow_sweep, bloch_z_after, mean_c_closed_form, mean_c_trace
from .core import (
    BlochVector,
    DensityMatrix,
    Hamiltonian,
    UnitaryOperator,
    bloch_to_state,
    bloch_vector,
    eig_hermitian,
    haar_unitary,
    hwp_jones,
    rotation_unitary,
    thermal_state,
)
from .energy import EnergyLedger, Trajectory, closure_report, decompose, overlap_weights
from .photonic import (
    CountRecord,
    MeasurementSetting,
    NoiseConfig,
    SourceState,
    bootstrap_errorbars,
    estimate_distribution,
    ift_experiment,
    joint_probabilities,
    sample_counts,
)
from .tpm import (
    DFTReport,
    TPMDistribution,
    backward_distribution,
    characteristic_function,
    characteristic_function_trace,
    dft_report,
    ift_value,
    mean_coherent_energy,
    tpm_distribution,
)
