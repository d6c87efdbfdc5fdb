"""Exact Gaussian-field representation of finite-volume Ising free energies."""

__version__ = "0.1.0"

from .couplings import (
    CouplingMatrix,
    ModelSpec,
    SignSplit,
    clamp_spins,
    generate_ea,
    generate_hopfield,
    generate_sk,
    load_couplings,
    read_couplings,
    sign_split,
    write_couplings,
)
from .decomposition import (
    babylonian_pair,
    constant_g,
    decompose,
    hamiltonian_decomposed,
    hamiltonian_raw,
)
from .errors import (
    CouplingParseError,
    EnumerationCapError,
    NotPSDError,
    NumericalError,
    ValidationError,
)
from .estimator import EstimateResult, ObservableEstimate, formula_free_energy, formula_observables, sweep
from .gaussfield import (
    build_covariance,
    factorize,
    sample_field_constructive,
    sample_field_factorized,
)
from .oracle import exact_free_energy, exact_free_energy_pspin3, exact_observables
from .pspin import (
    ThreeBodyCouplings,
    babylonian_triple,
    generate_pspin3,
    nested_free_energy,
    reduce_one_level,
)
