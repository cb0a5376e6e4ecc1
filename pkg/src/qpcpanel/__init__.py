"""Transformed principal-components estimation of dynamic panels with interactive effects."""

from qpcpanel.baselines import estimate_ls, estimate_pc_bai
from qpcpanel.errors import (
    DataError,
    DegenerateError,
    DimensionError,
    QPCError,
    RankDeficiencyError,
    SingularityError,
)
from qpcpanel.factor_count import EigRReport, eigenvalue_ratio
from qpcpanel.inference import (
    Instruments,
    Sigmas,
    bias_psi,
    build_instruments,
    confidence_intervals,
    estimate_sigmas,
    fixed_T_covariance,
    hessian_D,
    nickell_bias,
    omega,
    variance_terms,
)
from qpcpanel.objective import (
    composite_residual,
    extract_factors,
    full_objective,
    profile_objective,
)
from qpcpanel.panel import (
    Coefs,
    FactorStructure,
    PanelData,
    lag_response_G,
    projectors,
    shift_matrix,
)
from qpcpanel.qpc import EstimateOptions, EstimateResult, estimate_bn, estimate_qpc
from qpcpanel.simulate import DgpConfig, SimTruth, generate
from qpcpanel.transform import (
    LowRankSpec,
    TransformBasis,
    TransformedPanel,
    build_basis,
    detect_low_rank,
    transform_panel,
)

__version__ = "0.1.0"
