"""Detail-preserving stereo surface refinement.

Three cooperating pieces:

* :mod:`lpstereo.similarity` - windowed ZNCC, its exact derivative under the
  registration energy, guided image filtering, and the algebraic bridge
  between the two, including the variance-constrained detail-preserving
  derivative.
* :mod:`lpstereo.prior` / :mod:`lpstereo.denoise` - content-aware Lp mesh
  denoising: hyper-Laplacian shape fitting with closed-form noise/width
  estimates, and the GST-based variable-splitting solver.
* :mod:`lpstereo.evolve` - a depth-map evolution harness alternating
  data-term descent with the selected regularizer over an image pyramid.

:mod:`lpstereo.synth` builds reproducible synthetic meshes and stereo
scenes; :mod:`lpstereo.fileio` holds the on-disk formats; :mod:`lpstereo.cli`
is the ``lpstereo`` command.
"""

from .denoise import (
    DenoiseConfig,
    RoughnessOperator,
    SolverError,
    SplitState,
    denoise,
    denoise_field,
    gst_grid_minimizer,
    gst_shrink,
    gst_threshold,
    laplacian_smooth,
    psi_update,
    umbrella_operator,
    x_update,
)
from .evolve import (
    CameraIntrinsics,
    CameraPair,
    DepthMap,
    EvolveConfig,
    EvolveError,
    data_gradient,
    evolve,
    predict_image,
)
from .mesh import (
    EdgeDifferentialOperator,
    MeshError,
    MeshQualityReport,
    TriangleMesh,
    add_gaussian_noise,
    apply_operator,
    build_edge_operator,
    crease_edges_by_threshold,
    dihedral_angles_deg,
    quality_report,
)
from .prior import (
    FitError,
    GradientSample,
    HyperLaplacianParams,
    estimate_sigma,
    fit_p,
    fit_theta_given_p,
    neg_log_posterior,
    sample_magnitudes,
)
from .similarity import (
    ImageError,
    ScalarImage,
    SimilarityDerivativeField,
    WindowStats,
    bridge_identity_residual,
    detail_preserving_derivative,
    guided_filter,
    registration_approximation_residual,
    similarity_energy,
    window_stats,
    zncc,
    zncc_derivative,
)

__version__ = "0.1.0"
