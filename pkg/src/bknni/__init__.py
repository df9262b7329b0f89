"""Balanced k-nearest-neighbor hot-deck imputation for item nonresponse."""

from .dataset import (Dataset, ImputedDataset, complete, estimate_percentile,
                      estimate_total, estimate_variance, load_csv, load_mu284,
                      write_csv)
from .donors import (CellProblem, DonorAssignment, build_cell_problem,
                     flight_phase, landing_phase, select_donors)
from .imputers import (ImputerConfig, impute, impute_bknn, impute_knni,
                       impute_nni, impute_pmm, impute_srs, impute_srswor)
from .neighbors import KnnSets, estimate_covariance, knn_sets, mahalanobis
from .psi import (AllInfeasible, EmptyColumn, Infeasible, PsiMatrix,
                  apply_edit_rules, balance_residual, compute_psi_bknn,
                  min_feasible_k, psi_knn, psi_srs, select_k)
from .raking import NoConvergence, RakingSolution, SingularJacobian, rake
from .simulation import (SimReport, StudyConfig, calibrate_beta, gen_response,
                         run_study)
from .variance import VarApproxResult, var_app

__version__ = "0.1.0"
