# hingecells - cell structure of hinge-loss ReLU networks
# Copyright (C) 2024  hingecells contributors
#
# This program is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# This program is distributed in the hope that it will be useful,
# but WITHOUT ANY WARRANTY; without even the implied warranty of
# MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
# GNU General Public License for more details.
#
# You should have received a copy of the GNU General Public License
# along with this program.  If not, see <https://www.gnu.org/licenses/>.

__title__ = 'Cell structure and critical points of hinge-loss ReLU networks'
__version__ = '1.0'
__author__ = 'hingecells contributors'
__license__ = 'GPLv3'
__copyright__ = 'Copyright (c) GPLv3 2024 hingecells contributors'


from .errors import (
    BudgetExceeded,
    DatasetError,
    Divergence,
    FormatError,
    HingeCellsError,
    IncidenceOverflow,
    NonConvergence,
    NotSeparable,
    ParamsError,
    PreconditionError,
    SamplingFailed,
    ShapeError,
    SolverError,
    TooManyZeros,
    UnsupportedConfiguration,
)
from .core import (
    LabeledDataset,
    LipschitzBound,
    Mode,
    NetworkShape,
    Params,
    forward,
    forward_batch,
    free_mask,
    hinge_binary,
    hinge_multi,
    hinge_multi_vector,
    leaky_relu,
    lipschitz_bound,
    ova_loss,
    per_class_loss,
    per_point_losses,
    total_loss,
)
from .cells import (
    BoundaryReport,
    CellId,
    Signature,
    cell_of,
    incidence_cells,
    incidence_set,
    preactivations,
    safe_radius,
    signature,
)
from .multilinear import (
    DecompositionL1,
    FrozenActivation,
    cell_gradient,
    cell_loss,
    decomposition_l1,
    flat_cell_test_frozen,
    flat_cell_test_l1,
    flat_cell_test_sampled,
    frozen_from_cell,
    frozen_from_signs,
    hessian,
    preactivation_jacobian,
    rare_check,
    weirdcond_check,
)
from .clarke import (
    CriticalityCertificate,
    MinNormPoint,
    certify,
    clarke_generators,
    is_critical,
    min_norm_point,
)
from .landscape import (
    GenericityKind,
    GenericityVerdict,
    MinimumClassification,
    MinimumKind,
    ProbeResult,
    SeparatingHyperplane,
    Verdict,
    classify_minimum,
    convex_hinge_optimum,
    deep_linear_check,
    descent_probe,
    genericity,
    rho_coefficients,
    separability,
    thm4_check,
    thm5_check,
    thm6_check,
    zero_loss_type_check,
)
from .penalty import (
    ReplicatedParams,
    E_gamma,
    class_dataset,
    is_critical_E,
    multiclass_alpha0_check,
    multiclass_leaky_check,
    penalty_R,
    subgrad_E,
    thm7_check,
)
from .optimize import (
    Objective,
    Schedule,
    Trajectory,
    multi_start,
    occupancy_combination,
    subgradient_descent,
)
from .service import TaskService
