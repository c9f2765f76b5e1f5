"""Standard and minimax-robust Gaussian-mixture PHD filters for multi-target tracking."""

from .errors import (DegenerateGeometry, EmptyInput, InvalidDof, NotPositiveDefinite, ParseError,
                     SingularCovariance, SingularInnovation, TooLarge, TrackingError, ValidationError)
from .gm import (ComponentManagementConfig, GaussianComponent, GaussianMixture, extract_states,
                 gaussian_density, prune_and_merge, regularize, student_t_density, total_mass)
from .models import (BirthModel, ClutterModel, FilterModels, MeasurementDrivenBirth, MeasurementModel,
                     MotionModel, SpawnModel, SpawnTerm, coordinated_turn_transition, cv_transition)
from .phd import StandardState, predict, standard_step, update
from .robust import (AdaptationConfig, RobustFilterConfig, RobustnessState, RobustState, adapt_parameters,
                     robust_likelihood, robust_predict, robust_update, step)
from .extended import (ExtendedTargetModel, Partition, distance_partition, enumerate_partitions,
                       extended_update)
from .metrics import OspaConfig, RunRecord, cardinality_stats, ospa
from .diagnostics import condition_number, mass_monitor
from .scenarios import ScenarioConfig, generate_measurements, generate_truth, models_for

__version__ = "0.1.0"
