"""Partial-sharing asynchronous online federated learning.

A discrete-time simulator for communication-efficient online federated
kernel regression with random client participation and delayed uplink
messages, plus the matching mean and mean-square convergence analysis at
desk scale.
"""

from .features import FeatureMap, build_feature_map, map_input, median_kernel_width
from .streams import (
    SampleEvent,
    StreamPlan,
    TestSet,
    synth_target,
    build_stream_plan,
    build_test_set,
    load_csv_stream,
)
from .environment import (
    DISCARDED,
    AvailabilityModel,
    DelayModel,
    InFlightMessage,
    MessageQueue,
    sample_availability,
    sample_delay,
    resolve_conflicts,
)
from .algorithms import (
    ALGORITHM_NAMES,
    PAO_FED_VARIANTS,
    MaskScheduler,
    VariantConfig,
    make_algorithm,
)
from .analysis import ExtendedSystem, NoSteadyStateError, step_size_bounds
from .harness import (
    ConfigError,
    ExperimentConfig,
    MetricsRecord,
    MetricsTable,
    mse_test,
    preset,
    run_experiment,
    sweep,
)

__version__ = "0.1.0"
