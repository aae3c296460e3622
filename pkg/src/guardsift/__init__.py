"""Guard-side Tor cell-trace toolkit.

Synthetic traffic generation with ground truth, circuit sanitization,
time-based segmentation, linked-leg (Conflux) analysis, featurization,
and open-world evaluation metrics.
"""

from .conflux import (
    CellTypeCode,
    PrimaryLegVerdict,
    detect_first_segment,
    fs_ground_truth,
    identify_primary_legs,
    leg_coverage,
    merge_legs,
    strip_conflux_handshake,
)
from .ingest import PageVisitRecord, filter_relay_channels, parse_client_log, parse_guard_log
from .metrics import (
    NONMON,
    ConfusionCounts,
    Rates,
    ScoreRecord,
    WilsonParams,
    f1,
    operating_point_at_fpr,
    r_precision,
    rates,
    select_threshold_max_f1,
    sweep,
    tally,
    wilson_upper,
)
from .sanitize import (
    SanitizationReport,
    SanitizeConfig,
    compute_duration_cap,
    detect_spam_channels,
    filter_small_circuits,
    sanitize,
    select_main_circuit,
    trim_head,
    trim_tail,
    validate_handshake_post,
    validate_handshake_pre,
)
from .segment import extract_monitored_window, segment_nonmonitored
from .simulate import LegState, ScenarioConfig, generate_dataset, run_rtt_advantage_sweep, schedule_lowrtt
from .trace import (
    INCOMING,
    OUTGOING,
    CellRecord,
    Channel,
    Circuit,
    ConfluxSet,
    Trace,
    normalize,
    read_dataset,
    serialize_dataset,
    write_dataset,
)
from .transforms import inject_jitter, truncate_length, truncate_percent
from .features import TAM, build_tam, direction_sequence, directional_timing, slot_sweep

__version__ = "0.1.0"
