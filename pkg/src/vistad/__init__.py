"""vistad: two-stage visual anomaly detection for univariate time series.

Stage 1 screens the series by rasterizing rolling windows as clean line
plots, extracting patch-level features from a pluggable vision backend and
scoring each patch by multi-scale cross-patch comparison against the rest of
the series. Stage 2 verifies the resulting proposals by showing a multimodal
completion model the annotated full-series plot together with the proposal
list, keeping only intervals it confirms with enough confidence.
"""

from .config import PipelineConfig
from .detections import Detections, merge_intervals
from .embed import (
    CachedProvider,
    FeatureCache,
    ProviderId,
    ReferenceProvider,
    RemoteProvider,
    check_provider_contract,
    reference_embed,
)
from .errors import (
    ConfigurationError,
    InsufficientWindowsError,
    InvalidArgumentError,
    InvalidValueError,
    MalformedInputError,
    PipelineError,
    ProtocolError,
    SeriesTooShortError,
    TransportError,
    VerificationParseError,
)
from .evaluate import Counts, aggregate, contextual_counts, evaluate_score_series, prf
from .ingest import (
    TimeSeries,
    detrend_linear,
    load_labels,
    load_manifest,
    load_series,
    normalize_minmax,
    preprocess,
    standardize_segments,
    write_series,
)
from .raster import (
    AnnotatedPlotSpec,
    RasterImage,
    WindowSpec,
    make_windows,
    render_full_annotated,
    render_window,
    window_segment,
)
from .screen import (
    ScreenResult,
    ScreenSettings,
    assemble_map,
    collapse,
    extract_intervals,
    fuse_scales,
    pool_multiscale,
    score_all_pairs,
    score_median_reference,
    screen_series,
    smooth_ewma,
    threshold,
)
from .verify import (
    HttpVisionClient,
    MockEchoClient,
    TokenStats,
    build_prompt,
    filter_confidence,
    parse_response,
    verify_series,
)

__version__ = "0.1.0"
