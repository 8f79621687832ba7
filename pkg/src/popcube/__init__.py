"""popcube: space-time cube analytics for gridded crisis population feeds.

The pipeline runs from slice ingestion through z-score dynamics,
event-sectioned monotonic trends, per-slice hot/cold spots, and emerging
spot categories, with a synthetic scenario generator standing in for the
access-restricted production feed.
"""

from .errors import PopcubeError
from .grid import (
    CellId,
    GridSpec,
    NeighborScheme,
    build_grid,
    cell_centroid,
    cell_polygon,
    load_grid,
    neighbors,
    save_grid,
    weights_matrix,
)
from .hotspot import (
    EmergingResult,
    GiStarField,
    SpotLabelCube,
    SpotLabelField,
    classify_spots,
    emerging_classify,
    gi_star,
    gi_star_cube,
    label_cube,
)
from .ingest import (
    RasterPopulation,
    SliceRecord,
    SliceSet,
    Zone,
    ZonalPopulation,
    parse_slices,
    read_raster_ascii,
    read_raster_csv,
    read_zones_geojson,
    resample_to_grid,
    square_to_hex_transfer,
    zonal_sum,
    zone_assignment,
)
from .metrics import (
    RegionalSeries,
    RegressionResult,
    ZScoreParams,
    average_baseline,
    demographic_correlation,
    diurnal_average,
    fit_penetration,
    penetration_rate,
    regional_mean_z,
    total_difference,
    z_score,
)
from .stcube import (
    EventTimeline,
    Section,
    SpaceTimeCube,
    TimelineEvent,
    build_cube,
    load_cube,
    save_cube,
    section_by_events,
    to_slice_set,
)
from .synth import (
    EvacParams,
    GroundTruth,
    ScenarioConfig,
    Shelter,
    default_evacuation_scenario,
    emit_fbdm_csv,
    fast_egress_scenario,
    generate,
    load_scenario,
    no_event_scenario,
    slow_egress_scenario,
)
from .trend import (
    MKResult,
    TippingPoint,
    TrendClass,
    cell_section_trends,
    mk_stat,
    tipping_points,
    tipping_points_cube,
)

__version__ = "0.1.0"
