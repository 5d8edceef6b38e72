"""Detection post-processing and dataset tooling for hierarchical label sets."""
from .chips import Chip, ChipConfig, ChipPlan, plan_chips
from .errors import (ConfigError, CycleError, EmptyIndexError, HierdetError, MixedImageError,
                     ParseError, UnknownLabelError)
from .evaluation import (EvalReport, MatchResult, average_precision, expand_ground_truth,
                         hierarchical_map, match_detections)
from .geometry import BBox, Detection, GroundTruth, iou, make_box, max_overlap
from .hierarchy import (LabelHierarchy, ancestors, expand_detections, expand_records,
                        load_hierarchy, parse_hierarchy)
from .postprocess import HnmsConfig, fuse_ensemble, hnms, hnms_all, nms_per_class
from .sampling import (CategoryIndex, ClassAwareSampler, SamplerConfig, SoftWeightConfig,
                       build_index, expected_category_frequency, imbalance_stats, sample_batch,
                       soft_weight)

__version__ = "0.1.0"
