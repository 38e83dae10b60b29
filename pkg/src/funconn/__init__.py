"""Time-varying functional connectivity of event-emitting nodes."""
__version__ = "0.1.0"

from .baseline import CorrelationBaseline, baseline_infer
from .evaluation import connected_components, match_and_score, pccfg_scores
from .events import EventLog, EventSeries, WindowSpec, load_event_log, write_event_log
from .model import (EdgeProbabilities, EdgeProbabilityModel, FitConfig, ModelParams,
                    PairHistory, TopologySnapshot, fit, infer_topology)
from .scoring import PairScorer, PairStatus, ScoreTable, Status, score_windows
from .synth import GroundTruth, SyntheticConfig, generate

__all__ = [
    "CorrelationBaseline", "EdgeProbabilities", "EdgeProbabilityModel", "EventLog",
    "EventSeries", "FitConfig", "GroundTruth", "ModelParams", "PairHistory", "PairScorer",
    "PairStatus", "ScoreTable", "Status", "SyntheticConfig", "TopologySnapshot", "WindowSpec",
    "baseline_infer", "connected_components", "fit", "generate", "infer_topology",
    "load_event_log", "match_and_score", "pccfg_scores", "score_windows", "write_event_log",
]
