"""Flood-attack detection from packet flows with fused NAFV features and ARIMA trend prediction."""
from .baseline import Baseline, train, train_table
from .detector import DetectionEvent, Detector, DetectorConfig, EventKind, Mode, run
from .features import FeatureVector, NafvPoint, WeightVector, nafv, nafv_weighted, pca_weights
from .generator import ScenarioConfig, gen_scenario, preset
from .ingest import FlowTable, PacketRecord, SamplingConfig, WindowSample, read_flow_table, window_stream
from .ipd import IpBitmap, byte_bit_offset, map_ipv6
from .metrics import Metrics, evaluate
from .prefilter import FilteredWindow, FlowClass, apply_delete_rules, classify
from .timeseries import ArimaModel, ArimaSpec, difference, fit_arima, forecast, integrate, ljung_box

__version__ = "0.1.0"

__all__ = [
    "ArimaModel", "ArimaSpec", "Baseline", "DetectionEvent", "Detector", "DetectorConfig", "EventKind",
    "FeatureVector", "FilteredWindow", "FlowClass", "FlowTable", "IpBitmap", "Metrics", "Mode", "NafvPoint",
    "PacketRecord", "SamplingConfig", "ScenarioConfig", "WeightVector", "WindowSample", "apply_delete_rules",
    "byte_bit_offset", "classify", "difference", "evaluate", "fit_arima", "forecast", "gen_scenario",
    "integrate", "ljung_box", "map_ipv6", "nafv", "nafv_weighted", "pca_weights", "preset",
    "read_flow_table", "run", "train", "train_table", "window_stream",
]
