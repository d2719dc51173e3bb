"""Digital synchronization and parameter estimation for a simulated CV-QKD link."""

from .channel_sim import CalibrationRecord, ChannelConfig, apply_channel, run_calibration
from .config import ExperimentConfig, load_config, parse_config
from .errors import CvqkdError
from .frame_builder import FrameLayout, TxFrame, transmit_frame
from .harness import RunReport, emit_plots, run, sweep_delay_error, sweep_skew
from .param_est import FrameEstimate, SecurityParams, estimate_channel, secret_key_fraction
from .signal_core import ComplexSeries
from .sync_dsp import FrameReceiver, ReceiverConfig, estimate_skew, mth_power_phase
from .ukf import UkfConfig

__all__ = [
    "CalibrationRecord",
    "ChannelConfig",
    "ComplexSeries",
    "CvqkdError",
    "ExperimentConfig",
    "FrameEstimate",
    "FrameLayout",
    "FrameReceiver",
    "ReceiverConfig",
    "RunReport",
    "SecurityParams",
    "TxFrame",
    "UkfConfig",
    "apply_channel",
    "emit_plots",
    "estimate_channel",
    "estimate_skew",
    "load_config",
    "mth_power_phase",
    "parse_config",
    "run",
    "run_calibration",
    "secret_key_fraction",
    "sweep_delay_error",
    "sweep_skew",
    "transmit_frame",
]
