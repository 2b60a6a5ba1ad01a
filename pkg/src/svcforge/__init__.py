"""Singing voice conversion: a VITS-style CVAE with PBTC pitch embedding and an NSF decoder."""

from .audio_io import Waveform, load_wav, save_wav
from .config import Config, load_config, profile_config
from .errors import SvcError

__version__ = "0.1.0"

__all__ = ["Config", "SvcError", "Waveform", "load_config", "load_wav", "profile_config", "save_wav"]
