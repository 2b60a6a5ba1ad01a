"""Exception hierarchy shared by every svcforge module."""


class SvcError(Exception):
    """Base class for all svcforge errors."""

    code = "svc_error"


class ConfigError(SvcError, ValueError):
    code = "config_error"


class ContractError(SvcError, ValueError):
    """Shapes, ranges or finiteness of an argument violate an operation contract."""

    code = "contract_error"


class EmptyInputError(SvcError, ValueError):
    code = "empty_input"


class AudioIOError(SvcError, OSError):
    code = "io_error"


class NoVoicedFramesError(SvcError, ValueError):
    code = "no_voiced_frames"


class DegenerateStatsError(SvcError, ValueError):
    code = "degenerate_stats"


class EncoderUnavailableError(SvcError, RuntimeError):
    code = "encoder_unavailable"


class RegistryError(SvcError, KeyError):
    code = "registry_error"

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class CheckpointError(SvcError, RuntimeError):
    code = "checkpoint_error"


class NonFiniteLossError(SvcError, FloatingPointError):
    code = "non_finite_loss"
