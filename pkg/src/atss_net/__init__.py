"""Target-speaker separation: a speaker-embedding-conditioned mask estimator with temporal attention."""
from .dsp import StftConfig, Waveform
from .embedder import EmbedderConfig, SpeakerEmbedder, embed, train_embedder
from .errors import AtssError, CheckpointError, ConfigError, DataError, NumericError, ShapeError, TooShortError
from .model import AtssNet, ModelConfig, atss_forward
from .pipeline import TrainConfig, evaluate, sdr, separate, train_separator

__version__ = "0.1.0"
