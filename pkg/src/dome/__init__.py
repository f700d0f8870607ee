"""Intent-conditioned code comment generation with exemplar retrieval."""

from .corpus import CodeCommentRecord, IntentCategory
from .errors import (ConfigError, CorpusFormatError, CorruptCheckpoint, DomeError, EmptyInput,
                     InvalidIntent, NoExemplar)

__version__ = "0.1.0"

__all__ = ["CodeCommentRecord", "IntentCategory", "ConfigError", "CorpusFormatError",
           "CorruptCheckpoint", "DomeError", "EmptyInput", "InvalidIntent", "NoExemplar"]
