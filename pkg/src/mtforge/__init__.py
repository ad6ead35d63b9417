"""mtforge: corpus engineering and system combination for MT pipelines.

The package covers the data side of a translation system: corpus
filtering and normalization, n-gram language models, language
identification, word alignment, in-domain data selection, augmentation
(noising, BPE, knowledge-distillation gating, iterative back-translation),
BLEU, ensemble decoding over pluggable next-token oracles, domain
clustering, and k-best MIRA reranking. Everything is deterministic under
a fixed seed, including across worker counts.
"""

from .corpus import Corpus, Level, SentencePair, Side, read_corpus, read_mono, write_corpus, write_mono
from .errors import MtforgeError
from .report import RunReport

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "Level",
    "MtforgeError",
    "RunReport",
    "SentencePair",
    "Side",
    "read_corpus",
    "read_mono",
    "write_corpus",
    "write_mono",
    "__version__",
]
