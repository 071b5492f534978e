from .corpus import CorpusConfig, ImageGeometry, corpus_plan, default_calib, generate_corpus, generate_scan
from .phantom import Phantom, PhantomSpec
from .trajectory import TrajectorySpec

__all__ = [
    "CorpusConfig",
    "ImageGeometry",
    "Phantom",
    "PhantomSpec",
    "TrajectorySpec",
    "corpus_plan",
    "default_calib",
    "generate_corpus",
    "generate_scan",
]
