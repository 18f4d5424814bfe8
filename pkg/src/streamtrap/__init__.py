"""Streaming camera-trap benchmarks and embedding-space adaptation.

The package turns time-stamped camera-trap metadata into per-camera
chronological interval benchmarks, trains and evaluates lightweight
classifier heads on frozen image embeddings under a streaming protocol,
and provides temporal-shift diagnostics and adapt-or-skip decision
policies on top of completed runs.

Module map:

- ``metadata``     metadata parsing, filtering, sequence synthesis
- ``intervals``    30-day interval chunking, splits, crops, imbalance
- ``store``        binary embedding / text-head container formats
- ``adapt``        head training (cross-entropy / balanced softmax, low-rank)
- ``engine``       streaming regimes and balanced accuracy
- ``postprocess``  logit calibration, weight interpolation, model selection
- ``shift``        class-distribution shift and confidence diagnostics
- ``decisions``    adapt-or-skip benchmark and decision policies
- ``synthetic``    seeded synthetic cameras for tests and demos
- ``cli``          command-line front end (build / run / report / ...)
"""

__version__ = "0.1.0"

from . import adapt, decisions, engine, intervals, metadata, postprocess, shift, store

__all__ = [
    "adapt",
    "decisions",
    "engine",
    "intervals",
    "metadata",
    "postprocess",
    "shift",
    "store",
]
