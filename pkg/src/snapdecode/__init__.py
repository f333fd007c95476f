"""Snapshot-based multi-region decoding of stimulus categories from
volumetric time series.

Stages: design/regressor estimation (glm), snapshot selection (snapshot),
standard-space mapping (register), region feature extraction (feature),
sparse per-region classification with bagging (model), leave-one-subject-out
evaluation (evaluate), synthetic data generation (synth), batch CLI (cli).
"""

__version__ = "0.1.0"
