"""Region-based image retrieval over precomputed per-region features.

Submodules:
  geometry    box arithmetic and the position-feature catalog
  constraint  threshold constraints, cascade learning, detection metrics
  ivfadc      inverted-file + product-quantization ANN index
  classifier  linear SVM training and the named classifier cache
  langrec     language-prior relationship recommendation
  mining      layout clustering and constraint-set recommendations
  engine      the multi-object query pipeline
  store       dataset files, synthetic data, state persistence
  cli/service command line and HTTP front doors
"""

__version__ = "0.1.0"
