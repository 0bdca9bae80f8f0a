"""Mean-field PSTD / Lindblad simulator for dense driven quantum-emitter ensembles."""

__version__ = "0.1.0"
