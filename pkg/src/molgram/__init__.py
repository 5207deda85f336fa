"""molgram: graph-grammar molecule generation and policy-gradient optimization.

The package infers node-replacement production rules from a molecule corpus,
represents molecules as parse trees over those rules, and optimizes molecular
properties by training a graph-convolutional policy with clipped
policy-gradient updates over rule sequences.
"""

from molgram.molgraph import (
    AtomLabel,
    Fingerprint,
    OrderedMolGraph,
    ValidityReport,
    circular_fingerprint,
    is_isomorphic,
    molecular_weight,
    parse_smiles,
    tanimoto,
    validate_valence,
    write_smiles,
)

__version__ = "0.1.0"

__all__ = [
    "AtomLabel",
    "Fingerprint",
    "OrderedMolGraph",
    "ValidityReport",
    "__version__",
    "circular_fingerprint",
    "is_isomorphic",
    "molecular_weight",
    "parse_smiles",
    "tanimoto",
    "validate_valence",
    "write_smiles",
]
