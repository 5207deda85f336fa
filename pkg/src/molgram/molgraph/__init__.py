"""Molecule graphs: data model, SMILES/JSON ingestion, validity, fingerprints."""

from molgram.molgraph.core import (
    ATOMIC_MASS,
    AtomLabel,
    BOND_ORDERS,
    CHIRALITIES,
    EPS_EDGE,
    NT_NS,
    NT_START,
    NT_X,
    ORGANIC_ELEMENTS,
    OrderedMolGraph,
    ValidityReport,
    effective_valence,
    implicit_hydrogens,
    is_isomorphic,
    is_terminal,
    max_valence,
    molecular_weight,
    ring_count,
    validate_valence,
)
from molgram.molgraph.fingerprint import Fingerprint, circular_fingerprint, tanimoto
from molgram.molgraph.smiles import parse_smiles, write_smiles

__all__ = [
    "ATOMIC_MASS",
    "AtomLabel",
    "BOND_ORDERS",
    "CHIRALITIES",
    "EPS_EDGE",
    "Fingerprint",
    "NT_NS",
    "NT_START",
    "NT_X",
    "ORGANIC_ELEMENTS",
    "OrderedMolGraph",
    "ValidityReport",
    "circular_fingerprint",
    "effective_valence",
    "implicit_hydrogens",
    "is_isomorphic",
    "is_terminal",
    "max_valence",
    "molecular_weight",
    "parse_smiles",
    "ring_count",
    "tanimoto",
    "validate_valence",
    "write_smiles",
]
