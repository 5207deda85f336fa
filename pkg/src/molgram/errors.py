"""Exception types shared across the package."""


class MolgramError(Exception):
    """Base class for all package errors."""


class SmilesSyntaxError(MolgramError):
    """Malformed SMILES input."""

    def __init__(self, position: int, reason: str):
        super().__init__(f"SMILES syntax error at position {position}: {reason}")
        self.position = position
        self.reason = reason


class UnsupportedFeature(MolgramError):
    """SMILES feature outside the supported subset (aromatic atoms, isotopes, ...)."""


class NonTerminalPresent(MolgramError):
    """Operation requires a molecule graph but a placeholder node is present."""


class LengthMismatch(MolgramError):
    """Fingerprints of different lengths cannot be compared."""


class InvalidRule(MolgramError):
    """Production rule violates a structural invariant."""


class InvalidGrammar(MolgramError):
    """Grammar file or structure violates an invariant."""


class DisconnectedInput(MolgramError):
    """Parsing requires a connected molecule graph."""


class NonTerminalInput(MolgramError):
    """Parsing requires a terminal-only molecule graph."""


class NoPendingNonterminal(MolgramError):
    """Derivation state has no node left to rewrite."""


class EmptyAgenda(NoPendingNonterminal):
    """Alias raised by next_nonterminal on a finished derivation."""


class IllegalRule(MolgramError):
    """Rule is not legal for the current derivation state."""


class IllegalSequence(MolgramError):
    """Rule sequence is not decodable; carries the offending step index."""

    def __init__(self, step: int, reason: str = ""):
        msg = f"illegal rule at step {step}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.step = step


class IncompleteDerivation(MolgramError):
    """Sequence ended while placeholder nodes remain."""


class AgendaCorruption(MolgramError):
    """Internal invariant of the rewrite agenda failed."""


class ShapeMismatch(MolgramError):
    """Tensor shapes inconsistent with the network configuration."""


class EmptyLegalSet(MolgramError):
    """No production rule matches the focus node (dead end)."""


class NumericalError(MolgramError):
    """NaN or Inf appeared during network evaluation."""


class EvaluatorProtocolError(MolgramError):
    """External property evaluator violated the line protocol."""


class BudgetExhausted(MolgramError):
    """Property-evaluation budget spent."""


class DataError(MolgramError):
    """Corpus / artifact file could not be read."""
