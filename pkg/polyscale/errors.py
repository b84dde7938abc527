"""Eccezioni del pacchetto polyscale.

Ogni errore porta con se' il codice di uscita usato dalla CLI.
"""


class PolyscaleError(Exception):
    """Errore base di polyscale"""
    exit_code = 1


class ValidationError(PolyscaleError, ValueError):
    """Precondizione violata o configurazione non valida"""
    exit_code = 2


class EnumerationLimitError(ValidationError):
    """N oltre il limite dell'enumerazione esatta"""


class AtomCapError(ValidationError):
    """Troppi atomi per il solver di trasporto ottimo"""


class InsufficientDataError(ValidationError):
    """Campioni (o punti della griglia in n) insufficienti"""


class DegenerateTraceError(PolyscaleError):
    """Traccia a varianza nulla: autocorrelazione non definita"""


class NoBracketError(PolyscaleError):
    """Nessuna coppia diffusivo/balistico nella griglia in beta"""
    exit_code = 3
