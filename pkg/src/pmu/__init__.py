"""Desk-scale Conformer-Transducer toolkit with phonetic-assisted
multi-target units: BPE and pronunciation-derived subword inventories
feeding CTC and transducer branches in one multi-task objective."""

__version__ = "0.1.0"
