"""Joint speech recognition and speaker-role diarization with transducer models.

Desk-scale, float64, CPU-only: dense lattice losses with exact gradients,
forced-alignment role training, synchronized role decoding, and a
role-guided blank-suppression heuristic for beam search.
"""

__version__ = "0.1.0"
