"""Audio-visual localization experiment testbed.

Synthesizes a 4-avatar audio-visual localization experiment, trains a
multichannel network on behavioural responses (from a calibrated response
oracle or from human subjects collected over HTTP), and reproduces the
error-rate and ventriloquism-bias analyses.
"""

__version__ = "0.1.0"
