"""Bistatic ISAC target detection with superimposed deterministic and Gaussian signals.

Submodules
----------
specfun      Gaussian Q, Bessel I, non-central chi-squared tails and quantiles.
model        System/channel configuration, channel draws, frames, SNR metrics.
detector     NP statistic, thresholds, closed-form P_FA/P_D, benchmark detectors.
sdp          Dense primal-dual interior-point SDP solver.
beamforming  SDR + SCA transmit design and the benchmark designs.
montecarlo   Seeded trial engine and empirical rate estimates.
experiments  Experiment runners and the command line interface.
"""

__version__ = "0.1.0"
