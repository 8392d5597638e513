"""emagan: a WGAN-GP over articulator trajectories with a frozen
differentiable synthesizer between generator and critic, plus the
trajectory-analysis toolkit (LOESS, DTW, correlation, odds-ratio test)."""

__version__ = "0.1.0"
