//! Experiment configuration, commands, and report emission.
