//! End-to-end acceptance checks live under `tests/`.
