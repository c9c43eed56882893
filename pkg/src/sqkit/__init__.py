"""Statistical-query toolkit: noisy-expectation oracles, high-dimensional
mean estimation, inexact first-order and cutting-plane optimization, and
query-based learners built on top of them."""

__version__ = "0.1.0"
