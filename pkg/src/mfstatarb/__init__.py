"""Multi-factor statistical arbitrage: candidate discovery, cointegration
filtering, spread backtesting and a statistical-arbitrage test."""

__version__ = "0.1.0"
