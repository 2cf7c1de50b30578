"""Logging setup for the command-line entry points."""

import logging

logger = logging.getLogger("gmae")


def setup_logging(verbose: bool = False, quiet: bool = False) -> None:
    """Configure the root handler once; later calls only change the level."""
    level = logging.INFO
    if verbose:
        level = logging.DEBUG
    elif quiet:
        level = logging.WARNING
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(message)s",
        datefmt="%H:%M:%S",
    )
    logger.setLevel(level)
