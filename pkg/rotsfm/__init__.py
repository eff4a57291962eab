from loguru import logger

# library use stays quiet; the CLI turns logging back on
logger.disable("rotsfm")
