from ._constants import VERSION, BUILD_DATE, AUTHOR, DEBUGGING

LOGGER_NAME = "manifold_bsde"
LOGFILE = "manifold-bsde.log"
MANIFEST_NAME = "manifest.json"
MAX_BASE_DIMENSION = 2  # d
MAX_TARGET_DIMENSION = 3  # n
