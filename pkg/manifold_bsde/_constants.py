VERSION = "0.4.1"
BUILD_DATE = "2026-10-18T09:12:40.118305"
AUTHOR = "manifold_bsde developers"
DEBUGGING = False
