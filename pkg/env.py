import os

# Worker threads for CPD restarts, render row blocks and synthesis
DEEPMORPH_THREADS = max(1, int(os.environ.get("DEEPMORPH_THREADS", "1")))

# TOML defaults file
DEEPMORPH_CONFIG = os.environ.get("DEEPMORPH_CONFIG", "config.toml")

DEEPMORPH_LOG_LEVEL = os.environ.get("DEEPMORPH_LOG_LEVEL", "INFO")
