# tests/__init__.py

import os
import tempfile

# module-level loggers are created at import time; keep their files out of the working tree
os.environ.setdefault('MOPG_LOG_DIR', tempfile.mkdtemp(prefix='mopg-test-logs-'))
