import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

DIFFCOMP_OUT = os.getenv("DIFFCOMP_OUT", "diffcomp_out")
DIFFCOMP_THREADS = int(os.getenv("DIFFCOMP_THREADS", 1))
LOG_FILE = Path(os.getenv("DIFFCOMP_LOG_FILE", Path(__file__).parent / "diffcomp.log"))

# Numerical tolerances
TOL_ORDER = 1e-10  # Loewner / drift ordering
TOL_CONV = 1e-10  # convexity second differences
TOL_LIPSCHITZ = 1e-6  # relative slack on declared Lipschitz constants
Z_CRIT = 3.0
CFL_SAFETY = 0.8
TAPER_BAND = 1.0
FLAG_BUDGET = 1e-4  # share of paths allowed to diverge
MEMORY_CAP_FRACTION = 0.5  # of available memory, for stored PDE slices

# Paths per random-number block. Part of the reproducibility contract.
BLOCK_PATHS = 4096
