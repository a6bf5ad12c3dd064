"""Record the battery constants the acceptance suite compares against.

Run once (python3 tests/calibrate.py); the values are measured, never typed in.
"""
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from test_acceptance import CAL_PATH, measured_constants  # noqa: E402

if __name__ == "__main__":
    consts = measured_constants()
    consts["note"] = "max over the calibration batteries defined in test_acceptance.py"
    CAL_PATH.write_text(json.dumps(consts, indent=2, sort_keys=True) + "\n")
    print(json.dumps(consts, indent=2, sort_keys=True))
