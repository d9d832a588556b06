"""External-predictor stand-in: predicts the training mean for every test row.

Usage: ``python -m metagap.mock_predictor`` with the request JSON on stdin.
"""

import json
import sys

import numpy as np


def main() -> int:
    request = json.load(sys.stdin)
    mean = float(np.mean(np.asarray(request["train_y"], dtype=float)))
    json.dump({"pred": [mean] * len(request["test_X"])}, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
