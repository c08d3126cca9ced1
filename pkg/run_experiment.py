#!/usr/bin/env python3
"""
Experiment runner for ByzFed
Run from the project root directory:

    python run_experiment.py train --preset p100-2-20 --out runs/p100
    python run_experiment.py meta --preset p100-2-20 --out runs/p100
    python run_experiment.py bench-transport --preset tiny --out runs/bench
"""
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), 'backend'))

from byzfed.main import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
