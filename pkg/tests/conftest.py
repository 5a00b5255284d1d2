import sys
from pathlib import Path

# tests import their sibling helper modules (oracles, scenarios, generators)
sys.path.insert(0, str(Path(__file__).parent))
