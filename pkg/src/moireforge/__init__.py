"""moireforge: synthesize pseudo moire training pairs from unpaired image sets.

Pipeline stages: split unpaired moire / clean corpora into patches, group the
moire patches by pattern complexity, train one adversarial synthesis network
per group, filter low-quality syntheses with a percentile edge-difference
rule, and train/evaluate demoireing models on the resulting pseudo pairs.
"""

__version__ = "0.1.0"
