import numpy as np

# Stream tags keep independent consumers of one master seed apart.
STREAM_PATHS = 0
STREAM_GROWTH = 1
STREAM_DIAGNOSTICS = 2


def path_generator(master_seed: int, path_index: int, stream: int = STREAM_PATHS) -> np.random.Generator:
    """Counter-based Philox stream; depends only on (master_seed, stream, path_index)."""
    sequence = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(stream), int(path_index)))
    return np.random.Generator(np.random.Philox(sequence))
