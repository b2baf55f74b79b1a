# Copyright 2022-2023 pyke.io
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# 	http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""
Counter-based random streams.

Every random draw in the pipeline comes from `stream(seed, domain, *keys)`: a Philox generator keyed by the run seed
and stream family, whose counter starts at the given keys. Draws for one key tuple never depend on which other streams
were consumed, or in what order, so any stage can be split across workers without changing its output.
"""

import numpy as np

U64_MASK = (1 << 64) - 1

# stream families, so e.g. the subsample and the session split never share a counter
DOMAIN_SHADOWING = 1
DOMAIN_SUBSAMPLE = 2
DOMAIN_SPLIT = 3
DOMAIN_BOOTSTRAP = 4

def check_seed(seed: int) -> int:
	if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
		raise ValueError(f'seed must be an integer, got {seed!r}')
	seed = int(seed)
	if seed < 0 or seed > U64_MASK:
		raise ValueError(f'seed must be a 64-bit unsigned integer, got {seed}')
	return seed

def stream(seed: int, domain: int, *keys: int) -> np.random.Generator:
	# domain sits in the upper half of the 128-bit key; keys fill the upper counter words, leaving the lowest word
	# (the one Philox increments while drawing) at zero
	if len(keys) > 3:
		raise ValueError('at most 3 stream keys are supported')
	counter = np.zeros(4, dtype=np.uint64)
	for i, key in enumerate(keys):
		if key < 0:
			raise ValueError(f'stream keys must be non-negative, got {key}')
		counter[i + 1] = int(key) & U64_MASK
	key = check_seed(seed) | ((int(domain) & U64_MASK) << 64)
	return np.random.Generator(np.random.Philox(key=key, counter=counter))
