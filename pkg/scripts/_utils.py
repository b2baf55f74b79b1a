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

from datetime import date
import errno
import logging
import os
from pathlib import Path
import sys

import coloredlogs
from imohash import hashfile
from yaspin import spinners

SPINNER = spinners.Spinners._asdict()['clock' if date.today().month == 3 and date.today().day == 14 else 'dots12']

def install_logging(verbose: bool = False):
	coloredlogs.install(level=logging.DEBUG if verbose else logging.WARNING, fmt='%(funcName)20s: %(message)s')

# imohash samples files at or above its threshold; artifacts are hashed over their full content
FULL_CONTENT_THRESHOLD = sys.maxsize

def hash_artifact(path: Path) -> str:
	return hashfile(path, sample_threshhold=FULL_CONTENT_THRESHOLD, hexdigest=True)

def mkdirp(path: Path):
	try:
		os.makedirs(path)
	except OSError as e:
		if e.errno == errno.EEXIST and os.path.isdir(path):
			pass
		else:
			raise e
