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

class ZoneSimError(Exception):
	"""Base class for every error raised by a pipeline stage."""

class ConfigError(ZoneSimError, ValueError):
	pass

class FloorplanError(ZoneSimError, ValueError):
	pass

class FloorplanParseError(FloorplanError):
	pass

class FloorplanValidationError(FloorplanError):
	pass

class DatasetError(ZoneSimError, ValueError):
	pass

class UnknownContainerError(DatasetError):
	def __init__(self, container_id: str):
		super().__init__(f'unknown container {container_id!r}: not present in the floorplan')
		self.container_id = container_id

class ModelFormatError(ZoneSimError, ValueError):
	pass
