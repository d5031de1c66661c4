'''
Contains the definition of the `Config` class, which loads YAML configuration
files and applies environment variable overrides.
'''

from __future__ import annotations

import copy
import dataclasses
import os
import yaml

from typing import Any, Mapping, Optional

from .embedder import CorpusConfig, EncoderConfig
from .errors import ConfigError
from .stats import UpperBoundConfig
from .synthetic import PieceConfig, SyntheticWorldConfig
from .trainer import CvConfig, NetConfig, TrainConfig

ENV_PREFIX = 'SPSIM_'

SECTIONS = {
    'synthetic': SyntheticWorldConfig,
    'network': NetConfig,
    'training': TrainConfig,
    'cv': CvConfig,
    'upper_bound': UpperBoundConfig,
    'pieces': PieceConfig,
    'embedder': EncoderConfig,
    'corpus': CorpusConfig
}


class Config:
    '''
    Represents a full run configuration. Every top-level section maps onto a
    configuration dataclass:
      * synthetic -> `SyntheticWorldConfig`
      * network -> `NetConfig`
      * training -> `TrainConfig`
      * cv -> `CvConfig`
      * upper_bound -> `UpperBoundConfig`
      * pieces -> `PieceConfig`
      * embedder -> `EncoderConfig`
      * corpus -> `CorpusConfig`
    Missing sections and keys take their dataclass defaults.
    '''
    def __init__(
        self,
        data_path: Optional[str] = None,
        data_content: Optional[dict] = None,
        environ: Optional[Mapping[str, str]] = None):
        '''
        Creates a new configuration from the specified YAML file. Optionally,
        already-parsed content may be given as `data_content` instead; with
        neither, every section takes its defaults. Environment variables of
        the form `SPSIM_<SECTION>__<KEY>` (read from `environ`, which defaults
        to `os.environ`) override file values and are parsed as YAML scalars.
        '''
        if not data_path is None:
            full_data_path = os.path.expanduser(data_path)
            if not os.path.isfile(full_data_path):
                raise ConfigError(f'specified config path "{data_path}" does not exist')
            try:
                with open(full_data_path, 'r') as f:
                    raw = yaml.safe_load(f.read())
            except yaml.YAMLError as err:
                raise ConfigError(f'unable to parse config file "{data_path}" - {err}')
            self.raw_data = {} if raw is None else raw
        elif not data_content is None:
            self.raw_data = copy.deepcopy(data_content)
        else:
            self.raw_data = {}
        if not isinstance(self.raw_data, dict):
            raise ConfigError('configuration content must be a mapping of sections')
        for section, values in self.raw_data.items():
            if not section in SECTIONS:
                raise ConfigError(f'unknown config section "{section}" (valid values: {", ".join(SECTIONS)})')
            if not isinstance(values, dict):
                raise ConfigError(f'config section "{section}" must be a mapping')
        self.data = {s: dict(self.raw_data.get(s) or {}) for s in SECTIONS}
        self.apply_environment(os.environ if environ is None else environ)
        self.sections = {s: build_section(s, self.data[s]) for s in SECTIONS}

    def __getitem__(self, section: str) -> Any:
        '''
        Returns the dataclass instance of the specified section.
        '''
        if not section in self.sections:
            raise ConfigError(f'unknown config section "{section}" (valid values: {", ".join(SECTIONS)})')
        return self.sections[section]

    def apply_environment(self, environ: Mapping[str, str]):
        '''
        Applies `SPSIM_<SECTION>__<KEY>` overrides to the raw section values.
        '''
        for name in sorted(environ):
            if not name.startswith(ENV_PREFIX) or not '__' in name: continue
            section, _, key = name[len(ENV_PREFIX):].lower().partition('__')
            if not section in SECTIONS:
                raise ConfigError(f'environment variable "{name}" names unknown config section "{section}"')
            try:
                self.data[section][key] = yaml.safe_load(environ[name])
            except yaml.YAMLError as err:
                raise ConfigError(f'unable to parse environment variable "{name}" - {err}')

    def override(self, section: str, **values: Any) -> Config:
        '''
        Returns a copy of this configuration with the specified section values
        replaced (`None` values are ignored).
        '''
        res = copy.copy(self)
        res.data = copy.deepcopy(self.data)
        res.data[section].update({k: v for k, v in values.items() if not v is None})
        res.sections = dict(self.sections)
        res.sections[section] = build_section(section, res.data[section])
        return res

    def to_dict(self) -> dict:
        '''
        Returns the full resolved configuration, with every default filled in.
        '''
        return {s: dataclasses.asdict(v) for s, v in self.sections.items()}


def build_section(section: str, values: dict) -> Any:
    '''
    Builds the dataclass of a section from its raw values, rejecting unknown
    keys.
    '''
    cls = SECTIONS[section]
    valid = [f.name for f in dataclasses.fields(cls)]
    for key in values:
        if not key in valid:
            raise ConfigError(f'unknown key "{key}" in config section "{section}" (valid values: {", ".join(valid)})')
    try:
        return cls(**values)
    except TypeError as err:
        raise ConfigError(f'invalid config section "{section}" - {err}')
