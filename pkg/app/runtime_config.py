import config as original_config

class Config:
    def __init__(self):
        # Defaults are the upper-case names of config.py
        for key in dir(original_config):
            if key.isupper():
                setattr(self, key, getattr(original_config, key))
        self._recalculate()

    def update(self, **kwargs):
        for key, value in kwargs.items():
            if not key.isupper():
                raise AttributeError(f"Config keys are upper case, got {key!r}")
            setattr(self, key, value)

        # Derived values follow their inputs
        self._recalculate()

    def reset(self):
        self.__init__()

    def _recalculate(self):
        self.GRID_POINTS = int(round((self.GRID_STOP_NM - self.GRID_START_NM) / self.GRID_STEP_NM)) + 1

config = Config()
