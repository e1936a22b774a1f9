"""Exception types raised across the package."""


class ConfigError(ValueError):
    pass


class LengthError(ValueError):
    """A sequence (after any prefix extension) exceeds the model's max length."""


class CorpusError(ValueError):
    pass


class DataError(ValueError):
    pass


class RoutingError(KeyError):
    pass


class PipelineError(RuntimeError):
    pass


class TrainingDiverged(FloatingPointError):
    def __init__(self, step: int, lang: str, lr: float, detail: str = ""):
        self.step, self.lang, self.lr = step, lang, lr
        msg = f"non-finite loss at step {step} (lang={lang}, lr={lr:g})"
        super().__init__(msg + (f": {detail}" if detail else ""))
