"""Exception types shared across the simulator."""


class FedKWSError(Exception):
    pass


class ConfigError(FedKWSError, ValueError):
    pass


class DataError(FedKWSError, ValueError):
    pass


class NumericalError(FedKWSError, ArithmeticError):
    def __init__(self, message, layer=None, client=None):
        self.layer = layer
        self.client = client
        where = []
        if layer is not None:
            where.append(f"layer {layer}")
        if client is not None:
            where.append(f"client {client}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)

    def with_client(self, client):
        return NumericalError(str(self).split(" (")[0], layer=self.layer, client=client)


class SchedulingError(FedKWSError, ValueError):
    pass


class AggregationError(FedKWSError, ValueError):
    pass


class EvaluationError(FedKWSError, ValueError):
    pass
