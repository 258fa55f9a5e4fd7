import numpy
import scipy
import sklearn

pytest_plugins = ["tests.fixtures"]


def pytest_report_header(config):
    return f"numpy {numpy.__version__}, scipy {scipy.__version__}, scikit-learn {sklearn.__version__}"
