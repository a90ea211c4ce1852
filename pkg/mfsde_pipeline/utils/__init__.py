import json

import numpy as np


def parse_int_list(string):
    """'512, 1024' or '[512, 1024]' -> (512, 1024)"""
    if string is None:
        return None
    if isinstance(string, (list, tuple)):
        return tuple(int(s) for s in string)
    string = str(string).strip().strip("[]()")
    return tuple(int(s) for s in string.replace(",", " ").split())


def json_default(obj):
    """json.dump fallback for numpy scalars and arrays"""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    raise TypeError("{} is not JSON serializable".format(type(obj).__name__))


def to_json(obj, **kwargs):
    return json.dumps(obj, default=json_default, **kwargs)
