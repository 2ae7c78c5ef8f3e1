"""
Parallel-for vectorization of tensor dataflow graphs.
"""
default_app_config = 'pforvec.apps.PforvecConfig'
