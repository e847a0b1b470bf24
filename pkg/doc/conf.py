# Configuration file for the Sphinx documentation builder.
#
# https://www.sphinx-doc.org/en/master/usage/configuration.html

# -- Project information -----------------------------------------------------

project = 'Distributed Policy Iteration'
copyright = '2021, d3pi contributors'
author = 'd3pi contributors'

# -- General configuration ---------------------------------------------------

extensions = [
    'sphinx.ext.coverage',
    'sphinx.ext.napoleon',
    'sphinx.ext.autodoc',
    'sphinx.ext.mathjax',
    'autoapi.extension',
]

autoapi_type = 'python'
autoapi_dirs = ['../src/d3pi', '../src/d3pi_tools']

# The default language to highlight source code in.
highlight_language = 'python3'

add_module_names = False

# This value controls how to represent typehints (PEP 484.)
autodoc_typehints = 'signature'

exclude_patterns = []

# -- Options for HTML output -------------------------------------------------

html_theme = 'alabaster'
