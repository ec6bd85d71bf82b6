# emodur documentation build configuration file.
import os
import sys

sys.path.insert(0, os.path.abspath(".."))

import emodur  # noqa: E402

extensions = ["sphinx.ext.autodoc", "sphinx.ext.viewcode", "sphinx.ext.napoleon"]
templates_path = ["_templates"]
source_suffix = ".rst"
master_doc = "index"

project = "emodur"
copyright = "2026, emodur developers"
author = "emodur developers"
version = emodur.__version__
release = version

language = "en"
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"
todo_include_todos = False

html_theme = "sphinx_rtd_theme"
html_static_path = ["_static"]
htmlhelp_basename = "emodurdoc"

latex_documents = [
    (master_doc, "emodur.tex", "emodur Documentation", author, "manual"),
]
man_pages = [(master_doc, "emodur", "emodur Documentation", [author], 1)]
texinfo_documents = [
    (
        master_doc,
        "emodur",
        "emodur Documentation",
        author,
        "emodur",
        "Emotion-conditioned duration modeling over speech units.",
        "Miscellaneous",
    ),
]
