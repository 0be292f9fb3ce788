# makes handlers a Python package
