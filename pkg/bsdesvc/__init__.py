# makes bsdesvc a Python package
