# Empty __init__.py file to make this a Python package
