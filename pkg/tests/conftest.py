from hypothesis import settings

settings.register_profile("hats", deadline=None, derandomize=True)
settings.load_profile("hats")
