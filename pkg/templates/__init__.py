# Templates package
