# Reading data package
