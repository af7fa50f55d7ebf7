# Autodiff package
from autodiff.graph import Graph, Node, Tape, forward, backward
from autodiff.gradcheck import grad_check
