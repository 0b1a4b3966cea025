#pragma once

// Build-internal pieces of the reverse-mode engine shared with the tree
// trainer. Not installed.

#include "ndthash/gradient.hpp"

namespace ndthash::internal {

double impurity_derivative(Impurity kind, double f);

// Reverse pass through a dense stack. delta arrives as dL/d(stack output);
// d_input, when non-null, receives dL/d(stack input).
StackGrad backprop_stack(const std::vector<DenseLayer>& layers, const ForwardPass& fp,
                         Matrix delta, Matrix* d_input);

void add_l2_gradient(const std::vector<DenseLayer>& layers, StackGrad& grad,
                     double lambda);

}  // namespace ndthash::internal
