// One-sided Jacobi singular values. Small dense problems only (the rank
// tests work on matrices no larger than a few hundred rows and a handful of
// columns), where Jacobi is simple, accurate, and fast enough.
#pragma once

#include <Eigen/Dense>

namespace conserva {

// Singular values of a (any shape), descending. Plain one-sided Jacobi on
// the column space with relative off-diagonal tolerance rel_tol.
Eigen::VectorXd singular_values(const Eigen::MatrixXd& a,
                                double rel_tol = 1e-12);

}  // namespace conserva
