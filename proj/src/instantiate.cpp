#include "sparsecl/lambda_select.hpp"
#include "sparsecl/sparse_solver.hpp"

namespace sparsecl {

template SolutionPath<double> solution_path(const ScoreCovariance<double>&, double, const SolverOptions&);
template Selection<double> select_lambda(const SolutionPath<double>&, const ScoreCovariance<double>&,
                                         const SelectionRule&, std::span<const double>);

}  // namespace sparsecl
