#include "aspen/tensor.hpp"

#include <Eigen/Core>

#include <sstream>

namespace aspen {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << ")";
    return os.str();
}

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using MapC = Eigen::Map<const RowMat>;

void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          double alpha, const double* a, const double* b, double beta, double* c) {
    MapC ma(a, trans_a ? k : m, trans_a ? m : k);
    MapC mb(b, trans_b ? n : k, trans_b ? k : n);
    MapM mc(c, m, n);
    if (beta == 0.0)
        mc.setZero();
    else if (beta != 1.0)
        mc *= beta;
    if (trans_a && trans_b)
        mc.noalias() += alpha * (ma.transpose() * mb.transpose());
    else if (trans_a)
        mc.noalias() += alpha * (ma.transpose() * mb);
    else if (trans_b)
        mc.noalias() += alpha * (ma * mb.transpose());
    else
        mc.noalias() += alpha * (ma * mb);
}

}  // namespace aspen
