#include "nerfrm/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace nerfrm::ad {

namespace {

using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

constexpr int64_t kElemChunk = 1 << 14;
constexpr int64_t kGemmRowChunk = 256;

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double stable_softplus(double x) {
  // x + log(1+e^-x) for positive x avoids overflow of e^x
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// broadcast kinds for binary elementwise ops
enum class Bcast { kSame, kScalar, kCol, kRow };

Bcast bcast_kind(const Array& a, const Array& b) {
  if (a.same_shape(b)) return Bcast::kSame;
  if (b.rows == 1 && b.cols == 1) return Bcast::kScalar;
  if (b.cols == 1 && b.rows == a.rows) return Bcast::kCol;
  if (b.rows == 1 && b.cols == a.cols) return Bcast::kRow;
  NERFRM_CHECK(false, "shape mismatch: [" << a.rows << "," << a.cols << "] vs [" << b.rows << ","
                                          << b.cols << "]");
}

template <typename F>
void binary_forward(const Array& a, const Array& b, Array& out, F f) {
  out = Array(a.rows, a.cols);
  Bcast k = bcast_kind(a, b);
  const int64_t c = a.cols;
  switch (k) {
    case Bcast::kSame:
      parallel_for(a.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out.v[i] = f(a.v[i], b.v[i]);
      });
      break;
    case Bcast::kScalar: {
      double s = b.v[0];
      parallel_for(a.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) out.v[i] = f(a.v[i], s);
      });
      break;
    }
    case Bcast::kCol:
      parallel_for(a.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, c)),
                   [&](int64_t lo, int64_t hi) {
                     for (int64_t r = lo; r < hi; ++r) {
                       double s = b.v[r];
                       for (int64_t j = 0; j < c; ++j)
                         out.v[r * c + j] = f(a.v[r * c + j], s);
                     }
                   });
      break;
    case Bcast::kRow:
      parallel_for(a.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, c)),
                   [&](int64_t lo, int64_t hi) {
                     for (int64_t r = lo; r < hi; ++r)
                       for (int64_t j = 0; j < c; ++j)
                         out.v[r * c + j] = f(a.v[r * c + j], b.v[j]);
                   });
      break;
  }
}

// Reduce a full-shaped gradient to the (possibly broadcast) shape of b.
Array reduce_to_shape(const Array& g, int64_t rows, int64_t cols) {
  if (g.rows == rows && g.cols == cols) return g;
  Array out(rows, cols);
  if (rows == 1 && cols == 1) {
    double s = 0.0;
    for (double x : g.v) s += x;
    out.v[0] = s;
  } else if (cols == 1) {
    for (int64_t r = 0; r < g.rows; ++r) {
      double s = 0.0;
      for (int64_t j = 0; j < g.cols; ++j) s += g.at(r, j);
      out.v[r] = s;
    }
  } else {
    for (int64_t j = 0; j < g.cols; ++j) {
      double s = 0.0;
      for (int64_t r = 0; r < g.rows; ++r) s += g.at(r, j);
      out.v[j] = s;
    }
  }
  return out;
}

// C = A * B, row-chunked. Each output row is produced by exactly one chunk so
// the result is identical under any worker count.
void gemm(const Array& a, const Array& b, Array& c) {
  c = Array(a.rows, b.cols);
  ConstMatMap bm(b.data(), b.rows, b.cols);
  parallel_for(a.rows, kGemmRowChunk, [&](int64_t lo, int64_t hi) {
    ConstMatMap am(a.data() + lo * a.cols, hi - lo, a.cols);
    MatMap cm(c.data() + lo * b.cols, hi - lo, b.cols);
    cm.noalias() = am * bm;
  });
}

// C = A^T * B ([K,R]x[R,C] reduction over rows). Parallel chunks produce
// partial products which are combined serially in chunk order.
void gemm_at_b(const Array& a, const Array& b, Array& c) {
  const int64_t nchunks = (a.rows + kGemmRowChunk - 1) / kGemmRowChunk;
  std::vector<Array> partial(static_cast<size_t>(nchunks));
  parallel_for(a.rows, kGemmRowChunk, [&](int64_t lo, int64_t hi) {
    int64_t ci = lo / kGemmRowChunk;
    partial[ci] = Array(a.cols, b.cols);
    ConstMatMap am(a.data() + lo * a.cols, hi - lo, a.cols);
    ConstMatMap bm(b.data() + lo * b.cols, hi - lo, b.cols);
    MatMap pm(partial[ci].data(), a.cols, b.cols);
    pm.noalias() = am.transpose() * bm;
  });
  c = Array(a.cols, b.cols);
  for (int64_t ci = 0; ci < nchunks; ++ci)
    for (int64_t i = 0; i < c.size(); ++i) c.v[i] += partial[ci].v[i];
}

// C = A * B^T
void gemm_a_bt(const Array& a, const Array& b, Array& c) {
  c = Array(a.rows, b.rows);
  ConstMatMap bm(b.data(), b.rows, b.cols);
  parallel_for(a.rows, kGemmRowChunk, [&](int64_t lo, int64_t hi) {
    ConstMatMap am(a.data() + lo * a.cols, hi - lo, a.cols);
    MatMap cm(c.data() + lo * b.rows, hi - lo, b.rows);
    cm.noalias() = am * bm.transpose();
  });
}

}  // namespace

const Tape::Node& Tape::node(Var x) const {
  NERFRM_CHECK(x.tape == this && x.id >= 0 && x.id < static_cast<int32_t>(nodes_.size()),
               "Var does not belong to this tape");
  return nodes_[x.id];
}

Var Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int32_t>(nodes_.size() - 1)};
}

Var Tape::leaf(Array value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(value);
  n.needs_grad = requires_grad;
  return push(std::move(n));
}

Var Tape::unary(Op op, Var a, const std::function<void(const Array&, Array&)>& fwd) {
  const Node& na = node(a);
  Node n;
  n.op = op;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  fwd(na.val, n.val);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  binary_forward(na.val, nb.val, n.val, [](double x, double y) { return x + y; });
  return push(std::move(n));
}

Var Tape::sub(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kSub;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  binary_forward(na.val, nb.val, n.val, [](double x, double y) { return x - y; });
  return push(std::move(n));
}

Var Tape::mul(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  binary_forward(na.val, nb.val, n.val, [](double x, double y) { return x * y; });
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  NERFRM_CHECK(na.val.cols == nb.val.rows, "matmul inner dimensions differ: " << na.val.cols
                                                                              << " vs " << nb.val.rows);
  Node n;
  n.op = Op::kMatMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  gemm(na.val, nb.val, n.val);
  return push(std::move(n));
}

Var Tape::neg(Var a) {
  return unary(Op::kNeg, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = -x.v[i];
    });
  });
}

Var Tape::exp(Var a) {
  return unary(Op::kExp, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = std::exp(x.v[i]);
    });
  });
}

Var Tape::relu(Var a) {
  return unary(Op::kRelu, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = x.v[i] > 0.0 ? x.v[i] : 0.0;
    });
  });
}

Var Tape::sigmoid(Var a) {
  return unary(Op::kSigmoid, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = stable_sigmoid(x.v[i]);
    });
  });
}

Var Tape::softplus(Var a) {
  return unary(Op::kSoftplus, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = stable_softplus(x.v[i]);
    });
  });
}

Var Tape::abs(Var a) {
  return unary(Op::kAbs, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = std::fabs(x.v[i]);
    });
  });
}

Var Tape::square(Var a) {
  return unary(Op::kSquare, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      for (int64_t i = lo; i < hi; ++i) out.v[i] = x.v[i] * x.v[i];
    });
  });
}

Var Tape::sin(Var a) {
  return unary(Op::kSin, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    for (int64_t i = 0; i < x.size(); ++i) out.v[i] = std::sin(x.v[i]);
  });
}

Var Tape::cos(Var a) {
  return unary(Op::kCos, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    for (int64_t i = 0; i < x.size(); ++i) out.v[i] = std::cos(x.v[i]);
  });
}

Var Tape::sum(Var a) {
  return unary(Op::kSum, a, [](const Array& x, Array& out) {
    // fixed-chunk partials combined in order, deterministic for any worker count
    const int64_t nchunks = (x.size() + kElemChunk - 1) / kElemChunk;
    std::vector<double> partial(static_cast<size_t>(std::max<int64_t>(1, nchunks)), 0.0);
    parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
      double s = 0.0;
      for (int64_t i = lo; i < hi; ++i) s += x.v[i];
      partial[lo / kElemChunk] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    out = Array::scalar(total);
  });
}

Var Tape::row_sum(Var a) {
  return unary(Op::kRowSum, a, [](const Array& x, Array& out) {
    out = Array(x.rows, 1);
    parallel_for(x.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, x.cols)),
                 [&](int64_t lo, int64_t hi) {
                   for (int64_t r = lo; r < hi; ++r) {
                     double s = 0.0;
                     for (int64_t j = 0; j < x.cols; ++j) s += x.at(r, j);
                     out.v[r] = s;
                   }
                 });
  });
}

Var Tape::cumsum_exclusive_rows(Var a) {
  return unary(Op::kCumsumExRows, a, [](const Array& x, Array& out) {
    out = Array(x.rows, x.cols);
    parallel_for(x.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, x.cols)),
                 [&](int64_t lo, int64_t hi) {
                   for (int64_t r = lo; r < hi; ++r) {
                     double acc = 0.0;
                     for (int64_t j = 0; j < x.cols; ++j) {
                       out.at(r, j) = acc;
                       acc += x.at(r, j);
                     }
                   }
                 });
  });
}

Var Tape::segment_sum_rows(Var a, int64_t g) {
  const Node& na = node(a);
  NERFRM_CHECK(g >= 1 && na.val.rows % g == 0,
               "segment_sum_rows: rows " << na.val.rows << " not divisible by group " << g);
  Node n;
  n.op = Op::kSegmentSumRows;
  n.a = a.id;
  n.group = g;
  n.needs_grad = na.needs_grad;
  const Array& x = na.val;
  n.val = Array(x.rows / g, x.cols);
  Array& out = n.val;
  parallel_for(out.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, x.cols * g)),
               [&](int64_t lo, int64_t hi) {
                 for (int64_t r = lo; r < hi; ++r)
                   for (int64_t k = 0; k < g; ++k)
                     for (int64_t j = 0; j < x.cols; ++j)
                       out.at(r, j) += x.at(r * g + k, j);
               });
  return push(std::move(n));
}

Var Tape::repeat_each_row(Var a, int64_t g) {
  const Node& na = node(a);
  NERFRM_CHECK(g >= 1, "repeat_each_row needs positive repeat count");
  Node n;
  n.op = Op::kRepeatEachRow;
  n.a = a.id;
  n.group = g;
  n.needs_grad = na.needs_grad;
  const Array& x = na.val;
  n.val = Array(x.rows * g, x.cols);
  for (int64_t r = 0; r < x.rows; ++r)
    for (int64_t k = 0; k < g; ++k)
      std::copy(x.v.begin() + r * x.cols, x.v.begin() + (r + 1) * x.cols,
                n.val.v.begin() + (r * g + k) * x.cols);
  return push(std::move(n));
}

Var Tape::concat_cols(Var a, Var b) {
  const Node &na = node(a), &nb = node(b);
  NERFRM_CHECK(na.val.rows == nb.val.rows, "concat_cols row mismatch");
  Node n;
  n.op = Op::kConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = na.needs_grad || nb.needs_grad;
  const Array &x = na.val, &y = nb.val;
  n.val = Array(x.rows, x.cols + y.cols);
  Array& out = n.val;
  parallel_for(x.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, out.cols)),
               [&](int64_t lo, int64_t hi) {
                 for (int64_t r = lo; r < hi; ++r) {
                   std::copy(x.v.begin() + r * x.cols, x.v.begin() + (r + 1) * x.cols,
                             out.v.begin() + r * out.cols);
                   std::copy(y.v.begin() + r * y.cols, y.v.begin() + (r + 1) * y.cols,
                             out.v.begin() + r * out.cols + x.cols);
                 }
               });
  return push(std::move(n));
}

Var Tape::gather_rows(Var a, std::vector<int32_t> idx) {
  const Node& na = node(a);
  for (int32_t i : idx)
    NERFRM_CHECK(i >= 0 && i < na.val.rows, "gather_rows index " << i << " out of range");
  Node n;
  n.op = Op::kGatherRows;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.idx = std::move(idx);
  const Array& x = na.val;
  n.val = Array(static_cast<int64_t>(n.idx.size()), x.cols);
  for (size_t r = 0; r < n.idx.size(); ++r)
    std::copy(x.v.begin() + n.idx[r] * x.cols, x.v.begin() + (n.idx[r] + 1) * x.cols,
              n.val.v.begin() + static_cast<int64_t>(r) * x.cols);
  return push(std::move(n));
}

Var Tape::reshape(Var a, int64_t rows, int64_t cols) {
  const Node& na = node(a);
  NERFRM_CHECK(rows * cols == na.val.size(), "reshape element count mismatch");
  Node n;
  n.op = Op::kReshape;
  n.a = a.id;
  n.needs_grad = na.needs_grad;
  n.val = na.val;
  n.val.rows = rows;
  n.val.cols = cols;
  return push(std::move(n));
}

Var Tape::stop_gradient(Var a) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kStopGrad;
  n.a = a.id;
  n.needs_grad = false;  // nothing upstream of this node receives gradient
  n.val = na.val;
  return push(std::move(n));
}

Var Tape::scale(Var a, double s) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = na.needs_grad;
  const Array& x = na.val;
  n.val = Array(x.rows, x.cols);
  parallel_for(x.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) n.val.v[i] = s * x.v[i];
  });
  return push(std::move(n));
}

Var Tape::add_scalar(Var a, double s) {
  const Node& na = node(a);
  Node n;
  n.op = Op::kAddScalar;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = na.needs_grad;
  const Array& x = na.val;
  n.val = Array(x.rows, x.cols);
  for (int64_t i = 0; i < x.size(); ++i) n.val.v[i] = x.v[i] + s;
  return push(std::move(n));
}

Var Tape::distortion_rows(Var w, Array bin_edges) {
  const Node& nw = node(w);
  const Array& wv = nw.val;
  NERFRM_CHECK(bin_edges.rows == wv.rows && bin_edges.cols == wv.cols + 1,
               "distortion_rows: edges must be [B,K+1]");
  Node n;
  n.op = Op::kDistortionRows;
  n.a = w.id;
  n.needs_grad = nw.needs_grad;
  n.aux = std::move(bin_edges);
  const Array& e = n.aux;
  const int64_t K = wv.cols;
  n.val = Array(wv.rows, 1);
  Array& out = n.val;
  parallel_for(wv.rows, std::max<int64_t>(1, 4096 / std::max<int64_t>(1, K * K)),
               [&](int64_t lo, int64_t hi) {
                 for (int64_t r = lo; r < hi; ++r) {
                   const double* wr = wv.data() + r * K;
                   const double* er = e.data() + r * (K + 1);
                   double pair_term = 0.0, self_term = 0.0;
                   for (int64_t i = 0; i < K; ++i) {
                     double mi = 0.5 * (er[i] + er[i + 1]);
                     for (int64_t j = 0; j < K; ++j) {
                       double mj = 0.5 * (er[j] + er[j + 1]);
                       pair_term += wr[i] * wr[j] * std::fabs(mi - mj);
                     }
                     self_term += wr[i] * wr[i] * (er[i + 1] - er[i]);
                   }
                   out.v[r] = pair_term + self_term / 3.0;
                 }
               });
  return push(std::move(n));
}

void Tape::accumulate(int32_t id, const Array& g) {
  Array& dst = grads_[id];
  if (dst.size() == 0) {
    dst = g;
    return;
  }
  NERFRM_CHECK(dst.same_shape(g), "gradient shape mismatch during accumulation");
  for (int64_t i = 0; i < g.size(); ++i) dst.v[i] += g.v[i];
}

void Tape::backward(Var loss) {
  const Node& ln = node(loss);
  NERFRM_CHECK(ln.val.rows == 1 && ln.val.cols == 1, "backward requires a scalar loss");
  grads_.assign(nodes_.size(), Array());
  grads_[loss.id] = Array::scalar(1.0);

  for (int32_t id = static_cast<int32_t>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) continue;
    const Array& g = grads_[id];
    if (g.size() == 0) continue;  // node unused by the loss

    auto want = [&](int32_t child) { return child >= 0 && nodes_[child].needs_grad; };

    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        if (want(n.a)) accumulate(n.a, g);
        if (want(n.b)) accumulate(n.b, reduce_to_shape(g, nodes_[n.b].val.rows, nodes_[n.b].val.cols));
        break;
      }
      case Op::kSub: {
        if (want(n.a)) accumulate(n.a, g);
        if (want(n.b)) {
          Array gn(g.rows, g.cols);
          for (int64_t i = 0; i < g.size(); ++i) gn.v[i] = -g.v[i];
          accumulate(n.b, reduce_to_shape(gn, nodes_[n.b].val.rows, nodes_[n.b].val.cols));
        }
        break;
      }
      case Op::kMul: {
        const Array& av = nodes_[n.a].val;
        const Array& bv = nodes_[n.b].val;
        if (want(n.a)) {
          Array ga;
          binary_forward(g, bv, ga, [](double x, double y) { return x * y; });
          accumulate(n.a, ga);
        }
        if (want(n.b)) {
          Array gb;
          binary_forward(g, av, gb, [](double x, double y) { return x * y; });
          accumulate(n.b, reduce_to_shape(gb, bv.rows, bv.cols));
        }
        break;
      }
      case Op::kMatMul: {
        const Array& av = nodes_[n.a].val;
        const Array& bv = nodes_[n.b].val;
        if (want(n.a)) {
          Array ga;
          gemm_a_bt(g, bv, ga);
          accumulate(n.a, ga);
        }
        if (want(n.b)) {
          Array gb;
          gemm_at_b(av, g, gb);
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::kNeg: {
        Array ga(g.rows, g.cols);
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] = -g.v[i];
        accumulate(n.a, ga);
        break;
      }
      case Op::kExp: {
        Array ga(g.rows, g.cols);
        const Array& y = n.val;
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] = g.v[i] * y.v[i];
        accumulate(n.a, ga);
        break;
      }
      case Op::kRelu: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] = x.v[i] >= 0.0 ? g.v[i] : 0.0;
        accumulate(n.a, ga);
        break;
      }
      case Op::kSigmoid: {
        const Array& y = n.val;
        Array ga(g.rows, g.cols);
        parallel_for(g.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) ga.v[i] = g.v[i] * y.v[i] * (1.0 - y.v[i]);
        });
        accumulate(n.a, ga);
        break;
      }
      case Op::kSoftplus: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        parallel_for(g.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) ga.v[i] = g.v[i] * stable_sigmoid(x.v[i]);
        });
        accumulate(n.a, ga);
        break;
      }
      case Op::kAbs: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        for (int64_t i = 0; i < g.size(); ++i)
          ga.v[i] = x.v[i] > 0.0 ? g.v[i] : (x.v[i] < 0.0 ? -g.v[i] : 0.0);
        accumulate(n.a, ga);
        break;
      }
      case Op::kSquare: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        parallel_for(g.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) ga.v[i] = 2.0 * g.v[i] * x.v[i];
        });
        accumulate(n.a, ga);
        break;
      }
      case Op::kSin: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] = g.v[i] * std::cos(x.v[i]);
        accumulate(n.a, ga);
        break;
      }
      case Op::kCos: {
        const Array& x = nodes_[n.a].val;
        Array ga(g.rows, g.cols);
        for (int64_t i = 0; i < g.size(); ++i) ga.v[i] = -g.v[i] * std::sin(x.v[i]);
        accumulate(n.a, ga);
        break;
      }
      case Op::kSum: {
        const Array& x = nodes_[n.a].val;
        accumulate(n.a, Array::full(x.rows, x.cols, g.v[0]));
        break;
      }
      case Op::kRowSum: {
        const Array& x = nodes_[n.a].val;
        Array ga(x.rows, x.cols);
        for (int64_t r = 0; r < x.rows; ++r)
          for (int64_t j = 0; j < x.cols; ++j) ga.at(r, j) = g.v[r];
        accumulate(n.a, ga);
        break;
      }
      case Op::kCumsumExRows: {
        // g_in[r,i] = sum_{j>i} g_out[r,j]
        const Array& x = nodes_[n.a].val;
        Array ga(x.rows, x.cols);
        parallel_for(x.rows, std::max<int64_t>(1, kElemChunk / std::max<int64_t>(1, x.cols)),
                     [&](int64_t lo, int64_t hi) {
                       for (int64_t r = lo; r < hi; ++r) {
                         double acc = 0.0;
                         for (int64_t j = x.cols - 1; j >= 0; --j) {
                           ga.at(r, j) = acc;
                           acc += g.at(r, j);
                         }
                       }
                     });
        accumulate(n.a, ga);
        break;
      }
      case Op::kSegmentSumRows: {
        const Array& x = nodes_[n.a].val;
        Array ga(x.rows, x.cols);
        for (int64_t r = 0; r < x.rows; ++r) {
          int64_t src = r / n.group;
          for (int64_t j = 0; j < x.cols; ++j) ga.at(r, j) = g.at(src, j);
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::kRepeatEachRow: {
        const Array& x = nodes_[n.a].val;
        Array ga(x.rows, x.cols);
        for (int64_t r = 0; r < g.rows; ++r) {
          int64_t dst = r / n.group;
          for (int64_t j = 0; j < x.cols; ++j) ga.at(dst, j) += g.at(r, j);
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::kConcatCols: {
        const Array& av = nodes_[n.a].val;
        const Array& bv = nodes_[n.b].val;
        if (want(n.a)) {
          Array ga(av.rows, av.cols);
          for (int64_t r = 0; r < av.rows; ++r)
            for (int64_t j = 0; j < av.cols; ++j) ga.at(r, j) = g.at(r, j);
          accumulate(n.a, ga);
        }
        if (want(n.b)) {
          Array gb(bv.rows, bv.cols);
          for (int64_t r = 0; r < bv.rows; ++r)
            for (int64_t j = 0; j < bv.cols; ++j) gb.at(r, j) = g.at(r, av.cols + j);
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::kGatherRows: {
        const Array& x = nodes_[n.a].val;
        Array ga(x.rows, x.cols);
        for (size_t r = 0; r < n.idx.size(); ++r)
          for (int64_t j = 0; j < x.cols; ++j)
            ga.at(n.idx[r], j) += g.at(static_cast<int64_t>(r), j);
        accumulate(n.a, ga);
        break;
      }
      case Op::kReshape: {
        const Array& x = nodes_[n.a].val;
        Array ga = g;
        ga.rows = x.rows;
        ga.cols = x.cols;
        accumulate(n.a, ga);
        break;
      }
      case Op::kStopGrad:
        break;  // never reached: needs_grad is false
      case Op::kScale: {
        Array ga(g.rows, g.cols);
        parallel_for(g.size(), kElemChunk, [&](int64_t lo, int64_t hi) {
          for (int64_t i = lo; i < hi; ++i) ga.v[i] = n.scalar * g.v[i];
        });
        accumulate(n.a, ga);
        break;
      }
      case Op::kAddScalar:
        accumulate(n.a, g);
        break;
      case Op::kDistortionRows: {
        const Array& wv = nodes_[n.a].val;
        const Array& e = n.aux;
        const int64_t K = wv.cols;
        Array ga(wv.rows, wv.cols);
        parallel_for(wv.rows, std::max<int64_t>(1, 4096 / std::max<int64_t>(1, K * K)),
                     [&](int64_t lo, int64_t hi) {
                       for (int64_t r = lo; r < hi; ++r) {
                         const double* wr = wv.data() + r * K;
                         const double* er = e.data() + r * (K + 1);
                         double gr = g.v[r];
                         for (int64_t k = 0; k < K; ++k) {
                           double mk = 0.5 * (er[k] + er[k + 1]);
                           double s = 0.0;
                           for (int64_t j = 0; j < K; ++j) {
                             double mj = 0.5 * (er[j] + er[j + 1]);
                             s += wr[j] * std::fabs(mk - mj);
                           }
                           ga.at(r, k) = gr * (2.0 * s + (2.0 / 3.0) * wr[k] * (er[k + 1] - er[k]));
                         }
                       }
                     });
        accumulate(n.a, ga);
        break;
      }
    }
  }
}

const Array& Tape::value(Var x) const { return node(x).val; }

Array Tape::grad(Var x) const {
  const Node& n = node(x);
  if (grads_.size() == nodes_.size() && grads_[x.id].size() > 0) return grads_[x.id];
  return Array(n.val.rows, n.val.cols);
}

bool Tape::requires_grad(Var x) const { return node(x).needs_grad; }

double grad_check(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                  const std::vector<Array>& xs, double eps) {
  NERFRM_CHECK(eps > 1e-7 && eps < 1e-2, "grad_check eps out of supported range");

  auto eval = [&](const std::vector<Array>& pts) {
    Tape t;
    std::vector<Var> leaves;
    leaves.reserve(pts.size());
    for (const auto& a : pts) leaves.push_back(t.leaf(a, false));
    Var out = build(t, leaves);
    NERFRM_CHECK(t.value(out).size() == 1, "grad_check function must be scalar");
    return t.value(out).v[0];
  };

  Tape t;
  std::vector<Var> leaves;
  for (const auto& a : xs) leaves.push_back(t.leaf(a, true));
  Var loss = build(t, leaves);
  NERFRM_CHECK(t.value(loss).size() == 1, "grad_check function must be scalar");
  t.backward(loss);

  double max_err = 0.0;
  std::vector<Array> pts = xs;
  for (size_t li = 0; li < xs.size(); ++li) {
    Array analytic = t.grad(leaves[li]);
    for (int64_t i = 0; i < xs[li].size(); ++i) {
      double orig = pts[li].v[i];
      pts[li].v[i] = orig + eps;
      double fp = eval(pts);
      pts[li].v[i] = orig - eps;
      double fm = eval(pts);
      pts[li].v[i] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) return INFINITY;
      double fd = (fp - fm) / (2.0 * eps);
      double err = std::fabs(analytic.v[i] - fd) / std::max(1.0, std::fabs(analytic.v[i]));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace nerfrm::ad
