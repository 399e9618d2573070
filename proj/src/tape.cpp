#include "ciseq/tape.hpp"

#include <cmath>

#include "ciseq/common.hpp"

namespace ciseq::ad {
namespace {

void check_same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape,
          "tape: operands must come from the same tape");
}

void check_same_shape(Var a, Var b) {
  require(a.tape->val(a).rows() == b.tape->val(b).rows() &&
              a.tape->val(a).cols() == b.tape->val(b).cols(),
          "tape: shape mismatch");
}

}  // namespace

Var Tape::leaf(const Mat& value) {
  nodes_.push_back(Node{value, Mat(), nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat&& value) {
  nodes_.push_back(Node{std::move(value), Mat(), nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::emit(Mat value, std::function<void(Tape&)> back) {
  nodes_.push_back(Node{std::move(value), Mat(), std::move(back)});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::val(Var v) const {
  require(v.tape == this, "tape: foreign handle");
  return nodes_[static_cast<size_t>(v.idx)].val;
}

bool Tape::has_grad(int idx) const {
  return nodes_[static_cast<size_t>(idx)].grad.size() > 0;
}

Mat& Tape::grad_ref(int idx) {
  Node& n = nodes_[static_cast<size_t>(idx)];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::accumulate(int idx, const Mat& g) { grad_ref(idx) += g; }

Mat Tape::grad(Var v) const {
  require(v.tape == this, "tape: foreign handle");
  const Node& n = nodes_[static_cast<size_t>(v.idx)];
  if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

void Tape::backward(Var target) {
  require(target.tape == this, "tape: foreign handle");
  const Node& t = nodes_[static_cast<size_t>(target.idx)];
  require(t.val.rows() == 1 && t.val.cols() == 1,
          "tape: backward target must be 1x1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_ref(target.idx)(0, 0) = 1.0;
  for (int i = target.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back && n.grad.size() > 0) n.back(*this);
  }
}

// ---------------------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a) + t.val(b), [ia, ib, io](Tape& tp) {
    tp.accumulate(ia, tp.grad_ref(io));
    tp.accumulate(ib, tp.grad_ref(io));
  });
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a) - t.val(b), [ia, ib, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g);
    tp.accumulate(ib, -g);
  });
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  check_same_shape(a, b);
  Tape& t = *a.tape;
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).cwiseProduct(t.val(b)), [ia, ib, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g.cwiseProduct(tp.val_at(ib)));
    tp.accumulate(ib, g.cwiseProduct(tp.val_at(ia)));
  });
}

Var add_rowvec(Var a, Var r) {
  check_same_tape(a, r);
  Tape& t = *a.tape;
  require(t.val(r).rows() == 1 && t.val(r).cols() == t.val(a).cols(),
          "add_rowvec: r must be 1 x cols(a)");
  const int ia = a.idx, ir = r.idx, io = static_cast<int>(t.size());
  Mat out = t.val(a);
  out.rowwise() += t.val(r).row(0);
  return t.emit(std::move(out), [ia, ir, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g);
    tp.accumulate(ir, g.colwise().sum());
  });
}

Var mul_rowvec(Var a, Var r) {
  check_same_tape(a, r);
  Tape& t = *a.tape;
  require(t.val(r).rows() == 1 && t.val(r).cols() == t.val(a).cols(),
          "mul_rowvec: r must be 1 x cols(a)");
  const int ia = a.idx, ir = r.idx, io = static_cast<int>(t.size());
  Mat out = t.val(a);
  out.array().rowwise() *= t.val(r).row(0).array();
  return t.emit(std::move(out), [ia, ir, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    Mat ga = g;
    ga.array().rowwise() *= tp.val_at(ir).row(0).array();
    tp.accumulate(ia, ga);
    tp.accumulate(ir, g.cwiseProduct(tp.val_at(ia)).colwise().sum());
  });
}

Var add_colvec(Var a, Var c) {
  check_same_tape(a, c);
  Tape& t = *a.tape;
  require(t.val(c).cols() == 1 && t.val(c).rows() == t.val(a).rows(),
          "add_colvec: c must be rows(a) x 1");
  const int ia = a.idx, ic = c.idx, io = static_cast<int>(t.size());
  Mat out = t.val(a);
  out.colwise() += t.val(c).col(0);
  return t.emit(std::move(out), [ia, ic, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g);
    tp.accumulate(ic, g.rowwise().sum());
  });
}

Var mul_colvec(Var a, Var c) {
  check_same_tape(a, c);
  Tape& t = *a.tape;
  require(t.val(c).cols() == 1 && t.val(c).rows() == t.val(a).rows(),
          "mul_colvec: c must be rows(a) x 1");
  const int ia = a.idx, ic = c.idx, io = static_cast<int>(t.size());
  Mat out = t.val(a);
  out.array().colwise() *= t.val(c).col(0).array();
  return t.emit(std::move(out), [ia, ic, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    Mat ga = g;
    ga.array().colwise() *= tp.val_at(ic).col(0).array();
    tp.accumulate(ia, ga);
    tp.accumulate(ic, g.cwiseProduct(tp.val_at(ia)).rowwise().sum());
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a) * s, [ia, io, s](Tape& tp) {
    tp.accumulate(ia, tp.grad_ref(io) * s);
  });
}

Var add_const(Var a, const Mat& c) {
  Tape& t = *a.tape;
  require(c.rows() == t.val(a).rows() && c.cols() == t.val(a).cols(),
          "add_const: shape mismatch");
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a) + c, [ia, io](Tape& tp) {
    tp.accumulate(ia, tp.grad_ref(io));
  });
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  require(t.val(a).cols() == t.val(b).rows(), "matmul: inner dim mismatch");
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a) * t.val(b), [ia, ib, io](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g * tp.val_at(ib).transpose());
    tp.accumulate(ib, tp.val_at(ia).transpose() * g);
  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).transpose(), [ia, io](Tape& tp) {
    tp.accumulate(ia, tp.grad_ref(io).transpose());
  });
}

Var concat_cols(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  require(t.val(a).rows() == t.val(b).rows(), "concat_cols: row mismatch");
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  const long ca = t.val(a).cols(), cb = t.val(b).cols();
  Mat out(t.val(a).rows(), ca + cb);
  out.leftCols(ca) = t.val(a);
  out.rightCols(cb) = t.val(b);
  return t.emit(std::move(out), [ia, ib, io, ca, cb](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g.leftCols(ca));
    tp.accumulate(ib, g.rightCols(cb));
  });
}

Var concat_rows(Var a, Var b) {
  check_same_tape(a, b);
  Tape& t = *a.tape;
  require(t.val(a).cols() == t.val(b).cols(), "concat_rows: col mismatch");
  const int ia = a.idx, ib = b.idx, io = static_cast<int>(t.size());
  const long ra = t.val(a).rows(), rb = t.val(b).rows();
  Mat out(ra + rb, t.val(a).cols());
  out.topRows(ra) = t.val(a);
  out.bottomRows(rb) = t.val(b);
  return t.emit(std::move(out), [ia, ib, io, ra, rb](Tape& tp) {
    const Mat g = tp.grad_ref(io);
    tp.accumulate(ia, g.topRows(ra));
    tp.accumulate(ib, g.bottomRows(rb));
  });
}

Var slice_cols(Var a, int offset, int n) {
  Tape& t = *a.tape;
  require(offset >= 0 && n >= 0 && offset + n <= t.val(a).cols(),
          "slice_cols: out of range");
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).middleCols(offset, n), [ia, io, offset, n](Tape& tp) {
    Mat g = Mat::Zero(tp.val_at(ia).rows(), tp.val_at(ia).cols());
    g.middleCols(offset, n) = tp.grad_ref(io);
    tp.accumulate(ia, g);
  });
}

Var slice_rows(Var a, int offset, int n) {
  Tape& t = *a.tape;
  require(offset >= 0 && n >= 0 && offset + n <= t.val(a).rows(),
          "slice_rows: out of range");
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).middleRows(offset, n), [ia, io, offset, n](Tape& tp) {
    Mat g = Mat::Zero(tp.val_at(ia).rows(), tp.val_at(ia).cols());
    g.middleRows(offset, n) = tp.grad_ref(io);
    tp.accumulate(ia, g);
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Mat& tab = t.val(table);
  for (int id : ids)
    require(id >= 0 && id < tab.rows(), "gather_rows: id out of range");
  const int it = table.idx, io = static_cast<int>(t.size());
  Mat out(static_cast<long>(ids.size()), tab.cols());
  for (size_t i = 0; i < ids.size(); ++i)
    out.row(static_cast<long>(i)) = tab.row(ids[i]);
  return t.emit(std::move(out), [it, io, ids](Tape& tp) {
    const Mat& g = tp.grad_ref(io);
    Mat& gt = tp.grad_ref(it);
    for (size_t i = 0; i < ids.size(); ++i)
      gt.row(ids[i]) += g.row(static_cast<long>(i));
  });
}

Var pick_per_row(Var a, const std::vector<int>& cols) {
  Tape& t = *a.tape;
  const Mat& v = t.val(a);
  require(static_cast<long>(cols.size()) == v.rows(),
          "pick_per_row: one column index per row required");
  for (int c : cols)
    require(c >= 0 && c < v.cols(), "pick_per_row: column out of range");
  const int ia = a.idx, io = static_cast<int>(t.size());
  Mat out(v.rows(), 1);
  for (long r = 0; r < v.rows(); ++r) out(r, 0) = v(r, cols[static_cast<size_t>(r)]);
  return t.emit(std::move(out), [ia, io, cols](Tape& tp) {
    const Mat& g = tp.grad_ref(io);
    Mat& ga = tp.grad_ref(ia);
    for (long r = 0; r < g.rows(); ++r)
      ga(r, cols[static_cast<size_t>(r)]) += g(r, 0);
  });
}

// ---------------------------------------------------------------------------

Var tanh_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).array().tanh().matrix(), [ia, io](Tape& tp) {
    const Mat& y = tp.val_at(io);
    tp.accumulate(
        ia, tp.grad_ref(io).cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var gelu(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (long i = 0; i < x.size(); ++i) {
    const double v = x(i);
    y(i) = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  }
  return t.emit(std::move(y), [ia, io](Tape& tp) {
    const Mat& x2 = tp.val_at(ia);
    const Mat& g = tp.grad_ref(io);
    Mat d(x2.rows(), x2.cols());
    const double inv_sqrt_2pi = 0.3989422804014326779399460599344;
    for (long i = 0; i < x2.size(); ++i) {
      const double v = x2(i);
      d(i) = 0.5 * (1.0 + std::erf(v * M_SQRT1_2)) +
             v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
    }
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

Var exp_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).array().exp().matrix(), [ia, io](Tape& tp) {
    tp.accumulate(ia, tp.grad_ref(io).cwiseProduct(tp.val_at(io)));
  });
}

Var log_(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).array().log().matrix(), [ia, io](Tape& tp) {
    tp.accumulate(ia,
                  tp.grad_ref(io).cwiseQuotient(tp.val_at(ia)));
  });
}

Var square(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).array().square().matrix(), [ia, io](Tape& tp) {
    tp.accumulate(ia, 2.0 * tp.grad_ref(io).cwiseProduct(tp.val_at(ia)));
  });
}

Var powc(Var a, double p, double eps) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (long i = 0; i < x.size(); ++i) y(i) = std::pow(x(i) + eps, p);
  return t.emit(std::move(y), [ia, io, p, eps](Tape& tp) {
    const Mat& x2 = tp.val_at(ia);
    const Mat& g = tp.grad_ref(io);
    Mat d(x2.rows(), x2.cols());
    for (long i = 0; i < x2.size(); ++i) {
      const double base = x2(i) + eps;
      d(i) = base > 0.0 ? p * std::pow(base, p - 1.0) : 0.0;
    }
    tp.accumulate(ia, g.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------

Var softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(std::move(y), [ia, io](Tape& tp) {
    const Mat& yv = tp.val_at(io);
    const Mat& g = tp.grad_ref(io);
    Mat d(yv.rows(), yv.cols());
    for (long r = 0; r < yv.rows(); ++r) {
      const double dot = g.row(r).dot(yv.row(r));
      d.row(r) = yv.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    tp.accumulate(ia, d);
  });
}

Var log_softmax_rows(Var a) {
  Tape& t = *a.tape;
  const Mat& x = t.val(a);
  Mat y(x.rows(), x.cols());
  for (long r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = std::log((x.row(r).array() - m).exp().sum()) + m;
    y.row(r) = x.row(r).array() - lse;
  }
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(std::move(y), [ia, io](Tape& tp) {
    const Mat& y2 = tp.val_at(io);
    const Mat& g = tp.grad_ref(io);
    Mat d(y2.rows(), y2.cols());
    for (long r = 0; r < y2.rows(); ++r) {
      const double gsum = g.row(r).sum();
      d.row(r) = g.row(r) - gsum * y2.row(r).array().exp().matrix();
    }
    tp.accumulate(ia, d);
  });
}

Var rowwise_sum(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).rowwise().sum(), [ia, io](Tape& tp) {
    const Mat& g = tp.grad_ref(io);
    tp.accumulate(ia, g * Mat::Ones(1, tp.val_at(ia).cols()));
  });
}

Var colwise_sum(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  return t.emit(t.val(a).colwise().sum(), [ia, io](Tape& tp) {
    const Mat& g = tp.grad_ref(io);
    tp.accumulate(ia, Mat::Ones(tp.val_at(ia).rows(), 1) * g);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape;
  const int ia = a.idx, io = static_cast<int>(t.size());
  Mat s(1, 1);
  s(0, 0) = t.val(a).sum();
  return t.emit(std::move(s), [ia, io](Tape& tp) {
    const double g = tp.grad_ref(io)(0, 0);
    tp.accumulate(ia, Mat::Constant(tp.val_at(ia).rows(),
                                    tp.val_at(ia).cols(), g));
  });
}

Var mean_all(Var a) {
  Tape& t = *a.tape;
  const double n = static_cast<double>(t.val(a).size());
  return scale(sum_all(a), 1.0 / n);
}

// ---------------------------------------------------------------------------

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
  Tape& t = *a.tape;
  const double c = static_cast<double>(t.val(a).cols());
  Var m = scale(rowwise_sum(a), 1.0 / c);                 // Rx1 means
  Var centered = add_colvec(a, scale(m, -1.0));
  Var v = scale(rowwise_sum(square(centered)), 1.0 / c);  // Rx1 variances
  Var inv = powc(v, -0.5, eps);
  Var normed = mul_colvec(centered, inv);
  return add_rowvec(mul_rowvec(normed, gamma), beta);
}

Var cross_entropy_mean(Var logits, const std::vector<int>& targets) {
  Var lsm = log_softmax_rows(logits);
  Var picked = pick_per_row(lsm, targets);
  return scale(mean_all(picked), -1.0);
}

Var sum_squares(Var a) { return sum_all(square(a)); }

Var l2_distance(Var a, Var b) {
  return powc(sum_squares(sub(a, b)), 0.5, 0.0);
}

}  // namespace ciseq::ad
