#pragma once

// Black-box intrusion detectors. After training, callers only see predict()
// and evaluate_nids(); the fitted parameters stay private to NidsModel.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <list>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "attackgan/adam.hpp"
#include "attackgan/checkpoint.hpp"
#include "attackgan/dataset.hpp"

namespace attackgan {

enum class NidsKind : std::uint8_t { mlp = 0, svm = 1, dt = 2, lr = 3 };

inline std::string_view to_string(NidsKind kind) {
  switch (kind) {
    case NidsKind::mlp: return "mlp";
    case NidsKind::svm: return "svm";
    case NidsKind::dt: return "dt";
    case NidsKind::lr: return "lr";
  }
  return "unknown";
}

inline NidsKind nids_kind_from_string(std::string_view name) {
  if (name == "mlp") return NidsKind::mlp;
  if (name == "svm") return NidsKind::svm;
  if (name == "dt") return NidsKind::dt;
  if (name == "lr") return NidsKind::lr;
  throw Error("nids", "unknown NIDS kind '" + std::string(name) + "' (expected mlp, svm, dt or lr)");
}

struct FeatureVector {
  std::vector<double> values;
  std::size_t source_packet_id = 0;
};

/// Pure, deterministic packet -> feature mapping, identified by `id` so a
/// persisted model can refuse data prepared differently.
struct FeatureExtractor {
  std::string id;
  std::function<FeatureVector(const NormalizedPacket&, std::size_t)> extract;
};

inline FeatureVector extract_features(const NormalizedPacket& pkt, std::size_t packet_id = 0) {
  FeatureVector fv;
  fv.source_packet_id = packet_id;
  fv.values.resize(pkt.length());
  for (std::size_t i = 0; i < pkt.length(); ++i) fv.values[i] = static_cast<double>(pkt.bytes[i]) / 255.0;
  return fv;
}

inline const FeatureExtractor& default_extractor() {
  static const FeatureExtractor ex{"bytescale-v1", [](const NormalizedPacket& p, std::size_t id) {
                                     return extract_features(p, id);
                                   }};
  return ex;
}

inline const FeatureExtractor& extractor_by_id(std::string_view id) {
  if (id == default_extractor().id) return default_extractor();
  throw Error("nids", "unknown feature extractor '" + std::string(id) + "'");
}

struct ClassifierMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  std::size_t false_negative = 0;
};

/// Malicious is the positive class; precision is 0 when nothing is flagged.
inline ClassifierMetrics classifier_metrics(std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) throw Error("nids", "label vectors differ in length");
  if (truth.empty()) throw Error("nids", "cannot score an empty set");
  ClassifierMetrics m;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool pos = truth[i] == Label::malicious;
    const bool pred = predicted[i] == Label::malicious;
    if (pos && pred) ++m.true_positive;
    if (!pos && pred) ++m.false_positive;
    if (!pos && !pred) ++m.true_negative;
    if (pos && !pred) ++m.false_negative;
  }
  const auto n = static_cast<double>(truth.size());
  m.accuracy = static_cast<double>(m.true_positive + m.true_negative) / n;
  const std::size_t flagged = m.true_positive + m.false_positive;
  const std::size_t positives = m.true_positive + m.false_negative;
  m.precision = flagged ? static_cast<double>(m.true_positive) / static_cast<double>(flagged) : 0.0;
  m.recall = positives ? static_cast<double>(m.true_positive) / static_cast<double>(positives) : 0.0;
  return m;
}

struct NidsOptions {
  // MLP: one rectified hidden layer trained with Adam.
  std::size_t mlp_hidden = 64;
  std::size_t mlp_epochs = 100;
  std::size_t mlp_batch = 64;
  double mlp_lr = 1e-3;
  double mlp_alpha = 1e-4;
  // SVM: RBF kernel; gamma <= 0 selects 1 / (F * Var(X)).
  double svm_c = 1.0;
  double svm_gamma = 0.0;
  double svm_tol = 1e-3;
  std::size_t svm_max_iter = 10'000'000;
  std::size_t svm_cache_mb = 256;
  // Logistic regression: L2 penalty 1/(2C) |w|^2, Newton iterations.
  double lr_c = 1.0;
  std::size_t lr_max_iter = 100;
};

namespace detail {

using DMat = Mat<double>;
using DVec = Vec<double>;

inline DMat feature_matrix(std::span<const FeatureVector> batch, std::size_t F) {
  DMat X(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(F));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].values.size() != F) {
      throw Error("nids", "feature vector has length " + std::to_string(batch[i].values.size()) + ", model expects " +
                              std::to_string(F));
    }
    for (std::size_t j = 0; j < F; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = batch[i].values[j];
  }
  return X;
}

template <typename Derived>
void round_to_float(Eigen::MatrixBase<Derived>& m) {
  m = m.template cast<float>().template cast<double>();
}

inline double round_to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

struct MlpModel {
  DMat w1;  // H x F
  DMat b1;  // H x 1
  DMat w2;  // 1 x H
  DMat b2;  // 1 x 1

  std::vector<std::pair<std::string, DMat*>> named_tensors() {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
  }
  std::vector<std::pair<std::string, const DMat*>> named_tensors() const {
    return {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}};
  }

  DVec logits(const DMat& X) const {
    const DMat hidden = ((w1 * X.transpose()).colwise() + b1.col(0)).cwiseMax(0.0);
    return ((w2 * hidden).array() + b2(0, 0)).transpose();
  }
};

struct SvmModel {
  DMat support;  // n_sv x F
  DVec coef;     // alpha_i * y_i
  double rho = 0.0;
  double gamma = 1.0;

  DVec decision(const DMat& X) const {
    DVec out(X.rows());
    const DVec sv_norms = support.rowwise().squaredNorm();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const DVec d2 = (sv_norms.array() - 2.0 * (support * X.row(i).transpose()).array() + X.row(i).squaredNorm())
                          .cwiseMax(0.0);
      out(i) = coef.dot((-gamma * d2.array()).exp().matrix()) - rho;
    }
    return out;
  }
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  Label label = Label::benign;
};

struct TreeModel {
  std::vector<TreeNode> nodes;

  Label predict(const double* x) const {
    int n = 0;
    while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
      const TreeNode& node = nodes[static_cast<std::size_t>(n)];
      n = x[node.feature] <= node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<std::size_t>(n)].label;
  }

  std::size_t depth() const {
    std::vector<std::pair<int, std::size_t>> stack{{0, 0}};
    std::size_t best = 0;
    while (!stack.empty()) {
      auto [n, d] = stack.back();
      stack.pop_back();
      best = std::max(best, d);
      const TreeNode& node = nodes[static_cast<std::size_t>(n)];
      if (node.feature >= 0) {
        stack.emplace_back(node.left, d + 1);
        stack.emplace_back(node.right, d + 1);
      }
    }
    return best;
  }
};

struct LogisticModel {
  DVec w;
  double b = 0.0;
};

// -------------------------------------------------------------------- MLP

inline MlpModel fit_mlp(const DMat& X, const std::vector<double>& y, const NidsOptions& opt, std::uint64_t seed) {
  const auto n = X.rows();
  const auto F = X.cols();
  const auto H = static_cast<Eigen::Index>(opt.mlp_hidden);
  MlpModel m;
  Rng rng = make_rng(seed, stream_id("nids/mlp/init"));
  auto glorot = [&](Eigen::Index rows, Eigen::Index cols, double fan) {
    DMat w(rows, cols);
    const double limit = std::sqrt(6.0 / fan);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = (2 * uniform01(rng) - 1) * limit;
    return w;
  };
  m.w1 = glorot(H, F, static_cast<double>(F + H));
  m.b1 = glorot(H, 1, static_cast<double>(F + H));
  m.w2 = glorot(1, H, static_cast<double>(H + 1));
  m.b2 = glorot(1, 1, static_cast<double>(H + 1));

  Adam<double> adam(AdamOptions{opt.mlp_lr});
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto batch = static_cast<Eigen::Index>(std::max<std::size_t>(1, opt.mlp_batch));
  for (std::size_t epoch = 0; epoch < opt.mlp_epochs; ++epoch) {
    Rng erng = make_rng(seed, stream_id("nids/mlp/epoch"), epoch);
    shuffle(order, erng);
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index bs = std::min(batch, n - start);
      DMat xb(F, bs);
      DVec yb(bs);
      for (Eigen::Index k = 0; k < bs; ++k) {
        xb.col(k) = X.row(order[static_cast<std::size_t>(start + k)]).transpose();
        yb(k) = y[static_cast<std::size_t>(order[static_cast<std::size_t>(start + k)])];
      }
      const DMat pre = (m.w1 * xb).colwise() + m.b1.col(0);
      const DMat hidden = pre.cwiseMax(0.0);
      const DVec logit = ((m.w2 * hidden).array() + m.b2(0, 0)).transpose();
      DVec dlogit(bs);
      for (Eigen::Index k = 0; k < bs; ++k) dlogit(k) = (sigmoid(logit(k)) - yb(k)) / static_cast<double>(bs);
      MlpModel g = zeros_like(m);
      g.w2 = dlogit.transpose() * hidden.transpose() + opt.mlp_alpha / static_cast<double>(bs) * m.w2;
      g.b2(0, 0) = dlogit.sum();
      const DMat dhidden = (m.w2.transpose() * dlogit.transpose()).cwiseProduct((pre.array() > 0).cast<double>().matrix());
      g.w1 = dhidden * xb.transpose() + opt.mlp_alpha / static_cast<double>(bs) * m.w1;
      g.b1 = dhidden.rowwise().sum();
      adam.step(m, g);
    }
  }
  for (auto& [name, t] : m.named_tensors()) round_to_float(*t);
  return m;
}

// -------------------------------------------------------------------- SVM

/// LRU cache of RBF kernel rows.
class KernelRows {
 public:
  KernelRows(const DMat& X, double gamma, std::size_t cache_mb) : X_(X), gamma_(gamma), norms_(X.rowwise().squaredNorm()) {
    const std::size_t row_bytes = static_cast<std::size_t>(X.rows()) * sizeof(double);
    capacity_ = std::max<std::size_t>(2, cache_mb * 1024 * 1024 / std::max<std::size_t>(row_bytes, 1));
  }

  const std::vector<double>& row(Eigen::Index i) {
    auto it = index_.find(i);
    if (it != index_.end()) {
      lru_.splice(lru_.begin(), lru_, it->second);
      return it->second->second;
    }
    if (lru_.size() >= capacity_) {
      index_.erase(lru_.back().first);
      lru_.pop_back();
    }
    std::vector<double> r(static_cast<std::size_t>(X_.rows()));
    const DVec dots = X_ * X_.row(i).transpose();
    for (Eigen::Index j = 0; j < X_.rows(); ++j) {
      r[static_cast<std::size_t>(j)] = std::exp(-gamma_ * std::max(0.0, norms_(i) + norms_(j) - 2.0 * dots(j)));
    }
    lru_.emplace_front(i, std::move(r));
    index_[i] = lru_.begin();
    return lru_.front().second;
  }

 private:
  const DMat& X_;
  double gamma_;
  DVec norms_;
  std::size_t capacity_;
  std::list<std::pair<Eigen::Index, std::vector<double>>> lru_;
  std::unordered_map<Eigen::Index, decltype(lru_)::iterator> index_;
};

/// C-SVC dual solved by SMO with second-order working-set selection.
inline SvmModel fit_svm(const DMat& X, const std::vector<double>& labels01, const NidsOptions& opt) {
  const auto n = X.rows();
  std::vector<double> y(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = labels01[i] > 0.5 ? 1.0 : -1.0;
  double gamma = opt.svm_gamma;
  if (gamma <= 0) {
    const double mean = X.mean();
    const double var = (X.array() - mean).square().mean();
    gamma = var > 0 ? 1.0 / (static_cast<double>(X.cols()) * var) : 1.0;
  }
  gamma = round_to_float(gamma);
  const double C = opt.svm_c;
  constexpr double kTau = 1e-12;
  KernelRows kernel(X, gamma, opt.svm_cache_mb);
  std::vector<double> alpha(y.size(), 0.0), G(y.size(), -1.0);
  auto upper = [&](std::size_t t) { return alpha[t] >= C; };
  auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

  for (std::size_t iter = 0; iter < opt.svm_max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i = -1, j = -1;
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] > 0 ? !upper(t) : !lower(t)) {
        const double v = -y[t] * G[t];
        if (v >= gmax) {
          gmax = v;
          i = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (i < 0) break;
    const auto ui = static_cast<std::size_t>(i);
    const std::vector<double>& Ki = kernel.row(i);
    double obj_min = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < y.size(); ++t) {
      if (y[t] > 0 ? lower(t) : upper(t)) continue;
      const double v = -y[t] * G[t];
      gmax2 = std::max(gmax2, -v);
      const double grad_diff = gmax - v;
      if (grad_diff > 0) {
        double quad = 2.0 - 2.0 * Ki[t];
        if (quad <= 0) quad = kTau;
        const double obj = -(grad_diff * grad_diff) / quad;
        if (obj <= obj_min) {
          obj_min = obj;
          j = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    if (gmax + gmax2 < opt.svm_tol || j < 0) break;
    const auto uj = static_cast<std::size_t>(j);
    const std::vector<double> Kj = kernel.row(j);
    const double Qij = y[ui] * y[uj] * Ki[uj];
    const double old_ai = alpha[ui], old_aj = alpha[uj];
    if (y[ui] != y[uj]) {
      double quad = 2.0 + 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-G[ui] - G[uj]) / quad;
      const double diff = alpha[ui] - alpha[uj];
      alpha[ui] += delta;
      alpha[uj] += delta;
      if (diff > 0) {
        if (alpha[uj] < 0) { alpha[uj] = 0; alpha[ui] = diff; }
      } else if (alpha[ui] < 0) {
        alpha[ui] = 0;
        alpha[uj] = -diff;
      }
      if (diff > 0) {
        if (alpha[ui] > C) { alpha[ui] = C; alpha[uj] = C - diff; }
      } else if (alpha[uj] > C) {
        alpha[uj] = C;
        alpha[ui] = C + diff;
      }
    } else {
      double quad = 2.0 - 2.0 * Qij;
      if (quad <= 0) quad = kTau;
      const double delta = (G[ui] - G[uj]) / quad;
      const double sum = alpha[ui] + alpha[uj];
      alpha[ui] -= delta;
      alpha[uj] += delta;
      if (sum > C) {
        if (alpha[ui] > C) { alpha[ui] = C; alpha[uj] = sum - C; }
      } else if (alpha[uj] < 0) {
        alpha[uj] = 0;
        alpha[ui] = sum;
      }
      if (sum > C) {
        if (alpha[uj] > C) { alpha[uj] = C; alpha[ui] = sum - C; }
      } else if (alpha[ui] < 0) {
        alpha[ui] = 0;
        alpha[uj] = sum;
      }
    }
    const double dai = alpha[ui] - old_ai, daj = alpha[uj] - old_aj;
    for (std::size_t t = 0; t < y.size(); ++t) {
      G[t] += y[t] * (y[ui] * Ki[t] * dai + y[uj] * Kj[t] * daj);
    }
  }

  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double yg = y[t] * G[t];
    if (upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  SvmModel m;
  m.gamma = gamma;
  m.rho = round_to_float(n_free ? sum_free / static_cast<double>(n_free) : (ub + lb) / 2);
  std::vector<Eigen::Index> sv;
  for (std::size_t t = 0; t < y.size(); ++t)
    if (alpha[t] > 0) sv.push_back(static_cast<Eigen::Index>(t));
  m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
  m.coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    m.support.row(static_cast<Eigen::Index>(k)) = X.row(sv[k]);
    m.coef(static_cast<Eigen::Index>(k)) = alpha[static_cast<std::size_t>(sv[k])] * y[static_cast<std::size_t>(sv[k])];
  }
  round_to_float(m.support);
  round_to_float(m.coef);
  return m;
}

// -------------------------------------------------------------------- tree

/// CART with Gini impurity, grown until leaves are pure or unsplittable.
/// Ties between equally good splits go to the lowest feature index.
inline TreeModel fit_tree(const DMat& X, const std::vector<double>& y) {
  TreeModel tree;
  const auto F = X.cols();
  struct Work {
    int node;
    std::vector<Eigen::Index> rows;
  };
  auto majority = [&](const std::vector<Eigen::Index>& rows) {
    std::size_t pos = 0;
    for (auto r : rows) pos += y[static_cast<std::size_t>(r)] > 0.5;
    return 2 * pos > rows.size() ? Label::malicious : Label::benign;
  };
  std::vector<Eigen::Index> all(static_cast<std::size_t>(X.rows()));
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  tree.nodes.push_back({});
  std::vector<Work> stack;
  stack.push_back({0, std::move(all)});
  std::vector<Eigen::Index> sorted;
  while (!stack.empty()) {
    Work w = std::move(stack.back());
    stack.pop_back();
    const std::size_t n = w.rows.size();
    std::size_t pos = 0;
    for (auto r : w.rows) pos += y[static_cast<std::size_t>(r)] > 0.5;
    tree.nodes[static_cast<std::size_t>(w.node)].label = majority(w.rows);
    if (pos == 0 || pos == n) continue;

    double best = std::numeric_limits<double>::infinity();
    int best_feature = -1;
    double best_threshold = 0.0;
    for (Eigen::Index f = 0; f < F; ++f) {
      sorted = w.rows;
      std::stable_sort(sorted.begin(), sorted.end(), [&](auto a, auto b) { return X(a, f) < X(b, f); });
      std::size_t left_pos = 0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        left_pos += y[static_cast<std::size_t>(sorted[k])] > 0.5;
        const double a = X(sorted[k], f), b = X(sorted[k + 1], f);
        if (!(a < b)) continue;
        const auto nl = static_cast<double>(k + 1), nr = static_cast<double>(n - k - 1);
        const double pl = static_cast<double>(left_pos) / nl;
        const double pr = static_cast<double>(pos - left_pos) / nr;
        const double impurity = nl * 2 * pl * (1 - pl) + nr * 2 * pr * (1 - pr);
        if (impurity < best) {
          best = impurity;
          best_feature = static_cast<int>(f);
          best_threshold = round_to_float(0.5 * (a + b));
        }
      }
    }
    if (best_feature < 0) continue;
    Work left{static_cast<int>(tree.nodes.size()), {}};
    Work right{static_cast<int>(tree.nodes.size() + 1), {}};
    for (auto r : w.rows) (X(r, best_feature) <= best_threshold ? left : right).rows.push_back(r);
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    TreeNode& node = tree.nodes[static_cast<std::size_t>(w.node)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = left.node;
    node.right = right.node;
    stack.push_back(std::move(right));
    stack.push_back(std::move(left));
  }
  return tree;
}

// -------------------------------------------------------------------- logistic

inline LogisticModel fit_logistic(const DMat& X, const std::vector<double>& y, const NidsOptions& opt) {
  const auto n = X.rows();
  const auto F = X.cols();
  DMat Xa(n, F + 1);
  Xa.leftCols(F) = X;
  Xa.col(F).setOnes();
  DVec yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv(i) = y[static_cast<std::size_t>(i)];
  DVec w = DVec::Zero(F + 1);
  DVec reg = DVec::Constant(F + 1, 1.0 / opt.lr_c);
  reg(F) = 1e-10;
  for (std::size_t iter = 0; iter < opt.lr_max_iter; ++iter) {
    const DVec z = Xa * w;
    DVec p(n), s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = sigmoid(z(i));
      s(i) = p(i) * (1 - p(i));
    }
    const DVec grad = Xa.transpose() * (p - yv) + reg.cwiseProduct(w);
    DMat hess = Xa.transpose() * s.asDiagonal() * Xa;
    hess.diagonal() += reg;
    const DVec step = hess.ldlt().solve(grad);
    w -= step;
    if (step.lpNorm<Eigen::Infinity>() < 1e-10) break;
  }
  LogisticModel m;
  m.w = w.head(F);
  m.b = round_to_float(w(F));
  round_to_float(m.w);
  return m;
}

}  // namespace detail

class NidsModel;
struct NidsTrainingReport;
NidsTrainingReport train_nids(NidsKind kind, const LabeledDataset& train, std::uint64_t seed,
                              const NidsOptions& options, const FeatureExtractor& extractor);

class NidsModel {
 public:
  NidsKind kind() const noexcept { return kind_; }
  std::size_t feature_count() const noexcept { return features_; }
  const std::string& extractor_id() const noexcept { return extractor_id_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::map<std::string, std::string>& metadata() const noexcept { return metadata_; }

  std::vector<Label> predict(std::span<const FeatureVector> batch) const {
    if (batch.empty()) return {};
    const detail::DMat X = detail::feature_matrix(batch, features_);
    std::vector<Label> out(batch.size());
    auto from_score = [](double s) { return s > 0 ? Label::malicious : Label::benign; };
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, detail::MlpModel>) {
            const detail::DVec z = m.logits(X);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_score(z(static_cast<Eigen::Index>(i)));
          } else if constexpr (std::is_same_v<M, detail::SvmModel>) {
            const detail::DVec z = m.decision(X);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_score(z(static_cast<Eigen::Index>(i)));
          } else if constexpr (std::is_same_v<M, detail::TreeModel>) {
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = m.predict(batch[i].values.data());
          } else {
            const detail::DVec z = (X * m.w).array() + m.b;
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = from_score(z(static_cast<Eigen::Index>(i)));
          }
        },
        model_);
    return out;
  }

  std::vector<Label> predict_packets(std::span<const NormalizedPacket> packets) const {
    const FeatureExtractor& ex = extractor_by_id(extractor_id_);
    std::vector<FeatureVector> features;
    features.reserve(packets.size());
    for (std::size_t i = 0; i < packets.size(); ++i) features.push_back(ex.extract(packets[i], i));
    return predict(features);
  }

  void save(Checkpoint& ckpt) const {
    ckpt.add_scalar("nids/kind", static_cast<double>(kind_));
    ckpt.add_scalar("nids/features", static_cast<double>(features_));
    ckpt.add_text("nids/extractor", extractor_id_);
    std::ostringstream meta;
    for (const auto& [k, v] : metadata_) meta << k << '=' << v << '\n';
    ckpt.add_text("nids/metadata", meta.str());
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, detail::MlpModel>) {
            ckpt.add_matrix("nids/mlp/w1", m.w1);
            ckpt.add_matrix("nids/mlp/b1", m.b1);
            ckpt.add_matrix("nids/mlp/w2", m.w2);
            ckpt.add_matrix("nids/mlp/b2", m.b2);
          } else if constexpr (std::is_same_v<M, detail::SvmModel>) {
            ckpt.add_matrix("nids/svm/support", m.support);
            ckpt.add_matrix("nids/svm/coef", m.coef);
            ckpt.add_scalar("nids/svm/rho", m.rho);
            ckpt.add_scalar("nids/svm/gamma", m.gamma);
          } else if constexpr (std::is_same_v<M, detail::TreeModel>) {
            detail::DMat nodes(static_cast<Eigen::Index>(m.nodes.size()), 5);
            for (std::size_t i = 0; i < m.nodes.size(); ++i) {
              const auto& nd = m.nodes[i];
              nodes.row(static_cast<Eigen::Index>(i)) << nd.feature, nd.threshold, nd.left, nd.right,
                  static_cast<double>(nd.label);
            }
            ckpt.add_matrix("nids/dt/nodes", nodes);
          } else {
            ckpt.add_matrix("nids/lr/w", m.w);
            ckpt.add_scalar("nids/lr/b", m.b);
          }
        },
        model_);
  }

  /// Loads a persisted detector. When `expected_extractor` is non-empty the
  /// model must have been fitted on features from that extractor, with
  /// `expected_features` inputs (0 skips the width check).
  static NidsModel load(const Checkpoint& ckpt, const std::string& expected_extractor = {},
                        std::size_t expected_features = 0) {
    NidsModel model;
    model.kind_ = static_cast<NidsKind>(static_cast<int>(ckpt.get_scalar("nids/kind")));
    model.features_ = static_cast<std::size_t>(ckpt.get_scalar("nids/features"));
    model.extractor_id_ = ckpt.get_text("nids/extractor");
    if (!expected_extractor.empty() && model.extractor_id_ != expected_extractor) {
      throw Error("nids", "model was fitted with extractor '" + model.extractor_id_ + "', dataset uses '" +
                              expected_extractor + "'");
    }
    if (expected_features != 0 && model.features_ != expected_features) {
      throw Error("nids", "model expects " + std::to_string(model.features_) + " features, dataset provides " +
                              std::to_string(expected_features));
    }
    std::istringstream meta(ckpt.get_text("nids/metadata"));
    for (std::string line; std::getline(meta, line);) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) model.metadata_[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (auto it = model.metadata_.find("seed"); it != model.metadata_.end()) model.seed_ = std::stoull(it->second);
    switch (model.kind_) {
      case NidsKind::mlp: {
        detail::MlpModel m;
        m.w1 = ckpt.get_matrix<double>("nids/mlp/w1");
        m.b1 = ckpt.get_matrix<double>("nids/mlp/b1");
        m.w2 = ckpt.get_matrix<double>("nids/mlp/w2");
        m.b2 = ckpt.get_matrix<double>("nids/mlp/b2");
        model.model_ = std::move(m);
        break;
      }
      case NidsKind::svm: {
        detail::SvmModel m;
        m.support = ckpt.get_matrix<double>("nids/svm/support");
        m.coef = ckpt.get_matrix<double>("nids/svm/coef");
        m.rho = ckpt.get_scalar("nids/svm/rho");
        m.gamma = ckpt.get_scalar("nids/svm/gamma");
        model.model_ = std::move(m);
        break;
      }
      case NidsKind::dt: {
        detail::TreeModel m;
        const detail::DMat nodes = ckpt.get_matrix<double>("nids/dt/nodes");
        for (Eigen::Index i = 0; i < nodes.rows(); ++i) {
          m.nodes.push_back({static_cast<int>(nodes(i, 0)), nodes(i, 1), static_cast<int>(nodes(i, 2)),
                             static_cast<int>(nodes(i, 3)), static_cast<Label>(static_cast<int>(nodes(i, 4)))});
        }
        model.model_ = std::move(m);
        break;
      }
      case NidsKind::lr: {
        detail::LogisticModel m;
        m.w = ckpt.get_matrix<double>("nids/lr/w");
        m.b = ckpt.get_scalar("nids/lr/b");
        model.model_ = std::move(m);
        break;
      }
      default: throw Error("nids", "unknown model kind in checkpoint");
    }
    return model;
  }

  /// Tree depth for DT models, 0 otherwise (diagnostic only).
  std::size_t tree_depth() const {
    if (const auto* t = std::get_if<detail::TreeModel>(&model_)) return t->depth();
    return 0;
  }

 private:
  friend NidsTrainingReport train_nids(NidsKind, const LabeledDataset&, std::uint64_t, const NidsOptions&,
                                       const FeatureExtractor&);

  NidsKind kind_ = NidsKind::dt;
  std::size_t features_ = 0;
  std::string extractor_id_;
  std::uint64_t seed_ = 0;
  std::map<std::string, std::string> metadata_;
  std::variant<detail::MlpModel, detail::SvmModel, detail::TreeModel, detail::LogisticModel> model_;
};

struct NidsTrainingReport {
  NidsModel model;
  ClassifierMetrics train_metrics;
};

inline NidsTrainingReport train_nids(NidsKind kind, const LabeledDataset& train, std::uint64_t seed,
                                     const NidsOptions& options = {},
                                     const FeatureExtractor& extractor = default_extractor()) {
  if (train.count(Label::benign) == 0 || train.count(Label::malicious) == 0) {
    throw Error("nids", "training set must contain both benign and malicious packets");
  }
  std::vector<FeatureVector> features;
  std::vector<double> y;
  features.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    features.push_back(extractor.extract(train.packets[i], i));
    y.push_back(train.packets[i].label == Label::malicious ? 1.0 : 0.0);
  }
  const std::size_t F = features.front().values.size();
  const detail::DMat X = detail::feature_matrix(features, F);

  NidsModel model;
  model.kind_ = kind;
  model.features_ = F;
  model.extractor_id_ = extractor.id;
  model.seed_ = seed;
  auto& meta = model.metadata_;
  meta["kind"] = std::string(to_string(kind));
  meta["extractor"] = extractor.id;
  meta["features"] = std::to_string(F);
  meta["seed"] = std::to_string(seed);
  switch (kind) {
    case NidsKind::mlp:
      meta["hidden"] = std::to_string(options.mlp_hidden);
      meta["epochs"] = std::to_string(options.mlp_epochs);
      meta["optimizer"] = "adam";
      meta["lr"] = std::to_string(options.mlp_lr);
      model.model_ = detail::fit_mlp(X, y, options, seed);
      break;
    case NidsKind::svm:
      meta["kernel"] = "rbf";
      meta["C"] = std::to_string(options.svm_c);
      model.model_ = detail::fit_svm(X, y, options);
      meta["gamma"] = std::to_string(std::get<detail::SvmModel>(model.model_).gamma);
      meta["support_vectors"] = std::to_string(std::get<detail::SvmModel>(model.model_).coef.size());
      break;
    case NidsKind::dt:
      meta["criterion"] = "gini";
      meta["max_depth"] = "unlimited";
      model.model_ = detail::fit_tree(X, y);
      break;
    case NidsKind::lr:
      meta["penalty"] = "l2";
      meta["C"] = std::to_string(options.lr_c);
      model.model_ = detail::fit_logistic(X, y, options);
      break;
  }
  std::vector<Label> truth;
  for (const auto& p : train.packets) truth.push_back(p.label);
  const auto predicted = model.predict(features);
  NidsTrainingReport report{std::move(model), classifier_metrics(truth, predicted)};
  return report;
}

inline ClassifierMetrics evaluate_nids(const NidsModel& model, const LabeledDataset& test) {
  if (test.empty()) throw Error("nids", "evaluation set is empty");
  std::vector<Label> truth;
  for (const auto& p : test.packets) truth.push_back(p.label);
  return classifier_metrics(truth, model.predict_packets(test.packets));
}

}  // namespace attackgan
